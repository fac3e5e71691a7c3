//! Transport for provider envelopes: newline-delimited canonical envelopes
//! over either a mutually authenticated encrypted channel or, for tests, a
//! plaintext channel restricted by an address allowlist.

pub mod channel;
pub mod client;
pub mod server;

pub use channel::{Channel, Transport, NOISE_PARAMS};
pub use client::{LinkError, ProviderLink, TcpLink};
pub use server::{spawn, Handler, ServerHandle};

/// Default provider port.
pub const DEFAULT_PORT: u16 = 7402;
