//! Card provider service.
//!
//! Owns the sold-cards database, authorizes credit requests by placing
//! holds, captures them into countersigned records, keeps a replica of
//! every captured record and answers end-of-period settlement demands.

pub mod config;
pub mod handler;
pub mod service;
pub mod state;

pub use config::ProviderConfig;
pub use handler::wire_handler;
pub use service::{hold_id_for, Provider, ProviderError, ServiceOptions, DEFAULT_HOLD_TTL};
pub use state::{Entry, Hold, HoldOutcome, JournalLine, ProviderState, ReplicaStore};
