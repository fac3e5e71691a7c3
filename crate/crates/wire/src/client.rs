use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use prepaid_core::Envelope;
use thiserror::Error;

use crate::channel::{Channel, Transport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    /// Nothing reached the provider, or no reply came back.
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    /// A reply arrived but could not be understood.
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Request/response path from the merchant to a provider.
pub trait ProviderLink: Send + Sync {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError>;
}

/// Envelope link over TCP with a small pool of reusable connections.
pub struct TcpLink {
    addr: String,
    server_id: String,
    transport: Transport,
    timeout: Duration,
    pool: Mutex<Vec<Channel>>,
}

impl TcpLink {
    pub fn new(addr: impl Into<String>, server_id: impl Into<String>, transport: Transport) -> Self {
        Self {
            addr: addr.into(),
            server_id: server_id.into(),
            transport,
            timeout: Duration::from_secs(10),
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn resolve(&self) -> Result<SocketAddr, LinkError> {
        self.addr
            .to_socket_addrs()
            .map_err(|e| LinkError::Unreachable(format!("{}: {e}", self.addr)))?
            .next()
            .ok_or_else(|| LinkError::Unreachable(format!("{} did not resolve", self.addr)))
    }

    fn open(&self) -> Result<Channel, LinkError> {
        let addr = self.resolve()?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout)
            .map_err(|e| LinkError::Unreachable(format!("{addr}: {e}")))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| LinkError::Unreachable(e.to_string()))?;
        Channel::connect(stream, &self.transport, &self.server_id)
            .map_err(|e| LinkError::Unreachable(format!("handshake with {addr}: {e}")))
    }

    fn round_trip(chan: &mut Channel, request: &Envelope) -> std::io::Result<Option<Vec<u8>>> {
        chan.send_line(&request.to_line())?;
        chan.recv_line()
    }
}

impl ProviderLink for TcpLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let pooled = self.pool.lock().map(|mut p| p.pop()).unwrap_or(None);
        let (mut chan, reused) = match pooled {
            Some(c) => (c, true),
            None => (self.open()?, false),
        };
        let reply = match Self::round_trip(&mut chan, request) {
            Ok(Some(line)) => line,
            // A pooled connection may have gone stale; retry once on a fresh
            // one. Requests are idempotent so a resend is safe.
            _ if reused => {
                chan = self.open()?;
                match Self::round_trip(&mut chan, request) {
                    Ok(Some(line)) => line,
                    Ok(None) => return Err(LinkError::Unreachable("connection closed".into())),
                    Err(e) => return Err(LinkError::Unreachable(e.to_string())),
                }
            }
            Ok(None) => return Err(LinkError::Unreachable("connection closed".into())),
            Err(e) => return Err(LinkError::Unreachable(e.to_string())),
        };
        let env = Envelope::from_line(&reply).map_err(|e| LinkError::Protocol(e.to_string()))?;
        if let Ok(mut p) = self.pool.lock() {
            p.push(chan);
        }
        Ok(env)
    }
}
