//! Byte-stream channels carrying newline-delimited envelopes.
//!
//! In secure mode both ends run a Noise `IK` handshake whose static keys are
//! the X25519 forms of the parties' Ed25519 identity keys, so the channel is
//! encrypted and each side proves possession of the key the other side has
//! pinned in its registry. Plaintext mode skips the handshake and relies on
//! the server's address allowlist.

use std::io::{self, Read, Write};
use std::net::{IpAddr, TcpStream};

use ed25519_dalek::{SigningKey, VerifyingKey};
use prepaid_core::KeyRegistry;
use snow::{Builder, HandshakeState, TransportState};

pub const NOISE_PARAMS: &str = "Noise_IK_25519_ChaChaPoly_SHA256";
const PROLOGUE: &[u8] = b"prepaid-wire/v1";
const MAX_NOISE_MSG: usize = 65_535;
const TAG_LEN: usize = 16;
const MAX_CHUNK: usize = MAX_NOISE_MSG - TAG_LEN;
/// Upper bound on one envelope line.
pub const MAX_LINE: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub enum Transport {
    /// Mutually authenticated, encrypted channel. The registry supplies the
    /// own identity key and the pinned keys of acceptable peers.
    Secure(KeyRegistry),
    /// Unencrypted; the server accepts only peers in the allowlist.
    Plaintext { allowlist: Vec<IpAddr> },
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transport::Secure(reg) => write!(f, "Secure({})", reg.own_id()),
            Transport::Plaintext { allowlist } => write!(f, "Plaintext({allowlist:?})"),
        }
    }
}

fn x25519_private(key: &SigningKey) -> [u8; 32] {
    key.to_scalar_bytes()
}

fn x25519_public(key: &VerifyingKey) -> [u8; 32] {
    key.to_montgomery().to_bytes()
}

fn noise_err(e: snow::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("noise: {e}"))
}

fn write_frame(stream: &mut TcpStream, frame: &[u8]) -> io::Result<()> {
    let len = u16::try_from(frame.len()).map_err(|_| io::Error::other("frame too large"))?;
    let mut buf = Vec::with_capacity(frame.len() + 2);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(frame);
    stream.write_all(&buf)
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 2];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut frame = vec![0u8; usize::from(u16::from_be_bytes(len))];
    stream.read_exact(&mut frame)?;
    Ok(Some(frame))
}

/// One established connection.
pub struct Channel {
    stream: TcpStream,
    noise: Option<TransportState>,
    pending: Vec<u8>,
    peer_id: Option<String>,
}

impl Channel {
    /// Client side. `server_id` names the registry entry pinned for the peer.
    pub fn connect(stream: TcpStream, transport: &Transport, server_id: &str) -> io::Result<Self> {
        let mut stream = stream;
        stream.set_nodelay(true)?;
        let Transport::Secure(registry) = transport else {
            return Ok(Self::plain(stream));
        };
        let own = registry
            .signing_key()
            .ok_or_else(|| io::Error::other("secure transport needs a signing key"))?;
        let server_key = registry
            .public_key(server_id)
            .map_err(|e| io::Error::new(io::ErrorKind::PermissionDenied, e.to_string()))?;
        let local = x25519_private(own);
        let remote = x25519_public(server_key);
        let mut hs = Builder::new(NOISE_PARAMS.parse().expect("valid noise params"))
            .local_private_key(&local)
            .remote_public_key(&remote)
            .prologue(PROLOGUE)
            .build_initiator()
            .map_err(noise_err)?;
        let mut buf = vec![0u8; MAX_NOISE_MSG];
        let n = hs.write_message(&[], &mut buf).map_err(noise_err)?;
        write_frame(&mut stream, &buf[..n])?;
        let reply = read_frame(&mut stream)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::ConnectionAborted, "peer closed during handshake"))?;
        hs.read_message(&reply, &mut buf).map_err(noise_err)?;
        Ok(Channel {
            stream,
            noise: Some(hs.into_transport_mode().map_err(noise_err)?),
            pending: Vec::new(),
            peer_id: Some(server_id.to_string()),
        })
    }

    /// Server side. Fails if the peer is not allowlisted or does not hold a
    /// key pinned in the registry.
    pub fn accept(stream: TcpStream, transport: &Transport) -> io::Result<Self> {
        let mut stream = stream;
        stream.set_nodelay(true)?;
        let registry = match transport {
            Transport::Plaintext { allowlist } => {
                let peer = stream.peer_addr()?.ip();
                if !allowlist.contains(&peer) {
                    return Err(io::Error::new(
                        io::ErrorKind::PermissionDenied,
                        format!("{peer} is not allowlisted"),
                    ));
                }
                return Ok(Self::plain(stream));
            }
            Transport::Secure(registry) => registry,
        };
        let own = registry
            .signing_key()
            .ok_or_else(|| io::Error::other("secure transport needs a signing key"))?;
        let local = x25519_private(own);
        let mut hs: HandshakeState = Builder::new(NOISE_PARAMS.parse().expect("valid noise params"))
            .local_private_key(&local)
            .prologue(PROLOGUE)
            .build_responder()
            .map_err(noise_err)?;
        let mut buf = vec![0u8; MAX_NOISE_MSG];
        let hello = read_frame(&mut stream)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::ConnectionAborted, "peer closed during handshake"))?;
        hs.read_message(&hello, &mut buf).map_err(noise_err)?;
        let remote = hs
            .get_remote_static()
            .ok_or_else(|| io::Error::other("initiator sent no static key"))?
            .to_vec();
        let peer_id = registry
            .parties()
            .filter(|p| *p != registry.own_id())
            .find(|p| {
                registry
                    .public_key(p)
                    .map(|k| x25519_public(k).as_slice() == remote.as_slice())
                    .unwrap_or(false)
            })
            .map(str::to_string)
            .ok_or_else(|| io::Error::new(io::ErrorKind::PermissionDenied, "peer key is not registered"))?;
        let n = hs.write_message(&[], &mut buf).map_err(noise_err)?;
        write_frame(&mut stream, &buf[..n])?;
        Ok(Channel {
            stream,
            noise: Some(hs.into_transport_mode().map_err(noise_err)?),
            pending: Vec::new(),
            peer_id: Some(peer_id),
        })
    }

    fn plain(stream: TcpStream) -> Self {
        Channel {
            stream,
            noise: None,
            pending: Vec::new(),
            peer_id: None,
        }
    }

    /// Party authenticated by the handshake; `None` in plaintext mode.
    pub fn peer_id(&self) -> Option<&str> {
        self.peer_id.as_deref()
    }

    pub fn stream(&self) -> &TcpStream {
        &self.stream
    }

    /// Sends one line; a newline is appended.
    pub fn send_line(&mut self, line: &[u8]) -> io::Result<()> {
        let mut data = Vec::with_capacity(line.len() + 1);
        data.extend_from_slice(line);
        data.push(b'\n');
        match &mut self.noise {
            None => self.stream.write_all(&data),
            Some(noise) => {
                let mut buf = vec![0u8; MAX_NOISE_MSG];
                for chunk in data.chunks(MAX_CHUNK) {
                    let n = noise.write_message(chunk, &mut buf).map_err(noise_err)?;
                    write_frame(&mut self.stream, &buf[..n])?;
                }
                Ok(())
            }
        }
    }

    fn fill(&mut self) -> io::Result<bool> {
        match &mut self.noise {
            None => {
                let mut buf = [0u8; 16 * 1024];
                let n = self.stream.read(&mut buf)?;
                self.pending.extend_from_slice(&buf[..n]);
                Ok(n > 0)
            }
            Some(noise) => {
                let Some(frame) = read_frame(&mut self.stream)? else {
                    return Ok(false);
                };
                let mut buf = vec![0u8; MAX_NOISE_MSG];
                let n = noise.read_message(&frame, &mut buf).map_err(noise_err)?;
                self.pending.extend_from_slice(&buf[..n]);
                Ok(true)
            }
        }
    }

    /// Receives one line without its newline; `None` on a clean close.
    pub fn recv_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        loop {
            if let Some(pos) = self.pending.iter().position(|&b| b == b'\n') {
                let mut line: Vec<u8> = self.pending.drain(..=pos).collect();
                line.pop();
                return Ok(Some(line));
            }
            if self.pending.len() > MAX_LINE {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "line too long"));
            }
            if !self.fill()? {
                if self.pending.is_empty() {
                    return Ok(None);
                }
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated line"));
            }
        }
    }
}
