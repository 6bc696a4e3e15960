//! Trigger relay: session registry plus host-to-clients datagram fan-out.
//!
//! [`Relay`] is transport agnostic: it maps one received datagram to the
//! datagrams that must be sent, so the same logic runs behind a UDP socket
//! ([`UdpRelayServer`]) or inside the discrete-event simulator.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sync::{TriggerGate, TriggerMsg};

pub const RELAY_MAGIC: [u8; 4] = *b"SYRL";
pub const RELAY_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;
pub const DEFAULT_RELAY_PORT: u16 = 40000;

/// `trigger_id` value carried by the JOIN_ACK sent to a session's host.
pub const HOST_INDEX: u32 = u32::MAX;

pub type Endpoint = SocketAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DatagramKind {
    Join = 1,
    JoinAck = 2,
    Trigger = 3,
    RttProbe = 4,
    RttEcho = 5,
    Close = 6,
}

impl DatagramKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Join,
            2 => Self::JoinAck,
            3 => Self::Trigger,
            4 => Self::RttProbe,
            5 => Self::RttEcho,
            6 => Self::Close,
            _ => return None,
        })
    }
}

/// Fixed 26-byte little-endian relay header.
///
/// `trigger_id` is the trigger counter for TRIGGER; JOIN_ACK, RTT_PROBE and
/// RTT_ECHO reuse it for the client index. It is 0 for JOIN and CLOSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelayDatagram {
    pub kind: DatagramKind,
    pub session_id: u64,
    pub trigger_id: u32,
    pub timestamp_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("datagram of {0} bytes is shorter than the header")]
    TooShort(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown kind {0}")]
    UnknownKind(u8),
}

impl RelayDatagram {
    pub fn new(kind: DatagramKind, session_id: u64, trigger_id: u32, timestamp_ns: u64) -> Self {
        Self {
            kind,
            session_id,
            trigger_id,
            timestamp_ns,
        }
    }

    pub fn trigger(msg: &TriggerMsg) -> Self {
        Self::new(
            DatagramKind::Trigger,
            msg.session_id,
            msg.trigger_id,
            msg.host_send_time_ns as u64,
        )
    }

    pub fn to_trigger(&self) -> Option<TriggerMsg> {
        (self.kind == DatagramKind::Trigger).then_some(TriggerMsg {
            session_id: self.session_id,
            trigger_id: self.trigger_id,
            host_send_time_ns: self.timestamp_ns as i64,
        })
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&RELAY_MAGIC);
        out[4] = RELAY_VERSION;
        out[5] = self.kind as u8;
        out[6..14].copy_from_slice(&self.session_id.to_le_bytes());
        out[14..18].copy_from_slice(&self.trigger_id.to_le_bytes());
        out[18..26].copy_from_slice(&self.timestamp_ns.to_le_bytes());
        out
    }

    /// Trailing bytes after the header are ignored.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::TooShort(bytes.len()));
        }
        if bytes[0..4] != RELAY_MAGIC {
            return Err(WireError::BadMagic);
        }
        if bytes[4] != RELAY_VERSION {
            return Err(WireError::BadVersion(bytes[4]));
        }
        let kind = DatagramKind::from_byte(bytes[5]).ok_or(WireError::UnknownKind(bytes[5]))?;
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        Ok(Self {
            kind,
            session_id: u64_at(6),
            trigger_id: u32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes")),
            timestamp_ns: u64_at(18),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is not open for joining")]
    SessionNotOpen(u64),
    #[error("session {0} is not capturing")]
    NotCapturing(u64),
    #[error("sender {0} is not the session host")]
    NotHost(Endpoint),
    #[error("unknown client {0}")]
    UnknownClient(usize),
    #[error("malformed datagram: {0}")]
    Wire(#[from] WireError),
    #[error("unexpected {0:?} datagram at relay")]
    UnexpectedKind(DatagramKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Open,
    Capturing,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: u64,
    pub host: Endpoint,
    /// Slot `a` holds client `a`; departed clients leave an empty slot.
    pub clients: Vec<Option<Endpoint>>,
    pub state: SessionState,
}

impl Session {
    fn client(&self, index: usize) -> Result<Endpoint, RelayError> {
        self.clients
            .get(index)
            .copied()
            .flatten()
            .ok_or(RelayError::UnknownClient(index))
    }

    fn active_clients(&self) -> impl Iterator<Item = Endpoint> + '_ {
        self.clients.iter().flatten().copied()
    }
}

/// A datagram the relay must send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Endpoint,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Default)]
struct Counters {
    forwarded: AtomicU64,
    dropped_not_host: AtomicU64,
    dropped_malformed: AtomicU64,
    dropped_other: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayStats {
    pub forwarded: u64,
    pub dropped_not_host: u64,
    pub dropped_malformed: u64,
    pub dropped_other: u64,
}

/// Session registry and forwarding logic.
#[derive(Debug, Default)]
pub struct Relay {
    sessions: RwLock<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    counters: Counters,
}

impl Relay {
    pub fn new() -> Self {
        Self::default()
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, RelayError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or(RelayError::UnknownSession(id))
    }

    /// Opens a new session hosted by `host`. Ids start at 1.
    pub fn register_session(&self, host: Endpoint) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let session = Session {
            id,
            host,
            clients: Vec::new(),
            state: SessionState::Open,
        };
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        id
    }

    /// Appends `client` and returns its index.
    pub fn join_session(&self, session_id: u64, client: Endpoint) -> Result<usize, RelayError> {
        let session = self.session(session_id)?;
        let mut s = session.lock().expect("session poisoned");
        if s.state != SessionState::Open {
            return Err(RelayError::SessionNotOpen(session_id));
        }
        s.clients.push(Some(client));
        Ok(s.clients.len() - 1)
    }

    pub fn session_snapshot(&self, session_id: u64) -> Result<Session, RelayError> {
        Ok(self.session(session_id)?.lock().expect("session poisoned").clone())
    }

    /// Fans a host TRIGGER out to every client, byte-for-byte.
    ///
    /// The first trigger moves an OPEN session to CAPTURING.
    pub fn forward_trigger(&self, from: Endpoint, bytes: &[u8]) -> Result<Vec<Outgoing>, RelayError> {
        let dgram = RelayDatagram::decode(bytes)?;
        if dgram.kind != DatagramKind::Trigger {
            return Err(RelayError::UnexpectedKind(dgram.kind));
        }
        let session = self.session(dgram.session_id)?;
        let mut s = session.lock().expect("session poisoned");
        if s.host != from {
            self.counters.dropped_not_host.fetch_add(1, Ordering::Relaxed);
            return Err(RelayError::NotHost(from));
        }
        match s.state {
            SessionState::Closed => return Err(RelayError::NotCapturing(s.id)),
            SessionState::Open => s.state = SessionState::Capturing,
            SessionState::Capturing => {}
        }
        let out: Vec<Outgoing> = s
            .active_clients()
            .map(|to| Outgoing {
                to,
                bytes: bytes.to_vec(),
            })
            .collect();
        self.counters.forwarded.fetch_add(out.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    /// Routes an RTT probe from the host to client `trigger_id`, or an echo
    /// from that client back to the host, leaving the timestamp intact.
    pub fn echo_rtt(&self, from: Endpoint, bytes: &[u8]) -> Result<Outgoing, RelayError> {
        let dgram = RelayDatagram::decode(bytes)?;
        let session = self.session(dgram.session_id)?;
        let s = session.lock().expect("session poisoned");
        let client = s.client(dgram.trigger_id as usize)?;
        let to = match dgram.kind {
            DatagramKind::RttProbe if from == s.host => client,
            DatagramKind::RttEcho if from == client => s.host,
            DatagramKind::RttProbe | DatagramKind::RttEcho => {
                self.counters.dropped_not_host.fetch_add(1, Ordering::Relaxed);
                return Err(RelayError::NotHost(from));
            }
            other => return Err(RelayError::UnexpectedKind(other)),
        };
        self.counters.forwarded.fetch_add(1, Ordering::Relaxed);
        Ok(Outgoing {
            to,
            bytes: bytes.to_vec(),
        })
    }

    fn close(&self, from: Endpoint, dgram: &RelayDatagram, bytes: &[u8]) -> Result<Vec<Outgoing>, RelayError> {
        let session = self.session(dgram.session_id)?;
        let mut s = session.lock().expect("session poisoned");
        if from == s.host {
            s.state = SessionState::Closed;
            return Ok(s
                .active_clients()
                .map(|to| Outgoing {
                    to,
                    bytes: bytes.to_vec(),
                })
                .collect());
        }
        // a client leaving keeps its slot so indices stay stable
        match s.clients.iter_mut().find(|c| **c == Some(from)) {
            Some(slot) => {
                *slot = None;
                Ok(Vec::new())
            }
            None => Err(RelayError::NotHost(from)),
        }
    }

    fn dispatch(&self, from: Endpoint, bytes: &[u8]) -> Result<Vec<Outgoing>, RelayError> {
        let dgram = RelayDatagram::decode(bytes)?;
        match dgram.kind {
            DatagramKind::Join if dgram.session_id == 0 => {
                let id = self.register_session(from);
                let ack = RelayDatagram::new(DatagramKind::JoinAck, id, HOST_INDEX, dgram.timestamp_ns);
                Ok(vec![Outgoing {
                    to: from,
                    bytes: ack.encode().to_vec(),
                }])
            }
            DatagramKind::Join => {
                let index = self.join_session(dgram.session_id, from)?;
                let ack = RelayDatagram::new(
                    DatagramKind::JoinAck,
                    dgram.session_id,
                    index as u32,
                    dgram.timestamp_ns,
                );
                Ok(vec![Outgoing {
                    to: from,
                    bytes: ack.encode().to_vec(),
                }])
            }
            DatagramKind::Trigger => self.forward_trigger(from, bytes),
            DatagramKind::RttProbe | DatagramKind::RttEcho => Ok(vec![self.echo_rtt(from, bytes)?]),
            DatagramKind::Close => self.close(from, &dgram, bytes),
            DatagramKind::JoinAck => Err(RelayError::UnexpectedKind(dgram.kind)),
        }
    }

    /// Processes one received datagram; anything invalid is dropped and counted.
    pub fn handle_datagram(&self, from: Endpoint, bytes: &[u8]) -> Vec<Outgoing> {
        match self.dispatch(from, bytes) {
            Ok(out) => out,
            Err(e) => {
                match e {
                    RelayError::Wire(_) => {
                        self.counters.dropped_malformed.fetch_add(1, Ordering::Relaxed);
                    }
                    // already counted where detected
                    RelayError::NotHost(_) => {}
                    _ => {
                        self.counters.dropped_other.fetch_add(1, Ordering::Relaxed);
                    }
                }
                Vec::new()
            }
        }
    }

    pub fn stats(&self) -> RelayStats {
        RelayStats {
            forwarded: self.counters.forwarded.load(Ordering::Relaxed),
            dropped_not_host: self.counters.dropped_not_host.load(Ordering::Relaxed),
            dropped_malformed: self.counters.dropped_malformed.load(Ordering::Relaxed),
            dropped_other: self.counters.dropped_other.load(Ordering::Relaxed),
        }
    }
}

/// What a device learns from a datagram the relay delivered to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    Joined {
        session_id: u64,
        index: u32,
    },
    Trigger(TriggerMsg),
    /// A trigger older than one already accepted.
    StaleTrigger(u32),
    /// An echo to send back through the relay.
    Reply(Vec<u8>),
    /// A completed round trip, measured by the host.
    RoundTrip {
        client: u32,
        sent_ns: u64,
    },
    Closed,
    Ignored,
}

/// Device-side protocol state: reflects probes and gates trigger ids.
#[derive(Debug, Clone, Default)]
pub struct DeviceEndpoint {
    pub session_id: Option<u64>,
    pub index: Option<u32>,
    gate: TriggerGate,
}

impl DeviceEndpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn join_request(session_id: Option<u64>, now_ns: u64) -> [u8; HEADER_LEN] {
        RelayDatagram::new(DatagramKind::Join, session_id.unwrap_or(0), 0, now_ns).encode()
    }

    pub fn handle(&mut self, bytes: &[u8]) -> DeviceEvent {
        let Ok(d) = RelayDatagram::decode(bytes) else {
            return DeviceEvent::Ignored;
        };
        match d.kind {
            DatagramKind::JoinAck => {
                self.session_id = Some(d.session_id);
                self.index = Some(d.trigger_id);
                DeviceEvent::Joined {
                    session_id: d.session_id,
                    index: d.trigger_id,
                }
            }
            DatagramKind::Trigger if self.session_id.is_some_and(|s| s != d.session_id) => DeviceEvent::Ignored,
            DatagramKind::Trigger => {
                if self.gate.accept(d.trigger_id) {
                    DeviceEvent::Trigger(d.to_trigger().expect("trigger kind"))
                } else {
                    DeviceEvent::StaleTrigger(d.trigger_id)
                }
            }
            DatagramKind::RttProbe => {
                let echo = RelayDatagram {
                    kind: DatagramKind::RttEcho,
                    ..d
                };
                DeviceEvent::Reply(echo.encode().to_vec())
            }
            DatagramKind::RttEcho => DeviceEvent::RoundTrip {
                client: d.trigger_id,
                sent_ns: d.timestamp_ns,
            },
            DatagramKind::Close => DeviceEvent::Closed,
            DatagramKind::Join => DeviceEvent::Ignored,
        }
    }

    pub fn stale_triggers(&self) -> u64 {
        self.gate.dropped()
    }
}

/// [`Relay`] behind a UDP socket, serviced by a background thread.
pub struct UdpRelayServer {
    relay: Arc<Relay>,
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl UdpRelayServer {
    pub fn spawn(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let local_addr = socket.local_addr()?;
        let relay = Arc::new(Relay::new());
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let relay = Arc::clone(&relay);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("udp-relay".into())
                .spawn(move || serve(socket, &relay, &stop))?
        };
        Ok(Self {
            relay,
            local_addr,
            stop,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn relay(&self) -> &Relay {
        &self.relay
    }

    pub fn shutdown(mut self) {
        self.stop_worker();
    }

    fn stop_worker(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for UdpRelayServer {
    fn drop(&mut self) {
        self.stop_worker();
    }
}

fn serve(socket: UdpSocket, relay: &Relay, stop: &AtomicBool) {
    let mut buf = [0u8; 2048];
    while !stop.load(Ordering::Relaxed) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(x) => x,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => continue,
        };
        for out in relay.handle_datagram(from, &buf[..n]) {
            // unreliable transport: a failed send is a lost datagram
            let _ = socket.send_to(&out.bytes, out.to);
        }
    }
}
