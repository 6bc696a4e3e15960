use std::collections::VecDeque;
use std::io;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;

/// One-way latency: a fixed base plus a shifted-lognormal jitter term whose
/// mean and standard deviation both equal `jitter_std_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_ns: i64,
    pub jitter_std_ns: f64,
}

impl LatencyModel {
    pub fn fixed(base_ns: i64) -> Self {
        Self {
            base_ns,
            jitter_std_ns: 0.0,
        }
    }

    pub fn new(base_ns: i64, jitter_std_ns: f64) -> Result<Self, SimError> {
        if base_ns < 0 || !(jitter_std_ns >= 0.0) || !jitter_std_ns.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "latency base {base_ns} ns, jitter {jitter_std_ns} ns"
            )));
        }
        Ok(Self { base_ns, jitter_std_ns })
    }

    /// Mean one-way delay.
    pub fn mean_ns(&self) -> f64 {
        self.base_ns as f64 + self.jitter_std_ns
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        if self.jitter_std_ns <= 0.0 {
            return self.base_ns;
        }
        // lognormal with mean m and std m: σ² = ln 2, μ = ln m − σ²/2
        let s2 = std::f64::consts::LN_2;
        let d = LogNormal::new(self.jitter_std_ns.ln() - s2 / 2.0, s2.sqrt()).expect("valid lognormal");
        self.base_ns + d.sample(rng).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub latency: LatencyModel,
    /// Probability that a datagram is lost.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    At(i64),
    Lost,
}

impl Link {
    pub fn new(latency: LatencyModel, loss: f64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(SimError::InvalidConfig(format!("loss probability {loss}")));
        }
        Ok(Self { latency, loss })
    }

    pub fn lossless(latency: LatencyModel) -> Self {
        Self { latency, loss: 0.0 }
    }
}

/// Delivery time of a datagram sent at `send_ns`, or `Lost`.
///
/// Both the loss draw and the latency draw are always taken, so changing
/// the loss probability does not shift the latency sequence.
pub fn network_deliver<R: Rng + ?Sized>(send_ns: i64, link: &Link, rng: &mut R) -> Delivery {
    let u: f64 = rng.gen();
    let delay = link.latency.sample(rng);
    if u < link.loss {
        Delivery::Lost
    } else {
        Delivery::At(send_ns + delay)
    }
}

/// Shared medium with a byte-rate cap, served first come first served.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthQueue {
    /// `None` is unlimited.
    pub cap_bytes_per_s: Option<f64>,
    busy_until_ns: f64,
}

impl BandwidthQueue {
    pub fn new(cap_bytes_per_s: Option<f64>) -> Result<Self, SimError> {
        if cap_bytes_per_s.is_some_and(|c| !(c > 0.0) || !c.is_finite()) {
            return Err(SimError::InvalidConfig("bandwidth cap must be positive".into()));
        }
        Ok(Self {
            cap_bytes_per_s,
            busy_until_ns: f64::NEG_INFINITY,
        })
    }

    /// Time the last byte of a `bytes`-long transfer submitted at `now_ns` leaves.
    pub fn transmit(&mut self, now_ns: i64, bytes: usize) -> i64 {
        let Some(cap) = self.cap_bytes_per_s else {
            return now_ns;
        };
        let start = self.busy_until_ns.max(now_ns as f64);
        self.busy_until_ns = start + bytes as f64 * 1e9 / cap;
        self.busy_until_ns.ceil() as i64
    }

    /// Bytes not yet transmitted at `now_ns`.
    pub fn backlog_bytes(&self, now_ns: i64) -> f64 {
        match self.cap_bytes_per_s {
            Some(cap) => ((self.busy_until_ns - now_ns as f64).max(0.0)) * cap / 1e9,
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Socket {
    capacity: usize,
    /// (departure time, bytes) of segments still inside the socket buffer.
    backlog: VecDeque<(i64, usize)>,
    last_arrival: i64,
}

impl Socket {
    fn occupied(&mut self, now: i64) -> usize {
        while self.backlog.front().is_some_and(|(t, _)| *t <= now) {
            self.backlog.pop_front();
        }
        self.backlog.iter().map(|(_, n)| n).sum()
    }
}

/// A segment that will reach the manager.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub device: usize,
    pub arrival_ns: i64,
    pub bytes: Vec<u8>,
}

/// Reliable device→manager streams sharing one capped medium; each device
/// has a bounded socket buffer so writes can would-block.
#[derive(Debug, Clone)]
pub struct DataNetwork {
    medium: BandwidthQueue,
    latency: LatencyModel,
    sockets: Vec<Socket>,
}

impl DataNetwork {
    pub fn new(devices: usize, medium: BandwidthQueue, latency: LatencyModel, socket_bytes: usize) -> Self {
        Self {
            medium,
            latency,
            sockets: (0..devices)
                .map(|_| Socket {
                    capacity: socket_bytes.max(1),
                    backlog: VecDeque::new(),
                    last_arrival: i64::MIN,
                })
                .collect(),
        }
    }

    pub fn medium(&self) -> &BandwidthQueue {
        &self.medium
    }

    /// Accepts up to the free socket space. Arrivals stay in FIFO order.
    pub fn write<R: Rng + ?Sized>(
        &mut self,
        device: usize,
        now_ns: i64,
        bytes: &[u8],
        rng: &mut R,
    ) -> io::Result<Segment> {
        let socket = &mut self.sockets[device];
        let free = socket.capacity.saturating_sub(socket.occupied(now_ns));
        let n = free.min(bytes.len());
        if n == 0 {
            return Err(io::ErrorKind::WouldBlock.into());
        }
        let departure = self.medium.transmit(now_ns, n);
        socket.backlog.push_back((departure, n));
        let arrival = (departure + self.latency.sample(rng)).max(socket.last_arrival);
        socket.last_arrival = arrival;
        Ok(Segment {
            device,
            arrival_ns: arrival,
            bytes: bytes[..n].to_vec(),
        })
    }

    /// When the device's socket next frees space, if it is holding data.
    pub fn next_drain(&mut self, device: usize, now_ns: i64) -> Option<i64> {
        let socket = &mut self.sockets[device];
        socket.occupied(now_ns);
        socket.backlog.front().map(|(t, _)| *t)
    }

    pub fn occupied(&mut self, device: usize, now_ns: i64) -> usize {
        self.sockets[device].occupied(now_ns)
    }
}

/// [`io::Write`] view of one device's uplink at a fixed instant.
pub struct Uplink<'a, R: Rng + ?Sized> {
    pub net: &'a mut DataNetwork,
    pub device: usize,
    pub now_ns: i64,
    pub rng: &'a mut R,
    pub sent: Vec<Segment>,
}

impl<R: Rng + ?Sized> io::Write for Uplink<'_, R> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let seg = self.net.write(self.device, self.now_ns, buf, self.rng)?;
        let n = seg.bytes.len();
        self.sent.push(seg);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
