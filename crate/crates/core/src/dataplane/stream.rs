use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::frame::encode_frame;
use super::record::CaptureRecord;
use super::DataplaneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Frames held while the connection cannot keep up; the oldest is dropped beyond this.
    pub buffer_depth: usize,
    /// Frames kept after sending until acknowledged, for resending after a reconnect.
    pub max_unacked: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            buffer_depth: 64,
            max_unacked: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub enqueued: u64,
    pub sent: u64,
    pub dropped_oldest: u64,
    pub acked: u64,
    pub resent: u64,
    /// Sent frames forgotten before their ack because the window was full.
    pub unacked_evicted: u64,
}

#[derive(Debug, Clone)]
struct Outbound {
    trigger_id: u32,
    bytes: Vec<u8>,
}

/// Device-side transmission state over any non-blocking [`Write`].
///
/// `enqueue` never blocks: when the connection stalls, frames wait in a
/// bounded buffer and the oldest is dropped once it is full.
#[derive(Debug, Clone)]
pub struct ClientStream {
    device: u16,
    config: StreamConfig,
    queue: VecDeque<Outbound>,
    current: Option<(Outbound, usize)>,
    unacked: VecDeque<Outbound>,
    stats: StreamStats,
}

impl ClientStream {
    pub fn new(device: u16, config: StreamConfig) -> Self {
        Self {
            device,
            config,
            queue: VecDeque::new(),
            current: None,
            unacked: VecDeque::new(),
            stats: StreamStats::default(),
        }
    }

    pub fn device(&self) -> u16 {
        self.device
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.queue.len() + usize::from(self.current.is_some())
    }

    pub fn unacked(&self) -> usize {
        self.unacked.len()
    }

    pub fn is_drained(&self) -> bool {
        self.queue.is_empty() && self.current.is_none()
    }

    pub fn all_acked(&self) -> bool {
        self.is_drained() && self.unacked.is_empty()
    }

    pub fn enqueue(&mut self, record: &CaptureRecord) -> Result<(), DataplaneError> {
        let bytes = encode_frame(record)?;
        if self.queue.len() >= self.config.buffer_depth.max(1) {
            self.queue.pop_front();
            self.stats.dropped_oldest += 1;
        }
        self.queue.push_back(Outbound {
            trigger_id: record.trigger_id,
            bytes,
        });
        self.stats.enqueued += 1;
        Ok(())
    }

    /// Writes until the sink would block or the buffer is empty; returns the
    /// number of frames completed.
    pub fn pump<W: Write>(&mut self, sink: &mut W) -> Result<usize, DataplaneError> {
        let mut completed = 0;
        loop {
            let (frame, offset) = match self.current.take() {
                Some(c) => c,
                None => match self.queue.pop_front() {
                    Some(f) => (f, 0),
                    None => return Ok(completed),
                },
            };
            match sink.write(&frame.bytes[offset..]) {
                Ok(0) => {
                    self.current = Some((frame, offset));
                    return Err(DataplaneError::ConnectionLost);
                }
                Ok(n) if offset + n == frame.bytes.len() => {
                    completed += 1;
                    self.stats.sent += 1;
                    self.unacked.push_back(frame);
                    if self.unacked.len() > self.config.max_unacked {
                        self.unacked.pop_front();
                        self.stats.unacked_evicted += 1;
                    }
                }
                Ok(n) => self.current = Some((frame, offset + n)),
                Err(e) => {
                    self.current = Some((frame, offset));
                    match e.kind() {
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => return Ok(completed),
                        io::ErrorKind::Interrupted => {}
                        _ => return Err(DataplaneError::ConnectionLost),
                    }
                }
            }
        }
    }

    /// Cumulative acknowledgement of every frame up to `trigger_id`.
    pub fn on_ack(&mut self, trigger_id: u32) {
        while self.unacked.front().is_some_and(|f| f.trigger_id <= trigger_id) {
            self.unacked.pop_front();
            self.stats.acked += 1;
        }
    }

    /// Prepares to resume on a fresh connection: unacknowledged frames and a
    /// partially written frame go back to the front of the buffer, in order.
    pub fn reconnect(&mut self) {
        let mut resume: VecDeque<Outbound> = std::mem::take(&mut self.unacked);
        self.stats.resent += resume.len() as u64;
        if let Some((frame, _)) = self.current.take() {
            resume.push_back(frame);
        }
        resume.append(&mut self.queue);
        self.queue = resume;
    }
}
