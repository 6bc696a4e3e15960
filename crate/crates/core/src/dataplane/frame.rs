use super::record::{deserialize_record, serialize_into, CaptureRecord, MAX_PAYLOAD_LEN, RECORD_FIXED_LEN};
use super::DataplaneError;

pub const FRAME_MAGIC: [u8; 4] = *b"SYFR";
pub const FRAME_HEADER_LEN: usize = 8;
const MAX_BODY_LEN: usize = RECORD_FIXED_LEN + MAX_PAYLOAD_LEN;

/// Manager→device acknowledgement: every record of `device` up to and
/// including `trigger_id` has been received.
pub const ACK_MAGIC: [u8; 4] = *b"SACK";
pub const ACK_LEN: usize = 10;

pub fn encode_frame(record: &CaptureRecord) -> Result<Vec<u8>, DataplaneError> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + record.serialized_len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&(record.serialized_len() as u32).to_le_bytes());
    serialize_into(record, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub frames: u64,
    /// Frames whose header was found but whose body failed to decode.
    pub corrupt_frames: u64,
    pub skipped_bytes: u64,
}

/// Incremental StreamFrame decoder that rescans for the magic after corruption.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
    stats: DecoderStats,
}

enum Step {
    Record(CaptureRecord),
    NeedMore,
    Skip(usize),
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start * 2 >= self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    fn step(&self, at_eof: bool) -> Step {
        let data = &self.buf[self.start..];
        let Some(pos) = find_magic(data) else {
            // keep a possible magic prefix at the tail
            let keep = if at_eof {
                0
            } else {
                data.len().min(FRAME_MAGIC.len() - 1)
            };
            return match data.len() - keep {
                0 => Step::NeedMore,
                n => Step::Skip(n),
            };
        };
        if pos > 0 {
            return Step::Skip(pos);
        }
        if data.len() < FRAME_HEADER_LEN {
            return if at_eof { Step::Skip(1) } else { Step::NeedMore };
        }
        let len = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes")) as usize;
        if !(RECORD_FIXED_LEN..=MAX_BODY_LEN).contains(&len) {
            return Step::Skip(1);
        }
        if data.len() < FRAME_HEADER_LEN + len {
            return if at_eof { Step::Skip(1) } else { Step::NeedMore };
        }
        match deserialize_record(&data[FRAME_HEADER_LEN..FRAME_HEADER_LEN + len]) {
            Ok(r) => Step::Record(r),
            Err(_) => Step::Skip(1),
        }
    }

    fn next_inner(&mut self, at_eof: bool) -> Option<CaptureRecord> {
        loop {
            match self.step(at_eof) {
                Step::NeedMore => return None,
                Step::Record(r) => {
                    self.start += FRAME_HEADER_LEN + r.serialized_len();
                    self.stats.frames += 1;
                    return Some(r);
                }
                Step::Skip(n) => {
                    if self.buf[self.start..].starts_with(&FRAME_MAGIC) {
                        self.stats.corrupt_frames += 1;
                    }
                    self.start += n;
                    self.stats.skipped_bytes += n as u64;
                }
            }
        }
    }

    /// Next complete frame, or `None` until more bytes arrive.
    pub fn next_record(&mut self) -> Option<CaptureRecord> {
        self.next_inner(false)
    }

    pub fn drain(&mut self) -> Vec<CaptureRecord> {
        std::iter::from_fn(|| self.next_record()).collect()
    }

    /// End of stream: recovers any frame hidden behind an incomplete one.
    pub fn finish(&mut self) -> Vec<CaptureRecord> {
        let out = std::iter::from_fn(|| self.next_inner(true)).collect();
        self.buf.clear();
        self.start = 0;
        out
    }
}

fn find_magic(data: &[u8]) -> Option<usize> {
    data.windows(FRAME_MAGIC.len()).position(|w| w == FRAME_MAGIC)
}

pub fn encode_ack(device: u16, trigger_id: u32) -> [u8; ACK_LEN] {
    let mut out = [0u8; ACK_LEN];
    out[0..4].copy_from_slice(&ACK_MAGIC);
    out[4..6].copy_from_slice(&device.to_le_bytes());
    out[6..10].copy_from_slice(&trigger_id.to_le_bytes());
    out
}

/// Splits a byte stream into acknowledgements, skipping anything else.
#[derive(Debug, Default)]
pub struct AckDecoder {
    buf: Vec<u8>,
}

impl AckDecoder {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<(u16, u32)> {
        self.buf.extend_from_slice(bytes);
        let mut acks = Vec::new();
        let mut i = 0;
        while self.buf.len() - i >= ACK_LEN {
            if self.buf[i..i + 4] == ACK_MAGIC {
                let b = &self.buf[i..i + ACK_LEN];
                acks.push((
                    u16::from_le_bytes([b[4], b[5]]),
                    u32::from_le_bytes(b[6..10].try_into().expect("4 bytes")),
                ));
                i += ACK_LEN;
            } else {
                i += 1;
            }
        }
        self.buf.drain(..i);
        acks
    }
}
