//! Capture records on the wire: serialization, framed streaming with
//! backpressure, integrity verification, merge-by-trigger and persistence.

mod frame;
mod merge;
mod payload;
mod record;
mod store;
mod stream;
mod tcp;
mod verify;

use thiserror::Error;

pub use frame::{
    encode_ack, encode_frame, AckDecoder, DecoderStats, FrameDecoder, ACK_LEN, ACK_MAGIC, FRAME_HEADER_LEN, FRAME_MAGIC,
};
pub use merge::{FlushPolicy, MergeStats, MergedCapture, Merger, DEFAULT_MERGE_TIMEOUT_NS};
pub use payload::{decode_joints, decode_silhouette, encode_joints, encode_silhouette};
pub use record::{
    deserialize_record, serialize_into, serialize_record, CaptureRecord, PayloadKind, MAX_PAYLOAD_LEN,
    RECORD_FIXED_LEN, RECORD_MAGIC, RECORD_VERSION,
};
pub use store::{load_index, load_store, trigger_dir_name, DirectoryStore, RecordEntry, TriggerEntry, MANIFEST_FILE};
pub use stream::{ClientStream, StreamConfig, StreamStats};
pub use tcp::{ManagerConfig, ManagerReport, TcpClient, TcpManager, DEFAULT_MANAGER_PORT};
pub use verify::{Rejection, Verdict, Verifier, POSE_TOLERANCE};

#[derive(Debug, Error)]
pub enum DataplaneError {
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    PayloadTooLarge(usize),
    #[error("payload checksum mismatch (stored {stored:#010x}, computed {actual:#010x})")]
    ChecksumMismatch { stored: u32, actual: u32 },
    #[error("truncated input: need {needed} bytes, have {available}")]
    TruncatedInput { needed: usize, available: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported record version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown payload kind {0}")]
    UnknownPayloadKind(u8),
    #[error("{0} trailing bytes after record")]
    TrailingBytes(usize),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("trigger {0} is already persisted")]
    DuplicateTrigger(u32),
    #[error("connection lost")]
    ConnectionLost,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}
