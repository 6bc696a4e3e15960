use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::payload::{decode_joints, decode_silhouette};
use super::record::{CaptureRecord, PayloadKind};

pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rejection {
    ChecksumMismatch,
    BadPose,
    NonMonotonicTime,
    BadIntrinsics,
    BadPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    Rejected(Rejection),
}

/// Integrity checks on received records; keeps per-device time and
/// per-reason rejection counts.
#[derive(Debug, Clone)]
pub struct Verifier {
    joint_count: usize,
    last_time: HashMap<u16, i64>,
    verified: u64,
    rejected: BTreeMap<Rejection, u64>,
}

impl Verifier {
    pub fn new(joint_count: usize) -> Self {
        Self {
            joint_count,
            last_time: HashMap::new(),
            verified: 0,
            rejected: BTreeMap::new(),
        }
    }

    fn check(&self, r: &CaptureRecord) -> Result<(), Rejection> {
        if !r.checksum_ok() {
            return Err(Rejection::ChecksumMismatch);
        }
        if r.pose.validate(POSE_TOLERANCE).is_err() {
            return Err(Rejection::BadPose);
        }
        if r.intrinsics.validate().is_err() {
            return Err(Rejection::BadIntrinsics);
        }
        if self.last_time.get(&r.device).is_some_and(|t| r.capture_time_ns <= *t) {
            return Err(Rejection::NonMonotonicTime);
        }
        let payload_ok = match r.payload_kind {
            PayloadKind::Image => !r.payload.is_empty(),
            PayloadKind::Joints2d => decode_joints(&r.payload, self.joint_count).is_ok(),
            PayloadKind::Silhouette => decode_silhouette(&r.payload).is_ok_and(|m| {
                f64::from(m.width()) == r.intrinsics.width && f64::from(m.height()) == r.intrinsics.height
            }),
        };
        if !payload_ok {
            return Err(Rejection::BadPayload);
        }
        Ok(())
    }

    pub fn verify(&mut self, record: &CaptureRecord) -> Verdict {
        match self.check(record) {
            Ok(()) => {
                self.last_time.insert(record.device, record.capture_time_ns);
                self.verified += 1;
                Verdict::Verified
            }
            Err(reason) => {
                *self.rejected.entry(reason).or_default() += 1;
                Verdict::Rejected(reason)
            }
        }
    }

    pub fn verified(&self) -> u64 {
        self.verified
    }

    pub fn rejected(&self) -> &BTreeMap<Rejection, u64> {
        &self.rejected
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}
