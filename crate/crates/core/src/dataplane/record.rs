use serde::{Deserialize, Serialize};

use super::DataplaneError;
use crate::geometry::{Intrinsics, Pose};

pub const RECORD_MAGIC: [u8; 4] = *b"SYCR";
pub const RECORD_VERSION: u8 = 1;
pub const MAX_PAYLOAD_LEN: usize = 16 * 1024 * 1024;
/// Serialized size of a record with an empty payload.
pub const RECORD_FIXED_LEN: usize = 4 + 1 + 2 + 4 + 8 + 12 * 8 + 6 * 8 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum PayloadKind {
    Image = 0,
    Joints2d = 1,
    Silhouette = 2,
}

impl PayloadKind {
    fn from_byte(b: u8) -> Result<Self, DataplaneError> {
        match b {
            0 => Ok(Self::Image),
            1 => Ok(Self::Joints2d),
            2 => Ok(Self::Silhouette),
            other => Err(DataplaneError::UnknownPayloadKind(other)),
        }
    }
}

/// Data retrieved by one device on arrival of one trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub device: u16,
    pub trigger_id: u32,
    /// Device-clock capture instant.
    pub capture_time_ns: i64,
    /// Globalized pose.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub payload_kind: PayloadKind,
    pub payload: Vec<u8>,
    /// CRC32 (IEEE) of `payload`.
    pub payload_checksum: u32,
}

impl CaptureRecord {
    pub fn new(
        device: u16,
        trigger_id: u32,
        capture_time_ns: i64,
        pose: Pose,
        intrinsics: Intrinsics,
        payload_kind: PayloadKind,
        payload: Vec<u8>,
    ) -> Self {
        let payload_checksum = crc32fast::hash(&payload);
        Self {
            device,
            trigger_id,
            capture_time_ns,
            pose,
            intrinsics,
            payload_kind,
            payload,
            payload_checksum,
        }
    }

    pub fn checksum_ok(&self) -> bool {
        crc32fast::hash(&self.payload) == self.payload_checksum
    }

    pub fn serialized_len(&self) -> usize {
        RECORD_FIXED_LEN + self.payload.len()
    }
}

pub fn serialize_record(record: &CaptureRecord) -> Result<Vec<u8>, DataplaneError> {
    let mut out = Vec::with_capacity(record.serialized_len());
    serialize_into(record, &mut out)?;
    Ok(out)
}

/// Appends the serialized record to `out`.
pub fn serialize_into(record: &CaptureRecord, out: &mut Vec<u8>) -> Result<(), DataplaneError> {
    if record.payload.len() > MAX_PAYLOAD_LEN {
        return Err(DataplaneError::PayloadTooLarge(record.payload.len()));
    }
    out.reserve(record.serialized_len());
    out.extend_from_slice(&RECORD_MAGIC);
    out.push(RECORD_VERSION);
    out.extend_from_slice(&record.device.to_le_bytes());
    out.extend_from_slice(&record.trigger_id.to_le_bytes());
    out.extend_from_slice(&record.capture_time_ns.to_le_bytes());
    for v in record.pose.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let k = &record.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy, k.width, k.height] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(record.payload_kind as u8);
    out.extend_from_slice(&(record.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&record.payload);
    out.extend_from_slice(&record.payload_checksum.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataplaneError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or(DataplaneError::TruncatedInput {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DataplaneError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn f64(&mut self) -> Result<f64, DataplaneError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn deserialize_record(bytes: &[u8]) -> Result<CaptureRecord, DataplaneError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.array::<4>()? != RECORD_MAGIC {
        return Err(DataplaneError::BadMagic);
    }
    let version = r.array::<1>()?[0];
    if version != RECORD_VERSION {
        return Err(DataplaneError::UnsupportedVersion(version));
    }
    let device = u16::from_le_bytes(r.array()?);
    let trigger_id = u32::from_le_bytes(r.array()?);
    let capture_time_ns = i64::from_le_bytes(r.array()?);
    let mut pose = [0.0; 12];
    for v in &mut pose {
        *v = r.f64()?;
    }
    let mut k = [0.0; 6];
    for v in &mut k {
        *v = r.f64()?;
    }
    let payload_kind = PayloadKind::from_byte(r.array::<1>()?[0])?;
    let len = u32::from_le_bytes(r.array()?) as usize;
    if len > MAX_PAYLOAD_LEN {
        return Err(DataplaneError::PayloadTooLarge(len));
    }
    let payload = r.take(len)?.to_vec();
    let stored = u32::from_le_bytes(r.array()?);
    if r.pos != bytes.len() {
        return Err(DataplaneError::TrailingBytes(bytes.len() - r.pos));
    }
    let actual = crc32fast::hash(&payload);
    if actual != stored {
        return Err(DataplaneError::ChecksumMismatch { stored, actual });
    }
    Ok(CaptureRecord {
        device,
        trigger_id,
        capture_time_ns,
        pose: Pose::from_row_major(&pose),
        intrinsics: Intrinsics {
            fx: k[0],
            fy: k[1],
            cx: k[2],
            cy: k[3],
            width: k[4],
            height: k[5],
        },
        payload_kind,
        payload,
        payload_checksum: stored,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use std::time::Instant;

    pub(crate) fn sample(device: u16, trigger_id: u32, payload: Vec<u8>) -> CaptureRecord {
        CaptureRecord::new(
            device,
            trigger_id,
            1_000_000 * trigger_id as i64,
            Pose::identity(),
            Intrinsics::centered(600.0, 640, 480).unwrap(),
            PayloadKind::Image,
            payload,
        )
    }

    #[test]
    fn empty_payload_is_fixed_header_only() {
        let r = sample(3, 5, Vec::new());
        let b = serialize_record(&r).unwrap();
        assert_eq!(b.len(), RECORD_FIXED_LEN);
        assert_eq!(RECORD_FIXED_LEN, 172);
        assert_eq!(deserialize_record(&b).unwrap(), r);
    }

    #[test]
    fn layout_is_little_endian_in_declared_order() {
        let r = sample(0x0102, 0x03040506, vec![0xAA]);
        let b = serialize_record(&r).unwrap();
        assert_eq!(&b[0..4], b"SYCR");
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..7], &[0x02, 0x01]);
        assert_eq!(&b[7..11], &[0x06, 0x05, 0x04, 0x03]);
        assert_eq!(i64::from_le_bytes(b[11..19].try_into().unwrap()), r.capture_time_ns);
        assert_eq!(f64::from_le_bytes(b[19..27].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[115..123].try_into().unwrap()), 600.0);
        assert_eq!(b[163], PayloadKind::Image as u8);
        assert_eq!(&b[164..168], &[1, 0, 0, 0]);
        assert_eq!(b[168], 0xAA);
        assert_eq!(
            u32::from_le_bytes(b[169..173].try_into().unwrap()),
            crc32fast::hash(&[0xAA])
        );
    }

    #[test]
    fn average_frame_size() {
        let r = sample(0, 0, vec![7; 160 * 1024]);
        assert_eq!(serialize_record(&r).unwrap().len(), RECORD_FIXED_LEN + 160 * 1024);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut b = serialize_record(&sample(1, 1, vec![1, 2, 3, 4])).unwrap();
        b[RECORD_FIXED_LEN - 4 + 1] ^= 0x40;
        assert!(matches!(
            deserialize_record(&b),
            Err(DataplaneError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncation_and_magic() {
        let b = serialize_record(&sample(1, 1, vec![9; 32])).unwrap();
        for cut in [0, 3, 100, b.len() - 1] {
            assert!(matches!(
                deserialize_record(&b[..cut]),
                Err(DataplaneError::TruncatedInput { .. })
            ));
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_record(&bad), Err(DataplaneError::BadMagic)));
    }

    #[test]
    fn oversized_payload_is_refused() {
        let r = sample(0, 0, vec![0; MAX_PAYLOAD_LEN + 1]);
        assert!(matches!(serialize_record(&r), Err(DataplaneError::PayloadTooLarge(_))));
    }

    #[test]
    fn codec_throughput_exceeds_a_thousand_records_per_second() {
        let r = sample(2, 9, (0..160 * 1024).map(|i| i as u8).collect());
        let n = 2000;
        let start = Instant::now();
        for _ in 0..n {
            let b = serialize_record(&r).unwrap();
            let back = deserialize_record(&b).unwrap();
            assert_eq!(back.trigger_id, 9);
        }
        let rate = n as f64 / start.elapsed().as_secs_f64();
        assert!(rate >= 1000.0, "{rate:.0} records/s");
    }

    pub(crate) fn arb_record() -> impl Strategy<Value = CaptureRecord> {
        (
            any::<u16>(),
            any::<u32>(),
            any::<i64>(),
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-10.0f64..10.0),
            (100.0f64..2000.0, 100.0f64..2000.0, 0.0f64..640.0, 0.0f64..480.0),
            0u8..3,
            prop::collection::vec(any::<u8>(), 0..512),
        )
            .prop_map(|(device, trigger, time, w, t, (fx, fy, cx, cy), kind, payload)| {
                let rot = Rotation3::new(Vector3::from(w)).into_inner();
                CaptureRecord::new(
                    device,
                    trigger,
                    time,
                    Pose::new(rot, Vector3::from(t)).unwrap(),
                    Intrinsics::new(fx, fy, cx, cy, 640.0, 480.0).unwrap(),
                    PayloadKind::from_byte(kind).unwrap(),
                    payload,
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip_is_identity(r in arb_record()) {
            let b = serialize_record(&r).unwrap();
            prop_assert_eq!(b.len(), r.serialized_len());
            prop_assert_eq!(deserialize_record(&b).unwrap(), r);
        }
    }
}
