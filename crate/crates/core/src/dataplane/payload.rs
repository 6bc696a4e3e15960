use crate::geometry::Joint2D;
use crate::hull::Mask;

use super::DataplaneError;

const JOINT_BYTES: usize = 12;

/// JOINTS2D: `M × (f32 x, f32 y, f32 confidence)`; a missing joint is
/// confidence 0 with NaN coordinates.
pub fn encode_joints(joints: &[Option<Joint2D>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(joints.len() * JOINT_BYTES);
    for j in joints {
        let (x, y, c) = match j {
            Some(j) => (j.position.x as f32, j.position.y as f32, j.confidence as f32),
            None => (f32::NAN, f32::NAN, 0.0),
        };
        for v in [x, y, c] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a JOINTS2D payload that must contain exactly `expected` joints.
pub fn decode_joints(bytes: &[u8], expected: usize) -> Result<Vec<Option<Joint2D>>, DataplaneError> {
    if bytes.len() != expected * JOINT_BYTES {
        return Err(DataplaneError::BadPayload(format!(
            "{} bytes for {expected} joints",
            bytes.len()
        )));
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
    Ok(bytes
        .chunks_exact(JOINT_BYTES)
        .map(|c| {
            let (x, y, conf) = (f(&c[0..4]), f(&c[4..8]), f(&c[8..12]));
            (conf > 0.0 && x.is_finite() && y.is_finite()).then(|| Joint2D::new(x, y, conf))
        })
        .collect())
}

/// SILHOUETTE: `u32 width, u32 height`, then u32 run lengths alternating
/// background/foreground, starting with background (possibly a zero run).
pub fn encode_silhouette(mask: &Mask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&mask.width().to_le_bytes());
    out.extend_from_slice(&mask.height().to_le_bytes());
    let mut current = false;
    let mut run = 0u32;
    for &p in mask.pixels() {
        if p != current {
            out.extend_from_slice(&run.to_le_bytes());
            current = p;
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        out.extend_from_slice(&run.to_le_bytes());
    }
    out
}

pub fn decode_silhouette(bytes: &[u8]) -> Result<Mask, DataplaneError> {
    let bad = |m: &str| DataplaneError::BadPayload(m.to_owned());
    if bytes.len() < 8 || bytes.len() % 4 != 0 {
        return Err(bad("silhouette length is not a whole number of words"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let (width, height) = (word(0), word(1));
    let total = width as usize * height as usize;
    let mut pixels = Vec::with_capacity(total);
    let mut value = false;
    for i in 2..bytes.len() / 4 {
        let run = word(i) as usize;
        if pixels.len() + run > total {
            return Err(bad("runs overflow the mask"));
        }
        pixels.resize(pixels.len() + run, value);
        value = !value;
    }
    Mask::from_pixels(width, height, pixels).ok_or_else(|| bad("runs do not cover the mask"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn missing_joint_encoding() {
        let joints = vec![Some(Joint2D::new(10.5, 20.25, 0.75)), None];
        let b = encode_joints(&joints);
        assert_eq!(b.len(), 24);
        assert!(f32::from_le_bytes(b[12..16].try_into().unwrap()).is_nan());
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 0.0);
        assert_eq!(decode_joints(&b, 2).unwrap(), joints);
    }

    #[test]
    fn joint_count_contract() {
        let b = encode_joints(&vec![None; 24]);
        assert!(matches!(decode_joints(&b, 25), Err(DataplaneError::BadPayload(_))));
    }

    #[test]
    fn silhouette_runs_start_with_background() {
        let m = Mask::from_pixels(3, 1, vec![true, true, false]).unwrap();
        let b = encode_silhouette(&m);
        let words: Vec<u32> = b.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(words, vec![3, 1, 0, 2, 1]);
        assert_eq!(decode_silhouette(&b).unwrap(), m);
    }

    #[test]
    fn short_runs_are_rejected() {
        let mut b = encode_silhouette(&Mask::full(4, 4));
        b.truncate(b.len() - 4);
        b.extend_from_slice(&15u32.to_le_bytes());
        assert!(decode_silhouette(&b).is_err());
    }

    proptest! {
        #[test]
        fn silhouette_round_trip(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
            let m = Mask::from_fn(w, h, |u, v| (seed >> ((u * 7 + v * 13) % 64)) & 1 == 1);
            prop_assert_eq!(decode_silhouette(&encode_silhouette(&m)).unwrap(), m);
        }
    }
}
