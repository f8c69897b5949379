//! The S3VC feature container.
//!
//! Little-endian layout: magic `S3VC` | u32 version (1) | u32 n_frames |
//! u32 dim | f32 frame_shift_ms | `n_frames * dim` f32 payload, row-major.

use std::path::Path;

use ndarray::Array2;

use super::types::FeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"S3VC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let (t, d) = seq.frames().dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&seq.frame_shift_ms().to_le_bytes());
    for v in seq.frames().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Decodes a container. The returned sequence is labelled `source_name`.
pub fn decode_features(bytes: &[u8], source_name: &str) -> Result<FeatureSequence> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: FEATURE_MAGIC,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let n_frames = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    let shift = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed("frame count overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Array2::from_shape_vec((n_frames, dim), data)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    FeatureSequence::new(frames, shift, source_name)
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn smallest_sequence_round_trips() {
        let seq = FeatureSequence::new(array![[0.0f32]], 10.0, "x").unwrap();
        let back = decode_features(&encode_features(&seq), "x").unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn header_errors_are_distinct() {
        let seq = FeatureSequence::new(array![[1.0f32, 2.0], [3.0, 4.0]], 20.0, "x").unwrap();
        let good = encode_features(&seq);

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bad, "x"), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_features(&bad, "x"),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));

        assert!(matches!(
            decode_features(&good[..good.len() - 1], "x"),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode_features(&good[..10], "x"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("E10001.s3vc");
        let seq = FeatureSequence::new(Array2::from_elem((3, 4), 0.25f32), 12.5, "E10001").unwrap();
        write_features(&seq, &path).unwrap();
        assert_eq!(read_features(&path).unwrap(), seq);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in 1usize..40, d in 1usize..40, shift in 0.1f32..100.0, seed in any::<u64>()) {
            let mut state = seed;
            let frames = Array2::from_shape_fn((t, d), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((state >> 40) as u32) | 0x3f00_0000) * if state & 1 == 0 { 1.0 } else { -1e3 }
            });
            let seq = FeatureSequence::new(frames, shift, "p").unwrap();
            let back = decode_features(&encode_features(&seq), "p").unwrap();
            prop_assert_eq!(back.frame_shift_ms().to_bits(), shift.to_bits());
            prop_assert!(back.frames().iter().zip(seq.frames().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
