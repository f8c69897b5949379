//! S3CK checkpoint container.
//!
//! Little-endian layout: magic `S3CK` | u32 version (1) | u32 meta_len |
//! meta JSON (decoder config, seed, step) | u32 n_tensors | per tensor:
//! u32 name_len, UTF-8 name, u32 rows, u32 cols, `rows * cols` f64 row-major.
//! Normalization statistics travel as `stats.*` tensors of shape `1 x D`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::params::{DecoderConfig, FeatureStats, ModelParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"S3CK";
const VERSION: u32 = 1;

/// Trained decoder plus the target-mel statistics used to denormalize its output.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub target_stats: FeatureStats,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: DecoderConfig,
    seed: u64,
    step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Array2<f64>) {
    put_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.nrows());
    put_u32(buf, t.ncols());
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        config: ck.params.config().clone(),
        seed: ck.params.seed(),
        step: ck.step,
    })
    .expect("meta serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut buf, VERSION as usize);
    put_u32(&mut buf, meta.len());
    buf.extend_from_slice(&meta);
    let stats = [
        ("stats.input.mean", row(&ck.params.input_stats().mean)),
        ("stats.input.std", row(&ck.params.input_stats().std)),
        ("stats.target.mean", row(&ck.target_stats.mean)),
        ("stats.target.std", row(&ck.target_stats.std)),
    ];
    put_u32(&mut buf, ck.params.tensors().len() + stats.len());
    for (name, t) in ck.params.tensors() {
        put_tensor(&mut buf, name, t);
    }
    for (name, t) in &stats {
        put_tensor(&mut buf, name, t);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { found: magic, expected: CHECKPOINT_MAGIC });
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let meta_len = r.u32()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Malformed(e.to_string()))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Malformed(e.to_string()))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Malformed("tensor size overflow".into()))?;
        let data = r.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("tensor size overflow".into()))?)?;
        let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Array2::from_shape_vec((rows, cols), values).expect("sized")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut take_stat = |name: &str| -> Result<Array1<f64>> {
        let idx = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Malformed(format!("missing `{name}`")))?;
        let (_, t) = tensors.remove(idx);
        Ok(t.row(0).to_owned())
    };
    let input_stats = FeatureStats { mean: take_stat("stats.input.mean")?, std: take_stat("stats.input.std")? };
    let target_stats = FeatureStats { mean: take_stat("stats.target.mean")?, std: take_stat("stats.target.std")? };
    let params = ModelParameters::from_parts(meta.config, meta.seed, tensors, input_stats)?;
    Ok(Checkpoint { params, target_stats, step: meta.step })
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::io::Write::write_all(&mut tmp, &encode_checkpoint(ck)).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
