//! Checkpoint format: "MMFS" magic, a little-endian u32 format version,
//! a u64 tensor count, then per tensor the name (u64 length + UTF-8 bytes),
//! rank and dims as u64, and values as little-endian f32. Architecture goes
//! in a JSON sidecar at `<path>.json`; values are stored at f32 precision.

use std::io::Write;
use std::path::{Path, PathBuf};

use mmfs_models::{SentimentModel, StateEntry};

use crate::error::{Result, TrainError};
use crate::trainer::ModelSpec;

const MAGIC: &[u8; 4] = b"MMFS";
const VERSION: u32 = 1;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

pub fn save_checkpoint(model: &SentimentModel, path: &Path) -> Result<()> {
    let state = model.state_dict();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(state.len() as u64).to_le_bytes())?;
    for (name, shape, values) in &state {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u64).to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    let spec = ModelSpec::of(model);
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses the binary tensor section. A short or malformed file yields
/// `TensorCountMismatch` against the declared count.
pub fn read_state(path: &Path) -> Result<Vec<StateEntry>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TrainError::BadMagic);
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: 4,
    };
    let version = r
        .take(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(TrainError::BadMagic)?;
    if version != VERSION {
        return Err(TrainError::VersionMismatch { found: version });
    }
    let count = r.u64().ok_or(TrainError::BadMagic)?;
    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let truncated = || TrainError::TensorCountMismatch {
            expected: count,
            found: i,
        };
        let name_len = r.u64().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(name_len).ok_or_else(truncated)?)
            .map_err(|_| TrainError::StateMismatch(format!("tensor {i}: invalid name bytes")))?
            .to_string();
        let rank = r.u64().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64().ok_or_else(truncated)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4).ok_or_else(truncated)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push((name, shape, values));
    }
    Ok(entries)
}

/// Rebuilds the architecture from the sidecar and restores every tensor.
/// Nothing partial is ever returned.
pub fn load_checkpoint(path: &Path) -> Result<SentimentModel> {
    let sidecar = sidecar_path(path);
    let spec: ModelSpec = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)
        .map_err(|e| TrainError::StateMismatch(format!("sidecar {sidecar:?}: {e}")))?;
    let entries = read_state(path)?;
    let model = spec.build();
    let expected = model.state_dict().len() as u64;
    if entries.len() as u64 != expected {
        return Err(TrainError::TensorCountMismatch {
            expected,
            found: entries.len() as u64,
        });
    }
    model
        .load_state_dict(&entries)
        .map_err(TrainError::StateMismatch)?;
    Ok(model)
}
