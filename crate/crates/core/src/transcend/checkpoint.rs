//! Sectioned binary checkpoint container.
//!
//! ```text
//! magic "PSG4DCKP" | version u32 | config length u32 | config JSON
//! | block count u32 | blocks...
//! block: name length u32 | name UTF-8 | rows u32 | cols u32 | rows*cols f32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::estimators::ModelConfig;
use super::losses::{Component, Model};
use super::TranscendError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSG4DCKP";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.cfg).expect("config serializes");
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    let count: usize = Component::ALL.iter().map(|c| model.params(*c).block_count()).sum();
    put_u32(&mut out, count);
    for c in Component::ALL {
        for (name, m) in model.params(c).blocks() {
            let full = format!("{c}.{name}");
            put_u32(&mut out, full.len());
            out.extend_from_slice(full.as_bytes());
            put_u32(&mut out, m.rows);
            put_u32(&mut out, m.cols);
            for v in &m.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TranscendError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| TranscendError::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, TranscendError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model, TranscendError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(TranscendError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(TranscendError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let cfg: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| TranscendError::Checkpoint(format!("config: {e}")))?;
    let mut model = Model::new(cfg, 0)?;
    let expected: usize = Component::ALL.iter().map(|c| model.params(*c).block_count()).sum();
    let count = r.u32()?;
    if count != expected {
        return Err(TranscendError::Checkpoint(format!("{count} blocks, expected {expected}")));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| TranscendError::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let (comp, param) = name
            .split_once('.')
            .and_then(|(c, p)| Component::parse(c).map(|c| (c, p)))
            .ok_or_else(|| TranscendError::Checkpoint(format!("unknown block {name:?}")))?;
        let slot = model
            .params_mut(comp)
            .get_mut(param)
            .ok_or_else(|| TranscendError::Checkpoint(format!("unknown block {name:?}")))?;
        if slot.shape() != (rows, cols) {
            return Err(TranscendError::Checkpoint(format!(
                "block {name} is {rows}x{cols}, expected {}x{}",
                slot.rows, slot.cols
            )));
        }
        let raw = r.take(rows * cols * 4)?;
        for (v, b) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        if !seen.insert(name.clone()) {
            return Err(TranscendError::Checkpoint(format!("duplicate block {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(TranscendError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<(), TranscendError> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model, TranscendError> {
    decode_checkpoint(&fs::read(path)?)
}
