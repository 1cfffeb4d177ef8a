//! Binary checkpoint format.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u32` header length,
//! JSON header, `u64` parameter count, parameters as `f32`, EMA parameters
//! as `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GraphTransformer, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HOISYCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// What the model was trained for, e.g. `graph` or `layout`.
    pub kind: String,
    pub config: ModelConfig,
    /// `(name, rows, cols)` of every parameter tensor, in payload order.
    pub shapes: Vec<(String, usize, usize)>,
    /// Model-specific metadata (schedules, normalization statistics, ...).
    pub extra: serde_json::Value,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn encode(model: &GraphTransformer, kind: &str, extra: serde_json::Value) -> Result<Vec<u8>> {
    let shapes = (0..model.params.len())
        .map(|i| {
            let t = model.params.get(i);
            (model.params.name(i).to_string(), t.rows, t.cols)
        })
        .collect();
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config: model.config.clone(),
        shapes,
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    let count = model.params.numel();
    let mut out = Vec::with_capacity(24 + json.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for store in [&model.params, &model.ema] {
        for t in store.tensors() {
            for &x in &t.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(mut bytes: &[u8]) -> Result<(GraphTransformer, CheckpointHeader)> {
    let b = &mut bytes;
    if take(b, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(b, hlen)?)?;
    let count = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
    let mut model = GraphTransformer::new(header.config.clone(), 0)?;
    let expected: Vec<(String, usize, usize)> = (0..model.params.len())
        .map(|i| {
            let t = model.params.get(i);
            (model.params.name(i).to_string(), t.rows, t.cols)
        })
        .collect();
    if expected != header.shapes || count != model.params.numel() {
        return Err(Error::Checkpoint("parameter layout does not match the config".into()));
    }
    let read = |b: &mut &[u8]| -> Result<Vec<f64>> {
        let raw = take(b, 4 * count)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    };
    let params = read(b)?;
    let ema = read(b)?;
    if !b.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    model.params.load_flat(&params);
    model.ema.load_flat(&ema);
    Ok((model, header))
}

pub fn save(path: &Path, model: &GraphTransformer, kind: &str, extra: serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(model, kind, extra)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(GraphTransformer, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
