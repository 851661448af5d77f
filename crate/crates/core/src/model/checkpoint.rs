//! `CANW` checkpoint files.
//!
//! Little-endian layout: magic `CANW`, version u32, config length u32 and
//! UTF-8 JSON, tensor count u32, then per tensor: name length u16 and UTF-8
//! name, dtype u8 (0 = f32), rank u8, dims u32 × rank, raw f32 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_xception_lite, Model, ModelConfig};
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CANW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// JSON blob stored alongside the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub frozen_layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub config: CheckpointConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn write_checkpoint(ckpt: &RawCheckpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(&ckpt.config)?;
    out.extend_from_slice(&len_u32(json.len(), "config")?.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&len_u32(ckpt.tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in &ckpt.tensors {
        let n = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(u8::try_from(t.rank()).map_err(|_| Error::invalid(format!("rank of {name} exceeds 255")))?);
        for &d in t.shape() {
            out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit in u32")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let len = r.u32("config length")? as usize;
    let at = r.offset();
    let json = r.bytes(len, "config")?;
    let config: CheckpointConfig =
        serde_json::from_slice(json).map_err(|e| Error::format(at, format!("config: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = r.u16("name length")? as usize;
        let name = r.utf8(n, "tensor name")?;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(r.offset() - 1, format!("unsupported dtype {dtype} for {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let at = r.offset();
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| r.err(format!("shape of {name} overflows")))?;
        let data = r.f32s(len, "tensor data")?;
        let t = Tensor::new(shape, data).map_err(|e| Error::format(at, format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    r.finish()?;
    Ok(RawCheckpoint { config, tensors })
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let ckpt = RawCheckpoint {
        config: CheckpointConfig { model: model.config().clone(), frozen_layers: model.frozen_layers() },
        tensors: model.params.entries.iter().map(|e| (e.name.clone(), e.tensor.clone())).collect(),
    };
    std::fs::write(path, write_checkpoint(&ckpt)?)?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the model; any inconsistency between the
/// config echo and the stored tensors is an error.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let raw = read_checkpoint(&std::fs::read(path)?)?;
    let mut model = build_xception_lite::<f32>(&raw.config.model, 0)?;
    model.load_params(raw.tensors)?;
    let k = raw.config.frozen_layers;
    if k > model.spec.layers.len() {
        return Err(Error::invalid(format!("{k} frozen layers in a {}-layer model", model.spec.layers.len())));
    }
    for (i, l) in model.spec.layers.iter_mut().enumerate() {
        l.trainable = i >= k;
    }
    Ok(model)
}
