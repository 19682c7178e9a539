//! Binary checkpoint format:
//!
//! ```text
//! "TWMB" | u32 version = 1 | u64 json length | config json | u32 tensor count |
//! per tensor: u16 name length | name | u8 dtype (0 = f32) | u8 rank | rank x u64 extents | f32 payload |
//! u32 CRC32 of everything before it
//! ```
//!
//! All integers and floats are little-endian. The JSON is
//! `{"model": ModelConfig, "meta": {...}, "optimizer": {"t": ..} | null}`.
//! Optimiser moments are stored as tensors `optim.m.<param>` and `optim.v.<param>`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::OptimizerState;
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"TWMB";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_metric: f64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: CheckpointMeta,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub meta: CheckpointMeta,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank too large for {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(rank);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(model: &Model<f32>, optimizer: Option<&OptimizerState<f32>>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if !meta.best_metric.is_finite() {
        return Err(Error::Format(format!("best_metric {} is not representable", meta.best_metric)));
    }
    let header = Header {
        model: model.config.clone(),
        meta: meta.clone(),
        optimizer: optimizer.map(|o| OptimizerHeader { t: o.t }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(64 + json.len() + 4 * model.num_params() * if optimizer.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);

    let n = model.params.len();
    let count = if optimizer.is_some() { 3 * n } else { n };
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        put_tensor(&mut out, name, t)?;
    }
    if let Some(o) = optimizer {
        if o.m.len() != n || o.v.len() != n {
            return Err(Error::Format("optimizer state does not match parameter count".into()));
        }
        for (kind, moments) in [("m", &o.m), ("v", &o.v)] {
            for ((_, name, _), t) in model.params.iter().zip(moments) {
                put_tensor(&mut out, &format!("optim.{kind}.{name}"), t)?;
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes to a temporary sibling file and renames it over `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    optimizer: Option<&OptimizerState<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, optimizer, meta)?;
    let file_name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated file while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} too large")))
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<(String, Tensor<f32>)> {
    let len = r.u16("tensor name length")? as usize;
    let name = std::str::from_utf8(r.take(len, "tensor name")?)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
        .to_string();
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("tensor {name}: unsupported dtype {dtype}")));
    }
    let rank = r.u8("rank")? as usize;
    let shape = (0..rank).map(|_| r.len("extent")).collect::<Result<Vec<_>>>()?;
    let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| Error::Format(format!("tensor {name}: extents overflow")))?;
    let payload = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?, "tensor payload")?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
    Ok((name, t))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a TWMB checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    if bytes.len() < 12 {
        return Err(Error::Format("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("CRC mismatch (corrupted or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let json_len = r.len("config length")?;
    let header: Header = serde_json::from_slice(r.take(json_len, "config json")?)
        .map_err(|e| Error::Format(format!("config json: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut table: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        if table.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("tensor {name} appears twice")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor table", body.len() - r.pos)));
    }

    let mut model = Model::<f32>::skeleton(&header.model).map_err(|e| Error::Format(format!("stored config: {e}")))?;
    let ids: Vec<_> = model.params.ids().collect();
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let t = table.remove(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!("tensor {name}: shape {:?}, model expects {shape:?}", t.shape())));
        }
        Ok(t)
    };
    for &id in &ids {
        let name = model.params.name(id).to_string();
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = take(&name, &shape)?;
    }
    let optimizer = match &header.optimizer {
        None => None,
        Some(h) => {
            let mut m = Vec::with_capacity(ids.len());
            let mut v = Vec::with_capacity(ids.len());
            for &id in &ids {
                let name = model.params.name(id);
                let shape = model.params.get(id).shape();
                m.push(take(&format!("optim.m.{name}"), shape)?);
                v.push(take(&format!("optim.v.{name}"), shape)?);
            }
            Some(OptimizerState { t: h.t, m, v })
        }
    };
    if let Some(extra) = table.keys().min() {
        return Err(Error::Format(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { model, optimizer, meta: header.meta })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads and rejects a file whose stored config differs from `expected`,
/// naming every differing key.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let diff = ckpt.model.config.diff(expected);
    if diff.is_empty() {
        Ok(ckpt)
    } else {
        Err(Error::ConfigMismatch(diff))
    }
}
