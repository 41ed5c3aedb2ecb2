//! Checkpoint container: magic `SPFG`, version, length-prefixed JSON config
//! and metadata, then (name, shape, f32 little-endian data) triples in the
//! canonical parameter order, and optionally the Adam state.

use crate::model::{ModelConfig, ModelParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SPFG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub epoch: usize,
    pub seed: u64,
    /// Mean loss per epoch, in order.
    pub loss_history: Vec<f64>,
    /// Full vocabulary token list; extraction rebuilds the tokenizer side
    /// from this without needing the corpus.
    pub vocab: Vec<String>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
    /// Optimizer step when Adam moments were saved alongside the values.
    pub optimizer_step: Option<u64>,
}

pub(crate) fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    write_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

pub(crate) fn write_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(
    params: &ModelParams<f32>,
    meta: &CheckpointMeta,
    optimizer_step: Option<u64>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    write_u32(&mut out, VERSION);
    write_bytes(&mut out, serde_json::to_string(&params.config)?.as_bytes());
    write_bytes(&mut out, serde_json::to_string(meta)?.as_bytes());
    let ordered = params.ordered();
    write_u32(&mut out, ordered.len() as u32);
    for p in &ordered {
        write_bytes(&mut out, p.name.as_bytes());
        write_u32(&mut out, p.value.shape().len() as u32);
        for &d in p.value.shape() {
            write_u32(&mut out, d as u32);
        }
        write_f32s(&mut out, p.value.data());
    }
    match optimizer_step {
        None => out.push(0),
        Some(step) => {
            out.push(1);
            out.extend_from_slice(&step.to_le_bytes());
            for p in &ordered {
                write_f32s(&mut out, p.adam_m.data());
                write_f32s(&mut out, p.adam_v.data());
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    params: &ModelParams<f32>,
    meta: &CheckpointMeta,
    optimizer_step: Option<u64>,
    path: &Path,
) -> Result<()> {
    let bytes = checkpoint_bytes(params, meta, optimizer_step)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint while reading {what} ({} bytes left, {n} needed)",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    load_checkpoint_bytes(&buf)
}

pub fn load_checkpoint_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let config: ModelConfig = serde_json::from_slice(r.bytes("config")?)?;
    config.validate()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.bytes("metadata")?)?;

    // Structure comes from the config; stored tensors must match it exactly.
    let mut params = ModelParams::<f32>::init(&config, 0)?;
    let n = r.u32("parameter count")? as usize;
    let expected = params.ordered().len();
    if n != expected {
        return Err(Error::Format(format!(
            "checkpoint has {n} parameter tensors, config implies {expected}"
        )));
    }
    for i in 0..n {
        let name = String::from_utf8(r.bytes("parameter name")?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        let data = r.f32s(count, &name)?;
        let slot = params
            .ordered_mut()
            .into_iter()
            .nth(i)
            .expect("index within count");
        if slot.name != name {
            return Err(Error::Format(format!(
                "parameter {i} is {name:?}, expected {:?}",
                slot.name
            )));
        }
        if slot.value.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {shape:?}, config implies {:?}",
                slot.value.shape()
            )));
        }
        slot.value.data_mut().copy_from_slice(&data);
    }
    let has_opt = r.take(1, "optimizer flag")?[0];
    let optimizer_step = match has_opt {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            for i in 0..n {
                let len = params.ordered()[i].len();
                let m = r.f32s(len, "adam m")?;
                let v = r.f32s(len, "adam v")?;
                let slot = params.ordered_mut().into_iter().nth(i).unwrap();
                slot.adam_m.data_mut().copy_from_slice(&m);
                slot.adam_v.data_mut().copy_from_slice(&v);
            }
            Some(step)
        }
        other => {
            return Err(Error::Format(format!(
                "optimizer flag must be 0 or 1, found {other}"
            )));
        }
    };
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            buf.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config,
        meta,
        params,
        optimizer_step,
    })
}

/// Field-by-field config comparison; the error names the first mismatch.
pub fn ensure_compatible(stored: &ModelConfig, wanted: &ModelConfig) -> Result<()> {
    macro_rules! check {
        ($field:ident) => {
            if stored.$field != wanted.$field {
                return Err(Error::Incompatible(format!(
                    "config field `{}` is {:?} in checkpoint but {:?} requested",
                    stringify!($field),
                    stored.$field,
                    wanted.$field
                )));
            }
        };
    }
    check!(vocab_size);
    check!(hidden);
    check!(layers);
    check!(heads);
    check!(ff);
    check!(max_position);
    check!(window_len);
    Ok(())
}

/// Write through a temp file in the same directory so rolling per-epoch
/// saves never leave a torn checkpoint behind.
pub fn save_checkpoint_atomic(
    params: &ModelParams<f32>,
    meta: &CheckpointMeta,
    optimizer_step: Option<u64>,
    path: &Path,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    save_checkpoint(params, meta, optimizer_step, &tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
