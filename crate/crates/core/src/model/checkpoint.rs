//! Named-tensor checkpoint files.
//!
//! Layout: the magic bytes `UPMXCKPT`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then the raw little-endian tensor data. The header
//! records the architecture, its fingerprint, the element type (`f32` or
//! `f64`), every tensor's name and shape, and optionally the training state.
//! Data sections follow in header order: the parameters, then, with a
//! training state, the Adam first and second moments and the best-epoch
//! parameters when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainState;
use super::{ArchConfig, ModelParams, NamedTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UPMXCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: ArchConfig,
    fingerprint: String,
    dtype: Dtype,
    tensors: Vec<TensorEntry>,
    train_state: Option<TrainState>,
    has_best: bool,
}

fn push_values(out: &mut Vec<u8>, values: &[f64], dtype: Dtype) {
    match dtype {
        Dtype::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

/// Write `ckpt` to `path`, storing values as `dtype`. Training state is only
/// exactly resumable from `f64` files.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, dtype: Dtype) -> Result<()> {
    let params = &ckpt.params;
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: params.config().clone(),
        fingerprint: params.config().fingerprint(),
        dtype,
        tensors: params.tensors().iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
        train_state: ckpt.train_state.clone(),
        has_best: ckpt.train_state.as_ref().is_some_and(|s| s.best_params.is_some()),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + params.num_parameters() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        push_values(&mut out, &t.data, dtype);
    }
    if let Some(state) = &ckpt.train_state {
        let sections = [Some(&state.adam.m), Some(&state.adam.v), state.best_params.as_ref()];
        for section in sections.into_iter().flatten() {
            for values in section {
                push_values(&mut out, values, dtype);
            }
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    dtype: Dtype,
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.fail("truncated data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let dtype = self.dtype;
        let raw = self.take(n * dtype.width())?;
        Ok(match dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0, dtype: Dtype::F64 };
    if r.take(8)? != MAGIC {
        return Err(r.fail("not a checkpoint file"));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| r.fail(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported format version {}", header.format_version)));
    }
    if header.fingerprint != header.arch.fingerprint() {
        return Err(r.fail("architecture fingerprint mismatch"));
    }
    r.dtype = header.dtype;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let data = r.values(entry.shape.iter().product())?;
        tensors.push(NamedTensor { name: entry.name, shape: entry.shape, data });
    }
    let params = ModelParams::from_tensors(&header.arch, tensors)?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let section = |r: &mut Reader| -> Result<Vec<Vec<f64>>> { sizes.iter().map(|&n| r.values(n)).collect() };
    let train_state = match header.train_state {
        Some(mut state) => {
            state.adam.m = section(&mut r)?;
            state.adam.v = section(&mut r)?;
            if header.has_best {
                state.best_params = Some(section(&mut r)?);
            }
            Some(state)
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after tensor data"));
    }
    Ok(Checkpoint { params, train_state })
}
