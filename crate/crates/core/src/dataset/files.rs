//! Example files: the magic bytes `UPMXEXMP`, a little-endian `u32` header
//! length, a JSON header with the spectrogram shape and example metadata,
//! then the encoder input (`5 x F x T`) and the decoder stereo input
//! (`2 x F x T`) as little-endian `f32` in channel, bin, frame order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExampleMeta, TrainingExample};
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UPMXEXMP";

#[derive(Serialize, Deserialize)]
struct Header {
    bins: usize,
    frames: usize,
    meta: ExampleMeta,
}

pub fn write_example(path: &Path, ex: &TrainingExample) -> Result<()> {
    let header = Header { bins: ex.enc_input.bins(), frames: ex.enc_input.frames(), meta: ex.meta.clone() };
    let json = serde_json::to_vec(&header)?;
    let values = ex.enc_input.data().len() + ex.dec_stereo.data().len();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in ex.enc_input.data().iter().chain(ex.dec_stereo.data()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_example(path: &Path) -> Result<TrainingExample> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::InvalidInput(format!("{}: {reason}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not an example file"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    let plane = header.bins * header.frames;
    let data = &bytes[12 + len..];
    if data.len() != 4 * 7 * plane {
        return Err(bad("data size does not match the header"));
    }
    let values: Vec<f64> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let enc = MagnitudeSpectrogram::from_vec(5, header.bins, header.frames, values[..5 * plane].to_vec())?;
    let stereo = MagnitudeSpectrogram::from_vec(2, header.bins, header.frames, values[5 * plane..].to_vec())?;
    TrainingExample::new(enc, stereo, header.meta)
}
