//! Five-channel generation from stereo: style transfer from a reference
//! mix, blind decoding from a prior draw, and a model-free baseline.
//!
//! The stereo input is cut into non-overlapping segments of the model's
//! segment length (the last one zero-padded). Each segment is decoded under
//! one latent code shared by the whole job, given phase from the stereo
//! channels, inverted, and the segments are concatenated and trimmed back to
//! the input length.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::dsp::{
    combine_mag_phase, istft, phase_of, split_mag_phase, stft, ComplexSpectrogram, MagnitudeSpectrogram,
    PhaseSpectrogram, StftParams,
};
use crate::error::{Error, Result};
use crate::model::{decode, encode, load_checkpoint, sample_standard_normal, ModelParams};
use crate::rng::substream;
use crate::vbap::{C, FL, FR, RL, RR};

/// Per-side gain of the baseline, splitting each stereo channel's power
/// evenly between front and rear.
pub const BASELINE_GAIN: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Phase for each of the five output channels: left-side channels follow
/// the left input, right-side channels the right input, and the center the
/// angle of their complex sum.
pub fn reconstruct_phase(stereo: &ComplexSpectrogram) -> Result<PhaseSpectrogram> {
    if stereo.channels() != 2 {
        return Err(Error::Shape(format!("phase reconstruction needs stereo, got {} channels", stereo.channels())));
    }
    let (bins, frames) = (stereo.bins(), stereo.frames());
    let left: Vec<f64> = stereo.plane(0).iter().map(|&z| phase_of(z)).collect();
    let right: Vec<f64> = stereo.plane(1).iter().map(|&z| phase_of(z)).collect();
    let center: Vec<f64> = stereo.plane(0).iter().zip(stereo.plane(1)).map(|(&l, &r)| phase_of(l + r)).collect();
    let mut planes: [&[f64]; 5] = [&[]; 5];
    planes[FL] = &left;
    planes[RL] = &left;
    planes[C] = &center;
    planes[FR] = &right;
    planes[RR] = &right;
    PhaseSpectrogram::from_vec(5, bins, frames, planes.concat())
}

/// Invert each segment's magnitude and phase and concatenate the segments.
pub fn assemble_output(
    magnitudes: &[MagnitudeSpectrogram],
    phases: &[PhaseSpectrogram],
    params: &StftParams,
    segment_samples: usize,
    sample_rate: u32,
) -> Result<MultichannelAudio> {
    if magnitudes.len() != phases.len() || magnitudes.is_empty() {
        return Err(Error::Shape(format!("{} magnitude and {} phase segments", magnitudes.len(), phases.len())));
    }
    let channels = magnitudes[0].channels();
    let mut out = vec![Vec::with_capacity(segment_samples * magnitudes.len()); channels];
    for (mag, phase) in magnitudes.iter().zip(phases) {
        if mag.channels() != channels {
            return Err(Error::Shape("segments differ in channel count".into()));
        }
        let audio = istft(&combine_mag_phase(mag, phase)?, params, sample_rate, Some(segment_samples))?;
        for (dst, src) in out.iter_mut().zip(audio.channels()) {
            dst.extend_from_slice(src);
        }
    }
    Ok(MultichannelAudio::new(sample_rate, out)?)
}

/// `FL = RL = g L`, `FR = RR = g R`, silent center.
pub fn baseline_upmix(stereo: &MultichannelAudio) -> Result<MultichannelAudio> {
    if stereo.num_channels() != 2 {
        return Err(Error::Shape(format!("baseline needs stereo, got {} channels", stereo.num_channels())));
    }
    let scaled = |ch: &[f64]| ch.iter().map(|v| BASELINE_GAIN * v).collect::<Vec<f64>>();
    let (l, r) = (scaled(stereo.channel(0)), scaled(stereo.channel(1)));
    let mut out = vec![Vec::new(); 5];
    out[FL] = l.clone();
    out[RL] = l;
    out[FR] = r.clone();
    out[RR] = r;
    out[C] = vec![0.0; stereo.len()];
    Ok(MultichannelAudio::new(stereo.sample_rate(), out)?)
}

fn check_rate(audio: &MultichannelAudio) -> Result<()> {
    audio.require_canonical_rate()?;
    Ok(())
}

/// `audio` cut into segments of `len` samples, the last zero-padded.
fn padded_segments(audio: &MultichannelAudio, len: usize) -> Vec<MultichannelAudio> {
    let count = audio.len().div_ceil(len).max(1);
    (0..count)
        .map(|i| {
            let start = i * len;
            let channels = audio
                .channels()
                .iter()
                .map(|ch| {
                    let mut seg = vec![0.0; len];
                    let end = (start + len).min(ch.len());
                    if start < end {
                        seg[..end - start].copy_from_slice(&ch[start..end]);
                    }
                    seg
                })
                .collect();
            MultichannelAudio::new(audio.sample_rate(), channels).expect("equal-length channels")
        })
        .collect()
}

/// Decode every segment of `stereo` under `h`.
pub fn decode_stereo(params: &ModelParams, stereo: &MultichannelAudio, h: &[f64]) -> Result<MultichannelAudio> {
    if stereo.num_channels() != 2 {
        return Err(Error::Shape(format!("expected stereo input, got {} channels", stereo.num_channels())));
    }
    if stereo.is_empty() {
        return Err(Error::InvalidInput("stereo input is empty".into()));
    }
    check_rate(stereo)?;
    let cfg = params.config();
    let seg_len = cfg.segment_samples;
    let segments = padded_segments(stereo, seg_len);
    let decoded: Vec<(MagnitudeSpectrogram, PhaseSpectrogram)> = segments
        .par_iter()
        .map(|seg| {
            let spec = stft(seg, &cfg.stft)?;
            let (mag, _) = split_mag_phase(&spec);
            Ok((decode(params, &mag, h)?, reconstruct_phase(&spec)?))
        })
        .collect::<Result<_>>()?;
    let (mags, phases): (Vec<_>, Vec<_>) = decoded.into_iter().unzip();
    let full = assemble_output(&mags, &phases, &cfg.stft, seg_len, stereo.sample_rate())?;
    let trimmed = full.into_channels().into_iter().map(|mut ch| {
        ch.truncate(stereo.len());
        ch
    });
    Ok(MultichannelAudio::new(stereo.sample_rate(), trimmed.collect())?)
}

/// Mean of the posterior means over every complete segment of `style_ref`.
pub fn style_code(params: &ModelParams, style_ref: &MultichannelAudio) -> Result<Vec<f64>> {
    if style_ref.num_channels() != 5 {
        return Err(Error::Shape(format!("style reference needs 5 channels, got {}", style_ref.num_channels())));
    }
    check_rate(style_ref)?;
    let cfg = params.config();
    let seg_len = cfg.segment_samples;
    let count = style_ref.len() / seg_len;
    if count == 0 {
        return Err(Error::InvalidInput(format!(
            "style reference has {} samples, shorter than one {seg_len}-sample segment",
            style_ref.len()
        )));
    }
    let mus: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seg = style_ref.slice(i * seg_len, (i + 1) * seg_len);
            let (mag, _) = split_mag_phase(&stft(&seg, &cfg.stft)?);
            Ok(encode(params, &mag)?.0)
        })
        .collect::<Result<_>>()?;
    let mut h = vec![0.0; cfg.latent_dim];
    for mu in &mus {
        h.iter_mut().zip(mu).for_each(|(a, b)| *a += b);
    }
    h.iter_mut().for_each(|v| *v /= count as f64);
    Ok(h)
}

/// Upmix `stereo` with the spatial arrangement encoded from `style_ref`.
pub fn style_transfer(params: &ModelParams, style_ref: &MultichannelAudio, stereo: &MultichannelAudio) -> Result<MultichannelAudio> {
    let h = style_code(params, style_ref)?;
    decode_stereo(params, stereo, &h)
}

/// The latent code a blind upmix with `seed` decodes under.
pub fn blind_code(params: &ModelParams, seed: u64) -> Vec<f64> {
    sample_standard_normal(params.config().latent_dim, &mut substream(seed, "upmix/blind"))
}

/// Upmix `stereo` under a single latent draw from the prior.
pub fn blind_upmix(params: &ModelParams, stereo: &MultichannelAudio, seed: u64) -> Result<MultichannelAudio> {
    decode_stereo(params, stereo, &blind_code(params, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpmixMode {
    StyleTransfer,
    Blind,
    Baseline,
}

/// One upmixing request.
#[derive(Debug, Clone)]
pub struct UpmixJob {
    pub mode: UpmixMode,
    pub stereo_in: MultichannelAudio,
    pub style_ref: Option<MultichannelAudio>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl UpmixJob {
    pub fn validate(&self) -> Result<()> {
        let needs_style = self.mode == UpmixMode::StyleTransfer;
        if needs_style != self.style_ref.is_some() {
            return Err(Error::Config(format!(
                "a style reference is {} for {:?}",
                if needs_style { "required" } else { "not allowed" },
                self.mode
            )));
        }
        let needs_model = self.mode != UpmixMode::Baseline;
        if needs_model != self.checkpoint.is_some() {
            return Err(Error::Config(format!(
                "a checkpoint is {} for {:?}",
                if needs_model { "required" } else { "not allowed" },
                self.mode
            )));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<MultichannelAudio> {
        self.validate()?;
        let params = match &self.checkpoint {
            Some(path) => Some(load_checkpoint(path)?.params),
            None => None,
        };
        match (self.mode, params, &self.style_ref) {
            (UpmixMode::Baseline, _, _) => baseline_upmix(&self.stereo_in),
            (UpmixMode::Blind, Some(p), _) => blind_upmix(&p, &self.stereo_in, self.seed),
            (UpmixMode::StyleTransfer, Some(p), Some(style)) => style_transfer(&p, style, &self.stereo_in),
            _ => unreachable!("validated above"),
        }
    }
}
