//! Procedural stem songs for desk-scale experiments.
//!
//! Each stem lives in its own frequency region so that sources stay
//! separable even at coarse spectral resolution: a low sine "bass", a
//! harmonic "vocal" melody, band-limited noise for "other" and high-band
//! noise bursts for "drums".

use std::f64::consts::TAU;

use rand::Rng as _;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::StemSong;
use crate::audio::CANONICAL_SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TinyCorpusConfig {
    pub songs: usize,
    pub seconds: f64,
    /// Drum pulse period in samples.
    pub pulse_period: usize,
    /// Samples per drum pulse window.
    pub pulse_width: usize,
}

impl Default for TinyCorpusConfig {
    fn default() -> Self {
        Self { songs: 4, seconds: 10.0, pulse_period: 240, pulse_width: 96 }
    }
}

/// Noise confined to `[lo, hi)` Hz, scaled to unit RMS.
fn band_noise(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut buf, &mut spec).expect("buffer sizes match the plan");
    let df = CANONICAL_SAMPLE_RATE as f64 / n as f64;
    for (k, z) in spec.iter_mut().enumerate() {
        let f = k as f64 * df;
        if f < lo || f >= hi {
            *z = Default::default();
        }
    }
    spec[0].im = 0.0;
    if n % 2 == 0 {
        let last = spec.len() - 1;
        spec[last].im = 0.0;
    }
    inv.process(&mut spec, &mut buf).expect("buffer sizes match the plan");
    let rms = (buf.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    buf.iter().map(|v| v / rms.max(f64::MIN_POSITIVE)).collect()
}

/// Piecewise-constant pitch melody rendered with phase continuity.
fn melody(n: usize, note_len: usize, pitches: &[f64], harmonics: &[f64], rng: &mut Rng) -> Vec<f64> {
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut f0 = pitches[0];
    for i in 0..n {
        if i % note_len == 0 {
            f0 = pitches[rng.gen_range(0..pitches.len())];
        }
        phase = (phase + TAU * f0 / sr) % TAU;
        out.push(harmonics.iter().enumerate().map(|(h, &a)| a * ((h + 1) as f64 * phase).sin()).sum());
    }
    out
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// `cfg.songs` songs of `cfg.seconds` seconds each, deterministic in `seed`.
pub fn make_tiny_corpus(seed: u64, cfg: &TinyCorpusConfig) -> Result<Vec<StemSong>> {
    if cfg.songs == 0 || !(cfg.seconds > 0.0) || cfg.pulse_period == 0 || cfg.pulse_width == 0 {
        return Err(Error::Config("tiny corpus needs positive song count, duration and pulse sizes".into()));
    }
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let n = (cfg.seconds * sr).round() as usize;
    (0..cfg.songs)
        .map(|s| {
            let mut rng = substream(seed, &format!("tiny/song{s}"));
            let note_len = rng.gen_range(4_000..12_000);

            let vocal_pitches: Vec<f64> = (0..5).map(|_| rng.gen_range(1_000.0..1_400.0)).collect();
            let mut vocals = melody(n, note_len, &vocal_pitches, &[1.0, 0.5], &mut rng);

            let lo = rng.gen_range(4_800.0..5_500.0);
            let mut other = band_noise(n, lo, lo + rng.gen_range(2_500.0..3_200.0), &mut rng);

            let bass_pitches: Vec<f64> = (0..4).map(|_| rng.gen_range(80.0..200.0)).collect();
            let mut bass = melody(n, 2 * note_len, &bass_pitches, &[1.0], &mut rng);

            let period = cfg.pulse_period.max(cfg.pulse_width + 1);
            let offset = rng.gen_range(0..period);
            let mut drums = band_noise(n, 11_000.0, 17_000.0, &mut rng);
            let window: Vec<f64> = (0..cfg.pulse_width)
                .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / cfg.pulse_width as f64).sin().powi(2))
                .collect();
            for (i, v) in drums.iter_mut().enumerate() {
                let pos = (i + offset) % period;
                *v *= window.get(pos).copied().unwrap_or(0.0);
            }

            for stem in [&mut vocals, &mut drums, &mut bass, &mut other] {
                scale_to_rms(stem, rng.gen_range(0.05..0.12));
            }
            StemSong::new(format!("tiny{s:02}"), CANONICAL_SAMPLE_RATE, vec![vocals, drums, bass, other])
        })
        .collect()
}
