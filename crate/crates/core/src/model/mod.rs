//! Stereo-conditioned variational autoencoder.
//!
//! The encoder maps a five-channel magnitude spectrogram to the mean and log
//! variance of a `J`-dimensional Gaussian posterior. The decoder receives a
//! stereo magnitude spectrogram together with a latent sample repeated over
//! every time-frequency bin and produces a five-channel magnitude
//! spectrogram. Both halves alternate densely connected convolution blocks
//! with transition layers; encoder transitions halve the spatial size, the
//! decoder keeps full resolution throughout.
//!
//! Magnitudes are compressed with `ln(1 + x / 1e-3)` before entering the
//! network and expanded by the inverse map on the way out.

mod checkpoint;
mod loss;
mod net;
pub(crate) mod nn;
mod train;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{MagnitudeSpectrogram, StftParams};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Dtype};
pub use loss::{elbo_loss, elbo_loss_and_grad, kl_divergence, recon_loss, reparameterize, ElboTerms};
pub use train::{train, Adam, EpochStats, TrainConfig, TrainOutcome, TrainState};

/// Scale of the magnitude compression `ln(1 + x / MAG_COMPRESSION_EPS)`.
pub const MAG_COMPRESSION_EPS: f64 = 1e-3;

pub fn compress_magnitude(x: f64) -> f64 {
    (x.max(0.0) / MAG_COMPRESSION_EPS).ln_1p()
}

pub fn expand_magnitude(y: f64) -> f64 {
    MAG_COMPRESSION_EPS * y.exp_m1()
}

/// Architecture hyperparameters plus the signal framing that fixes the
/// spectrogram shape seen by the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Latent dimensionality `J`.
    pub latent_dim: usize,
    /// Output channels of each convolution inside a dense block.
    pub growth: usize,
    pub dense_blocks: usize,
    pub layers_per_block: usize,
    /// Spatial stride of encoder transitions.
    pub encoder_stride: usize,
    pub stft: StftParams,
    /// Samples per segment; fixes the frame count.
    pub segment_samples: usize,
}

impl ArchConfig {
    /// Full-size network on 513 x 384 spectrograms of 2.2 s segments.
    pub fn full() -> Self {
        Self {
            latent_dim: 50,
            growth: 20,
            dense_blocks: 5,
            layers_per_block: 5,
            encoder_stride: 2,
            stft: StftParams::default(),
            segment_samples: crate::dsp::SEGMENT_SAMPLES,
        }
    }

    /// Desk-scale network on 33 x 32 spectrograms (64-point frames, 496-sample
    /// segments), small enough to train on one CPU core in minutes.
    pub fn toy() -> Self {
        Self {
            latent_dim: 8,
            growth: 6,
            dense_blocks: 5,
            layers_per_block: 5,
            encoder_stride: 2,
            stft: StftParams::with_fft_size(64),
            segment_samples: 496,
        }
    }

    /// Minimal configuration (9 x 8 spectrograms, J = 3, growth 2) used for
    /// gradient checks.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 3,
            growth: 2,
            dense_blocks: 5,
            layers_per_block: 5,
            encoder_stride: 2,
            stft: StftParams::with_fft_size(16),
            segment_samples: 28,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown architecture {other:?} (expected full, toy or tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.growth == 0 || self.dense_blocks == 0 || self.layers_per_block == 0 || self.encoder_stride == 0 {
            return Err(Error::Config("layer counts and strides must be positive".into()));
        }
        if self.segment_samples == 0 {
            return Err(Error::Config("segment_samples must be positive".into()));
        }
        self.stft.validate()
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn frames(&self) -> usize {
        self.stft.frames(self.segment_samples)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Encoder and decoder weights for one [`ArchConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    cfg: ArchConfig,
    plan: net::NetPlan,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// He-normal weights (variance `2 / fan_in`), zero biases.
    pub fn init(cfg: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let plan = net::NetPlan::new(cfg);
        let tensors = plan
            .specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.fan_in {
                    Some(fan_in) => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                    None => vec![0.0; n],
                };
                NamedTensor { name: spec.name.clone(), shape: spec.shape.clone(), data }
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), plan, tensors })
    }

    /// Rebuild from named tensors, checking names and shapes against `cfg`.
    pub fn from_tensors(cfg: &ArchConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        cfg.validate()?;
        let plan = net::NetPlan::new(cfg);
        if tensors.len() != plan.specs.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", plan.specs.len(), tensors.len())));
        }
        for (t, spec) in tensors.iter().zip(&plan.specs) {
            if t.name != spec.name || t.shape != spec.shape || t.data.len() != spec.shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor {} does not match {}{:?}", t.name, spec.name, spec.shape)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("tensor {} holds non-finite values", t.name)));
            }
        }
        Ok(Self { cfg: cfg.clone(), plan, tensors })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub(crate) fn plan(&self) -> &net::NetPlan {
        &self.plan
    }

    pub(crate) fn data(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(|t| t.data.as_slice()).collect()
    }

    fn check_input(&self, x: &MagnitudeSpectrogram, channels: usize) -> Result<()> {
        let expect = (channels, self.cfg.bins(), self.cfg.frames());
        if x.shape() != expect {
            return Err(Error::Shape(format!("input {:?} but the model expects {:?}", x.shape(), expect)));
        }
        Ok(())
    }
}

fn compressed(x: &MagnitudeSpectrogram) -> Vec<f64> {
    x.data().iter().map(|&v| compress_magnitude(v)).collect()
}

/// Posterior mean and log variance for a five-channel magnitude spectrogram.
pub fn encode(params: &ModelParams, x5: &MagnitudeSpectrogram) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_input(x5, 5)?;
    let out = net::encoder_forward(params, &compressed(x5));
    Ok((out.mu, out.logvar))
}

/// Five-channel magnitudes for a stereo magnitude spectrogram under latent `h`.
pub fn decode(params: &ModelParams, stereo: &MagnitudeSpectrogram, h: &[f64]) -> Result<MagnitudeSpectrogram> {
    params.check_input(stereo, 2)?;
    if h.len() != params.cfg.latent_dim {
        return Err(Error::Shape(format!("latent has {} dims, model expects {}", h.len(), params.cfg.latent_dim)));
    }
    let out = net::decoder_forward(params, &compressed(stereo), h);
    let data = out.output.iter().map(|&y| expand_magnitude(y)).collect();
    MagnitudeSpectrogram::from_vec(5, params.cfg.bins(), params.cfg.frames(), data)
}

/// `J` independent standard-normal draws.
pub fn sample_standard_normal(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_spec(channels: usize, cfg: &ArchConfig, seed: u64) -> MagnitudeSpectrogram {
        let mut rng = substream(seed, "spec");
        let n = channels * cfg.bins() * cfg.frames();
        let data = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        MagnitudeSpectrogram::from_vec(channels, cfg.bins(), cfg.frames(), data).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        let cfg = ArchConfig::toy();
        let a = ModelParams::init(&cfg, &mut substream(1, "init")).unwrap();
        let b = ModelParams::init(&cfg, &mut substream(1, "init")).unwrap();
        assert_eq!(a, b);
        for (t, spec) in a.tensors().iter().zip(&a.plan().specs) {
            if let Some(fan_in) = spec.fan_in {
                if t.data.len() < 500 {
                    continue;
                }
                let var = t.data.iter().map(|v| v * v).sum::<f64>() / t.data.len() as f64;
                let expect = 2.0 / fan_in as f64;
                assert!((var / expect - 1.0).abs() < 0.2, "{}: {var} vs {expect}", t.name);
            }
        }
    }

    #[test]
    fn zero_latent_dim_rejected() {
        let mut cfg = ArchConfig::tiny();
        cfg.latent_dim = 0;
        assert!(ModelParams::init(&cfg, &mut substream(1, "init")).is_err());
    }

    #[test]
    fn encode_and_decode_shapes() {
        let cfg = ArchConfig::tiny();
        let params = ModelParams::init(&cfg, &mut substream(2, "init")).unwrap();
        let x5 = random_spec(5, &cfg, 3);
        let (mu, lv) = encode(&params, &x5).unwrap();
        assert_eq!((mu.len(), lv.len()), (3, 3));
        assert_eq!(encode(&params, &x5).unwrap(), (mu.clone(), lv));
        let out = decode(&params, &random_spec(2, &cfg, 4), &mu).unwrap();
        assert_eq!(out.shape(), (5, 9, 8));
        assert!(out.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(encode(&params, &random_spec(2, &cfg, 3)).is_err());
        assert!(decode(&params, &random_spec(2, &cfg, 4), &[0.0; 2]).is_err());
    }

    #[test]
    fn compression_round_trip() {
        for x in [0.0, 1e-6, 0.3, 17.0, 400.0] {
            assert!((expand_magnitude(compress_magnitude(x)) - x).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn perturbing_each_latent_dim_changes_the_output() {
        let cfg = ArchConfig::tiny();
        let params = ModelParams::init(&cfg, &mut substream(5, "init")).unwrap();
        let stereo = random_spec(2, &cfg, 6);
        let h = vec![0.1, -0.2, 0.3];
        let base = decode(&params, &stereo, &h).unwrap();
        for j in 0..3 {
            let mut hp = h.clone();
            hp[j] += 1e-3;
            let out = decode(&params, &stereo, &hp).unwrap();
            let diff: f64 = out.data().iter().zip(base.data()).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff > 0.0, "latent dim {j} has no effect");
        }
    }
}
