//! Objective measures of an upmix against a reference rendering: a
//! scale-dependent SDR, a histogram distance between inter-channel level
//! differences, and the direction error of each source recovered by least
//! squares.

mod angle;
mod report;

use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

pub use angle::{angle_difference_report, decompose_channels, AngleReport, Decomposition};
pub use report::{evaluate, write_csv, write_json, EvalInputs, MetricReport, CSV_HEADER};

/// Value reported for a perfect reconstruction.
pub const SD_SDR_CAP_DB: f64 = 300.0;

/// Floor for ILD magnitudes, relative to the spectrogram's peak magnitude.
pub const ILD_RELATIVE_FLOOR: f64 = 1e-8;

/// Channel pairs `(i, j)`, `i < j`, in the row order of an [`IldTensor`].
pub const ILD_PAIRS: [(usize, usize); 10] =
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];

/// Scale-dependent SDR in dB of flat sample vectors.
pub fn sd_sdr_samples(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!("estimate has {} samples, reference {}", est.len(), reference.len())));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidInput("reference is silent".into()));
    }
    let alpha = est.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (e - r) * (e - r)).sum();
    if err == 0.0 {
        return Ok(SD_SDR_CAP_DB);
    }
    Ok((10.0 * (alpha * alpha * ref_energy / err).log10()).min(SD_SDR_CAP_DB))
}

/// Scale-dependent SDR over all channels, concatenated.
pub fn sd_sdr(est: &MultichannelAudio, reference: &MultichannelAudio) -> Result<f64> {
    if est.num_channels() != reference.num_channels() {
        return Err(Error::Shape(format!(
            "estimate has {} channels, reference {}",
            est.num_channels(),
            reference.num_channels()
        )));
    }
    let flat = |a: &MultichannelAudio| a.channels().concat();
    sd_sdr_samples(&flat(est), &flat(reference))
}

/// Inter-channel level differences in dB, one `F x T` plane per entry of
/// [`ILD_PAIRS`].
#[derive(Debug, Clone, PartialEq)]
pub struct IldTensor {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl IldTensor {
    pub fn plane(&self, pair: usize) -> &[f64] {
        let n = self.bins * self.frames;
        &self.data[pair * n..(pair + 1) * n]
    }
}

/// `20 log10(|Z_i| / |Z_j|)` per pair and bin with magnitudes floored at
/// `floor`.
pub fn ild_tensor(spec5: &MagnitudeSpectrogram, floor: f64) -> Result<IldTensor> {
    if spec5.channels() != 5 {
        return Err(Error::Shape(format!("ILD needs 5 channels, got {}", spec5.channels())));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidInput("ILD floor must be positive".into()));
    }
    let mut data = Vec::with_capacity(10 * spec5.bins() * spec5.frames());
    for (i, j) in ILD_PAIRS {
        data.extend(
            spec5.plane(i).iter().zip(spec5.plane(j)).map(|(a, b)| 20.0 * (a.max(floor) / b.max(floor)).log10()),
        );
    }
    Ok(IldTensor { bins: spec5.bins(), frames: spec5.frames(), data })
}

/// The relative floor applied to a spectrogram's peak (1.0 for silence).
pub fn ild_floor(spec: &MagnitudeSpectrogram) -> f64 {
    let peak = spec.data().iter().fold(0.0f64, |m, v| m.max(*v));
    if peak > 0.0 {
        ILD_RELATIVE_FLOOR * peak
    } else {
        1.0
    }
}

/// Uniform histogram bins over `[lo, hi]` dB; values outside land in the
/// end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistSpec {
    fn default() -> Self {
        Self { bins: 120, lo: -60.0, hi: 60.0 }
    }
}

impl HistSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("degenerate histogram {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Mass-normalized histogram of `values`.
    pub fn histogram(&self, values: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins];
        if values.is_empty() {
            return h;
        }
        let width = self.width();
        for &v in values {
            let idx = ((v - self.lo) / width).floor();
            let idx = if idx.is_nan() { 0 } else { idx.clamp(0.0, (self.bins - 1) as f64) as usize };
            h[idx] += 1.0;
        }
        let n = values.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

/// Wasserstein-1 distance between two histograms on a common uniform grid:
/// the L1 distance between their cumulative sums times the bin width.
pub fn wasserstein_1d(p: &[f64], q: &[f64], bin_width: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("histograms have {} and {} bins", p.len(), q.len())));
    }
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    Ok(total * bin_width)
}

/// Sum over the ten channel pairs of the Wasserstein distance between the
/// ILD histograms of reference and estimate.
pub fn wild(ref5: &MagnitudeSpectrogram, est5: &MagnitudeSpectrogram, hist: &HistSpec) -> Result<f64> {
    hist.validate()?;
    if ref5.shape() != est5.shape() {
        return Err(Error::Shape(format!("reference {:?} vs estimate {:?}", ref5.shape(), est5.shape())));
    }
    let a = ild_tensor(ref5, ild_floor(ref5))?;
    let b = ild_tensor(est5, ild_floor(est5))?;
    let mut total = 0.0;
    for k in 0..ILD_PAIRS.len() {
        total += wasserstein_1d(&hist.histogram(a.plane(k)), &hist.histogram(b.plane(k)), hist.width())?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn sd_sdr_closed_forms() {
        let r: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        assert_eq!(sd_sdr_samples(&r, &r).unwrap(), SD_SDR_CAP_DB);
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
        assert!(sd_sdr_samples(&half, &r).unwrap().abs() < 1e-9);
        for c in [0.5, 0.9] {
            let scaled: Vec<f64> = r.iter().map(|v| c * v).collect();
            let expect = 20.0 * (c / (1.0 - c)).log10();
            assert!((sd_sdr_samples(&scaled, &r).unwrap() - expect).abs() < 1e-9);
        }
        assert!(sd_sdr_samples(&r, &vec![0.0; 64]).is_err());
        assert!(sd_sdr_samples(&r[..3], &r).is_err());
    }

    #[test]
    fn sd_sdr_with_orthogonal_noise() {
        let n = 1000;
        let r: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let noise_amp = 0.1;
        let noise: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { noise_amp } else { -noise_amp }).collect();
        assert!(r.iter().zip(&noise).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
        let est: Vec<f64> = r.iter().zip(&noise).map(|(a, b)| a + b).collect();
        assert!((sd_sdr_samples(&est, &r).unwrap() - 20.0).abs() < 1e-6);
    }

    fn spec_from(planes: [Vec<f64>; 5]) -> MagnitudeSpectrogram {
        let n = planes[0].len();
        MagnitudeSpectrogram::from_vec(5, n, 1, planes.concat()).unwrap()
    }

    #[test]
    fn ild_cases() {
        let a = vec![1.0, 0.5, 0.0];
        let ten: Vec<f64> = vec![10.0, 5.0, 0.0];
        let t = ild_tensor(&spec_from([ten, a.clone(), a.clone(), a.clone(), a]), 1e-6).unwrap();
        assert!(t.plane(0)[..2].iter().all(|v| (v - 20.0).abs() < 1e-12));
        assert_eq!(t.plane(0)[2], 0.0);
        assert!(t.plane(4).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wasserstein_between_point_masses() {
        let spec = HistSpec::default();
        let mut p = vec![0.0; spec.bins];
        let mut q = vec![0.0; spec.bins];
        p[60] = 1.0;
        q[73] = 1.0;
        assert!((wasserstein_1d(&p, &q, spec.width()).unwrap() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_clamps_outliers() {
        let spec = HistSpec::default();
        let h = spec.histogram(&[-500.0, 500.0, 0.0, 0.5]);
        assert_eq!(h[0], 0.25);
        assert_eq!(h[119], 0.25);
        assert_eq!(h[60], 0.5);
        assert!(HistSpec { bins: 0, ..spec }.validate().is_err());
        assert!(HistSpec { lo: 1.0, hi: 1.0, ..spec }.validate().is_err());
    }

    #[test]
    fn single_pair_shift_contributes_its_distance() {
        let base = vec![1.0; 4];
        let r = spec_from([base.clone(), base.clone(), base.clone(), base.clone(), base.clone()]);
        let scaled: Vec<f64> = base.iter().map(|v| v * 10f64.powf(7.5 / 20.0)).collect();
        let e = spec_from([scaled, base.clone(), base.clone(), base.clone(), base]);
        // Only pairs involving channel 0 change; 7.5 dB moves each by 7 bins.
        let w = wild(&r, &e, &HistSpec::default()).unwrap();
        assert!((w - 4.0 * 7.0).abs() < 1e-9, "{w}");
    }

    fn random_spec(seed: u64) -> MagnitudeSpectrogram {
        let mut rng = crate::rng::substream(seed, "spec");
        let data = (0..5 * 6 * 4).map(|_| rng.gen_range(0.0..3.0)).collect();
        MagnitudeSpectrogram::from_vec(5, 6, 4, data).unwrap()
    }

    proptest! {
        #[test]
        fn wild_is_a_symmetric_nonnegative_distance(a in 0u64..1000, b in 0u64..1000) {
            let (x, y) = (random_spec(a), random_spec(b));
            let hist = HistSpec::default();
            prop_assert_eq!(wild(&x, &x, &hist).unwrap(), 0.0);
            let xy = wild(&x, &y, &hist).unwrap();
            prop_assert!(xy >= 0.0);
            prop_assert!((xy - wild(&y, &x, &hist).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn sd_sdr_is_scale_sensitive(c in 0.05f64..0.95) {
            let r: Vec<f64> = (0..32).map(|i| (i as f64).cos()).collect();
            let est: Vec<f64> = r.iter().map(|v| c * v).collect();
            prop_assert!((sd_sdr_samples(&est, &r).unwrap() - 20.0 * (c / (1.0 - c)).log10()).abs() < 1e-8);
        }
    }
}
