//! STFT analysis/synthesis, magnitude/phase handling and segment selection.

use std::ops::Range;

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

/// Samples per training segment; with the default parameters a centered STFT
/// of this many samples has exactly 384 frames.
pub const SEGMENT_SAMPLES: usize = 98_048;

/// Default RMS level below which a stem counts as silent.
pub const SILENCE_FLOOR_DB: f64 = -60.0;

/// Short-time Fourier transform configuration (periodic Hann window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    /// Reflect-pad `fft_size / 2` samples on both ends before framing.
    pub centered: bool,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { fft_size: 1024, hop: 256, centered: true }
    }
}

impl StftParams {
    /// Parameters with a 75% overlap for the given frame length.
    pub fn with_fft_size(fft_size: usize) -> Self {
        Self { fft_size, hop: fft_size / 4, centered: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 || self.fft_size % 2 != 0 {
            return Err(Error::Config(format!("fft_size must be even and >= 4, got {}", self.fft_size)));
        }
        if self.hop == 0 || self.hop > self.fft_size / 2 {
            return Err(Error::Config(format!(
                "hop must be in 1..={} for fft_size {}, got {}",
                self.fft_size / 2,
                self.fft_size,
                self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count produced for `samples` input samples.
    pub fn frames(&self, samples: usize) -> usize {
        if self.centered {
            samples / self.hop + 1
        } else if samples < self.fft_size {
            1
        } else {
            (samples - self.fft_size) / self.hop + 1
        }
    }

    fn pad(&self) -> usize {
        if self.centered {
            self.fft_size / 2
        } else {
            0
        }
    }

    pub fn window(&self) -> Vec<f64> {
        hann(self.fft_size)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Channel-major time-frequency tensor, laid out `[channel][bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    channels: usize,
    bins: usize,
    frames: usize,
    data: Vec<T>,
}

pub type ComplexSpectrogram = Spectrogram<Complex64>;
/// Nonnegative magnitudes.
pub type MagnitudeSpectrogram = Spectrogram<f64>;
/// Phase angles in `(-pi, pi]`.
pub type PhaseSpectrogram = Spectrogram<f64>;

impl<T: Copy + Default> Spectrogram<T> {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        Self { channels, bins, frames, data: vec![T::default(); channels * bins * frames] }
    }

    pub fn from_vec(channels: usize, bins: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * bins * frames {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{bins}x{frames} spectrogram",
                data.len()
            )));
        }
        Ok(Self { channels, bins, frames, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.bins, self.frames)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The `bins * frames` plane of one channel.
    pub fn plane(&self, channel: usize) -> &[T] {
        let n = self.bins * self.frames;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [T] {
        let n = self.bins * self.frames;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> T {
        self.data[(channel * self.bins + bin) * self.frames + frame]
    }

    pub fn set(&mut self, channel: usize, bin: usize, frame: usize, value: T) {
        self.data[(channel * self.bins + bin) * self.frames + frame] = value;
    }

    /// New tensor holding the listed channels of `self`, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Self {
        let mut data = Vec::with_capacity(channels.len() * self.bins * self.frames);
        for &c in channels {
            data.extend_from_slice(self.plane(c));
        }
        Self { channels: channels.len(), bins: self.bins, frames: self.frames, data }
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Spectrogram<U> {
        Spectrogram {
            channels: self.channels,
            bins: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Reflect index `i` (which may lie outside `0..len`) back into range.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as isize {
        r = period - r;
    }
    r as usize
}

/// Forward STFT of every channel.
pub fn stft(audio: &MultichannelAudio, params: &StftParams) -> Result<ComplexSpectrogram> {
    params.validate()?;
    if audio.is_empty() {
        return Err(Error::InvalidInput("cannot transform an empty signal".into()));
    }
    let n = audio.len();
    let frames = params.frames(n);
    let bins = params.bins();
    let pad = params.pad() as isize;
    let window = params.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(params.fft_size);
    let mut frame_buf = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut out = ComplexSpectrogram::zeros(audio.num_channels(), bins, frames);
    for (ch, signal) in audio.channels().iter().enumerate() {
        for t in 0..frames {
            let start = (t * params.hop) as isize - pad;
            for (k, (slot, w)) in frame_buf.iter_mut().zip(&window).enumerate() {
                let idx = start + k as isize;
                let x = if params.centered {
                    signal[reflect_index(idx, n)]
                } else if (idx as usize) < n {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = x * w;
            }
            fft.process_with_scratch(&mut frame_buf, &mut spectrum, &mut scratch)
                .expect("buffer sizes come from the planner");
            for (f, &v) in spectrum.iter().enumerate() {
                out.set(ch, f, t, v);
            }
        }
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add.
///
/// The output has `(frames - 1) * hop` samples in centered mode unless
/// `length` is given.
pub fn istft(
    spec: &ComplexSpectrogram,
    params: &StftParams,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<MultichannelAudio> {
    params.validate()?;
    if spec.bins() != params.bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins but fft_size {} needs {}",
            spec.bins(),
            params.fft_size,
            params.bins()
        )));
    }
    if spec.frames() == 0 || spec.channels() == 0 {
        return Err(Error::Shape("empty spectrogram".into()));
    }
    let frames = spec.frames();
    let pad = params.pad();
    let padded_len = (frames - 1) * params.hop + params.fft_size;
    let natural = if params.centered {
        (frames - 1) * params.hop
    } else {
        padded_len
    };
    let out_len = length.unwrap_or(natural);
    if pad + out_len > padded_len {
        return Err(Error::Shape(format!(
            "requested {out_len} samples but {frames} frames cover only {}",
            padded_len - pad
        )));
    }
    let window = params.window();
    let mut norm = vec![0.0; padded_len];
    for t in 0..frames {
        for (k, w) in window.iter().enumerate() {
            norm[t * params.hop + k] += w * w;
        }
    }

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(params.fft_size);
    let mut spectrum = ifft.make_input_vec();
    let mut frame_buf = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / params.fft_size as f64;
    let last = params.bins() - 1;

    let mut channels = Vec::with_capacity(spec.channels());
    for ch in 0..spec.channels() {
        let mut acc = vec![0.0; padded_len];
        for t in 0..frames {
            for (f, slot) in spectrum.iter_mut().enumerate() {
                *slot = spec.get(ch, f, t);
            }
            // A real signal has purely real DC and Nyquist bins.
            spectrum[0].im = 0.0;
            spectrum[last].im = 0.0;
            ifft.process_with_scratch(&mut spectrum, &mut frame_buf, &mut scratch)
                .expect("buffer sizes come from the planner");
            for (k, (&v, w)) in frame_buf.iter().zip(&window).enumerate() {
                acc[t * params.hop + k] += v * scale * w;
            }
        }
        let samples = (pad..pad + out_len)
            .map(|i| if norm[i] > 1e-10 { acc[i] / norm[i] } else { 0.0 })
            .collect();
        channels.push(samples);
    }
    MultichannelAudio::new(sample_rate, channels).map_err(Error::from)
}

/// Modulus and angle of every bin; zero bins get phase 0.
pub fn split_mag_phase(spec: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseSpectrogram) {
    (spec.map(|z| z.norm()), spec.map(phase_of))
}

/// Angle in `(-pi, pi]`, with `phase_of(0) = 0`.
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Inverse of [`split_mag_phase`].
pub fn combine_mag_phase(mag: &MagnitudeSpectrogram, phase: &PhaseSpectrogram) -> Result<ComplexSpectrogram> {
    if mag.shape() != phase.shape() {
        return Err(Error::Shape(format!("magnitude {:?} vs phase {:?}", mag.shape(), phase.shape())));
    }
    let data = mag.data().iter().zip(phase.data()).map(|(&m, &p)| Complex64::from_polar(m, p)).collect();
    ComplexSpectrogram::from_vec(mag.channels(), mag.bins(), mag.frames(), data)
}

/// RMS level of a buffer in dBFS (all channels pooled).
pub fn rms_db(samples: &[Vec<f64>], range: Range<usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in samples {
        sum += ch[range.clone()].iter().map(|v| v * v).sum::<f64>();
        count += range.len();
    }
    if count == 0 || sum == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (sum / count as f64).log10()
}

/// Consecutive non-overlapping windows of `seg_samples` in which at least
/// one stem is louder than `silence_floor_db` (RMS, dBFS).
pub fn extract_segments(
    audio: &MultichannelAudio,
    seg_samples: usize,
    stems: &[MultichannelAudio],
    silence_floor_db: f64,
) -> Result<Vec<Range<usize>>> {
    if seg_samples == 0 {
        return Err(Error::InvalidInput("segment length must be positive".into()));
    }
    for stem in stems {
        if stem.len() != audio.len() || stem.sample_rate() != audio.sample_rate() {
            return Err(Error::Shape("stems must share length and sample rate with the mix".into()));
        }
    }
    let count = audio.len() / seg_samples;
    Ok((0..count)
        .map(|i| i * seg_samples..(i + 1) * seg_samples)
        .filter(|r| stems.iter().any(|s| rms_db(s.channels(), r.clone()) > silence_floor_db))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn noise(channels: usize, n: usize, seed: u64) -> MultichannelAudio {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        MultichannelAudio::new(44_100, data).unwrap()
    }

    fn max_rel_err(a: &MultichannelAudio, b: &MultichannelAudio) -> f64 {
        let peak = a.channels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = a
            .channels()
            .iter()
            .flatten()
            .zip(b.channels().iter().flatten())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        err / peak
    }

    #[test]
    fn default_segment_gives_384_frames() {
        let p = StftParams::default();
        assert_eq!(p.frames(SEGMENT_SAMPLES), 384);
        assert_eq!(p.bins(), 513);
        let spec = stft(&MultichannelAudio::zeros(44_100, 1, SEGMENT_SAMPLES), &p).unwrap();
        assert_eq!(spec.shape(), (1, 513, 384));
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn bin_centered_cosine_peaks_at_its_bin() {
        let p = StftParams::default();
        let k = 37;
        let n = 8192;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * k as f64 * i as f64 / 1024.0).cos()).collect();
        let spec = stft(&MultichannelAudio::mono(44_100, x).unwrap(), &p).unwrap();
        let (mag, _) = split_mag_phase(&spec);
        for t in 4..spec.frames() - 4 {
            let best = (0..mag.bins()).max_by(|&a, &b| mag.get(0, a, t).total_cmp(&mag.get(0, b, t))).unwrap();
            assert_eq!(best, k, "frame {t}");
            // Hann-windowed unit cosine: |X_k| = N/4.
            assert!((mag.get(0, k, t) - 256.0).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_white_noise() {
        let p = StftParams::default();
        let x = noise(2, 97_020, 1);
        let spec = stft(&x, &p).unwrap();
        let y = istft(&spec, &p, 44_100, Some(x.len())).unwrap();
        assert!(max_rel_err(&x, &y) < 1e-6);
    }

    #[test]
    fn round_trip_silence_and_short_signals() {
        let p = StftParams::with_fft_size(64);
        let x = MultichannelAudio::zeros(44_100, 3, 1000);
        let y = istft(&stft(&x, &p).unwrap(), &p, 44_100, Some(1000)).unwrap();
        assert_eq!(x, y);
        for n in [1usize, 5, 31, 32, 33, 100] {
            let x = noise(1, n, n as u64);
            let y = istft(&stft(&x, &p).unwrap(), &p, 44_100, Some(n)).unwrap();
            assert!(max_rel_err(&x, &y) < 1e-9, "n = {n}");
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip_any_length(n in 1usize..3000, log_fft in 3u32..10, seed in 0u64..1000) {
            let p = StftParams::with_fft_size(1 << log_fft);
            let x = noise(2, n, seed);
            let y = istft(&stft(&x, &p).unwrap(), &p, 44_100, Some(n)).unwrap();
            proptest::prop_assert!(max_rel_err(&x, &y) < 1e-9);
        }

        #[test]
        fn stft_is_linear(a in -4.0f64..4.0, b in -4.0f64..4.0, seed in 0u64..1000) {
            let p = StftParams::with_fft_size(64);
            let (x, y) = (noise(1, 700, seed), noise(1, 700, seed + 1));
            let combo: Vec<f64> = x.channel(0).iter().zip(y.channel(0)).map(|(u, v)| a * u + b * v).collect();
            let sx = stft(&x, &p).unwrap();
            let sy = stft(&y, &p).unwrap();
            let sc = stft(&MultichannelAudio::mono(44_100, combo).unwrap(), &p).unwrap();
            for ((zx, zy), zc) in sx.data().iter().zip(sy.data()).zip(sc.data()) {
                proptest::prop_assert!((zx * a + zy * b - zc).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_bins_rejected() {
        let spec = ComplexSpectrogram::zeros(1, 257, 10);
        assert!(matches!(istft(&spec, &StftParams::default(), 44_100, None), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_input_rejected() {
        let x = MultichannelAudio::zeros(44_100, 1, 0);
        assert!(stft(&x, &StftParams::default()).is_err());
    }

    #[test]
    fn split_combine_cases() {
        let spec = ComplexSpectrogram::from_vec(1, 1, 2, vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)]).unwrap();
        let (m, p) = split_mag_phase(&spec);
        assert_eq!(m.data(), &[5.0, 0.0]);
        assert_eq!(p.data()[0], 4f64.atan2(3.0));
        assert_eq!(p.data()[1], 0.0);
        assert_eq!(phase_of(Complex64::new(-1.0, -0.0)), PI);
    }

    #[test]
    fn split_combine_identity_on_random_tensor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = (0..600).map(|_| Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
        let spec = ComplexSpectrogram::from_vec(2, 10, 30, data).unwrap();
        let (m, p) = split_mag_phase(&spec);
        let back = combine_mag_phase(&m, &p).unwrap();
        let err = spec.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn segments_of_silent_stems_are_dropped() {
        let mix = MultichannelAudio::zeros(44_100, 2, 10_000);
        let stems = vec![MultichannelAudio::zeros(44_100, 1, 10_000); 4];
        assert!(extract_segments(&mix, 1000, &stems, -60.0).unwrap().is_empty());
    }

    #[test]
    fn constant_stem_selects_every_window() {
        let mix = MultichannelAudio::zeros(44_100, 2, 10_500);
        let mut stems = vec![MultichannelAudio::zeros(44_100, 1, 10_500); 4];
        stems[2] = MultichannelAudio::mono(44_100, vec![0.5; 10_500]).unwrap();
        let segs = extract_segments(&mix, 1000, &stems, -60.0).unwrap();
        assert_eq!(segs.len(), 10);
        assert_eq!(segs[3], 3000..4000);
    }

    #[test]
    fn three_seconds_hold_one_segment() {
        let mix = MultichannelAudio::zeros(44_100, 2, 132_300);
        let stems = vec![MultichannelAudio::mono(44_100, vec![0.1; 132_300]).unwrap()];
        let segs = extract_segments(&mix, SEGMENT_SAMPLES, &stems, SILENCE_FLOOR_DB).unwrap();
        assert_eq!(segs, vec![0..SEGMENT_SAMPLES]);
        assert!(extract_segments(&mix, 200_000, &stems, SILENCE_FLOOR_DB).unwrap().is_empty());
    }
}
