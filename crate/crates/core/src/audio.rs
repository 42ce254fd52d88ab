//! Multichannel time-domain buffers and WAV file I/O.
//!
//! Five-channel buffers use the channel order `[FL, RL, C, FR, RR]`
//! (front left, rear left, center, front right, rear right) everywhere,
//! including on disk. This differs from the usual WAV/SMPTE order
//! (`FL, FR, C, LFE, ...`); files written by other tools must be reordered
//! before they are fed to this crate.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Sample rate of all material handled by the pipeline.
pub const CANONICAL_SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("malformed WAV header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },

    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),

    #[error("sample rate {found} Hz is not supported (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },
}

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Int16,
    Int24,
    Float32,
}

/// A multichannel waveform with equal-length channels.
///
/// Samples are held as `f64`; a 32-bit float WAV round trip is exact for any
/// sample that is representable as `f32` (which includes everything read from
/// disk).
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl MultichannelAudio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidBuffer("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(AudioError::InvalidBuffer("no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidBuffer("channels differ in length".into()));
        }
        for (ch, data) in channels.iter().enumerate() {
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(AudioError::NonFinite { channel: ch, index });
            }
        }
        Ok(Self { sample_rate, channels })
    }

    /// Silent buffer.
    pub fn zeros(sample_rate: u32, channels: usize, samples: usize) -> Self {
        assert!(sample_rate > 0 && channels > 0);
        Self { sample_rate, channels: vec![vec![0.0; samples]; channels] }
    }

    /// Single-channel buffer.
    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self, AudioError> {
        Self::new(sample_rate, vec![samples])
    }

    pub(crate) fn from_parts_unchecked(sample_rate: u32, channels: Vec<Vec<f64>>) -> Self {
        debug_assert!(channels.iter().all(|c| c.len() == channels[0].len()));
        Self { sample_rate, channels }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copy of samples `start..end` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    /// Mean over channels, as a one-channel buffer.
    pub fn to_mono(&self) -> Self {
        let n = self.num_channels() as f64;
        let mut out = vec![0.0; self.len()];
        for ch in &self.channels {
            for (o, &v) in out.iter_mut().zip(ch) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        Self { sample_rate: self.sample_rate, channels: vec![out] }
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum()
    }

    /// Fails unless the buffer is at the canonical 44.1 kHz rate.
    pub fn require_canonical_rate(&self) -> Result<(), AudioError> {
        if self.sample_rate != CANONICAL_SAMPLE_RATE {
            return Err(AudioError::SampleRate {
                found: self.sample_rate,
                expected: CANONICAL_SAMPLE_RATE,
            });
        }
        Ok(())
    }
}

fn map_read_error(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::NotFound => {
            AudioError::NotFound(path.to_path_buf())
        }
        // hound reports short reads as `Other` with a message.
        hound::Error::IoError(e) if matches!(e.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::Other) => {
            AudioError::MalformedHeader { path: path.to_path_buf(), reason: format!("truncated file: {e}") }
        }
        hound::Error::IoError(e) => AudioError::Io { path: path.to_path_buf(), source: e },
        hound::Error::FormatError(reason) => {
            AudioError::MalformedHeader { path: path.to_path_buf(), reason: reason.to_string() }
        }
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding { path: path.to_path_buf(), reason: err.to_string() }
        }
        other => AudioError::MalformedHeader { path: path.to_path_buf(), reason: other.to_string() },
    }
}

/// Read a 16-bit or 24-bit integer, or 32-bit float PCM WAV file.
///
/// Integer samples are divided by the magnitude of the type's minimum value
/// (32768 or 8388608) so that the result lies in `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelAudio, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_read_error(path, e))?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch == 0 {
        return Err(AudioError::MalformedHeader { path: path.into(), reason: "zero channels".into() });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| map_read_error(path, e))?,
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_read_error(path, e))?
        }
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.into(),
                reason: format!("{format:?} PCM with {bits} bits per sample"),
            })
        }
    };
    if interleaved.len() % nch != 0 {
        return Err(AudioError::MalformedHeader {
            path: path.into(),
            reason: "data length is not a whole number of frames".into(),
        });
    }
    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    MultichannelAudio::new(spec.sample_rate, channels)
}

/// Write `audio` as a WAV file with the given sample encoding.
///
/// Integer encodings clip to the representable range after rounding.
pub fn write_wav(path: impl AsRef<Path>, audio: &MultichannelAudio, depth: BitDepth) -> Result<(), AudioError> {
    let path = path.as_ref();
    for (ch, data) in audio.channels.iter().enumerate() {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite { channel: ch, index });
        }
    }
    let (bits, format) = match depth {
        BitDepth::Int16 => (16, hound::SampleFormat::Int),
        BitDepth::Int24 => (24, hound::SampleFormat::Int),
        BitDepth::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let unwritable = |e: hound::Error| match e {
        hound::Error::IoError(source) => AudioError::Unwritable { path: path.into(), source },
        other => AudioError::InvalidBuffer(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(unwritable)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            let v = ch[i];
            match depth {
                BitDepth::Float32 => writer.write_sample(v as f32),
                BitDepth::Int16 => writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
                BitDepth::Int24 => {
                    let scale = f64::from(1u32 << 23);
                    writer.write_sample((v * scale).round().clamp(-scale, scale - 1.0) as i32)
                }
            }
            .map_err(unwritable)?;
        }
    }
    writer.finalize().map_err(unwritable)
}
