//! Training corpora of (five-channel, stereo) magnitude pairs rendered from
//! stem recordings under independent random panning configurations.
//!
//! Every segment of a song gets its own pair of configurations: `r` for the
//! five-channel rendering the encoder sees (and the decoder must
//! reconstruct), `a` for the rendering whose stereo downmix the decoder is
//! conditioned on.

mod files;
mod tiny;

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, BitDepth, MultichannelAudio, CANONICAL_SAMPLE_RATE};
use crate::dsp::{extract_segments, split_mag_phase, stft, MagnitudeSpectrogram, StftParams, SILENCE_FLOOR_DB};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::vbap::{downmix, render_stems, PanningConfig, SpeakerLayout, STEM_NAMES};

pub use files::{read_example, write_example};
pub use tiny::{make_tiny_corpus, TinyCorpusConfig};

/// A song as four mono stems in `vocals, drums, bass, other` order.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSong {
    id: String,
    sample_rate: u32,
    stems: Vec<Vec<f64>>,
}

impl StemSong {
    pub fn new(id: impl Into<String>, sample_rate: u32, stems: Vec<Vec<f64>>) -> Result<Self> {
        if stems.len() != STEM_NAMES.len() {
            return Err(Error::InvalidInput(format!("a song needs {} stems, got {}", STEM_NAMES.len(), stems.len())));
        }
        if stems.iter().any(|s| s.len() != stems[0].len()) {
            return Err(Error::Shape("stems differ in length".into()));
        }
        if stems.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("stems hold non-finite samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self { id: id.into(), sample_rate, stems })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.stems[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stems(&self) -> &[Vec<f64>] {
        &self.stems
    }

    pub fn stem(&self, index: usize) -> &[f64] {
        &self.stems[index]
    }

    /// Stems of `range` as mono buffers.
    pub fn stem_audio(&self, range: Range<usize>) -> Vec<MultichannelAudio> {
        self.stems
            .iter()
            .map(|s| MultichannelAudio::from_parts_unchecked(self.sample_rate, vec![s[range.clone()].to_vec()]))
            .collect()
    }

    /// Read `<dir>/{vocals,drums,bass,other}.wav`; multichannel stems are
    /// averaged to mono. The song id is the directory name.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut stems = Vec::with_capacity(4);
        let mut rate = None;
        for name in STEM_NAMES {
            let audio = read_wav(dir.join(format!("{name}.wav")))?;
            audio.require_canonical_rate()?;
            rate = Some(audio.sample_rate());
            stems.push(audio.to_mono().into_channels().remove(0));
        }
        Self::new(id, rate.unwrap_or(CANONICAL_SAMPLE_RATE), stems)
    }

    /// Write the stems as 32-bit float WAVs following the directory convention.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, stem) in STEM_NAMES.iter().zip(&self.stems) {
            let audio = MultichannelAudio::from_parts_unchecked(self.sample_rate, vec![stem.clone()]);
            write_wav(dir.join(format!("{name}.wav")), &audio, BitDepth::Float32)?;
        }
        Ok(())
    }
}

/// Every subdirectory of `root` holding the four stem files, sorted by name.
pub fn load_stem_dirs(root: &Path) -> Result<Vec<StemSong>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && STEM_NAMES.iter().all(|n| p.join(format!("{n}.wav")).is_file()))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!("no stem directories under {}", root.display())));
    }
    dirs.iter().map(|d| StemSong::from_dir(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub song_id: String,
    pub segment_index: usize,
    pub start: usize,
    pub r: PanningConfig,
    pub a: PanningConfig,
}

/// One training triple. The target is the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub enc_input: MagnitudeSpectrogram,
    pub dec_stereo: MagnitudeSpectrogram,
    pub target: MagnitudeSpectrogram,
    pub meta: ExampleMeta,
}

impl TrainingExample {
    pub fn new(enc_input: MagnitudeSpectrogram, dec_stereo: MagnitudeSpectrogram, meta: ExampleMeta) -> Result<Self> {
        if enc_input.channels() != 5 || dec_stereo.channels() != 2 {
            return Err(Error::Shape("examples pair five-channel and stereo spectrograms".into()));
        }
        if (enc_input.bins(), enc_input.frames()) != (dec_stereo.bins(), dec_stereo.frames()) {
            return Err(Error::Shape("encoder and decoder spectrograms differ in size".into()));
        }
        Ok(Self { target: enc_input.clone(), enc_input, dec_stereo, meta })
    }

    #[cfg(test)]
    pub(crate) fn for_test(
        enc_input: MagnitudeSpectrogram,
        dec_stereo: MagnitudeSpectrogram,
        target: MagnitudeSpectrogram,
    ) -> Self {
        let cfg = PanningConfig::new(vec![0.0; 4]).unwrap();
        let meta = ExampleMeta { song_id: "test".into(), segment_index: 0, start: 0, r: cfg.clone(), a: cfg };
        Self { enc_input, dec_stereo, target, meta }
    }
}

/// Four directions drawn uniformly from `[0, 360)`.
pub fn sample_panning_config(rng: &mut Rng) -> PanningConfig {
    PanningConfig::new((0..STEM_NAMES.len()).map(|_| rng.gen_range(0.0..360.0)).collect())
        .expect("uniform draws are finite")
}

/// Render `segment` of `song` under `r` (encoder input and target) and
/// under `a` (stereo downmix for the decoder).
pub fn synthesize_example(
    song: &StemSong,
    segment: Range<usize>,
    r: &PanningConfig,
    a: &PanningConfig,
    layout: &SpeakerLayout,
    stft_params: &StftParams,
) -> Result<TrainingExample> {
    if segment.end > song.len() || segment.is_empty() {
        return Err(Error::InvalidInput(format!("segment {segment:?} outside song of {} samples", song.len())));
    }
    let stems = song.stem_audio(segment.clone());
    let five = render_stems(&stems, r, layout)?;
    let (enc_input, _) = split_mag_phase(&stft(&five, stft_params)?);
    let stereo = downmix(&render_stems(&stems, a, layout)?)?;
    let (dec_stereo, _) = split_mag_phase(&stft(&stereo, stft_params)?);
    let meta = ExampleMeta {
        song_id: song.id.clone(),
        segment_index: segment.start / segment.len(),
        start: segment.start,
        r: r.clone(),
        a: a.clone(),
    };
    TrainingExample::new(enc_input, dec_stereo, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Train, validation and test fractions of the songs.
    pub split: [f64; 3],
    /// Segments drawn per song; all non-silent segments when `None`.
    pub segments_per_song: Option<usize>,
    pub segment_samples: usize,
    pub stft: StftParams,
    pub speaker_azimuths: [f64; 5],
    pub silence_floor_db: f64,
    /// Use one configuration for both renderings.
    pub force_same_panning: bool,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn new(seed: u64, segment_samples: usize, stft: StftParams) -> Self {
        Self {
            split: [0.7, 0.1, 0.2],
            segments_per_song: None,
            segment_samples,
            stft,
            speaker_azimuths: *SpeakerLayout::default().azimuths(),
            silence_floor_db: SILENCE_FLOOR_DB,
            force_same_panning: false,
            seed,
        }
    }

    pub fn layout(&self) -> Result<SpeakerLayout> {
        SpeakerLayout::new(self.speaker_azimuths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub song_id: String,
    pub segment_index: usize,
    pub start: usize,
    pub end: usize,
    pub r: PanningConfig,
    pub a: PanningConfig,
    /// Example file path relative to the corpus directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    /// Song ids per split, in `train, val, test` order.
    pub songs: [Vec<String>; 3],
    pub examples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Song counts per subset by the largest-remainder method.
pub fn split_counts(n: usize, fractions: &[f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    if counts.iter().zip(fractions).any(|(&c, &f)| f > 0.0 && c == 0) {
        return Err(Error::InvalidInput(format!("{n} songs are too few for split {fractions:?}")));
    }
    Ok(counts)
}

/// Assign songs to subsets and draw segments and panning configurations.
/// Depends only on the songs and the configuration.
pub fn plan_corpus(songs: &[StemSong], cfg: &CorpusConfig) -> Result<Manifest> {
    if songs.is_empty() {
        return Err(Error::InvalidInput("no songs".into()));
    }
    cfg.stft.validate()?;
    cfg.layout()?;
    let mut ids: Vec<&str> = songs.iter().map(|s| s.id()).collect();
    let mut unique = ids.clone();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != ids.len() {
        return Err(Error::InvalidInput("song ids must be unique".into()));
    }
    let counts = split_counts(songs.len(), &cfg.split)?;
    ids.shuffle(&mut substream(cfg.seed, "corpus/split"));
    let mut assignment = Vec::with_capacity(songs.len());
    let mut names: [Vec<String>; 3] = Default::default();
    let mut it = ids.into_iter();
    for (k, &count) in counts.iter().enumerate() {
        for id in it.by_ref().take(count) {
            names[k].push(id.to_string());
            assignment.push((id.to_string(), Split::ALL[k]));
        }
        names[k].sort();
    }

    let mut examples = Vec::new();
    for song in songs {
        let split = assignment.iter().find(|(id, _)| id == song.id()).map(|(_, s)| *s).expect("every song assigned");
        let audio = song.stem_audio(0..song.len());
        let mix = MultichannelAudio::from_parts_unchecked(song.sample_rate(), vec![vec![0.0; song.len()]]);
        let mut segments = extract_segments(&mix, cfg.segment_samples, &audio, cfg.silence_floor_db)?;
        if let Some(limit) = cfg.segments_per_song {
            if segments.len() > limit {
                let mut rng = substream(cfg.seed, &format!("corpus/segments/{}", song.id()));
                segments = rand::seq::index::sample(&mut rng, segments.len(), limit)
                    .into_iter()
                    .map(|i| segments[i].clone())
                    .collect();
                segments.sort_by_key(|r| r.start);
            }
        }
        for seg in segments {
            let index = seg.start / cfg.segment_samples;
            let mut rng = substream(cfg.seed, &format!("corpus/panning/{}/{index}", song.id()));
            let r = sample_panning_config(&mut rng);
            let a = if cfg.force_same_panning { r.clone() } else { sample_panning_config(&mut rng) };
            let id = format!("{}_{index:06}", song.id());
            examples.push(ManifestEntry {
                file: format!("examples/{}/{id}.bin", split.name()),
                id,
                split,
                song_id: song.id().to_string(),
                segment_index: index,
                start: seg.start,
                end: seg.end,
                r,
                a,
            });
        }
    }
    Ok(Manifest { config: cfg.clone(), songs: names, examples })
}

fn find_song<'a>(songs: &'a [StemSong], id: &str) -> Result<&'a StemSong> {
    songs.iter().find(|s| s.id() == id).ok_or_else(|| Error::InvalidInput(format!("song {id:?} not provided")))
}

/// Synthesize one manifest entry.
pub fn synthesize_entry(songs: &[StemSong], entry: &ManifestEntry, cfg: &CorpusConfig) -> Result<TrainingExample> {
    let song = find_song(songs, &entry.song_id)?;
    synthesize_example(song, entry.start..entry.end, &entry.r, &entry.a, &cfg.layout()?, &cfg.stft)
}

/// Synthesize every example of `split` in memory, in manifest order.
pub fn synthesize_split(songs: &[StemSong], manifest: &Manifest, split: Split) -> Result<Vec<TrainingExample>> {
    let entries: Vec<_> = manifest.entries(split).collect();
    entries.par_iter().map(|e| synthesize_entry(songs, e, &manifest.config)).collect()
}

/// Plan the corpus, write one file per example under `out_dir` and the
/// manifest to `out_dir/manifest.json`.
pub fn build_corpus(songs: &[StemSong], cfg: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    let manifest = plan_corpus(songs, cfg)?;
    for split in Split::ALL {
        let dir = out_dir.join("examples").join(split.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    manifest.examples.par_iter().try_for_each(|entry| {
        let ex = synthesize_entry(songs, entry, cfg)?;
        write_example(&out_dir.join(&entry.file), &ex)
    })?;
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Read the example files of `split` listed in the manifest at
/// `corpus_dir/manifest.json`.
pub fn load_split(corpus_dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<TrainingExample>> {
    let entries: Vec<_> = manifest.entries(split).collect();
    entries.par_iter().map(|e| read_example(&corpus_dir.join(&e.file))).collect()
}
