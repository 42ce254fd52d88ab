//! Geometry of the posterior means: how strongly latent codes follow the
//! spatial arrangement of a mix rather than its musical content.
//!
//! A study encodes every (song, panning) cell of a grid, projects the means
//! onto their top two principal components and compares how tightly the
//! points cluster when grouped by song against grouping by panning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_panning_config, StemSong};
use crate::dsp::{extract_segments, split_mag_phase, stft, SILENCE_FLOOR_DB};
use crate::error::{Error, Result};
use crate::model::{encode, ModelParams};
use crate::rng::substream;
use crate::vbap::{render_stems, PanningConfig, SpeakerLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub mu: Vec<f64>,
    pub song_id: String,
    pub panning_id: String,
    pub segment_index: usize,
}

/// Pearson correlation of two equally long vectors.
pub fn latent_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("correlation needs two vectors of equal length >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes, strongest first; the largest-magnitude entry of
    /// each is positive.
    pub components: Vec<Vec<f64>>,
    /// Share of the total variance along each component.
    pub explained_ratio: Vec<f64>,
    /// Coordinates of every input point on the components.
    pub coords: Vec<Vec<f64>>,
}

/// Project mean-centered `points` onto the top `dims` eigenvectors of their
/// covariance.
pub fn pca_project(points: &[Vec<f64>], dims: usize) -> Result<Pca> {
    if points.len() < 3 || points.len() < dims {
        return Err(Error::InvalidInput(format!("PCA needs at least max(3, {dims}) points, got {}", points.len())));
    }
    let d = points[0].len();
    if dims == 0 || dims > d || points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape(format!("cannot take {dims} components of {d}-dimensional points")));
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let centered = DMatrix::from_fn(points.len(), d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(dims);
    let mut explained_ratio = Vec::with_capacity(dims);
    for &k in order.iter().take(dims) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let peak = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if peak < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        explained_ratio.push(if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 });
    }
    let coords = (0..points.len())
        .map(|i| components.iter().map(|c| c.iter().zip(centered.row(i).iter()).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Ok(Pca { mean, components, explained_ratio, coords })
}

/// Mean over groups of the root-mean-squared distance of each group's
/// points to their centroid. Groups with a single member are skipped.
pub fn cluster_spread(coords: &[Vec<f64>], labels: &[&str]) -> Result<f64> {
    if coords.len() != labels.len() {
        return Err(Error::Shape(format!("{} points but {} labels", coords.len(), labels.len())));
    }
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (p, &l) in coords.iter().zip(labels) {
        groups.entry(l).or_default().push(p);
    }
    let mut spreads = Vec::new();
    for (label, members) in &groups {
        if members.len() < 2 {
            log::warn!("group {label:?} has a single member and is left out of the spread");
            continue;
        }
        let d = members[0].len();
        let m = members.len() as f64;
        let centroid: Vec<f64> = (0..d).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / m).collect();
        let ss: f64 = members.iter().map(|p| p.iter().zip(&centroid).map(|(a, c)| (a - c).powi(2)).sum::<f64>()).sum();
        spreads.push((ss / m).sqrt());
    }
    if spreads.is_empty() {
        return Err(Error::InvalidInput("no group has two or more members".into()));
    }
    Ok(spreads.iter().sum::<f64>() / spreads.len() as f64)
}

/// Grid of a latent study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Songs to encode; all loaded songs when `None`.
    pub songs: Option<usize>,
    pub pannings: usize,
    pub segments_per_cell: usize,
    pub seed: u64,
    /// Directory of per-song stem folders; the generated tiny corpus when
    /// absent.
    pub stems_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { songs: Some(5), pannings: 5, segments_per_cell: 4, seed: 0, stems_dir: None, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadSummary {
    pub by_song: f64,
    pub by_panning: f64,
    /// `by_song / by_panning`; above one when codes cluster by panning.
    pub ratio: f64,
    /// Mean |r| over pairs sharing the panning but not the song.
    pub corr_same_panning: f64,
    /// Mean |r| over pairs sharing the song but not the panning.
    pub corr_same_song: f64,
    pub explained_ratio: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub pannings: Vec<(String, PanningConfig)>,
    pub records: Vec<LatentRecord>,
    pub pca: Pca,
    pub summary: SpreadSummary,
}

fn mean_abs_correlation(records: &[LatentRecord], keep: impl Fn(&LatentRecord, &LatentRecord) -> bool) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if keep(a, b) {
                sum += latent_correlation(&a.mu, &b.mu)?.abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("no record pairs for a correlation group".into()));
    }
    Ok(sum / count as f64)
}

/// Summary statistics of already encoded records.
pub fn summarize(records: &[LatentRecord]) -> Result<(Pca, SpreadSummary)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty study".into()));
    }
    let mus: Vec<Vec<f64>> = records.iter().map(|r| r.mu.clone()).collect();
    let pca = pca_project(&mus, 2)?;
    let songs: Vec<&str> = records.iter().map(|r| r.song_id.as_str()).collect();
    let pannings: Vec<&str> = records.iter().map(|r| r.panning_id.as_str()).collect();
    let by_song = cluster_spread(&pca.coords, &songs)?;
    let by_panning = cluster_spread(&pca.coords, &pannings)?;
    let summary = SpreadSummary {
        by_song,
        by_panning,
        ratio: by_song / by_panning,
        corr_same_panning: mean_abs_correlation(records, |a, b| a.panning_id == b.panning_id && a.song_id != b.song_id)?,
        corr_same_song: mean_abs_correlation(records, |a, b| a.song_id == b.song_id && a.panning_id != b.panning_id)?,
        explained_ratio: pca.explained_ratio.clone(),
    };
    Ok((pca, summary))
}

/// Encode every (song, panning, segment) cell and summarize the geometry.
///
/// Pannings are drawn from the study seed; segments are spread evenly over
/// each song's non-silent windows.
pub fn run_study(params: &ModelParams, songs: &[StemSong], cfg: &StudyConfig, layout: &SpeakerLayout) -> Result<Study> {
    if cfg.pannings < 2 || cfg.segments_per_cell == 0 {
        return Err(Error::Config("a study needs at least 2 pannings and 1 segment per cell".into()));
    }
    let songs = &songs[..cfg.songs.unwrap_or(songs.len()).min(songs.len())];
    if songs.len() < 2 {
        return Err(Error::Config("a study needs at least 2 songs".into()));
    }
    let arch = params.config();
    let seg = arch.segment_samples;
    let pannings: Vec<(String, PanningConfig)> = (0..cfg.pannings)
        .map(|p| (format!("pan{p:02}"), sample_panning_config(&mut substream(cfg.seed, &format!("study/panning/{p}")))))
        .collect();
    let mut cells = Vec::new();
    for song in songs {
        let stems = song.stem_audio(0..song.len());
        let mix = stems[0].clone();
        let windows = extract_segments(&mix, seg, &stems, SILENCE_FLOOR_DB)?;
        if windows.len() < cfg.segments_per_cell {
            return Err(Error::InvalidInput(format!(
                "song {} has {} usable segments, study needs {}",
                song.id(),
                windows.len(),
                cfg.segments_per_cell
            )));
        }
        let stride = windows.len() / cfg.segments_per_cell;
        for (pid, panning) in &pannings {
            for k in 0..cfg.segments_per_cell {
                cells.push((song, pid, panning, windows[k * stride].clone()));
            }
        }
    }
    let records: Vec<LatentRecord> = cells
        .par_iter()
        .map(|(song, pid, panning, range)| {
            let five = render_stems(&song.stem_audio(range.clone()), panning, layout)?;
            let (mag, _) = split_mag_phase(&stft(&five, &arch.stft)?);
            Ok(LatentRecord {
                mu: encode(params, &mag)?.0,
                song_id: song.id().to_string(),
                panning_id: pid.to_string(),
                segment_index: range.start / seg,
            })
        })
        .collect::<Result<_>>()?;
    let (pca, summary) = summarize(&records)?;
    Ok(Study { pannings, records, pca, summary })
}

fn activation_csv(records: &[&LatentRecord]) -> String {
    let dims = records.first().map_or(0, |r| r.mu.len());
    let mut out = String::from("song_id,panning_id,segment_index");
    (0..dims).for_each(|j| {
        let _ = write!(out, ",mu{j}");
    });
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{}", r.song_id, r.panning_id, r.segment_index);
        r.mu.iter().for_each(|v| {
            let _ = write!(out, ",{v}");
        });
        out.push('\n');
    }
    out
}

/// Write the plot data of `study` into `dir`:
///
/// - `activations_same_panning.csv`: every song under the first panning,
/// - `activations_same_song.csv`: the first song under every panning,
/// - `pca_scatter.csv`: `x,y,song_id,panning_id` per record,
/// - `spread_summary.csv`: spreads, their ratio, correlations and explained
///   variance.
pub fn export_plot_data(study: &Study, dir: &Path) -> Result<()> {
    let first = study.records.first().ok_or_else(|| Error::InvalidInput("empty study".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let same_panning: Vec<&LatentRecord> = study.records.iter().filter(|r| r.panning_id == first.panning_id).collect();
    let same_song: Vec<&LatentRecord> = study.records.iter().filter(|r| r.song_id == first.song_id).collect();
    write("activations_same_panning.csv", activation_csv(&same_panning))?;
    write("activations_same_song.csv", activation_csv(&same_song))?;

    let mut scatter = String::from("x,y,song_id,panning_id\n");
    for (r, c) in study.records.iter().zip(&study.pca.coords) {
        let _ = writeln!(scatter, "{},{},{},{}", c[0], c[1], r.song_id, r.panning_id);
    }
    write("pca_scatter.csv", scatter)?;

    let s = &study.summary;
    let mut summary = String::from("metric,value\n");
    for (k, v) in [
        ("by_song", s.by_song),
        ("by_panning", s.by_panning),
        ("ratio", s.ratio),
        ("corr_same_panning", s.corr_same_panning),
        ("corr_same_song", s.corr_same_song),
    ] {
        let _ = writeln!(summary, "{k},{v}");
    }
    for (i, v) in s.explained_ratio.iter().enumerate() {
        let _ = writeln!(summary, "explained_pc{},{v}", i + 1);
    }
    write("spread_summary.csv", summary)
}
