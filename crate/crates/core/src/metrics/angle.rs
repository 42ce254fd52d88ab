//! Direction error of each source, recovered by decomposing every output
//! channel into a nonnegative-clamped least-squares mix of the stems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::vbap::{circular_distance_deg, estimate_direction_from_gains, PanningConfig, SpeakerLayout};

/// Relative Tikhonov damping of the normal equations.
const DAMPING: f64 = 1e-8;
/// Smallest-to-largest eigenvalue ratio of the stem Gram matrix below which
/// the stems count as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Per-channel stem gains `gains[channel][stem]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Unconstrained least-squares gains.
    pub raw: Vec<[f64; 4]>,
    /// Gains with negative entries set to zero.
    pub clamped: Vec<[f64; 4]>,
    /// Stems that are silent and excluded from the fit.
    pub silent: [bool; 4],
    /// The active stems are (numerically) linearly dependent, so the gains
    /// of every channel are unreliable.
    pub rank_deficient: bool,
}

/// Least-squares gains of four mono stems in each channel of `mix`.
pub fn decompose_channels(mix: &MultichannelAudio, stems: &[MultichannelAudio]) -> Result<Decomposition> {
    if stems.len() != 4 {
        return Err(Error::InvalidInput(format!("expected 4 stems, got {}", stems.len())));
    }
    if stems.iter().any(|s| s.num_channels() != 1 || s.len() != mix.len()) {
        return Err(Error::Shape("stems must be mono and as long as the mix".into()));
    }
    let silent: [bool; 4] = std::array::from_fn(|k| stems[k].channel(0).iter().all(|v| *v == 0.0));
    let active: Vec<usize> = (0..4).filter(|&k| !silent[k]).collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("all stems are silent".into()));
    }
    let m = active.len();
    let gram = DMatrix::from_fn(m, m, |i, j| dot(stems[active[i]].channel(0), stems[active[j]].channel(0)));
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let rank_deficient = lo <= RANK_TOLERANCE * hi;
    let lambda = DAMPING * gram.trace() / m as f64;
    let damped = &gram + DMatrix::identity(m, m) * lambda;
    let chol = damped
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("stem Gram matrix is not positive definite".into()))?;
    let mut raw = Vec::with_capacity(mix.num_channels());
    for ch in mix.channels() {
        let rhs = DVector::from_iterator(m, active.iter().map(|&k| dot(stems[k].channel(0), ch)));
        let sol = chol.solve(&rhs);
        let mut row = [0.0; 4];
        for (i, &k) in active.iter().enumerate() {
            row[k] = sol[i];
        }
        raw.push(row);
    }
    let clamped = raw.iter().map(|r| r.map(|g| g.max(0.0))).collect();
    Ok(Decomposition { raw, clamped, silent, rank_deficient })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    /// Estimated direction per stem; `None` for silent stems or when no
    /// channel carries the stem.
    pub estimated_deg: [Option<f64>; 4],
    /// Circular distance to the reference direction, in `[0, 180]`.
    pub per_stem_deg: [Option<f64>; 4],
    /// Mean over the stems with a defined difference.
    pub mean_deg: Option<f64>,
}

/// Direction error of each stem in the five-channel `mix` relative to
/// `reference`.
pub fn angle_difference_report(
    reference: &PanningConfig,
    mix: &MultichannelAudio,
    stems: &[MultichannelAudio],
    layout: &SpeakerLayout,
) -> Result<AngleReport> {
    if reference.len() != 4 || mix.num_channels() != 5 {
        return Err(Error::Shape("angle report needs 4 reference directions and a 5-channel mix".into()));
    }
    let dec = decompose_channels(mix, stems)?;
    if dec.rank_deficient {
        return Err(Error::InvalidInput("stems are linearly dependent; gains are not identifiable".into()));
    }
    let mut estimated = [None; 4];
    let mut per_stem = [None; 4];
    for k in 0..4 {
        if dec.silent[k] {
            continue;
        }
        let column: [f64; 5] = std::array::from_fn(|c| dec.clamped[c][k]);
        match estimate_direction_from_gains(&column, layout) {
            Ok(theta) => {
                estimated[k] = Some(theta);
                per_stem[k] = Some(circular_distance_deg(theta, reference.directions()[k]));
            }
            Err(Error::UndefinedDirection) => {}
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_stem.iter().flatten().copied().collect();
    let mean_deg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AngleReport { estimated_deg: estimated, per_stem_deg: per_stem, mean_deg })
}
