//! Per-example metric reports and their JSON and CSV serializations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{angle_difference_report, sd_sdr, wild, HistSpec};
use crate::audio::MultichannelAudio;
use crate::dsp::{split_mag_phase, stft, StftParams};
use crate::error::{Error, Result};
use crate::vbap::{PanningConfig, SpeakerLayout};

pub const CSV_HEADER: &str = "id,sd_sdr_db,wild,mean_angle_diff_deg,vocals,drums,bass,other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    pub sd_sdr_db: f64,
    pub wild: f64,
    /// `None` when no stems were supplied or no stem had a direction.
    pub mean_angle_diff_deg: Option<f64>,
    pub per_stem_angle_diff_deg: [Option<f64>; 4],
    pub hist: HistSpec,
}

/// Everything needed to score one five-channel estimate.
pub struct EvalInputs<'a> {
    pub id: &'a str,
    pub reference: &'a MultichannelAudio,
    pub estimate: &'a MultichannelAudio,
    pub stft: &'a StftParams,
    pub hist: &'a HistSpec,
    /// Mono stems and the directions they were rendered at; enables the
    /// direction metric.
    pub stems: Option<(&'a [MultichannelAudio], &'a PanningConfig)>,
    pub layout: &'a SpeakerLayout,
}

pub fn evaluate(inputs: &EvalInputs) -> Result<MetricReport> {
    let (reference, estimate) = (inputs.reference, inputs.estimate);
    if reference.num_channels() != 5 || estimate.num_channels() != 5 {
        return Err(Error::Shape("evaluation needs 5-channel reference and estimate".into()));
    }
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!("reference has {} samples, estimate {}", reference.len(), estimate.len())));
    }
    let sd_sdr_db = sd_sdr(estimate, reference)?;
    let (ref_mag, _) = split_mag_phase(&stft(reference, inputs.stft)?);
    let (est_mag, _) = split_mag_phase(&stft(estimate, inputs.stft)?);
    let wild = wild(&ref_mag, &est_mag, inputs.hist)?;
    let (mean, per_stem) = match inputs.stems {
        Some((stems, config)) => {
            let r = angle_difference_report(config, estimate, stems, inputs.layout)?;
            (r.mean_deg, r.per_stem_deg)
        }
        None => (None, [None; 4]),
    };
    Ok(MetricReport {
        id: inputs.id.to_string(),
        sd_sdr_db,
        wild,
        mean_angle_diff_deg: mean,
        per_stem_angle_diff_deg: per_stem,
        hist: *inputs.hist,
    })
}

/// Reports as a pretty JSON array, sorted by id.
pub fn write_json(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut sorted = reports.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let json = serde_json::to_string_pretty(&sorted)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One CSV row per report under [`CSV_HEADER`], sorted by id; undefined
/// values are empty cells.
pub fn write_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut sorted: Vec<&MetricReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        if r.id.contains([',', '"', '\n']) {
            return Err(Error::InvalidInput(format!("report id {:?} is not CSV-safe", r.id)));
        }
        let _ = write!(out, "{},{},{},{}", r.id, r.sd_sdr_db, r.wild, cell(r.mean_angle_diff_deg));
        for d in r.per_stem_angle_diff_deg {
            let _ = write!(out, ",{}", cell(d));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SD_SDR_CAP_DB;
    use crate::vbap::render_stems;

    fn stems(n: usize) -> Vec<MultichannelAudio> {
        [0.021, 0.093, 0.004, 0.317]
            .iter()
            .map(|f| MultichannelAudio::mono(44_100, (0..n).map(|i| (i as f64 * f * 6.283).sin()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn identity_evaluation() {
        let layout = SpeakerLayout::default();
        let s = stems(4_096);
        let cfg = PanningConfig::new(vec![20.0, 140.0, 0.0, 250.0]).unwrap();
        let mix = render_stems(&s, &cfg, &layout).unwrap();
        let params = StftParams::with_fft_size(512);
        let hist = HistSpec::default();
        let inputs = EvalInputs {
            id: "a",
            reference: &mix,
            estimate: &mix,
            stft: &params,
            hist: &hist,
            stems: Some((&s, &cfg)),
            layout: &layout,
        };
        let r = evaluate(&inputs).unwrap();
        assert_eq!(r.sd_sdr_db, SD_SDR_CAP_DB);
        assert_eq!(r.wild, 0.0);
        assert!(r.mean_angle_diff_deg.unwrap() < 0.01);

        let partial = evaluate(&EvalInputs { stems: None, ..inputs }).unwrap();
        assert_eq!(partial.mean_angle_diff_deg, None);
        assert_eq!(partial.wild, 0.0);
    }

    #[test]
    fn csv_schema_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mk = |id: &str, angle: Option<f64>| MetricReport {
            id: id.into(),
            sd_sdr_db: 1.5,
            wild: 2.0,
            mean_angle_diff_deg: angle,
            per_stem_angle_diff_deg: [angle, None, angle, angle],
            hist: HistSpec::default(),
        };
        write_csv(&path, &[mk("b", Some(3.0)), mk("a", None)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, [CSV_HEADER, "a,1.5,2,,,,,", "b,1.5,2,3,3,,3,3"]);
        assert!(write_csv(&path, &[mk("x,y", None)]).is_err());
    }
}
