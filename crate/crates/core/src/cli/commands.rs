use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{resolve, sidecar, write_json, AnalyzeArgs, BaselineArgs, BlindArgs, EvalArgs, Global, SynthArgs, TrainArgs, TransferArgs};
use crate::audio::{read_wav, write_wav, BitDepth, MultichannelAudio};
use crate::dataset::{
    build_corpus, load_split, load_stem_dirs, make_tiny_corpus, sample_panning_config, CorpusConfig, Manifest, Split,
    StemSong, TinyCorpusConfig,
};
use crate::dsp::StftParams;
use crate::error::{Error, Result};
use crate::latent::{export_plot_data, run_study, StudyConfig};
use crate::metrics::{evaluate, write_csv, write_json as write_reports, EvalInputs, HistSpec};
use crate::model::{load_checkpoint, save_checkpoint, train as train_model, ArchConfig, Checkpoint, Dtype, ModelParams, TrainConfig};
use crate::rng::substream;
use crate::upmix::{baseline_upmix, blind_code, blind_upmix, style_code, style_transfer};
use crate::vbap::{downmix, render_stems, PanningConfig, SpeakerLayout};

const CONFIG_SUFFIX: &str = ".config.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthSettings {
    segments: Option<usize>,
    split: [f64; 3],
    songs: usize,
    seconds: f64,
    arch: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let tiny = TinyCorpusConfig::default();
        Self { segments: None, split: [0.7, 0.1, 0.2], songs: tiny.songs, seconds: tiny.seconds, arch: "toy".into() }
    }
}

/// Writes the corpus, then for each test song its stems, a reference
/// rendering at a seeded panning, that panning, and the stereo downmix.
pub(super) fn synth(global: &Global, args: &SynthArgs, section: Option<&Value>) -> Result<()> {
    let settings: SynthSettings = resolve(
        section,
        json!({ "segments": args.segments, "split": args.split, "songs": args.songs, "seconds": args.seconds, "arch": args.arch }),
    )?;
    let arch = ArchConfig::by_name(&settings.arch)?;
    let songs = match &args.stems_dir {
        Some(dir) => load_stem_dirs(dir)?,
        None => {
            let tiny = TinyCorpusConfig { songs: settings.songs, seconds: settings.seconds, ..TinyCorpusConfig::default() };
            make_tiny_corpus(global.seed, &tiny)?
        }
    };
    let mut corpus = CorpusConfig::new(global.seed, arch.segment_samples, arch.stft);
    corpus.split = settings.split;
    corpus.segments_per_song = settings.segments;
    let manifest = build_corpus(&songs, &corpus, &args.out)?;
    log::info!("wrote {} examples to {}", manifest.examples.len(), args.out.display());

    let layout = corpus.layout()?;
    for id in &manifest.songs[2] {
        let song = songs.iter().find(|s| s.id() == id).expect("manifest songs come from the input");
        let dir = args.out.join("test").join(id);
        song.write_dir(&dir.join("stems"))?;
        let panning = sample_panning_config(&mut substream(global.seed, &format!("synth/test/{id}")));
        let reference = render_stems(&song.stem_audio(0..song.len()), &panning, &layout)?;
        write_wav(dir.join("reference.wav"), &reference, BitDepth::Float32)?;
        write_wav(dir.join("stereo.wav"), &downmix(&reference)?, BitDepth::Float32)?;
        write_json(&dir.join("panning.json"), &panning)?;
    }
    write_json(
        &args.out.join("synth.config.json"),
        &json!({ "global": global, "tiny": args.tiny, "stems_dir": args.stems_dir, "settings": settings, "corpus": corpus }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    epochs: usize,
    beta: f64,
    lr: f64,
    batch_size: usize,
    patience: usize,
    arch: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { epochs: t.epochs, beta: t.beta, lr: t.lr, batch_size: t.batch_size, patience: t.patience, arch: "toy".into() }
    }
}

/// Trains and writes the best-validation parameters to `--out-ckpt` (f32),
/// the resumable state to `<out-ckpt>.state` (f64) and the loss history to
/// `<out-ckpt>.history.csv`.
pub(super) fn train(global: &Global, args: &TrainArgs, section: Option<&Value>) -> Result<()> {
    let settings: TrainSettings = resolve(
        section,
        json!({
            "epochs": args.epochs, "beta": args.beta, "lr": args.lr,
            "batch_size": args.batch_size, "patience": args.patience, "arch": args.arch,
        }),
    )?;
    let arch = ArchConfig::by_name(&settings.arch)?;
    let manifest = Manifest::read(&args.corpus.join("manifest.json"))?;
    if manifest.config.segment_samples != arch.segment_samples || manifest.config.stft != arch.stft {
        return Err(Error::Config(format!(
            "corpus framing ({} samples, {:?}) does not match the {} architecture",
            manifest.config.segment_samples, manifest.config.stft, settings.arch
        )));
    }
    let train_set = load_split(&args.corpus, &manifest, Split::Train)?;
    let val_set = load_split(&args.corpus, &manifest, Split::Val)?;
    let cfg = TrainConfig {
        lr: settings.lr,
        beta: settings.beta,
        batch_size: settings.batch_size,
        epochs: settings.epochs,
        patience: settings.patience,
        seed: global.seed,
    };
    let state_path = sidecar(&args.out_ckpt, ".state");
    let (params, resume) = if args.resume {
        let ckpt = load_checkpoint(&state_path)?;
        if ckpt.params.config() != &arch {
            return Err(Error::Config("saved training state was made with another architecture".into()));
        }
        (ckpt.params, ckpt.train_state)
    } else {
        (ModelParams::init(&arch, &mut substream(global.seed, "model/init"))?, None)
    };
    log::info!("training {} parameters on {} examples", params.num_parameters(), train_set.len());
    let outcome = train_model(params, &train_set, &val_set, &cfg, Some(&state_path), resume)?;
    save_checkpoint(&args.out_ckpt, &Checkpoint { params: outcome.params, train_state: None }, Dtype::F32)?;

    let mut history = String::from("epoch,train_loss,train_recon,train_kl,val_loss\n");
    for e in &outcome.history {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(history, "{},{},{},{},{val}", e.epoch, e.train_loss, e.train_recon, e.train_kl);
    }
    let path = sidecar(&args.out_ckpt, ".history.csv");
    std::fs::write(&path, history).map_err(|e| Error::io(&path, e))?;
    write_json(
        &sidecar(&args.out_ckpt, CONFIG_SUFFIX),
        &json!({
            "global": global, "corpus": args.corpus, "settings": settings, "train": cfg,
            "stopped_early": outcome.stopped_early, "best_epoch": outcome.state.best_epoch,
        }),
    )
}

fn load_params(path: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(path)?.params)
}

fn write_output(path: &Path, audio: &MultichannelAudio, record: Value) -> Result<()> {
    write_wav(path, audio, BitDepth::Float32)?;
    write_json(&sidecar(path, CONFIG_SUFFIX), &record)
}

pub(super) fn transfer(global: &Global, args: &TransferArgs) -> Result<()> {
    let params = load_params(&args.ckpt)?;
    let stereo = read_wav(&args.stereo)?;
    let style = read_wav(&args.style_ref)?;
    let out = style_transfer(&params, &style, &stereo)?;
    write_output(
        &args.out,
        &out,
        json!({
            "global": global, "mode": "style_transfer", "stereo": args.stereo, "style_ref": args.style_ref,
            "ckpt": args.ckpt, "latent": style_code(&params, &style)?,
        }),
    )
}

pub(super) fn blind(global: &Global, args: &BlindArgs) -> Result<()> {
    let params = load_params(&args.ckpt)?;
    let stereo = read_wav(&args.stereo)?;
    let out = blind_upmix(&params, &stereo, global.seed)?;
    write_output(
        &args.out,
        &out,
        json!({
            "global": global, "mode": "blind", "stereo": args.stereo, "ckpt": args.ckpt,
            "latent": blind_code(&params, global.seed),
        }),
    )
}

pub(super) fn baseline(global: &Global, args: &BaselineArgs) -> Result<()> {
    let out = baseline_upmix(&read_wav(&args.stereo)?)?;
    write_output(&args.out, &out, json!({ "global": global, "mode": "baseline", "stereo": args.stereo }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSettings {
    fft_size: usize,
    hist: HistSpec,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { fft_size: StftParams::default().fft_size, hist: HistSpec::default() }
    }
}

/// Stems and reference directions for the direction metric, or `None` with
/// a warning when either is missing or unusable.
fn direction_inputs(args: &EvalArgs, samples: usize) -> Result<Option<(Vec<MultichannelAudio>, PanningConfig)>> {
    let (Some(dir), Some(cfg_path)) = (&args.stems_dir, &args.ref_config) else {
        if args.stems_dir.is_some() || args.ref_config.is_some() {
            log::warn!("direction metric needs both --stems-dir and --ref-config; reporting it as null");
        }
        return Ok(None);
    };
    let panning = PanningConfig::from_json_file(cfg_path)?;
    let song = match StemSong::from_dir(dir) {
        Ok(song) => song,
        Err(e) => {
            log::warn!("stems unavailable ({e}); reporting the direction metric as null");
            return Ok(None);
        }
    };
    if song.len() != samples {
        log::warn!("stems have {} samples, estimate {samples}; reporting the direction metric as null", song.len());
        return Ok(None);
    }
    Ok(Some((song.stem_audio(0..song.len()), panning)))
}

/// Writes `<out-report>.json` and `<out-report>.csv`.
pub(super) fn eval(global: &Global, args: &EvalArgs, section: Option<&Value>) -> Result<()> {
    let settings: EvalSettings = resolve(section, json!({ "fft_size": args.fft_size }))?;
    let reference = read_wav(&args.reference)?;
    let estimate = read_wav(&args.est)?;
    let stft = StftParams::with_fft_size(settings.fft_size);
    let direction = direction_inputs(args, estimate.len())?;
    let id = args.est.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let layout = SpeakerLayout::default();
    let report = evaluate(&EvalInputs {
        id: &id,
        reference: &reference,
        estimate: &estimate,
        stft: &stft,
        hist: &settings.hist,
        stems: direction.as_ref().map(|(s, p)| (s.as_slice(), p)),
        layout: &layout,
    })?;
    let reports = [report];
    write_reports(&args.out_report.with_extension("json"), &reports)?;
    write_csv(&args.out_report.with_extension("csv"), &reports)?;
    write_json(
        &args.out_report.with_extension("config.json"),
        &json!({
            "global": global, "ref": args.reference, "est": args.est, "stems_dir": args.stems_dir,
            "ref_config": args.ref_config, "settings": settings, "stft": stft,
        }),
    )
}

pub(super) fn analyze(global: &Global, args: &AnalyzeArgs) -> Result<()> {
    let mut study_cfg = match &args.study_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<StudyConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => StudyConfig { seed: global.seed, ..StudyConfig::default() },
    };
    if args.ckpt.is_some() {
        study_cfg.checkpoint = args.ckpt.clone();
    }
    let ckpt: PathBuf = study_cfg.checkpoint.clone().ok_or_else(|| Error::Config("no checkpoint given".into()))?;
    let params = load_params(&ckpt)?;
    let songs = match &study_cfg.stems_dir {
        Some(dir) => load_stem_dirs(dir)?,
        None => {
            let tiny = TinyCorpusConfig { songs: study_cfg.songs.unwrap_or(TinyCorpusConfig::default().songs), ..TinyCorpusConfig::default() };
            make_tiny_corpus(study_cfg.seed, &tiny)?
        }
    };
    let study = run_study(&params, &songs, &study_cfg, &SpeakerLayout::default())?;
    export_plot_data(&study, &args.out_dir)?;
    log::info!("spread by song {:.4}, by panning {:.4}", study.summary.by_song, study.summary.by_panning);
    write_json(
        &args.out_dir.join("analyze.config.json"),
        &json!({ "global": global, "study": study_cfg, "pannings": study.pannings, "summary": study.summary }),
    )
}
