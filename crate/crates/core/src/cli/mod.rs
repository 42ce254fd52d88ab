//! The `upmix` command line.
//!
//! Settings resolve in three layers: built-in defaults, then the section of
//! the `--config` JSON file named after the subcommand, then flags. Every run
//! writes its resolved settings next to its primary output.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "upmix", version, about = "Stereo to five-channel upmixing with a spatial VAE")]
pub struct Cli {
    /// Master seed for every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with a top-level `seed`/`threads` and one object of
    /// settings per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a training corpus from stems or from generated test songs.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Upmix a stereo file in the spatial style of a five-channel reference.
    Transfer(TransferArgs),
    /// Upmix a stereo file under a latent code drawn from the prior.
    Blind(BlindArgs),
    /// Model-free upmix copying each stereo side to its front and rear channels.
    Baseline(BaselineArgs),
    /// Score a five-channel estimate against a reference.
    Eval(EvalArgs),
    /// Latent-space study: correlations, PCA scatter and cluster spreads.
    Analyze(AnalyzeArgs),
}

fn parse_split(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated fractions, got {s:?}"));
    }
    let mut out = [0.0f64; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("{p:?} is not a number"))?;
        if !(slot.is_finite() && *slot >= 0.0) {
            return Err(format!("{p:?} is not a nonnegative fraction"));
        }
    }
    if (out.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(format!("fractions {s:?} do not sum to 1"));
    }
    Ok(out)
}

const ARCHS: [&str; 3] = ["toy", "full", "tiny"];

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["tiny", "stems_dir"])))]
pub struct SynthArgs {
    /// Generate band-limited test songs instead of reading stems.
    #[arg(long)]
    pub tiny: bool,
    /// Directory of song folders holding vocals/drums/bass/other WAVs.
    #[arg(long, value_name = "DIR")]
    pub stems_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Segments drawn per song (default: every non-silent segment).
    #[arg(long)]
    pub segments: Option<usize>,
    /// Train, validation and test fractions of the songs, e.g. 0.7,0.1,0.2.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[f64; 3]>,
    /// Number of generated songs (with --tiny).
    #[arg(long)]
    pub songs: Option<usize>,
    /// Length of generated songs in seconds (with --tiny).
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Architecture whose framing the examples use.
    #[arg(long, value_parser = ARCHS)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out_ckpt: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// KL weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Adam learning rate (default 0.005).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = ARCHS)]
    pub arch: Option<String>,
    /// Continue from the training state saved next to --out-ckpt.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long, value_name = "WAV")]
    pub stereo: PathBuf,
    /// Five-channel WAV whose spatial arrangement is copied.
    #[arg(long, value_name = "WAV")]
    pub style_ref: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "WAV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BlindArgs {
    #[arg(long, value_name = "WAV")]
    pub stereo: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "WAV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_name = "WAV")]
    pub stereo: PathBuf,
    #[arg(long, value_name = "WAV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Five-channel reference WAV.
    #[arg(long = "ref", value_name = "WAV")]
    pub reference: PathBuf,
    /// Five-channel estimate WAV.
    #[arg(long, value_name = "WAV")]
    pub est: PathBuf,
    /// Folder with the song's stem WAVs; enables the direction metric.
    #[arg(long, value_name = "DIR")]
    pub stems_dir: Option<PathBuf>,
    /// JSON object of the stems' reference directions in degrees.
    #[arg(long, value_name = "FILE")]
    pub ref_config: Option<PathBuf>,
    /// Output path; `.json` and `.csv` reports are written beside it.
    #[arg(long, value_name = "PATH")]
    pub out_report: PathBuf,
    /// Frame length of the STFT used for level differences.
    #[arg(long)]
    pub fft_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model checkpoint (overrides `checkpoint` in the study config).
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,
    /// JSON study grid: songs, pannings, segments_per_cell, seed,
    /// stems_dir, checkpoint.
    #[arg(long, value_name = "FILE")]
    pub study_config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

/// Top-level values shared by every subcommand after resolution.
#[derive(Debug, Clone, Serialize)]
pub struct Global {
    pub seed: u64,
    pub threads: Option<usize>,
}

/// The parsed `--config` file.
#[derive(Debug, Default)]
struct ConfigFile(Map<String, Value>);

impl ConfigFile {
    fn read(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text)? {
            Value::Object(map) => Ok(Self(map)),
            _ => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
        }
    }

    fn section(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }
}

/// Defaults of `T`, overlaid by `section` and then by the non-null entries
/// of `flags`.
fn resolve<T: Serialize + DeserializeOwned + Default>(section: Option<&Value>, flags: Value) -> Result<T> {
    let mut merged = serde_json::to_value(T::default())?;
    let target = merged.as_object_mut().expect("settings serialize as objects");
    for layer in [section.cloned(), Some(flags)].into_iter().flatten() {
        let Value::Object(map) = layer else {
            return Err(Error::Config("settings sections must be JSON objects".into()));
        };
        for (k, v) in map {
            if !v.is_null() {
                target.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))
}

/// `path` with `suffix` appended to its file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::read(cli.config.as_deref())?;
    let from_file = |key: &str| file.0.get(key).and_then(Value::as_u64);
    let global = Global {
        seed: cli.seed.or(from_file("seed")).unwrap_or(0),
        threads: cli.threads.or(from_file("threads").map(|t| t as usize)),
    };
    if let Some(n) = global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match cli.command {
        Command::Synth(args) => commands::synth(&global, &args, file.section("synth")),
        Command::Train(args) => commands::train(&global, &args, file.section("train")),
        Command::Transfer(args) => commands::transfer(&global, &args),
        Command::Blind(args) => commands::blind(&global, &args),
        Command::Baseline(args) => commands::baseline(&global, &args),
        Command::Eval(args) => commands::eval(&global, &args, file.section("eval")),
        Command::Analyze(args) => commands::analyze(&global, &args),
    }
}

/// Parse the process arguments and run; exit code 0 on success, 2 on usage
/// errors and 1 on runtime failures.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
