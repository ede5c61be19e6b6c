//! Command-line surface.
//!
//! Every setting of a subcommand can come from a flag, from the matching
//! table of a TOML file given with `--config`, or from the built-in
//! default, in that order of precedence. Table names are the subcommand
//! names and keys are the long flag names with `-` replaced by `_`.

mod commands;

pub use commands::check_vector;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::GenError;
use crate::datapipe::PipeError;
use crate::dist::DistError;
use crate::eval::EvalError;
use crate::features::{FeatureError, ScalerKind};
use crate::format::FormatError;
use crate::nn::{Activation, ModelKind, NnError};
use crate::tune::TuneError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Module the failure came from, for the one-line diagnostic.
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Gen(_) => "datagen",
            CliError::Format(_) => "event-format",
            CliError::Features(_) => "features",
            CliError::Pipe(_) => "datapipe",
            CliError::Nn(_) => "nn-core",
            CliError::Dist(_) => "dist",
            CliError::Eval(_) => "eval",
            CliError::Tune(_) => "tune",
            CliError::Io { .. } | CliError::Config(_) => "cli",
        }
    }

    /// The single diagnostic line written to stderr.
    pub fn diagnostic(&self) -> String {
        let msg = match self {
            CliError::Dist(e) => match e {
                DistError::Aborted { rank, reason } => format!("ABORT rank={rank} reason={reason}"),
                DistError::PeerLost { rank, .. } | DistError::DigestMismatch { rank, .. } => {
                    format!("ABORT rank={rank} reason={e}")
                }
                other => other.to_string(),
            },
            other => other.to_string(),
        };
        format!("error[{}]: {}", self.module(), msg.replace('\n', " "))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "topoclass",
    version,
    about = "Event topology classification pipeline"
)]
pub struct Cli {
    /// TOML file with one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic raw events (.hep).
    Generate(GenerateArgs),
    /// Select, featurize, balance, split and scale events into record files.
    Prepare(PrepareArgs),
    /// Train a classifier on one or more workers.
    Train(TrainArgs),
    /// Join a distributed training job.
    Worker(WorkerArgs),
    /// Grid search with k-fold cross-validation.
    Tune(TuneArgs),
    /// Score a trained model on a test split.
    Evaluate(EvaluateArgs),
    /// Summarize a .hep, .rec, .mdl file or a prepared dataset directory.
    Inspect(InspectArgs),
    #[command(hide = true)]
    AllreduceCheck(AllreduceCheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Worker(_) => "worker",
            Command::Tune(_) => "tune",
            Command::Evaluate(_) => "evaluate",
            Command::Inspect(_) => "inspect",
            Command::AllreduceCheck(_) => "allreduce-check",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Output file [default: events.hep]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of events [default: 10000]
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Class separation strength in [0, 1] [default: 0.9]
    #[arg(long)]
    pub separability: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PrepareArgs {
    /// Raw event files
    #[arg(long, num_args = 1..)]
    pub input: Option<Vec<PathBuf>>,
    /// Dataset directory [default: dataset]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training fraction [default: 0.8]
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lepton trigger pT threshold [default: 23]
    #[arg(long)]
    pub pt_threshold: Option<f64>,
    /// Lepton isolation cut [default: 0.45]
    #[arg(long)]
    pub iso_max: Option<f64>,
    /// Undersample to equal class counts [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub balance: Option<bool>,
    /// Record files per split [default: 8]
    #[arg(long)]
    pub shards: Option<usize>,
    #[arg(long, value_enum)]
    pub scaler: Option<ScalerKind>,
}

/// Architecture overrides shared by `train` and `tune`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// hlf, seq or inclusive [default: hlf]
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Dense widths of the HLF classifier, comma separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub head_width: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Prepared dataset directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// [default: 12]
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Per-worker batch size [default: 128]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Single-worker learning rate, scaled by the worker count [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate factor [default: 0.9]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// World size [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// This process's rank; ranks above 0 join as workers [default: 0]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Coordinator address: listened on by rank 0, dialled by the others
    /// [default: 127.0.0.1:7070]
    #[arg(long)]
    pub coordinator: Option<String>,
    /// Rank 0 starts the other ranks as child processes
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub spawn: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent of timestamped run directories [default: runs]
    #[arg(long)]
    pub run_root: Option<PathBuf>,
    /// Exact run directory, overriding --run-root
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// [default: 10000]
    #[arg(long)]
    pub shuffle_buffer: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub interleave: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub prefetch: Option<usize>,
    /// Keep decoded examples in memory after the first epoch [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cache: Option<bool>,
    /// Steps between parameter digest checks; 0 disables [default: 50]
    #[arg(long)]
    pub digest_every: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct NetArgs {
    /// Seconds allowed for joining and connecting the ring [default: 60]
    #[arg(long)]
    pub setup_timeout: Option<u64>,
    /// Seconds a ring receive may block; 0 waits forever [default: 600]
    #[arg(long)]
    pub io_timeout: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct WorkerArgs {
    /// Coordinator address [default: 127.0.0.1:7070]
    #[arg(long)]
    pub coordinator: Option<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Local address for the ring listener [default: 127.0.0.1:0]
    #[arg(long)]
    pub ring_bind: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TuneArgs {
    /// Prepared dataset directory; tuning uses its training split
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grid file with an [axes] table [default: built-in 200-point grid]
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// [default: 8]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Concurrent training runs [default: available cores]
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Examples drawn from the training split [default: 10000]
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// [default: 3]
    #[arg(long)]
    pub epochs: Option<u32>,
    /// [default: 128]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Output directory [default: tune-<timestamp>-seed<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Checkpoint (.mdl)
    #[arg(long = "model")]
    pub checkpoint: Option<PathBuf>,
    /// Prepared dataset directory; its test split is scored
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Record files to score instead of --data
    #[arg(long, num_args = 1..)]
    pub records: Option<Vec<PathBuf>>,
    /// Report directory [default: eval next to the checkpoint]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 512]
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AllreduceCheckArgs {
    #[arg(long)]
    pub world: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Directory where ranks publish their ring addresses
    #[arg(long)]
    pub rendezvous: Option<PathBuf>,
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the reduced vector as little-endian f32
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fills every setting not given as a flag from `table`.
pub fn layer<T: Serialize + DeserializeOwned>(
    flags: &T,
    table: Option<&toml::Value>,
) -> Result<T, CliError> {
    let bad = |e: serde_json::Error| CliError::Config(format!("config file: {e}"));
    let mut merged = match table {
        Some(t) => serde_json::to_value(t).map_err(bad)?,
        None => serde_json::Value::Object(Default::default()),
    };
    let serde_json::Value::Object(base) = &mut merged else {
        return Err(CliError::Config(
            "config file: section is not a table".into(),
        ));
    };
    let serde_json::Value::Object(given) = serde_json::to_value(flags).map_err(bad)? else {
        unreachable!("argument structs serialize to objects")
    };
    // `None` fields serialize as null, so `given` names every setting
    if let Some(k) = base.keys().find(|k| !given.contains_key(*k)) {
        return Err(CliError::Config(format!("config file: unknown key {k:?}")));
    }
    for (k, v) in given {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(bad)
}

fn load_config(path: &std::path::Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn resolve(cli: Cli) -> Result<Command, CliError> {
    let file = cli.config.as_deref().map(load_config).transpose()?;
    if let Some(f) = &file {
        let known = Cli::command();
        for key in f.keys() {
            if known.find_subcommand(key).is_none() {
                return Err(CliError::Config(format!(
                    "config file: unknown table [{key}]"
                )));
            }
        }
    }
    let table = file.as_ref().and_then(|f| f.get(cli.command.name()));
    Ok(match cli.command {
        Command::Generate(a) => Command::Generate(layer(&a, table)?),
        Command::Prepare(a) => Command::Prepare(layer(&a, table)?),
        Command::Train(a) => Command::Train(layer(&a, table)?),
        Command::Worker(a) => Command::Worker(layer(&a, table)?),
        Command::Tune(a) => Command::Tune(layer(&a, table)?),
        Command::Evaluate(a) => Command::Evaluate(layer(&a, table)?),
        Command::Inspect(a) => Command::Inspect(layer(&a, table)?),
        Command::AllreduceCheck(a) => Command::AllreduceCheck(layer(&a, table)?),
    })
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = resolve(cli).and_then(|cmd| {
        let mut out = std::io::stdout().lock();
        commands::run(cmd, &mut out)
    });
    match result {
        Ok(()) => 0,
        // a closed stdout (`topoclass inspect x | head`) is not a failure
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.diagnostic());
            1
        }
    }
}
