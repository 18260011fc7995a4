//! `dynfire`: synthesise or ingest data, train, evaluate and compare models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynfire::model::Variant;
use dynfire::{Error, ErrorKind};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "dynfire", version, about = "Weekly fire-risk forecasting with a dynamic auto-encoder")]
struct Cli {
    /// TOML file with run settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (relative paths resolve under $DYNFIRE_OUT_ROOT when set).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the fire-spread simulator.
    Synth(SynthArgs),
    /// Build a dataset from per-week CSV grids.
    Ingest(IngestArgs),
    /// Split a dataset temporally into train/ and val/.
    Split(SplitArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the validation half of a split.
    Evaluate(EvalArgs),
    /// Emit fire-risk maps T weeks past the end of a dataset.
    Predict(PredictArgs),
    /// Score several checkpoints on one validation stream and flag the best.
    Compare(EvalArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    height: Option<i64>,
    #[arg(long)]
    width: Option<i64>,
    #[arg(long)]
    channels: Option<i64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    weeks: Option<i64>,
    #[arg(long)]
    dropout_p: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Window length K used for the minimum-length check.
    #[arg(long)]
    window: Option<i64>,
    /// Horizon T used for the minimum-length check.
    #[arg(long)]
    horizon: Option<i64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory holding the CSV grids.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// JSON manifest mapping channel names to file patterns.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (obs.gstk + truth.gstk).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    iterations: Option<i64>,
    #[arg(long)]
    batch_size: Option<i64>,
    #[arg(long)]
    window: Option<i64>,
    #[arg(long)]
    buffer_capacity: Option<i64>,
    #[arg(long)]
    checkpoint_interval: Option<i64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    c_pred: Option<f64>,
    #[arg(long)]
    c_sys: Option<f64>,
    #[arg(long)]
    a_pred: Option<f64>,
    #[arg(long)]
    a_sys: Option<f64>,
    #[arg(long)]
    state: Option<i64>,
    #[arg(long)]
    feature: Option<i64>,
    #[arg(long)]
    horizon: Option<i64>,
    #[arg(long)]
    conv1: Option<i64>,
    #[arg(long)]
    conv2: Option<i64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Split directory with train/ and val/ subdirectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to score; repeat for `compare`.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Start from a zero state instead of the state carried over the training weeks.
    #[arg(long)]
    cold: bool,
    /// Write a risk PNG for every scored week.
    #[arg(long)]
    png: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Dataset directory whose frames are fed to the model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    /// Weeks ahead; must equal the checkpoint's horizon.
    #[arg(long)]
    horizon: Option<i64>,
    /// Emit a map for every week, not only the last.
    #[arg(long)]
    all: bool,
}

impl GridArgs {
    fn apply(&self, o: &mut Overrides) {
        for (name, v) in [("height", self.height), ("width", self.width), ("channels", self.channels)] {
            if let Some(v) = v {
                o.set(&format!("sim.{name}"), v);
                o.set(&format!("train.dims.{name}"), v);
            }
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::Compare(_) => "compare",
        }
    }

    fn overrides(&self, o: &mut Overrides) {
        match self {
            Command::Synth(a) => {
                o.opt("weeks", a.weeks);
                o.opt("sim.dropout_p", a.dropout_p);
                o.opt("sim.noise_sigma", a.noise_sigma);
                o.opt("train.window", a.window);
                o.opt("train.dims.horizon", a.horizon);
                a.grid.apply(o);
            }
            Command::Ingest(a) => {
                o.path("raw", &a.dir);
                o.path("manifest", &a.manifest);
            }
            Command::Split(a) => {
                o.path("data", &a.data);
                o.opt("ratio", a.ratio);
            }
            Command::Train(a) => {
                o.path("data", &a.data);
                o.path("resume", &a.resume);
                o.opt("train.variant", a.variant.map(|v| v.as_str().to_string()));
                o.opt("train.iterations", a.iterations);
                o.opt("train.batch_size", a.batch_size);
                o.opt("train.window", a.window);
                o.opt("train.buffer_capacity", a.buffer_capacity);
                o.opt("train.checkpoint_interval", a.checkpoint_interval);
                o.opt("train.clip_norm", a.clip_norm);
                o.opt("train.schedule.c_pred", a.c_pred);
                o.opt("train.schedule.c_sys", a.c_sys);
                o.opt("train.schedule.a_pred", a.a_pred);
                o.opt("train.schedule.a_sys", a.a_sys);
                o.opt("train.dims.state", a.state);
                o.opt("train.dims.feature", a.feature);
                o.opt("train.dims.horizon", a.horizon);
                o.opt("train.dims.conv1", a.conv1);
                o.opt("train.dims.conv2", a.conv2);
                a.grid.apply(o);
            }
            Command::Evaluate(a) | Command::Compare(a) => {
                o.path("data", &a.data);
                o.set(
                    "checkpoints",
                    a.checkpoints
                        .iter()
                        .map(|p| p.to_string_lossy().into_owned())
                        .collect::<Vec<_>>(),
                );
                o.flag("cold", a.cold);
                o.flag("all_weeks", a.png);
            }
            Command::Predict(a) => {
                o.path("data", &a.data);
                o.set("checkpoints", vec![a.checkpoint.to_string_lossy().into_owned()]);
                o.opt("horizon", a.horizon);
                o.flag("all_weeks", a.all);
            }
        }
    }
}

/// Process exit status for an error family.
fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 1,
        ErrorKind::Config => 2,
        ErrorKind::DataFormat => 3,
        ErrorKind::Numerical => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut o = Overrides::default();
    o.path("out", &cli.out);
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} is too large")))?;
        o.set("seed", seed);
    }
    cli.command.overrides(&mut o);
    let config = RunConfig::resolve(cli.command.name(), cli.config.as_deref(), o)?;
    match cli.command {
        Command::Synth(_) => commands::synth(&config),
        Command::Ingest(_) => commands::ingest(&config),
        Command::Split(_) => commands::split(&config),
        Command::Train(_) => commands::train(&config),
        Command::Evaluate(_) => commands::evaluate(&config),
        Command::Predict(_) => commands::predict(&config),
        Command::Compare(_) => commands::compare(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynfire: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
