use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stgat::pipeline::{self, PredictorKind};
use stgat::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "stgat", version, about = "Spatio-temporal graph attention demand and OD forecasting")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ChannelSwitches {
    #[arg(long)]
    no_linear: bool,
    #[arg(long)]
    no_stpp: bool,
    #[arg(long)]
    no_stpm: bool,
    #[arg(long)]
    no_nonlinear: bool,
}

impl ChannelSwitches {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.temporal;
        t.linear &= !self.no_linear;
        t.stpp &= !self.no_stpp;
        t.stpm &= !self.no_stpm;
        t.nonlinear &= !self.no_nonlinear;
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic order log from the [scenario] section.
    Generate,
    /// Bin an order-log CSV into a corpus directory.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train on a corpus and write a checkpoint and loss trace.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        channels: ChannelSwitches,
    },
    /// Score a predictor on the test days.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        predictor: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelSwitches,
    },
    /// Train and score the full model and every single-channel ablation.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Retrain over a list of values of one parameter.
    Sweep {
        /// granularity, n_days, h_hours or cell_length_km.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        orders: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Forecast one slot with a trained checkpoint.
    Predict {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        day: usize,
        #[arg(long)]
        slot: usize,
        #[command(flatten)]
        channels: ChannelSwitches,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate => {
            pipeline::cmd_generate(&cfg, out)?;
        }
        Command::Ingest { input } => {
            pipeline::cmd_ingest(&mut cfg, input.as_deref(), out)?;
        }
        Command::Train { corpus, epochs, channels } => {
            channels.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            pipeline::cmd_train(&mut cfg, corpus.as_deref(), out)?;
        }
        Command::Evaluate { corpus, predictor, checkpoint, channels } => {
            channels.apply(&mut cfg);
            let kind: PredictorKind = predictor.parse()?;
            pipeline::cmd_evaluate(&mut cfg, corpus.as_deref(), kind, checkpoint.as_deref(), out)?;
        }
        Command::Ablate { corpus, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            pipeline::cmd_ablate(&mut cfg, corpus.as_deref(), out)?;
        }
        Command::Sweep { param, values, orders, corpus, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            pipeline::cmd_sweep(&mut cfg, &param, &values, orders.as_deref(), corpus.as_deref(), out)?;
        }
        Command::Predict { corpus, checkpoint, day, slot, channels } => {
            channels.apply(&mut cfg);
            pipeline::cmd_predict(&mut cfg, corpus.as_deref(), checkpoint.as_deref(), day, slot, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            ExitCode::from(2)
        }
    }
}
