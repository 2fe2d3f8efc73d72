//! `cyclekg`: synthetic data generation, cycle or supervised training,
//! evaluation, generation and one-cycle ablations.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cyclekg_core::cycle::Cycles;

use commands::{Direction, EvalArgs};
use config::{Mode, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "cyclekg",
    version,
    about = "Unsupervised graph-to-text and text-to-graph by iterative back translation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that build a run configuration.
#[derive(Args, Clone, Debug, Default)]
struct RunFlags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (the data directory for gen-data, the parent of run
    /// directories otherwise).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    device: Option<String>,
}

impl RunFlags {
    fn resolve(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(e) = self.epochs {
            cfg.schedule.epochs = e;
        }
        if let Some(d) = &self.device {
            cfg.device = d.clone();
        }
        let dir = self
            .run_dir
            .clone()
            .ok_or_else(|| CliError::usage("--run-dir is required"))?;
        Ok((cfg, dir))
    }
}

#[derive(Args, Clone, Debug, Default)]
struct DataFlags {
    /// Directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train_texts: Option<PathBuf>,
    #[arg(long)]
    train_graphs: Option<PathBuf>,
    #[arg(long)]
    train_pairs: Option<PathBuf>,
    #[arg(long)]
    dev_pairs: Option<PathBuf>,
}

impl DataFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.paths;
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut p.data_dir, &self.data);
        set(&mut p.train_texts, &self.train_texts);
        set(&mut p.train_graphs, &self.train_graphs);
        set(&mut p.train_pairs, &self.train_pairs);
        set(&mut p.dev_pairs, &self.dev_pairs);
    }
}

fn parse_cycles(s: &str) -> Result<Cycles, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown cycle configuration `{s}` (both, text-only, graph-only)"))
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic benchmark into --run-dir.
    GenData {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Trains both models; writes metrics, checkpoints and the best marker.
    Train {
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Cycles to run in unsupervised mode.
        #[arg(long, value_parser = parse_cycles)]
        cycles: Option<Cycles>,
    },
    /// Scores a checkpoint, or prediction files, against gold pairs.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Data directory holding the vocabularies (and test.pairs.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Gold pairs; defaults to test.pairs.jsonl in --data.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// One text per gold pair.
        #[arg(long)]
        predicted_texts: Option<PathBuf>,
        /// One graph per gold pair.
        #[arg(long)]
        predicted_graphs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verbalizes graphs (g2t) or extracts graphs from annotated texts (t2g).
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Full cycle training and the one-cycle configurations, scored on test.
    Ablate {
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_delimiter = ',', value_parser = parse_cycles, default_value = "both,text-only,graph-only")]
        cycles: Vec<Cycles>,
    },
}

fn set_workers(cfg: &RunConfig) {
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
    {
        log::warn!("worker pool already initialized: {e}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { run } => {
            let (cfg, dir) = run.resolve()?;
            cfg.validate()?;
            commands::gen_data(&cfg, &dir)
        }
        Command::Train { run, data, cycles } => {
            let (mut cfg, dir) = run.resolve()?;
            data.apply(&mut cfg);
            if let Some(c) = cycles {
                cfg.cycles = c;
            }
            set_workers(&cfg);
            commands::train_run(&cfg, &dir).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            data,
            pairs,
            predicted_texts,
            predicted_graphs,
            out,
        } => commands::eval_cmd(&EvalArgs {
            checkpoint,
            data_dir: data,
            pairs,
            predicted_texts,
            predicted_graphs,
            out,
        }),
        Command::Generate {
            checkpoint,
            data,
            direction,
            input,
            output,
        } => commands::generate_cmd(&checkpoint, &data, direction, &input, &output),
        Command::Ablate { run, data, cycles } => {
            let (mut cfg, dir) = run.resolve()?;
            data.apply(&mut cfg);
            set_workers(&cfg);
            commands::ablate_cmd(&cfg, &dir, &cycles).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
