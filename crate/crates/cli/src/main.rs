use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ztop::harness::{
    run_experiment, stage_eval, stage_gen, stage_report, stage_select, stage_train, with_workers,
    EvalParts, ExperimentConfig, HarnessError, RunState,
};

/// Top-k checkpoint portfolios for learned TSP and MaxCut solvers.
#[derive(Debug, Parser)]
#[command(name = "ztop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test instances for every seed.
    Gen(Common),
    /// Train one model per seed and store its checkpoints.
    Train(Common),
    /// Print the top-k checkpoints chosen by validation score.
    Select(Common),
    /// Evaluate single, average, ztop and sampling on the test split.
    Eval(Common),
    /// Exhaustively search k-subsets of the top checkpoints.
    Enumerate(Common),
    /// Summarize results.csv.
    Report(Common),
    /// All stages in order, reusing finished ones.
    Run(Common),
    /// Print the effective configuration.
    Config(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=10`. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(short, long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.set("workers", &w.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<String, HarnessError> {
    match command {
        Command::Run(c) => run_experiment(&c.load()?),
        Command::Config(c) => Ok(c.load()?.to_text()),
        Command::Gen(c) => {
            let cfg = c.load()?;
            with_workers(&cfg, || {
                stage_gen(&cfg, &mut RunState::open(&cfg)?)?;
                Ok(format!("generated data for seeds {:?}", cfg.seeds))
            })
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            with_workers(&cfg, || {
                stage_train(&cfg, &mut RunState::open(&cfg)?)?;
                Ok(format!("trained seeds {:?}", cfg.seeds))
            })
        }
        Command::Select(c) => {
            let cfg = c.load()?;
            stage_select(&cfg)
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let parts = EvalParts {
                methods: true,
                enumerate: false,
            };
            with_workers(&cfg, || {
                let rows = stage_eval(&cfg, parts)?;
                Ok(format!("wrote {} result rows", rows.len()))
            })
        }
        Command::Enumerate(c) => {
            let cfg = c.load()?;
            let parts = EvalParts {
                methods: false,
                enumerate: true,
            };
            with_workers(&cfg, || {
                stage_eval(&cfg, parts)?;
                let path = cfg.output_dir.join("enumerate.csv");
                std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
            })
        }
        Command::Report(c) => stage_report(&c.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(|| execute(cli.command)) {
        Ok(Ok(text)) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(1),
    }
}
