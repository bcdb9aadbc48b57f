use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use smattn_cli::commands::{self, write_json, Outputs};
use smattn_cli::config::{self, RunConfig};
use smattn_cli::manifest::{config_json, relative_names, Manifest};
use smattn_cli::CliError;
use smattn_core::Error;

#[derive(Parser)]
#[command(name = "smattn", version, about = "Self-modulating attention in continuous time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a run manifest to repeat.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 for strictly sequential execution).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic events.
    Simulate,
    /// Parse, filter and split an event log.
    Ingest,
    /// Train a model and evaluate it on the test users.
    Train,
    /// Evaluate a checkpoint on held-out users.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split file written by `ingest`; rebuilt from the config otherwise.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train every ablation arm for each seed and compare.
    Ablate,
    /// Export a user's intensities over a time grid as CSV.
    IntensityExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
    },
    /// Report the generalization-bound quantities of a checkpoint.
    Bound {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Compare analytic and finite-difference gradients on a toy problem.
    Gradcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate => "ablate",
            Command::IntensityExport { .. } => "intensity-export",
            Command::Bound { .. } => "bound",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<Outputs, CliError> {
    Ok(match command {
        Command::Simulate => commands::simulate(cfg, out)?,
        Command::Ingest => commands::ingest(cfg, out)?,
        Command::Train => commands::train_cmd(cfg, out)?,
        Command::Evaluate { checkpoint, split } => {
            commands::evaluate_cmd(cfg, checkpoint, split.as_deref(), out)?
        }
        Command::Ablate => commands::ablate_cmd(cfg, out)?,
        Command::IntensityExport { checkpoint, user } => {
            commands::intensity_export(cfg, checkpoint, user, out)?
        }
        Command::Bound { checkpoint, .. } => commands::bound_cmd(cfg, checkpoint, out)?,
        Command::Gradcheck => commands::gradcheck(cfg, out)?,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = config::load(c.config.as_deref(), &c.set, c.seed)?;
    if let Command::Bound { epsilon, delta, .. } = &cli.command {
        cfg.bound.epsilon = epsilon.unwrap_or(cfg.bound.epsilon);
        cfg.bound.delta = delta.unwrap_or(cfg.bound.delta);
    }
    let name = cli.command.name();
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;

    let outputs = dispatch(&cli.command, &cfg, &out)?;

    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::Io(e.to_string()))?;
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads: c.threads,
        overrides: &c.set,
        config: config_json(&cfg)?,
        outputs: relative_names(&out, &outputs),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMATTN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
