use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reckon::harness::config::{Overrides, RunConfig};
use reckon::harness::{cmd_eval, cmd_gen, cmd_train, validate};
use reckon::{Error, Result};

#[derive(Parser)]
#[command(name = "reckon", version, about = "Spiking RNN processor emulator with on-chip e-prop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Timestep in microseconds.
    #[arg(long, global = true)]
    dt: Option<u32>,
    /// Leading fraction of the supervised window used for decisions.
    #[arg(long = "decision-window", global = true)]
    decision_window: Option<f64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from random weights and write metrics and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint forward-only on the held-out trials.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write navigation trials (or a converted CSV) as AEV files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long = "n-trials")]
        n_trials: Option<u32>,
        /// Convert `timestamp_us,channel` rows instead of generating.
        #[arg(long = "from-csv")]
        from_csv: Option<PathBuf>,
    },
    /// Run the self-check suite; exits 1 if any check fails.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        dt_us: common.dt,
        decision_window: common.decision_window,
        threads: common.threads,
    };
    RunConfig::load(common.config.as_deref(), std::env::vars(), &overrides)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load(&common)?;
            let s = cmd_train(&cfg)?;
            print_json(&s);
            Ok(true)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            print_json(&cmd_eval(&cfg, &checkpoint)?);
            Ok(true)
        }
        Command::Gen {
            common,
            n_trials,
            from_csv,
        } => {
            let mut cfg = load(&common)?;
            if let Some(n) = n_trials {
                cfg.gen.n_trials = n;
            }
            if from_csv.is_some() {
                cfg.gen.from_csv = from_csv;
            }
            let m = cmd_gen(&cfg)?;
            eprintln!("wrote {} file(s) to {}", m.files.len(), cfg.output.dir.display());
            Ok(true)
        }
        Command::Validate { common } => {
            let report = validate::run_all();
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("validate.json");
                let text = serde_json::to_string_pretty(&report).expect("serializable");
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            print_json(&report);
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
