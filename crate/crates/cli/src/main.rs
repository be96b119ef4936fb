use std::path::PathBuf;
use std::process::ExitCode;

use apgx::trainer::Mode;
use apgx_cli::commands::{self, CommandError, RunOptions, SweepAxis, EXIT_FAILURE};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apgx", version, about = "PPO with analytic-gradient exploration on toy differentiable environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`[section]` / `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; repeat to give several seeds to compare and sweep.
    #[arg(long)]
    seed: Vec<u64>,
    /// Training mode: augmented, ppo_baseline or apg_only.
    #[arg(long)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// `section.key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            config: self.config.clone(),
            seeds: self.seed.clone(),
            mode: self.mode,
            overrides: self.overrides.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, manifest and checkpoints.
    Train(Common),
    /// Run every mode for every seed and summarize.
    Compare(Common),
    /// Repeat the comparison over values of the APG horizon or frequency.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept setting: h (APG horizon) or f (APG frequency).
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Check every analytic derivative against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Train(c) => commands::cmd_train(&commands::load_config(&c.options())?, &c.out),
        Command::Compare(c) => commands::cmd_compare(&commands::load_config(&c.options())?, &c.out).map(|_| ()),
        Command::Sweep { common, axis, values } => {
            commands::cmd_sweep(&commands::load_config(&common.options())?, axis, &values, &common.out).map(|_| ())
        }
        Command::Gradcheck { seed } => {
            if commands::cmd_gradcheck(seed)? {
                Ok(())
            } else {
                Err(CommandError { code: EXIT_FAILURE, error: anyhow::anyhow!("gradient check failed") })
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
