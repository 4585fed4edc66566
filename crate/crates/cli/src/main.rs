//! `nullctl` command-line front end.
//!
//! Every command reads a JSON problem config, writes its outputs and a
//! `manifest.json` into `--out`, and exits with 0 (pass), 2 (config error),
//! 3 (solver error) or 4 (verification failure).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "nullctl", version, about = "Minimum-energy null controls for time-delay equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Grid step; overrides `grid_h` from the config.
    #[arg(long)]
    pub h: Option<f64>,
    /// Seed for random witnesses and perturbations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the equation under a chosen control.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `zero`, `optimal`, or the path of a control CSV (t,u,segment_label).
        #[arg(long, default_value = "optimal")]
        control: String,
        /// End time; defaults to the horizon of the optimal problem.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Closed-form minimum-energy control.
    Optimal {
        #[command(flatten)]
        common: Common,
    },
    /// Run acceptance checks on one config.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of null,oracle,ortho,monotone,optimality.
        #[arg(long, default_value = "null,oracle,ortho,monotone,optimality")]
        checks: String,
        /// Replace the optimal generator by a CSV (t,u_hat) in the `null` check.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Characteristic zeros of a scalar equation.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Search window `re_min,re_max,im_min,im_max`.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
    },
    /// Brute-force KKT (and, for scalar equations, Volterra) solutions.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, control, t_end } => commands::simulate(&common, &control, t_end),
        Command::Optimal { common } => commands::optimal(&common),
        Command::Verify { common, checks, generator } => {
            commands::verify(&common, &checks, generator.as_deref())
        }
        Command::Spectrum { common, window } => commands::spectrum(&common, window.as_deref()),
        Command::Oracle { common } => commands::oracle(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
