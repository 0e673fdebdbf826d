//! `adm`: batch runner for the mass, validation, invariance, convergence and
//! weighted-norm experiments.
//!
//! Exit codes: 0 ok, 1 input or evaluation error, 2 a limit did not
//! converge, 3 a validation threshold was breached.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "adm", version, about = "ADM mass experiments on asymptotically Euclidean metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mass along a scale schedule with each requested method.
    Mass(Common),
    /// Pointwise and integral identity residuals against thresholds.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Test fixture: assemble the scalar decomposition with the wrong
        /// sign on its quadratic remainder.
        #[arg(long, hide = true)]
        corrupt_qs_sign: bool,
    },
    /// Mass before and after a change of chart.
    Invariance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        diffeo: DiffeoArgs,
    },
    /// Per-scale sequences for every cutoff family and the limit fits.
    Convergence(Common),
    /// Weighted norms, fall-off fit and class membership of `g - δ`.
    Norms {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        norms: NormArgs,
    },
}

/// Options shared by every subcommand. Precedence: flag, then environment,
/// then config file, then built-in default.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long, env = "WEAKADM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, env = "WEAKADM_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, env = "WEAKADM_WORKERS")]
    pub workers: Option<usize>,
    /// Seed of the quasi-random angular rules.
    #[arg(long, env = "WEAKADM_SEED")]
    pub seed: Option<u64>,

    /// Metric family: flat, schwarzschild, conformal, radial_power, shells,
    /// tensor, grid.
    #[arg(long = "metric", env = "WEAKADM_METRIC")]
    pub family: Option<String>,
    #[arg(long, env = "WEAKADM_N")]
    pub n: Option<usize>,
    /// Schwarzschild mass parameter.
    #[arg(long, env = "WEAKADM_M")]
    pub m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub mean: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    /// Symmetric n×n coefficient, row-major, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub coeff: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub center: Option<Vec<f64>>,
    #[arg(long)]
    pub inner_radius: Option<f64>,
    /// Grid file for the grid family.
    #[arg(long)]
    pub grid: Option<PathBuf>,

    /// Methods (comma separated or repeated): adm_surface, weak,
    /// ricci_surface, ricci_weak, cutoff_identity, all.
    #[arg(long = "method", env = "WEAKADM_METHOD", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Cutoff family: ramp, smooth_ramp, wide_ramp.
    #[arg(long, env = "WEAKADM_CUTOFF")]
    pub cutoff: Option<String>,
    /// Width parameter of wide_ramp.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Scale schedule: `start:stop:xRATIO`, `start:stop:+STEP`, a comma list
    /// or a single value.
    #[arg(long, visible_alias = "alphas", visible_alias = "radii", env = "WEAKADM_SCHEDULE")]
    pub schedule: Option<String>,
    /// Sample points for pointwise residuals.
    #[arg(long)]
    pub points: Option<usize>,

    #[arg(long)]
    pub angular_order: Option<usize>,
    #[arg(long)]
    pub radial_order: Option<usize>,
    #[arg(long)]
    pub qmc_points: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DiffeoArgs {
    /// isometry, random_isometry or almost_identity.
    #[arg(long = "diffeo")]
    pub kind: Option<String>,
    /// Orthogonal n×n matrix, row-major, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rotation: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub shift: Option<Vec<f64>>,
    /// Almost-identity amplitude.
    #[arg(long = "c", allow_negative_numbers = true)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tau_prime: Option<f64>,
    /// Number of random isometries.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_shift: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct NormArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Integrability exponent, a number >= 1 or `inf`.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub r_in: Option<f64>,
    #[arg(long)]
    pub r_out: Option<f64>,
    #[arg(long)]
    pub sup_samples: Option<usize>,
}

/// Process outcome, mapped onto the exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NoConvergence,
    Breach,
}

impl Outcome {
    pub fn worst(self, other: Outcome) -> Outcome {
        use Outcome::*;
        match (self, other) {
            (Breach, _) | (_, Breach) => Breach,
            (NoConvergence, _) | (_, NoConvergence) => NoConvergence,
            _ => Ok,
        }
    }

    fn code(self) -> ExitCode {
        ExitCode::from(match self {
            Outcome::Ok => 0,
            Outcome::NoConvergence => 2,
            Outcome::Breach => 3,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors in this tool's contract
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
