//! Command-line and JSON configuration.
//!
//! Every subcommand's options are all optional so that a JSON file given by
//! `--config` can fill in whatever the command line leaves out. Flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use stoch_euler::randomness::DEFAULT_SEED;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "stoch-euler", version, about = "Experiments with random-timestep Euler dynamics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalArgs {
    /// Master seed; decimal or 0x-prefixed hex.
    #[arg(long, global = true, value_parser = parse_seed)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo sampling.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Directory receiving CSV, SVG and manifest files.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Also write SVG line plots.
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub svg: bool,
}

/// Global settings after defaults are applied.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub svg: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let s = s.replace('_', "");
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("invalid seed {s:?}: {e}"))
}

/// Accepts plain numbers and fractions such as `2/3`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("invalid number {s:?}: {e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("invalid number {s:?}: {e}"))?;
            a / b
        }
        None => s.parse().map_err(|e| format!("invalid number {s:?}: {e}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample one path of the stochastic, second-order or deterministic dynamics.
    Simulate(SimulateArgs),
    /// Distances of the deterministic dynamics to the exact solution over a stepsize grid.
    DedError(DedErrorArgs),
    /// Local root mean square truncation error over a grid of horizons.
    Rmste(RmsteArgs),
    /// Second moments over a time grid, with decay-bound verdicts.
    Stability(StabilityArgs),
    /// Deterministic dynamics of the damped oscillator around the stability threshold.
    DedOscillator(DedOscillatorArgs),
    /// Lyapunov constants and the quadratic-form check of the decay inequality.
    Lyapunov(LyapunovArgs),
    /// Goodness-of-fit test of conditioned jump spacings against the uniform simplex.
    SimplexTest(SimplexTestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::DedError(_) => "ded-error",
            Command::Rmste(_) => "rmste",
            Command::Stability(_) => "stability",
            Command::DedOscillator(_) => "ded-oscillator",
            Command::Lyapunov(_) => "lyapunov",
            Command::SimplexTest(_) => "simplex-test",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// linear1d, logistic or oscillator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    /// Decay rate of linear1d.
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Mean waiting time (stochastic) or relaxation time (deterministic).
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// sed, sed2 or ded.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<String>,
    /// Initial value, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    /// Points of the uniform evaluation grid (jump times are added).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedErrorArgs {
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<f64>,
    /// Stepsizes, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    /// Largest stepsize used in the slope fits.
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_h_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsteArgs {
    /// linear1d or oscillator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    /// Stepsize policies: numbers for a fixed h, `eps` for h = ε.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_policies: Option<Vec<String>>,
    /// Dynamics orders: first, second.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Exclude the largest ε from the slope fit.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub drop_coarsest: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityArgs {
    /// linear1d, oscillator or diag (with --diag).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Decay rates λ of A = −diag(λ) for the diag problem.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Decay rate of the bound; defaults to 0.99·min(2λ_min, 1/(2h)).
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedOscillatorArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovArgs {
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Decay rates λ_ℓ of a symmetric system; replaces --a.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigs: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Also run the Monte Carlo check of the mean-square bound.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub mc: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexTestArgs {
    /// Jump counts to test, each in 1..=3.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[arg(long, value_parser = parse_real)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Compare against the deliberately wrong face sampler instead.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub negative_control: bool,
}

const GLOBAL_KEYS: [&str; 4] = ["seed", "workers", "out_dir", "svg"];

pub fn read_config(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config("config: top level must be a JSON object".into())),
        Err(e) => Err(CliError::Config(format!("config: {e}"))),
    }
}

/// Overlays the explicitly given flags onto the file values.
fn overlay<T: Serialize + DeserializeOwned>(flags: &T, file: Map<String, Value>, what: &str) -> Result<T, CliError> {
    let mut merged = file;
    if let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

pub fn resolve_global(flags: &GlobalArgs, file: &Map<String, Value>) -> Result<Settings, CliError> {
    let own: Map<String, Value> =
        file.iter().filter(|(k, _)| GLOBAL_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    let g: GlobalArgs = overlay(flags, own, "global options")?;
    let workers = g.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("workers: must be at least 1".into()));
    }
    Ok(Settings {
        seed: g.seed.unwrap_or(DEFAULT_SEED),
        workers,
        out_dir: g.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        svg: g.svg,
    })
}

pub fn resolve_command<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: &Map<String, Value>,
    name: &str,
) -> Result<T, CliError> {
    let own: Map<String, Value> =
        file.iter().filter(|(k, _)| !GLOBAL_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    overlay(flags, own, name)
}
