#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::fmt;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use serde_json::{Map, Value};

use config::{resolve_command, resolve_global, Cli, Command, Settings};
use output::{output_entries, Outputs, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<stoch_euler::Error> for CliError {
    fn from(e: stoch_euler::Error) -> Self {
        use stoch_euler::Error as E;
        match e {
            E::Parameter(_) | E::Dimension(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

const ACCEPTANCE_FAILURE: u8 = 4;

fn echo<T: Serialize>(settings: &Settings, args: &T) -> Value {
    let mut m = Map::new();
    m.insert("global".into(), serde_json::to_value(settings).unwrap_or(Value::Null));
    m.insert("command".into(), serde_json::to_value(args).unwrap_or(Value::Null));
    Value::Object(m)
}

fn dispatch<T, F>(name: &str, flags: &T, file: &Map<String, Value>, settings: &Settings, run: F) -> Result<u8, CliError>
where
    T: Serialize + serde::de::DeserializeOwned,
    F: FnOnce(&Settings, &T, &mut Outputs) -> Result<commands::Outcome, CliError>,
{
    let args = resolve_command(flags, file, name)?;
    let start = Instant::now();
    let mut out = Outputs::new(&settings.out_dir, settings.svg)?;
    let result = run(settings, &args, &mut out);
    let (status, code, mut messages) = match &result {
        Ok(o) if o.failures.is_empty() => ("ok".to_string(), 0, o.messages.clone()),
        Ok(o) => {
            let mut m = o.messages.clone();
            m.extend(o.failures.iter().map(|f| format!("FAIL {f}")));
            ("acceptance-failure".to_string(), ACCEPTANCE_FAILURE, m)
        }
        Err(e) => ("error".to_string(), e.code(), vec![e.to_string()]),
    };
    if code == ACCEPTANCE_FAILURE {
        messages.push(format!("{} acceptance check(s) failed", result.as_ref().map_or(0, |o| o.failures.len())));
    }
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        status,
        exit_code: i32::from(code),
        config: echo(settings, &args),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        messages,
        outputs: output_entries(&out.files)?,
    };
    manifest.write(out.dir())?;
    result.map(|_| code)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let file = match &cli.global.config {
        Some(path) => config::read_config(path)?,
        None => Map::new(),
    };
    let s = resolve_global(&cli.global, &file)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Simulate(a) => dispatch(name, a, &file, &s, commands::simulate),
        Command::DedError(a) => dispatch(name, a, &file, &s, commands::ded_error),
        Command::Rmste(a) => dispatch(name, a, &file, &s, commands::rmste),
        Command::Stability(a) => dispatch(name, a, &file, &s, commands::stability),
        Command::DedOscillator(a) => dispatch(name, a, &file, &s, commands::ded_oscillator),
        Command::Lyapunov(a) => dispatch(name, a, &file, &s, commands::lyapunov),
        Command::SimplexTest(a) => dispatch(name, a, &file, &s, commands::simplex_test),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
