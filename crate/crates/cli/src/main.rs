#![allow(clippy::needless_range_loop)]

mod config;
mod output;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use mpjump::Error;
use toml::{Table, Value};

use config::{parse_value, set_dotted, Subcommand};

/// Exit status plus message of a failed run.
#[derive(Debug)]
pub struct ExitError {
    pub code: u8,
    pub message: String,
}

impl ExitError {
    pub const VALIDATION: u8 = 2;
    pub const CONVERGENCE: u8 = 3;
    pub const VIOLATED: u8 = 4;

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: Self::VALIDATION,
            message: message.into(),
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self {
            code: 1,
            message: format!("{context}: {err}"),
        }
    }
}

impl From<Error> for ExitError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConvergenceFailure { .. } | Error::SolverDivergence { .. } | Error::TooManyDivergent { .. } => Self::CONVERGENCE,
            _ => Self::VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "mpjump", version, about = "Controlled jump diffusions: simulation, adjoint BSDEs and maximum-principle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Simulate paths of an example under a control.
    Simulate(RunArgs),
    /// Solve the adjoint BSDE of an example by the truncation ladder.
    Bsde(RunArgs),
    /// Run the maximum-principle checks on a candidate control.
    Verify(RunArgs),
    /// Closed forms of an example plus the checks at its optimum.
    Example(RunArgs),
    /// Run the subcommand named in the config.
    Run(RunArgs),
    /// Check that every artifact of an output directory carries the hash of its config.
    Check {
        /// Output directory of a previous run.
        dir: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML config; dotted keys name nested fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated paths (`n_paths`).
    #[arg(long)]
    paths: Option<usize>,
    /// Simulation step (`grid.dt`).
    #[arg(long)]
    dt: Option<f64>,
    /// Truncation horizon (`grid.horizon`).
    #[arg(long)]
    horizon: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Example id, 1 to 4.
    #[arg(long, visible_alias = "id")]
    example: Option<u8>,
    /// Ladder tolerance (`bsde.tolerance`).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Constant candidate control, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    candidate: Option<Vec<f64>>,
    /// Constant competitor control, comma separated; repeatable.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    competitor: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Any config key, as `key=value` with a TOML value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self, competitor_dim: usize) -> Result<Vec<(String, Value)>, ExitError> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let float = |v: f64| Value::Float(v);
        let list = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());
        if let Some(v) = self.seed {
            out.push(("seed".into(), Value::Integer(to_i64("seed", v)?)));
        }
        if let Some(v) = self.paths {
            out.push(("n_paths".into(), Value::Integer(to_i64("n_paths", v as u64)?)));
        }
        if let Some(v) = self.dt {
            out.push(("grid.dt".into(), float(v)));
        }
        if let Some(v) = self.horizon {
            out.push(("grid.horizon".into(), float(v)));
        }
        if let Some(v) = &self.out {
            out.push(("out".into(), Value::String(v.to_string_lossy().into_owned())));
        }
        if let Some(v) = self.example {
            out.push(("example".into(), Value::Integer(v.into())));
        }
        if let Some(v) = self.tolerance {
            out.push(("bsde.tolerance".into(), float(v)));
        }
        if let Some(v) = &self.candidate {
            out.push(("control.candidate".into(), list(v)));
        }
        if !self.competitor.is_empty() {
            let d = competitor_dim.max(1);
            if !self.competitor.len().is_multiple_of(d) {
                return Err(ExitError::validation(format!(
                    "--competitor: {} values do not split into controls of dimension {d}",
                    self.competitor.len()
                )));
            }
            let all = self.competitor.chunks(d).map(list).collect();
            out.push(("control.competitors".into(), Value::Array(all)));
        }
        for (key, v) in [("rho", self.rho), ("mu", self.mu), ("sigma", self.sigma), ("delta", self.delta), ("gamma", self.gamma)] {
            if let Some(v) = v {
                out.push((format!("params.{key}"), float(v)));
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ExitError::validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            out.push((k.trim().to_string(), parse_value(v.trim())));
        }
        Ok(out)
    }
}

fn to_i64(key: &str, v: u64) -> Result<i64, ExitError> {
    i64::try_from(v).map_err(|_| ExitError::validation(format!("key `{key}`: {v} is too large")))
}

/// Verbatim config text and the resolved table.
fn load(args: &RunArgs, sub: Option<Subcommand>) -> Result<(String, Table), ExitError> {
    let verbatim = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| ExitError::validation(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let origin = args.config.as_ref().map_or("config".to_string(), |p| p.display().to_string());
    let mut table = config::parse_table(&verbatim, &origin)?;
    if let Some(sub) = sub {
        if let Some(Value::String(s)) = table.get("subcommand") {
            if s != sub.name() {
                log::warn!("config names subcommand `{s}`; running `{}`", sub.name());
            }
        }
        table.insert("subcommand".into(), Value::String(sub.name().into()));
    }
    // competitors are split by the control dimension of the chosen example
    let mut probe = table.clone();
    for (k, v) in args.overrides(1)? {
        if k != "control.competitors" {
            set_dotted(&mut probe, &k, v)?;
        }
    }
    let dim = match probe.get("example").and_then(Value::as_integer) {
        Some(4) => 2,
        _ => 1,
    };
    for (k, v) in args.overrides(dim)? {
        set_dotted(&mut table, &k, v)?;
    }
    Ok((verbatim, table))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { dir } => output::check_dir(dir),
        Command::Simulate(a) => load(a, Some(Subcommand::Simulate)).and_then(|(v, t)| run::run(&v, t)),
        Command::Bsde(a) => load(a, Some(Subcommand::Bsde)).and_then(|(v, t)| run::run(&v, t)),
        Command::Verify(a) => load(a, Some(Subcommand::Verify)).and_then(|(v, t)| run::run(&v, t)),
        Command::Example(a) => load(a, Some(Subcommand::Example)).and_then(|(v, t)| run::run(&v, t)),
        Command::Run(a) => load(a, None).and_then(|(v, t)| run::run(&v, t)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
