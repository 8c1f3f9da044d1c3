//! Run configuration: a TOML file of (possibly dotted) keys, command-line
//! overrides, validation and the content hash.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::ExitError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Simulate,
    Bsde,
    Verify,
    Example,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Bsde => "bsde",
            Self::Verify => "verify",
            Self::Example => "example",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub example: u8,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub information: InformationConfig,
    #[serde(default)]
    pub bsde: BsdeConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Simulation step; exclusive with `n_steps`, 0.01 when both are unset.
    pub dt: Option<f64>,
    pub n_steps: Option<usize>,
    /// Simulation steps per recorded node.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

fn default_horizon() -> f64 {
    50.0
}

pub const DEFAULT_DT: f64 = 0.01;

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            dt: None,
            n_steps: None,
            substeps: 1,
        }
    }
}

/// Overrides of the example parameters; unset fields keep the defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub x0: Option<f64>,
    pub s: Option<f64>,
    pub jump_intensity: Option<f64>,
    pub jump_marks: Option<Vec<f64>>,
    pub jump_probabilities: Option<Vec<f64>>,
    pub rho_atoms: Option<Vec<f64>>,
    pub rho_probabilities: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Constant candidate control; the closed-form optimum when unset.
    pub candidate: Option<Vec<f64>>,
    /// Constant competitor controls for the verification.
    #[serde(default)]
    pub competitors: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    #[default]
    Full,
    Trivial,
    Delayed,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InformationConfig {
    #[serde(default)]
    pub flow: FlowKind,
    #[serde(default)]
    pub delay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Constant,
    Polynomial,
    Laurent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeConfig {
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub window: Option<f64>,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    #[serde(default = "one")]
    pub degree: usize,
    /// Weight exponent; one above the admissibility bound when unset.
    pub lambda: Option<f64>,
    #[serde(default = "default_samples")]
    pub max_samples: usize,
}

fn default_horizons() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}

fn default_tolerance() -> f64 {
    1e-2
}

fn default_basis() -> BasisKind {
    BasisKind::Laurent
}

fn default_samples() -> usize {
    2000
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            horizons: default_horizons(),
            tolerance: default_tolerance(),
            window: None,
            basis: default_basis(),
            degree: 1,
            lambda: None,
            max_samples: default_samples(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointSource {
    Analytic,
    Bsde,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "analytic")]
    pub adjoint: AdjointSource,
    /// Control values of the maximum-condition probe; derived from the
    /// candidate when empty.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default = "ten")]
    pub buckets: usize,
    #[serde(default = "two_hundred")]
    pub max_nodes: usize,
    #[serde(default = "quarter")]
    pub tail_window: f64,
    #[serde(default = "default_tolerance")]
    pub transversality_rtol: f64,
    #[serde(default = "two_hundred")]
    pub concavity_probes: usize,
    #[serde(default = "hundred")]
    pub gradient_probes: usize,
    #[serde(default = "gradient_tolerance")]
    pub gradient_tolerance: f64,
}

fn analytic() -> AdjointSource {
    AdjointSource::Analytic
}
fn ten() -> usize {
    10
}
fn hundred() -> usize {
    100
}
fn two_hundred() -> usize {
    200
}
fn quarter() -> f64 {
    0.25
}
fn gradient_tolerance() -> f64 {
    1e-4
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            adjoint: analytic(),
            probes: Vec::new(),
            buckets: ten(),
            max_nodes: two_hundred(),
            tail_window: quarter(),
            transversality_rtol: default_tolerance(),
            concavity_probes: two_hundred(),
            gradient_probes: hundred(),
            gradient_tolerance: gradient_tolerance(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Paths written by `simulate`.
    #[serde(default = "hundred")]
    pub max_paths: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { max_paths: hundred() }
    }
}

/// Parses a TOML override value; bare words that are not TOML become strings.
pub fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets `key` (dotted) in `table`, creating intermediate tables.
pub fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), ExitError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExitError::validation(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(ExitError::validation(format!("key `{key}`: `{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn parse_table(text: &str, origin: &str) -> Result<Table, ExitError> {
    text.parse::<Table>()
        .map_err(|e| ExitError::validation(format!("{origin}: {}", e.message())))
}

/// Deserialises and validates a resolved table.
pub fn from_table(table: &Table) -> Result<RunConfig, ExitError> {
    let cfg: RunConfig = table
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| ExitError::validation(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// SHA-256 of the canonical rendering of the resolved table. The output
/// directory is left out: it does not change any result.
pub fn config_hash(table: &Table) -> String {
    let mut t = table.clone();
    t.remove("out");
    hex::encode(Sha256::digest(canonical(&t).as_bytes()))
}

pub fn canonical(table: &Table) -> String {
    toml::to_string(table).expect("TOML tables always serialise")
}

fn bad(key: &str, msg: impl std::fmt::Display) -> ExitError {
    ExitError::validation(format!("key `{key}`: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), ExitError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExitError> {
        if !(1..=4).contains(&self.example) {
            return Err(bad("example", format!("must be 1..=4, got {}", self.example)));
        }
        if self.n_paths == 0 {
            return Err(bad("n_paths", "must be positive"));
        }
        positive("grid.horizon", self.grid.horizon)?;
        match (self.grid.dt, self.grid.n_steps) {
            (Some(_), Some(_)) => return Err(bad("grid.dt", "give either grid.dt or grid.n_steps, not both")),
            (dt, None) => {
                let dt = dt.unwrap_or(DEFAULT_DT);
                positive("grid.dt", dt)?;
                let n = (self.grid.horizon / dt).round();
                if ((n * dt - self.grid.horizon) / self.grid.horizon).abs() > 1e-9 {
                    return Err(bad("grid.dt", format!("{dt} does not divide the horizon {}", self.grid.horizon)));
                }
            }
            (None, Some(0)) => return Err(bad("grid.n_steps", "must be positive")),
            (None, Some(_)) => {}
        }
        if self.grid.substeps == 0 || !self.n_fine_steps().is_multiple_of(self.grid.substeps) {
            return Err(bad("grid.substeps", "must be positive and divide the number of steps"));
        }
        let p = &self.params;
        for (key, v) in [
            ("params.rho", p.rho),
            ("params.mu", p.mu),
            ("params.sigma", p.sigma),
            ("params.delta", p.delta),
            ("params.gamma", p.gamma),
            ("params.theta", p.theta),
            ("params.x0", p.x0),
            ("params.s", p.s),
            ("params.jump_intensity", p.jump_intensity),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(bad(key, "must be finite"));
                }
            }
        }
        if let Some(c) = &self.control.candidate {
            if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                return Err(bad("control.candidate", "must be a non-empty list of finite numbers"));
            }
        }
        if self.information.flow == FlowKind::Delayed && !(self.information.delay >= 0.0 && self.information.delay.is_finite()) {
            return Err(bad("information.delay", "must be non-negative"));
        }
        let b = &self.bsde;
        if b.horizons.is_empty() || b.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("bsde.horizons", "must be a non-empty increasing list"));
        }
        for h in &b.horizons {
            positive("bsde.horizons", *h)?;
        }
        let uses_ladder = self.subcommand == Subcommand::Bsde || self.verify.adjoint == AdjointSource::Bsde;
        if uses_ladder && b.horizons.last().copied().unwrap_or(0.0) > self.grid.horizon * (1.0 + 1e-12) {
            return Err(bad("bsde.horizons", "the last rung exceeds grid.horizon"));
        }
        positive("bsde.tolerance", b.tolerance)?;
        if let Some(w) = b.window {
            positive("bsde.window", w)?;
        }
        if b.max_samples == 0 {
            return Err(bad("bsde.max_samples", "must be positive"));
        }
        let v = &self.verify;
        if v.buckets == 0 {
            return Err(bad("verify.buckets", "must be positive"));
        }
        if !(v.tail_window > 0.0 && v.tail_window <= 1.0) {
            return Err(bad("verify.tail_window", "must lie in (0, 1]"));
        }
        positive("verify.gradient_tolerance", v.gradient_tolerance)?;
        if v.transversality_rtol < 0.0 {
            return Err(bad("verify.transversality_rtol", "must be non-negative"));
        }
        Ok(())
    }

    pub fn n_fine_steps(&self) -> usize {
        match (self.grid.dt, self.grid.n_steps) {
            (_, Some(n)) => n,
            (dt, None) => (self.grid.horizon / dt.unwrap_or(DEFAULT_DT)).round() as usize,
        }
    }
}
