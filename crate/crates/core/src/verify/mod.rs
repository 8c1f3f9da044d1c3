//! Numerical checks of the sufficient and necessary optimality conditions
//! for a candidate control, collected in a [`VerificationReport`].
//!
//! A `verified` verdict means the conditions are numerically consistent on
//! the simulated sample; it is never a proof.

mod conditions;
mod variation;

use std::fmt::{self, Write as _};

use serde::Serialize;

pub use conditions::{
    check_max_condition, concavity_probe, estimate_transversality, integrability_flags, stationarity_residual, ConcavityProbe,
    GapBucket, IntegrabilityFlag, MaxConditionResult, StationarityBucket, StationarityResult, TransversalityEstimate,
};
pub use variation::{first_variation, hamiltonian_derivative, performance_derivative, DerivativeProcess, Direction, Estimate};

use crate::error::{check_dim, invalid, Result};
use crate::hamiltonian::{AdjointTriple, GradientCheck, Hamiltonian};
use crate::model::{ControlSet, InformationFlow};
use crate::regression::Basis;
use crate::scalar::Real;
use crate::simulate::PathBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Conditions numerically consistent.
    Verified,
    Inconclusive,
    Violated,
}

impl Verdict {
    /// Worst of two verdicts.
    pub fn and(self, other: Self) -> Self {
        use Verdict::*;
        match (self, other) {
            (Violated, _) | (_, Violated) => Violated,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Verified,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Verified => "verified",
            Self::Inconclusive => "inconclusive",
            Self::Violated => "violated",
        })
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions<T: Real> {
    /// Regression basis on the observed state.
    pub basis: Basis<T>,
    pub n_buckets: usize,
    /// Upper bound on the nodes evaluated per check.
    pub max_nodes: usize,
    /// Absolute slack added to every statistical tolerance.
    pub atol: f64,
    /// Fraction of the horizon used as the transversality tail window.
    pub tail_window: f64,
    /// Transversality slack relative to `E|p(0)^T X_hat(0)|`.
    pub transversality_rtol: f64,
    pub concavity_probes: usize,
    /// Segment half-length relative to the centre point.
    pub concavity_radius: f64,
    pub concavity_tol: f64,
    pub seed: u64,
}

impl<T: Real> Default for VerifyOptions<T> {
    fn default() -> Self {
        Self {
            basis: Basis::default(),
            n_buckets: 10,
            max_nodes: 200,
            atol: 1e-9,
            tail_window: 0.25,
            transversality_rtol: 1e-2,
            concavity_probes: 200,
            concavity_radius: 0.1,
            concavity_tol: 1e-9,
            seed: 0,
        }
    }
}

/// Adjoint and bundle must share the time step, paths and dimensions.
pub(crate) fn check_alignment<T: Real>(adjoint: &AdjointTriple<T>, bundle: &PathBundle<T>) -> Result<()> {
    let (ga, gb) = (adjoint.grid(), bundle.grid());
    let tol = T::epsilon() * T::lit(64.0) * gb.dt();
    if (ga.dt() - gb.dt()).abs() > tol || ga.n_nodes() > gb.n_nodes() {
        return Err(invalid("adjoint grid does not match the bundle grid"));
    }
    check_dim("adjoint state", bundle.state_dim(), adjoint.state_dim())?;
    check_dim("adjoint noise", bundle.noise_dim(), adjoint.noise_dim())?;
    check_dim("adjoint marks", bundle.n_marks(), adjoint.n_marks())?;
    if adjoint.n_paths() == 0 {
        return Err(invalid("adjoint has no paths"));
    }
    if adjoint.path_ids().iter().any(|&p| p >= bundle.n_paths() || bundle.is_divergent(p)) {
        return Err(invalid("adjoint refers to paths missing from the bundle"));
    }
    Ok(())
}

/// One line of the report table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub candidate: String,
    pub transversality: Vec<TransversalityEstimate>,
    pub hamiltonian_gap: MaxConditionResult,
    pub stationarity: StationarityResult,
    pub concavity: ConcavityProbe,
    pub integrability: Vec<IntegrabilityFlag>,
    pub gradient_check: Option<GradientCheck>,
    /// Combined verdict of the sufficient conditions.
    pub sufficiency: Verdict,
    /// Verdict of the stationarity condition.
    pub necessity: Verdict,
    pub assumptions: Vec<String>,
}

impl VerificationReport {
    pub fn conditions(&self) -> Vec<ConditionSummary> {
        let mut out = Vec::new();
        for (j, t) in self.transversality.iter().enumerate() {
            out.push(ConditionSummary {
                name: format!("transversality[{j}]"),
                estimate: t.estimate,
                std_err: t.std_err,
                tolerance: t.tolerance,
                verdict: t.verdict,
            });
        }
        let worst = self
            .hamiltonian_gap
            .buckets
            .iter()
            .max_by(|a, b| (a.gap - a.tolerance).total_cmp(&(b.gap - b.tolerance)));
        out.push(ConditionSummary {
            name: "hamiltonian_gap".into(),
            estimate: self.hamiltonian_gap.max_gap,
            std_err: worst.map_or(0.0, |b| b.regression_error),
            tolerance: worst.map_or(0.0, |b| b.tolerance),
            verdict: self.hamiltonian_gap.verdict,
        });
        let worst = self.stationarity.buckets.iter().max_by(|a, b| {
            let ra = a.residual.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let rb = b.residual.iter().map(|v| v.abs()).fold(0.0, f64::max);
            ra.total_cmp(&rb)
        });
        let se = worst.map_or(0.0, |b| b.std_err.iter().copied().fold(0.0, f64::max));
        out.push(ConditionSummary {
            name: "stationarity".into(),
            estimate: worst.map_or(0.0, |b| b.residual.iter().copied().fold(0.0, |a, v| if v.abs() > a.abs() { v } else { a })),
            std_err: se,
            tolerance: 3.0 * se,
            verdict: self.stationarity.verdict,
        });
        out.push(ConditionSummary {
            name: "concavity".into(),
            estimate: self.concavity.max_second_difference,
            std_err: 0.0,
            tolerance: self.concavity.tolerance,
            verdict: self.concavity.verdict,
        });
        for f in &self.integrability {
            out.push(ConditionSummary {
                name: f.name.clone(),
                estimate: f.late,
                std_err: 0.0,
                tolerance: f.early,
                verdict: f.verdict,
            });
        }
        if let Some(g) = &self.gradient_check {
            out.push(ConditionSummary {
                name: "gradient_check".into(),
                estimate: g.max_rel_error_x.max(g.max_rel_error_u),
                std_err: 0.0,
                tolerance: g.tolerance,
                verdict: if g.pass { Verdict::Verified } else { Verdict::Violated },
            });
        }
        out
    }

    /// Worst verdict over everything checked.
    pub fn overall(&self) -> Verdict {
        self.sufficiency.and(self.necessity)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "candidate: {}", self.candidate);
        let _ = writeln!(s, "{:<32} {:>14} {:>12} {:>12}  verdict", "condition", "estimate", "std_err", "tolerance");
        for c in self.conditions() {
            let _ = writeln!(
                s,
                "{:<32} {:>14.6e} {:>12.4e} {:>12.4e}  {}",
                c.name, c.estimate, c.std_err, c.tolerance, c.verdict
            );
        }
        let _ = writeln!(s, "sufficient conditions: {}", describe(self.sufficiency));
        let _ = writeln!(s, "stationarity: {}", describe(self.necessity));
        if !self.assumptions.is_empty() {
            let _ = writeln!(s, "assumed, not checked:");
            for a in &self.assumptions {
                let _ = writeln!(s, "  - {a}");
            }
        }
        s
    }
}

fn describe(v: Verdict) -> &'static str {
    match v {
        Verdict::Verified => "conditions numerically consistent",
        Verdict::Inconclusive => "inconclusive",
        Verdict::Violated => "violated",
    }
}

/// Everything the full check needs about one candidate.
pub struct VerificationInput<'a, T: Real> {
    pub label: String,
    pub hamiltonian: &'a Hamiltonian<T>,
    pub adjoint: &'a AdjointTriple<T>,
    pub candidate: &'a PathBundle<T>,
    /// Bundles of competing controls, simulated with the candidate's noise.
    pub competitors: Vec<&'a PathBundle<T>>,
    pub probes: Vec<Vec<T>>,
    pub flow: InformationFlow<T>,
    pub control_set: &'a ControlSet<T>,
    pub gradient_check: Option<GradientCheck>,
}

/// Standing assumptions of the theory that no simulation can check.
pub fn default_assumptions() -> Vec<String> {
    vec![
        "p(t) Y(t, eps) converges as t -> infinity uniformly in eps".into(),
        "the eps-derivative of the performance integrand is dominated by an integrable function".into(),
        "the infinite-horizon limits are approximated by the truncated horizon".into(),
    ]
}

pub fn verify_candidate<T: Real>(input: &VerificationInput<'_, T>, options: &VerifyOptions<T>) -> Result<VerificationReport> {
    if input.competitors.is_empty() {
        return Err(invalid("verification needs at least one competitor bundle"));
    }
    let mut transversality = Vec::with_capacity(input.competitors.len());
    let mut integrability: Vec<IntegrabilityFlag> = Vec::new();
    for c in &input.competitors {
        transversality.push(estimate_transversality(input.adjoint, input.candidate, c, options)?);
        let flags = integrability_flags(input.hamiltonian, input.adjoint, input.candidate, c, options)?;
        if integrability.is_empty() {
            integrability = flags;
        } else {
            for (acc, f) in integrability.iter_mut().zip(flags) {
                if f.verdict.and(acc.verdict) != acc.verdict {
                    *acc = f;
                }
            }
        }
    }
    let hamiltonian_gap = check_max_condition(input.hamiltonian, input.adjoint, input.candidate, &input.probes, input.flow, options)?;
    let stationarity = stationarity_residual(input.hamiltonian, input.adjoint, input.candidate, input.flow, options)?;
    let concavity = concavity_probe(input.hamiltonian, input.adjoint, input.candidate, input.control_set, options)?;
    let mut sufficiency = hamiltonian_gap.verdict.and(concavity.verdict);
    for t in &transversality {
        sufficiency = sufficiency.and(t.verdict);
    }
    for f in &integrability {
        sufficiency = sufficiency.and(f.verdict);
    }
    if let Some(g) = &input.gradient_check {
        if !g.pass {
            sufficiency = sufficiency.and(Verdict::Inconclusive);
        }
    }
    let mut assumptions = default_assumptions();
    for note in &input.adjoint.notes {
        assumptions.push(note.clone());
    }
    Ok(VerificationReport {
        candidate: input.label.clone(),
        transversality,
        hamiltonian_gap,
        stationarity: stationarity.clone(),
        concavity,
        integrability,
        gradient_check: input.gradient_check.clone(),
        sufficiency,
        necessity: stationarity.verdict,
        assumptions,
    })
}
