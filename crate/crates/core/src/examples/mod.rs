//! Reference control problems with closed-form optimal controls and
//! adjoints: three log-utility consumption problems and a Merton portfolio
//! problem with consumption.

mod consumption;
mod merton;

use std::sync::Arc;

use serde::Serialize;

pub use consumption::{Example1, Example2, Example3};
pub use merton::{merton_consistency, Example4, MertonCheck};

use crate::error::{invalid, Result};
use crate::hamiltonian::{AdjointTriple, Hamiltonian, ProbeBox};
use crate::model::{ControlPolicy, ControlSet, InformationFlow, JumpDiffusionModel};
use crate::performance::FnReward;
use crate::scalar::Real;
use crate::simulate::PathBundle;

/// Parameters shared by the reference problems. Fields a problem does not
/// use are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleParams<T> {
    /// Discount rate (consumption problems) or bank rate (portfolio problem).
    pub rho: T,
    pub mu: T,
    pub sigma: T,
    /// Utility discount of the portfolio problem.
    pub delta: T,
    /// Risk-aversion exponent of the power utility.
    pub gamma: T,
    /// Jump scale: a jump with mark `z` multiplies wealth by `1 + theta z`.
    pub theta: T,
    pub x0: T,
    /// Start-time offset of the portfolio problem.
    pub s: T,
    pub jump_intensity: T,
    pub jump_marks: Vec<T>,
    pub jump_probabilities: Vec<T>,
    /// Atoms of a random discount rate drawn once per path; empty means
    /// `rho` is deterministic.
    pub rho_atoms: Vec<T>,
    pub rho_probabilities: Vec<T>,
}

impl<T: Real> Default for ExampleParams<T> {
    fn default() -> Self {
        Self {
            rho: T::lit(0.1),
            mu: T::lit(0.07),
            sigma: T::lit(0.2),
            delta: T::lit(0.1),
            gamma: T::lit(0.5),
            theta: T::lit(0.5),
            x0: T::one(),
            s: T::zero(),
            jump_intensity: T::lit(0.5),
            jump_marks: vec![T::lit(-0.4), T::lit(0.6)],
            jump_probabilities: vec![T::half(), T::half()],
            rho_atoms: Vec::new(),
            rho_probabilities: Vec::new(),
        }
    }
}

impl<T: Real> ExampleParams<T> {
    /// Defaults of the portfolio problem (`rho = 0.03`).
    pub fn merton() -> Self {
        Self {
            rho: T::lit(0.03),
            ..Self::default()
        }
    }

    pub(crate) fn check_common(&self) -> Result<()> {
        let all = [self.rho, self.mu, self.sigma, self.delta, self.gamma, self.theta, self.x0, self.s];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("example parameters must be finite"));
        }
        if !(self.sigma > T::zero()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.rho < T::zero() {
            return Err(invalid(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(self.x0 > T::zero()) {
            return Err(invalid(format!("initial wealth must be positive, got {}", self.x0)));
        }
        Ok(())
    }
}

/// Common interface of the reference problems.
pub trait ControlExample<T: Real>: Send + Sync {
    fn id(&self) -> u8;

    fn params(&self) -> &ExampleParams<T>;

    fn model(&self) -> &JumpDiffusionModel<T>;

    fn control_set(&self) -> ControlSet<T>;

    /// The closed-form optimal control as a policy.
    fn optimal_policy(&self) -> Result<ControlPolicy<T>>;

    /// Value of the optimal control when it is a constant.
    fn optimal_control(&self) -> Option<Vec<T>>;

    fn constant_policy(&self, control: &[T]) -> Result<ControlPolicy<T>> {
        ControlPolicy::constant(control.to_vec(), self.control_set())
    }

    /// Running reward; the envelope is attached for a constant `control`.
    fn reward(&self, control: Option<&[T]>) -> FnReward<T>;

    fn hamiltonian(&self) -> Hamiltonian<T> {
        Hamiltonian::analytic(self.model().clone(), Arc::new(self.reward(None)))
    }

    /// Closed-form `(p, q, r)` along the paths of a bundle simulated under
    /// the control whose adjoint is wanted.
    fn analytic_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>>;

    /// Exact `J` of a constant control, truncated at `horizon` when given;
    /// `None` when it is infinite or unknown.
    fn performance(&self, control: &[T], horizon: Option<T>) -> Option<T>;

    /// Interior box for gradient self-checks.
    fn probe_box(&self) -> ProbeBox<T>;
}

/// Reference problem `id` in `1..=4`; `flow` only matters for problem 3.
pub fn example<T: Real>(id: u8, params: ExampleParams<T>, flow: InformationFlow<T>) -> Result<Box<dyn ControlExample<T>>> {
    Ok(match id {
        1 => Box::new(Example1::new(params)?),
        2 => Box::new(Example2::new(params)?),
        3 => Box::new(Example3::new(params, flow)?),
        4 => Box::new(Example4::new(params)?),
        _ => return Err(invalid(format!("unknown example id {id}"))),
    })
}

/// `int_0^T e^{-r t} (a + b t) dt`, or the full integral when `horizon` is `None`.
pub(crate) fn discounted_affine<T: Real>(a: T, b: T, r: T, horizon: Option<T>) -> Option<T> {
    if !(r > T::zero()) {
        return None;
    }
    match horizon {
        None => Some(a / r + b / (r * r)),
        Some(h) => {
            let e = (-r * h).exp();
            Some(a * (T::one() - e) / r + b * (T::one() - e * (T::one() + r * h)) / (r * r))
        }
    }
}

/// Adjoint values along one path of a bundle: `fill(t, x, u, p, q, r)`.
pub(crate) fn adjoint_along<T: Real>(
    model: &JumpDiffusionModel<T>,
    bundle: &PathBundle<T>,
    mut fill: impl FnMut(T, &[T], &[T], &mut [T], &mut [T], &mut [T]),
) -> Result<AdjointTriple<T>> {
    let grid = *bundle.grid();
    AdjointTriple::from_fn(grid, bundle.valid_paths(), model, |p, k, pp, q, r| {
        fill(grid.time(k), bundle.x(p, k), bundle.u(p, k), pp, q, r)
    })
}
