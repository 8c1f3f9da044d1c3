use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::scalar::Real;
use crate::simulate::PathBundle;

/// Driver `g(t, X_t, u_t, y, z, k)` of `-dY = g dt - Z dB - int K Ntilde`.
///
/// `z` holds `y_dim x noise_dim` values and `k` holds `y_dim x n_marks`
/// values, both row-major. `x` and `u` come from the forward bundle and may
/// be ignored by drivers that do not depend on a state.
pub trait Driver<T: Real>: Send + Sync {
    #[allow(clippy::too_many_arguments)]
    fn eval(&self, t: T, x: &[T], u: &[T], y: &[T], z: &[T], k: &[T], out: &mut [T]);
}

type DriverFn<T> = dyn Fn(T, &[T], &[T], &[T], &[T], &[T], &mut [T]) + Send + Sync;

/// Driver backed by a closure.
#[derive(Clone)]
pub struct FnDriver<T>(Arc<DriverFn<T>>);

impl<T: Real> FnDriver<T> {
    pub fn new(f: impl Fn(T, &[T], &[T], &[T], &[T], &[T], &mut [T]) + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _, _, _, _, out| out.fill(T::zero()))
    }
}

impl<T: Real> Driver<T> for FnDriver<T> {
    fn eval(&self, t: T, x: &[T], u: &[T], y: &[T], z: &[T], k: &[T], out: &mut [T]) {
        (self.0)(t, x, u, y, z, k, out)
    }
}

/// Monotonicity `mu`, Lipschitz constants `k1` (in z) and `k2` (in k, for
/// the `nu`-weighted norm) and the weight exponent `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StructuralConstants<T> {
    pub mu: T,
    pub k1: T,
    pub k2: T,
    pub lambda: T,
}

impl<T: Real> StructuralConstants<T> {
    /// Constants with `lambda` one above the admissibility bound.
    pub fn new(mu: T, k1: T, k2: T) -> Result<Self> {
        let c = Self {
            mu,
            k1,
            k2,
            lambda: T::zero(),
        };
        c.validate()?;
        Ok(c.with_lambda(c.lambda_bound() + T::one()))
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    /// `2 mu + k1^2 + k2^2`.
    pub fn lambda_bound(&self) -> T {
        T::two() * self.mu + self.k1 * self.k1 + self.k2 * self.k2
    }

    fn validate(&self) -> Result<()> {
        if ![self.mu, self.k1, self.k2].iter().all(|v| v.is_finite()) {
            return Err(invalid("structural constants must be finite"));
        }
        if self.k1 < T::zero() || self.k2 < T::zero() {
            return Err(invalid("Lipschitz constants must be non-negative"));
        }
        Ok(())
    }

    /// Estimates the constants of `driver` by central differences at
    /// up to `max_samples` points of `bundle`, evaluated at `(y, z, k) = 0`.
    ///
    /// `mu` uses the Gershgorin bound of the symmetrised `y`-Jacobian and
    /// `k1`, `k2` use Frobenius norms, so all three are upper bounds of the
    /// sampled Lipschitz constants.
    pub fn estimate(driver: &dyn Driver<T>, y_dim: usize, bundle: &PathBundle<T>, max_samples: usize) -> Result<Self> {
        let d = bundle.noise_dim();
        let weights = bundle.mark_weights();
        let m = weights.len();
        let grid = bundle.grid();
        let valid = bundle.valid_paths();
        if valid.is_empty() {
            return Err(invalid("no valid paths to probe the driver"));
        }
        let per_path = (max_samples / valid.len().min(max_samples).max(1)).max(1);
        let n_paths = valid.len().min(max_samples.max(1));
        let stride_k = (grid.n_nodes() / per_path).max(1);
        let h = T::lit(T::FD_STEP);
        let mut y = vec![T::zero(); y_dim];
        let mut z = vec![T::zero(); y_dim * d];
        let mut kk = vec![T::zero(); y_dim * m];
        let mut plus = vec![T::zero(); y_dim];
        let mut minus = vec![T::zero(); y_dim];
        let mut scratch = vec![T::zero(); y_dim];
        let (mut mu, mut k1, mut k2) = (T::neg_infinity(), T::zero(), T::zero());
        let mut jac_y = vec![T::zero(); y_dim * y_dim];
        for pi in 0..n_paths {
            let p = valid[pi * valid.len() / n_paths];
            for k in (0..grid.n_nodes()).step_by(stride_k) {
                let (t, x, u) = (grid.time(k), bundle.x(p, k), bundle.u(p, k));
                let mut diff = |which: Slot, idx: usize, y: &mut [T], z: &mut [T], kk: &mut [T]| {
                    let at = |v: T, y: &mut [T], z: &mut [T], kk: &mut [T], out: &mut [T]| {
                        match which {
                            Slot::Y => y[idx] = v,
                            Slot::Z => z[idx] = v,
                            Slot::K => kk[idx] = v,
                        }
                        driver.eval(t, x, u, y, z, kk, out);
                    };
                    at(h, y, z, kk, &mut plus);
                    at(-h, y, z, kk, &mut minus);
                    at(T::zero(), y, z, kk, &mut scratch);
                    plus.iter().zip(&minus).map(|(a, b)| (*a - *b) / (T::two() * h)).collect::<Vec<T>>()
                };
                for l in 0..y_dim {
                    let col = diff(Slot::Y, l, &mut y, &mut z, &mut kk);
                    for i in 0..y_dim {
                        jac_y[i * y_dim + l] = col[i];
                    }
                }
                for i in 0..y_dim {
                    let mut row = jac_y[i * y_dim + i];
                    for j in 0..y_dim {
                        if j != i {
                            row = row + T::half() * (jac_y[i * y_dim + j] + jac_y[j * y_dim + i]).abs();
                        }
                    }
                    mu = mu.max(row);
                }
                let mut fz = T::zero();
                for idx in 0..y_dim * d {
                    fz = fz + diff(Slot::Z, idx, &mut y, &mut z, &mut kk).iter().map(|v| *v * *v).sum::<T>();
                }
                k1 = k1.max(fz.sqrt());
                let mut fk = T::zero();
                for idx in 0..y_dim * m {
                    let w = weights[idx % m];
                    if w > T::zero() {
                        fk = fk + diff(Slot::K, idx, &mut y, &mut z, &mut kk).iter().map(|v| *v * *v).sum::<T>() / w;
                    }
                }
                k2 = k2.max(fk.sqrt());
            }
        }
        Self::new(mu, k1, k2)
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Y,
    Z,
    K,
}

/// Result of the admissibility check `lambda > 2 mu + k1^2 + k2^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaCheck {
    pub margin: f64,
    pub pass: bool,
}

pub fn check_lambda_condition<T: Real>(constants: &StructuralConstants<T>) -> LambdaCheck {
    let margin = (constants.lambda - constants.lambda_bound()).to_f64_lossy();
    LambdaCheck {
        margin,
        pass: margin > 0.0,
    }
}

/// Terminal time of the BSDE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Horizon<T> {
    Infinite,
    Finite(T),
}

type StateFn<T> = Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>;
type RepresentationFn<T> = Arc<dyn Fn(T, &[T], &mut [T], &mut [T]) + Send + Sync>;

/// Terminal value `xi` through its conditional version `xi_t = E[xi | F_t]`.
#[derive(Clone)]
pub enum TerminalValue<T> {
    Zero,
    /// Deterministic value, also the tail proxy when only `E[xi]` is known.
    Constant(Vec<T>),
    /// `xi_t` as a function of `(t, X_t)`.
    Conditional(StateFn<T>),
}

impl<T: Real> fmt::Debug for TerminalValue<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Conditional(_) => write!(f, "Conditional(..)"),
        }
    }
}

/// Terminal data: horizon, terminal value and, when known, the martingale
/// representation `(eta_t, psi_t)` of `xi_t`.
#[derive(Clone, Debug)]
pub struct Terminal<T: Real> {
    pub horizon: Horizon<T>,
    pub value: TerminalValue<T>,
    pub representation: Option<Representation<T>>,
}

/// `(eta_t, psi_t)` as a function of `(t, X_t)`, filling `z` and `k` layouts.
#[derive(Clone)]
pub struct Representation<T>(pub RepresentationFn<T>);

impl<T> fmt::Debug for Representation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Representation(..)")
    }
}

impl<T: Real> Terminal<T> {
    pub fn infinite_zero() -> Self {
        Self {
            horizon: Horizon::Infinite,
            value: TerminalValue::Zero,
            representation: None,
        }
    }

    pub fn finite(horizon: T, value: TerminalValue<T>) -> Self {
        Self {
            horizon: Horizon::Finite(horizon),
            value,
            representation: None,
        }
    }

    /// Writes `xi_t` at `(t, x)` into `out`.
    pub fn value_at(&self, t: T, x: &[T], out: &mut [T]) {
        match &self.value {
            TerminalValue::Zero => out.fill(T::zero()),
            TerminalValue::Constant(v) => out.copy_from_slice(v),
            TerminalValue::Conditional(f) => f(t, x, out),
        }
    }

    /// Writes `(eta_t, psi_t)`; zero when no representation is known.
    pub fn representation_at(&self, t: T, x: &[T], z: &mut [T], k: &mut [T]) {
        match &self.representation {
            Some(Representation(f)) => f(t, x, z, k),
            None => {
                z.fill(T::zero());
                k.fill(T::zero());
            }
        }
    }
}

/// A BSDE with jumps together with the data the solvers need.
#[derive(Clone)]
pub struct BsdeProblem<T: Real> {
    y_dim: usize,
    noise_dim: usize,
    mark_weights: Vec<T>,
    driver: Arc<dyn Driver<T>>,
    constants: StructuralConstants<T>,
    terminal: Terminal<T>,
}

impl<T: Real> fmt::Debug for BsdeProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BsdeProblem")
            .field("y_dim", &self.y_dim)
            .field("noise_dim", &self.noise_dim)
            .field("mark_weights", &self.mark_weights)
            .field("constants", &self.constants)
            .field("terminal", &self.terminal)
            .finish_non_exhaustive()
    }
}

impl<T: Real> BsdeProblem<T> {
    pub fn new(
        y_dim: usize,
        noise_dim: usize,
        mark_weights: Vec<T>,
        driver: Arc<dyn Driver<T>>,
        constants: StructuralConstants<T>,
        terminal: Terminal<T>,
    ) -> Result<Self> {
        if y_dim == 0 {
            return Err(invalid("BSDE dimension must be positive"));
        }
        constants.validate()?;
        if mark_weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(invalid("mark weights must be finite and non-negative"));
        }
        if let TerminalValue::Constant(v) = &terminal.value {
            check_dim("terminal value", y_dim, v.len())?;
        }
        if let Horizon::Finite(h) = terminal.horizon {
            if !(h.is_finite() && h > T::zero()) {
                return Err(invalid("finite horizon must be positive"));
            }
        }
        Ok(Self {
            y_dim,
            noise_dim,
            mark_weights,
            driver,
            constants,
            terminal,
        })
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn n_marks(&self) -> usize {
        self.mark_weights.len()
    }

    pub fn mark_weights(&self) -> &[T] {
        &self.mark_weights
    }

    pub fn driver(&self) -> &dyn Driver<T> {
        self.driver.as_ref()
    }

    pub fn constants(&self) -> &StructuralConstants<T> {
        &self.constants
    }

    pub fn terminal(&self) -> &Terminal<T> {
        &self.terminal
    }

    pub fn with_constants(mut self, constants: StructuralConstants<T>) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.constants.lambda = lambda;
        self
    }

    pub fn check_lambda_condition(&self) -> LambdaCheck {
        check_lambda_condition(&self.constants)
    }

    pub(crate) fn check_bundle(&self, bundle: &PathBundle<T>) -> Result<()> {
        check_dim("BSDE noise dimension", self.noise_dim, bundle.noise_dim())?;
        check_dim("BSDE marks", self.n_marks(), bundle.n_marks())?;
        if self.mark_weights.as_slice() != bundle.mark_weights() {
            return Err(invalid("BSDE mark weights differ from the bundle's jump measure"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants(mu: f64, k1: f64, k2: f64, lambda: f64) -> StructuralConstants<f64> {
        StructuralConstants::new(mu, k1, k2).unwrap().with_lambda(lambda)
    }

    #[test]
    fn lambda_condition_examples() {
        let c = check_lambda_condition(&constants(0.0, 1.0, 1.0, 2.5));
        assert!(c.pass && (c.margin - 0.5).abs() < 1e-15);
        let c = check_lambda_condition(&constants(0.0, 1.0, 1.0, 2.0));
        assert!(!c.pass && c.margin == 0.0);
        let c = check_lambda_condition(&constants(-1.0, 0.0, 0.0, 0.0));
        assert!(c.pass && (c.margin - 2.0).abs() < 1e-15);
    }

    #[test]
    fn default_lambda_is_bound_plus_one() {
        let c = StructuralConstants::new(0.25_f64, 0.5, 0.0).unwrap();
        assert!((c.lambda - 1.75).abs() < 1e-15);
        assert!(StructuralConstants::new(0.0_f64, -1.0, 0.0).is_err());
        assert!(StructuralConstants::new(f64::NAN, 0.0, 0.0).is_err());
    }
}
