//! Running rewards and Monte Carlo estimates of the performance functional
//! `J(u) = E int_0^inf f(t, X, u) dt`, truncated at the grid horizon.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::scalar::{mean_and_std_err, Real};
use crate::simulate::PathBundle;

/// Bound `E|f(t, X_t, u_t)| <= scale * (1 + slope * t) * exp(-rate * t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope<T> {
    pub scale: T,
    pub rate: T,
    pub slope: T,
}

impl<T: Real> Envelope<T> {
    pub fn exponential(scale: T, rate: T) -> Self {
        Self {
            scale,
            rate,
            slope: T::zero(),
        }
    }

    /// `int_T^inf scale (1 + slope t) e^{-rate t} dt`; infinite unless `rate > 0`.
    pub fn tail(&self, horizon: T) -> T {
        if self.rate <= T::zero() {
            return T::infinity();
        }
        let r = self.rate;
        self.scale.abs() * (-r * horizon).exp() * ((T::one() + self.slope * horizon) / r + self.slope / (r * r))
    }
}

/// Running reward `f(t, x, u)`.
pub trait RunningReward<T: Real>: Send + Sync {
    fn value(&self, t: T, x: &[T], u: &[T]) -> T;

    /// Writes `grad_x f` and `grad_u f`; returns `false` when unavailable.
    fn gradient(&self, _t: T, _x: &[T], _u: &[T], _gx: &mut [T], _gu: &mut [T]) -> bool {
        false
    }

    fn envelope(&self) -> Option<Envelope<T>> {
        None
    }
}

type ValueFn<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(T, &[T], &[T], &mut [T], &mut [T]) + Send + Sync>;

/// Reward assembled from closures.
#[derive(Clone)]
pub struct FnReward<T: Real> {
    value: ValueFn<T>,
    gradient: Option<GradFn<T>>,
    envelope: Option<Envelope<T>>,
}

impl<T: Real> fmt::Debug for FnReward<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnReward")
            .field("analytic_gradient", &self.gradient.is_some())
            .field("envelope", &self.envelope)
            .finish()
    }
}

impl<T: Real> FnReward<T> {
    pub fn new(value: impl Fn(T, &[T], &[T]) -> T + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            envelope: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| T::zero())
            .with_gradient(|_, _, _, gx, gu| {
                gx.fill(T::zero());
                gu.fill(T::zero());
            })
            .with_envelope(Envelope::exponential(T::zero(), T::one()))
    }

    pub fn with_gradient(mut self, g: impl Fn(T, &[T], &[T], &mut [T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_envelope(mut self, envelope: Envelope<T>) -> Self {
        self.envelope = Some(envelope);
        self
    }
}

impl<T: Real> RunningReward<T> for FnReward<T> {
    fn value(&self, t: T, x: &[T], u: &[T]) -> T {
        (self.value)(t, x, u)
    }

    fn gradient(&self, t: T, x: &[T], u: &[T], gx: &mut [T], gu: &mut [T]) -> bool {
        match &self.gradient {
            Some(g) => {
                g(t, x, u, gx, gu);
                true
            }
            None => false,
        }
    }

    fn envelope(&self) -> Option<Envelope<T>> {
        self.envelope
    }
}

/// Estimate of `J` on the truncated horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerformanceEstimate<T> {
    pub j_hat: T,
    pub std_err: T,
    /// `None` when the reward declares no envelope.
    pub tail_bound: Option<T>,
    pub n_used: usize,
    pub n_divergent: usize,
}

impl<T: Real> PerformanceEstimate<T> {
    pub fn tail_unknown(&self) -> bool {
        self.tail_bound.is_none()
    }
}

/// Trapezoidal `int_0^T f dt` for each non-divergent path, in path order.
pub fn path_integrals<T: Real>(bundle: &PathBundle<T>, reward: &dyn RunningReward<T>) -> Vec<(usize, T)> {
    let grid = bundle.grid();
    let dt = grid.dt();
    bundle
        .valid_paths()
        .into_iter()
        .map(|p| {
            let mut acc = T::zero();
            let mut prev = reward.value(grid.time(0), bundle.x(p, 0), bundle.u(p, 0));
            for k in 1..grid.n_nodes() {
                let cur = reward.value(grid.time(k), bundle.x(p, k), bundle.u(p, k));
                acc = acc + T::half() * (prev + cur) * dt;
                prev = cur;
            }
            (p, acc)
        })
        .collect()
}

pub fn estimate_performance<T: Real>(bundle: &PathBundle<T>, reward: &dyn RunningReward<T>) -> Result<PerformanceEstimate<T>> {
    let values: Vec<T> = path_integrals(bundle, reward).into_iter().map(|(_, v)| v).collect();
    if values.is_empty() {
        return Err(invalid("no valid paths to estimate performance"));
    }
    let (j_hat, std_err) = mean_and_std_err(&values);
    let tail_bound = reward.envelope().map(|e| e.tail(bundle.grid().horizon()));
    if tail_bound.is_none() {
        log::warn!("reward has no envelope; truncation tail is unknown");
    }
    Ok(PerformanceEstimate {
        j_hat,
        std_err,
        tail_bound,
        n_used: values.len(),
        n_divergent: bundle.n_divergent(),
    })
}

/// `J(a) - J(b)` from two bundles driven by common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerformanceComparison<T> {
    pub a: PerformanceEstimate<T>,
    pub b: PerformanceEstimate<T>,
    pub difference: T,
    /// Standard error of the per-path differences.
    pub paired_std_err: T,
    /// `sqrt(se_a^2 + se_b^2)`, ignoring the correlation.
    pub combined_std_err: T,
}

pub fn compare_performance<T: Real>(
    a: &PathBundle<T>,
    b: &PathBundle<T>,
    reward: &dyn RunningReward<T>,
) -> Result<PerformanceComparison<T>> {
    if !a.shares_noise_with(b) {
        return Err(invalid("bundles were not simulated with common random numbers"));
    }
    let ia = path_integrals(a, reward);
    let ib = path_integrals(b, reward);
    let mut diffs = Vec::with_capacity(ia.len());
    let (mut j, mut l) = (0, 0);
    while j < ia.len() && l < ib.len() {
        match ia[j].0.cmp(&ib[l].0) {
            std::cmp::Ordering::Equal => {
                diffs.push(ia[j].1 - ib[l].1);
                j += 1;
                l += 1;
            }
            std::cmp::Ordering::Less => j += 1,
            std::cmp::Ordering::Greater => l += 1,
        }
    }
    let est_a = estimate_performance(a, reward)?;
    let est_b = estimate_performance(b, reward)?;
    let (difference, paired_std_err) = mean_and_std_err(&diffs);
    let combined_std_err = (est_a.std_err * est_a.std_err + est_b.std_err * est_b.std_err).sqrt();
    Ok(PerformanceComparison {
        a: est_a,
        b: est_b,
        difference,
        paired_std_err,
        combined_std_err,
    })
}
