use serde::Serialize;

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Uniform grid `0 = t_0 < t_1 < ... < t_n = horizon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid<T> {
    horizon: T,
    n_steps: usize,
    dt: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > T::zero()) {
            return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / T::from_count(n_steps),
        })
    }

    /// Grid with step `dt`; the horizon must be an integer multiple of it.
    pub fn with_step(horizon: T, dt: T) -> Result<Self> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if !(steps >= T::one()) || ((steps * dt - horizon) / horizon).abs() > T::lit(1e-9) {
            return Err(invalid(format!("horizon {horizon} is not a multiple of dt {dt}")));
        }
        Self::new(horizon, steps.to_usize().unwrap_or(0))
    }

    #[inline]
    pub fn horizon(&self) -> T {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    /// Time of node `k`; the last node is the horizon itself.
    #[inline]
    pub fn time(&self, k: usize) -> T {
        if k == self.n_steps {
            self.horizon
        } else {
            self.dt * T::from_count(k)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.n_steps).map(move |k| self.time(k))
    }

    /// Grid with `factor` sub-steps per step.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        Self::new(self.horizon, self.n_steps * factor)
    }

    /// Index of the node at `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < T::zero() || k > T::from_count(self.n_steps) {
            return None;
        }
        let k = k.to_usize()?;
        let tol = T::lit(1e-9) * self.dt.max(T::one());
        ((self.time(k) - t).abs() <= tol).then_some(k)
    }

    /// Largest node index with `t_k <= t`, clamped to the grid.
    pub fn index_floor(&self, t: T) -> usize {
        if t <= T::zero() {
            return 0;
        }
        let k = (t / self.dt + T::lit(1e-9)).floor().to_usize().unwrap_or(self.n_steps);
        k.min(self.n_steps)
    }

    /// The sub-grid `[0, t_k]`.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_steps {
            return Err(invalid(format!("cannot truncate a {}-step grid at node {k}", self.n_steps)));
        }
        Ok(Self {
            horizon: self.time(k),
            n_steps: k,
            dt: self.dt,
        })
    }
}
