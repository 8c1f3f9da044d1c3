//! First-variation process `Y = d/d eps X^{u + eps beta}` and the two
//! directional derivatives of the performance functional built from it.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::grid::TimeGrid;
use crate::hamiltonian::{AdjointTriple, Hamiltonian};
use crate::model::JumpDiffusionModel;
use crate::performance::RunningReward;
use crate::scalar::{mean_and_std_err, Real};
use crate::simulate::PathBundle;

use super::check_alignment;

type DirectionFn<T> = Arc<dyn Fn(T, &mut [T]) + Send + Sync>;

/// Bounded, deterministic perturbation direction `beta(t)` of the control.
#[derive(Clone)]
pub enum Direction<T: Real> {
    Constant(Vec<T>),
    /// `value * 1[start, start + length)`.
    Bump { value: Vec<T>, start: T, length: T },
    /// User direction; every evaluation must stay within `bound` in sup norm.
    Custom { dim: usize, bound: T, eval: DirectionFn<T> },
}

impl<T: Real> fmt::Debug for Direction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Bump { value, start, length } => f
                .debug_struct("Bump")
                .field("value", value)
                .field("start", start)
                .field("length", length)
                .finish(),
            Self::Custom { dim, bound, .. } => f.debug_struct("Custom").field("dim", dim).field("bound", bound).finish(),
        }
    }
}

impl<T: Real> Direction<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(v) | Self::Bump { value: v, .. } => v.len(),
            Self::Custom { dim, .. } => *dim,
        }
    }

    pub fn validate(&self, control_dim: usize) -> Result<()> {
        check_dim("direction", control_dim, self.dim())?;
        match self {
            Self::Constant(v) if v.iter().any(|x| !x.is_finite()) => Err(invalid("direction must be bounded")),
            Self::Bump { value, start, length } => {
                if value.iter().any(|x| !x.is_finite()) || !start.is_finite() || !(length.is_finite() && *length > T::zero()) {
                    Err(invalid("bump needs finite values and a positive length"))
                } else {
                    Ok(())
                }
            }
            Self::Custom { bound, .. } if !bound.is_finite() => Err(invalid("direction must be bounded")),
            _ => Ok(()),
        }
    }

    /// Writes `beta(t)`; fails when a custom direction leaves its bound.
    pub fn eval(&self, t: T, out: &mut [T]) -> Result<()> {
        match self {
            Self::Constant(v) => out.copy_from_slice(v),
            Self::Bump { value, start, length } => {
                if t >= *start && t < *start + *length {
                    out.copy_from_slice(value)
                } else {
                    out.fill(T::zero())
                }
            }
            Self::Custom { bound, eval, .. } => {
                eval(t, out);
                if out.iter().any(|v| !(v.abs() <= *bound)) {
                    return Err(invalid(format!("direction exceeds its bound at t = {t}")));
                }
            }
        }
        Ok(())
    }
}

/// Pathwise first variation on the recording grid of a bundle.
#[derive(Clone, Debug)]
pub struct DerivativeProcess<T: Real> {
    grid: TimeGrid<T>,
    path_ids: Vec<usize>,
    dim: usize,
    values: Vec<T>,
}

impl<T: Real> DerivativeProcess<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn path_ids(&self) -> &[usize] {
        &self.path_ids
    }

    pub fn n_paths(&self) -> usize {
        self.path_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn y(&self, i: usize, k: usize) -> &[T] {
        let b = (i * self.grid.n_nodes() + k) * self.dim;
        &self.values[b..b + self.dim]
    }
}

/// Euler scheme of the linearised state equation along the candidate paths
/// in `bundle`, driven by the recorded Brownian and compensated jump
/// increments. It is the exact `eps`-derivative of the Euler scheme of
/// `X^{u + eps beta}` with the recorded control held open loop.
pub fn first_variation<T: Real>(
    model: &JumpDiffusionModel<T>,
    bundle: &PathBundle<T>,
    direction: &Direction<T>,
) -> Result<DerivativeProcess<T>> {
    let (n, kdim, d, m) = (model.state_dim(), model.control_dim(), model.noise_dim(), model.n_marks());
    check_dim("bundle state", n, bundle.state_dim())?;
    check_dim("bundle control", kdim, bundle.control_dim())?;
    check_dim("bundle noise", d, bundle.noise_dim())?;
    check_dim("bundle marks", m, bundle.n_marks())?;
    direction.validate(kdim)?;
    if bundle.substeps() != 1 {
        return Err(invalid("first variation needs a bundle recorded at every step"));
    }
    let grid = *bundle.grid();
    let dt = grid.dt();
    let path_ids = bundle.valid_paths();
    let nodes = grid.n_nodes();
    let betas: Vec<T> = {
        let mut out = vec![T::zero(); nodes * kdim];
        for k in 0..nodes {
            direction.eval(grid.time(k), &mut out[k * kdim..(k + 1) * kdim])?;
        }
        out
    };
    let mut values = vec![T::zero(); path_ids.len() * nodes * n];
    values.par_chunks_mut(nodes * n).zip(path_ids.par_iter()).for_each(|(out, &p)| {
        let mut comp = vec![T::zero(); m];
        let mut next = vec![T::zero(); n];
        for k in 0..grid.n_steps() {
            let (t, x, u) = (grid.time(k), bundle.x(p, k), bundle.u(p, k));
            let beta = &betas[k * kdim..(k + 1) * kdim];
            let jac = model.jacobians(t, x, u);
            let y = &out[k * n..(k + 1) * n];
            let db = bundle.db(p, k);
            bundle.compensated_increments(p, k, &mut comp);
            for i in 0..n {
                let mut v = y[i];
                let mut drift = T::zero();
                for l in 0..n {
                    drift = drift + jac.drift_dx[i * n + l] * y[l];
                }
                for c in 0..kdim {
                    drift = drift + jac.drift_du[i * kdim + c] * beta[c];
                }
                v = v + drift * dt;
                for j in 0..d {
                    let ij = i * d + j;
                    let mut s = T::zero();
                    for l in 0..n {
                        s = s + jac.diffusion_dx[ij * n + l] * y[l];
                    }
                    for c in 0..kdim {
                        s = s + jac.diffusion_du[ij * kdim + c] * beta[c];
                    }
                    v = v + s * db[j];
                }
                for f in 0..m {
                    if comp[f] == T::zero() {
                        continue;
                    }
                    let mut s = T::zero();
                    for l in 0..n {
                        s = s + jac.jump_dx[f][i * n + l] * y[l];
                    }
                    for c in 0..kdim {
                        s = s + jac.jump_du[f][i * kdim + c] * beta[c];
                    }
                    v = v + s * comp[f];
                }
                next[i] = v;
            }
            out[(k + 1) * n..(k + 2) * n].copy_from_slice(&next);
        }
    });
    Ok(DerivativeProcess {
        grid,
        path_ids,
        dim: n,
        values,
    })
}

/// Estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub(crate) fn from_samples<T: Real>(samples: &[T]) -> Self {
        let (m, s) = mean_and_std_err(samples);
        Self {
            value: m.to_f64_lossy(),
            std_err: s.to_f64_lossy(),
        }
    }
}

/// `E int_0^T (grad_x f . Y + grad_u f . beta) dt`, the directional
/// derivative of the truncated performance functional.
pub fn performance_derivative<T: Real>(
    reward: &dyn RunningReward<T>,
    bundle: &PathBundle<T>,
    derivative: &DerivativeProcess<T>,
    direction: &Direction<T>,
) -> Result<Estimate> {
    let grid = derivative.grid();
    if bundle.grid() != grid {
        return Err(invalid("derivative process and bundle grids differ"));
    }
    let (n, kdim) = (bundle.state_dim(), bundle.control_dim());
    direction.validate(kdim)?;
    let mut gx = vec![T::zero(); n];
    let mut gu = vec![T::zero(); kdim];
    let mut beta = vec![T::zero(); kdim];
    let mut samples = Vec::with_capacity(derivative.n_paths());
    for (i, &p) in derivative.path_ids().iter().enumerate() {
        let mut acc = T::zero();
        let mut prev = T::zero();
        for k in 0..grid.n_nodes() {
            let t = grid.time(k);
            if !reward.gradient(t, bundle.x(p, k), bundle.u(p, k), &mut gx, &mut gu) {
                return Err(invalid("performance derivative needs the reward gradient"));
            }
            direction.eval(t, &mut beta)?;
            let y = derivative.y(i, k);
            let cur: T = gx.iter().zip(y).map(|(a, b)| *a * *b).sum::<T>() + gu.iter().zip(&beta).map(|(a, b)| *a * *b).sum::<T>();
            if k > 0 {
                acc = acc + T::half() * (prev + cur) * grid.dt();
            }
            prev = cur;
        }
        samples.push(acc);
    }
    Ok(Estimate::from_samples(&samples))
}

/// `E int_0^T grad_u H(t, X, u, p, q, r) . beta dt` over the adjoint grid.
pub fn hamiltonian_derivative<T: Real>(
    hamiltonian: &Hamiltonian<T>,
    adjoint: &AdjointTriple<T>,
    bundle: &PathBundle<T>,
    direction: &Direction<T>,
) -> Result<Estimate> {
    check_alignment(adjoint, bundle)?;
    direction.validate(bundle.control_dim())?;
    let grid = adjoint.grid();
    let mut beta = vec![T::zero(); bundle.control_dim()];
    let mut samples = Vec::with_capacity(adjoint.n_paths());
    for (i, &p) in adjoint.path_ids().iter().enumerate() {
        let mut acc = T::zero();
        let mut prev = T::zero();
        for k in 0..grid.n_nodes() {
            let t = grid.time(k);
            let g = hamiltonian.grad_u(t, bundle.x(p, k), bundle.u(p, k), adjoint.p(i, k), adjoint.q(i, k), adjoint.r(i, k))?;
            direction.eval(t, &mut beta)?;
            let cur: T = g.iter().zip(&beta).map(|(a, b)| *a * *b).sum();
            if k > 0 {
                acc = acc + T::half() * (prev + cur) * grid.dt();
            }
            prev = cur;
        }
        samples.push(acc);
    }
    Ok(Estimate::from_samples(&samples))
}
