//! Hamiltonian `H = f + b.p + tr(sigma^T q) + sum_f w_f theta_f . r_f`, its
//! gradients and the adjoint BSDE of a candidate control.
//!
//! Adjoint values use the layouts of [`BsdeSolution`]: `p` has `n` entries,
//! `q` is `n x d` row-major and `r` is `n x M` with `r[i * M + f]` the value
//! at flat mark `f`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsde::{BsdeProblem, BsdeSolution, Driver, StructuralConstants, Terminal};
use crate::error::{check_dim, invalid, Result};
use crate::grid::TimeGrid;
use crate::model::{fd_step, JumpDiffusionModel};
use crate::performance::RunningReward;
use crate::scalar::Real;
use crate::simulate::PathBundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum GradientMode<T> {
    /// Reward gradient and coefficient Jacobians.
    Analytic,
    /// Central differences of `H` with step `max(rel_step, rel_step * |v|)`.
    FiniteDifference { rel_step: T },
}

#[derive(Clone)]
pub struct Hamiltonian<T: Real> {
    model: JumpDiffusionModel<T>,
    reward: Arc<dyn RunningReward<T>>,
    mode: GradientMode<T>,
    weights: Vec<T>,
}

impl<T: Real> fmt::Debug for Hamiltonian<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("model", &self.model)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl<T: Real> Hamiltonian<T> {
    pub fn new(model: JumpDiffusionModel<T>, reward: Arc<dyn RunningReward<T>>, mode: GradientMode<T>) -> Result<Self> {
        if let GradientMode::FiniteDifference { rel_step } = mode {
            if !(rel_step > T::zero() && rel_step.is_finite()) {
                return Err(invalid("finite-difference step must be positive"));
            }
        }
        let weights = model.jumps().weights();
        Ok(Self {
            model,
            reward,
            mode,
            weights,
        })
    }

    pub fn analytic(model: JumpDiffusionModel<T>, reward: Arc<dyn RunningReward<T>>) -> Self {
        Self::new(model, reward, GradientMode::Analytic).expect("analytic mode has no parameters")
    }

    pub fn finite_difference(model: JumpDiffusionModel<T>, reward: Arc<dyn RunningReward<T>>) -> Self {
        let mode = GradientMode::FiniteDifference {
            rel_step: T::lit(T::FD_STEP),
        };
        Self::new(model, reward, mode).expect("default step is positive")
    }

    pub fn model(&self) -> &JumpDiffusionModel<T> {
        &self.model
    }

    pub fn reward(&self) -> &dyn RunningReward<T> {
        self.reward.as_ref()
    }

    pub fn mode(&self) -> GradientMode<T> {
        self.mode
    }

    pub fn with_mode(self, mode: GradientMode<T>) -> Result<Self> {
        Self::new(self.model, self.reward, mode)
    }

    fn check_args(&self, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> Result<()> {
        let (n, d, m) = (self.model.state_dim(), self.model.noise_dim(), self.model.n_marks());
        check_dim("hamiltonian state", n, x.len())?;
        check_dim("hamiltonian control", self.model.control_dim(), u.len())?;
        check_dim("adjoint p", n, p.len())?;
        check_dim("adjoint q", n * d, q.len())?;
        check_dim("adjoint r", n * m, r.len())
    }

    /// Value of `H`; the jump term is the exact sum over quadrature marks.
    pub fn eval(&self, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> Result<T> {
        self.check_args(x, u, p, q, r)?;
        Ok(self.eval_unchecked(t, x, u, p, q, r))
    }

    fn eval_unchecked(&self, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> T {
        let dynamics = self.model.dynamics();
        let (n, d, m) = (x.len(), self.model.noise_dim(), self.weights.len());
        let mut h = self.reward.value(t, x, u);
        let mut buf = vec![T::zero(); n * d.max(1)];
        dynamics.drift(t, x, u, &mut buf[..n]);
        h = h + dot(&buf[..n], p);
        if d > 0 {
            dynamics.diffusion(t, x, u, &mut buf[..n * d]);
            h = h + dot(&buf[..n * d], q);
        }
        for (f, node) in self.model.jumps().nodes().enumerate() {
            if node.weight == T::zero() {
                continue;
            }
            dynamics.jump(t, x, u, node.component, node.mark, &mut buf[..n]);
            let s: T = (0..n).map(|i| buf[i] * r[i * m + f]).sum();
            h = h + node.weight * s;
        }
        h
    }

    /// `grad_x H`.
    pub fn grad_x(&self, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> Result<Vec<T>> {
        self.check_args(x, u, p, q, r)?;
        match self.mode {
            GradientMode::Analytic => self.analytic_grads(t, x, u, p, q, r).map(|g| g.0),
            GradientMode::FiniteDifference { rel_step } => self.fd_grad(rel_step, t, x, u, p, q, r, true),
        }
    }

    /// `grad_u H`.
    pub fn grad_u(&self, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> Result<Vec<T>> {
        self.check_args(x, u, p, q, r)?;
        match self.mode {
            GradientMode::Analytic => self.analytic_grads(t, x, u, p, q, r).map(|g| g.1),
            GradientMode::FiniteDifference { rel_step } => self.fd_grad(rel_step, t, x, u, p, q, r, false),
        }
    }

    fn analytic_grads(&self, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (n, k, d, m) = (x.len(), u.len(), self.model.noise_dim(), self.weights.len());
        let mut gx = vec![T::zero(); n];
        let mut gu = vec![T::zero(); k];
        if !self.reward.gradient(t, x, u, &mut gx, &mut gu) {
            return Err(invalid("analytic mode needs the reward gradient"));
        }
        let jac = self.model.jacobians(t, x, u);
        for i in 0..n {
            for l in 0..n {
                gx[l] = gx[l] + jac.drift_dx[i * n + l] * p[i];
            }
            for c in 0..k {
                gu[c] = gu[c] + jac.drift_du[i * k + c] * p[i];
            }
        }
        for ij in 0..n * d {
            for l in 0..n {
                gx[l] = gx[l] + jac.diffusion_dx[ij * n + l] * q[ij];
            }
            for c in 0..k {
                gu[c] = gu[c] + jac.diffusion_du[ij * k + c] * q[ij];
            }
        }
        for f in 0..m {
            let w = self.weights[f];
            for i in 0..n {
                let rf = w * r[i * m + f];
                for l in 0..n {
                    gx[l] = gx[l] + jac.jump_dx[f][i * n + l] * rf;
                }
                for c in 0..k {
                    gu[c] = gu[c] + jac.jump_du[f][i * k + c] * rf;
                }
            }
        }
        Ok((gx, gu))
    }

    #[allow(clippy::too_many_arguments)]
    fn fd_grad(&self, rel: T, t: T, x: &[T], u: &[T], p: &[T], q: &[T], r: &[T], wrt_x: bool) -> Result<Vec<T>> {
        let mut xs = x.to_vec();
        let mut us = u.to_vec();
        let len = if wrt_x { x.len() } else { u.len() };
        let mut g = vec![T::zero(); len];
        for l in 0..len {
            let v = if wrt_x { x[l] } else { u[l] };
            let h = fd_step(rel, v);
            if !(h > T::zero()) || v + h == v || v - h == v {
                return Err(invalid("finite-difference step underflows"));
            }
            let mut at = |w: T| {
                if wrt_x {
                    xs[l] = w;
                } else {
                    us[l] = w;
                }
                self.eval_unchecked(t, &xs, &us, p, q, r)
            };
            let (hp, hm) = (at(v + h), at(v - h));
            at(v);
            g[l] = (hp - hm) / ((v + h) - (v - h));
        }
        Ok(g)
    }

    /// Compares the configured gradients with central differences of `H`
    /// at `n_probes` random points of `probes`.
    pub fn check_gradients(&self, probes: &ProbeBox<T>, n_probes: usize, seed: u64, tolerance: f64) -> Result<GradientCheck> {
        let (n, k, d, m) = (
            self.model.state_dim(),
            self.model.control_dim(),
            self.model.noise_dim(),
            self.weights.len(),
        );
        check_dim("probe box state", n, probes.x_lower.len())?;
        check_dim("probe box state", n, probes.x_upper.len())?;
        check_dim("probe box control", k, probes.u_lower.len())?;
        check_dim("probe box control", k, probes.u_upper.len())?;
        let fd = Self::new(
            self.model.clone(),
            self.reward.clone(),
            GradientMode::FiniteDifference {
                rel_step: T::lit(T::FD_STEP),
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: T, hi: T| -> T {
            let s: f64 = rng.random();
            lo + (hi - lo) * T::lit(s)
        };
        let (mut max_x, mut max_u) = (0.0f64, 0.0f64);
        for _ in 0..n_probes {
            let t = draw(T::zero(), probes.t_max);
            let x: Vec<T> = (0..n).map(|i| draw(probes.x_lower[i], probes.x_upper[i])).collect();
            let u: Vec<T> = (0..k).map(|c| draw(probes.u_lower[c], probes.u_upper[c])).collect();
            let a = probes.adjoint_scale;
            let p: Vec<T> = (0..n).map(|_| draw(-a, a)).collect();
            let q: Vec<T> = (0..n * d).map(|_| draw(-a, a)).collect();
            let r: Vec<T> = (0..n * m).map(|_| draw(-a, a)).collect();
            let (ax, au) = (self.grad_x(t, &x, &u, &p, &q, &r)?, self.grad_u(t, &x, &u, &p, &q, &r)?);
            let (fx, fu) = (fd.grad_x(t, &x, &u, &p, &q, &r)?, fd.grad_u(t, &x, &u, &p, &q, &r)?);
            max_x = max_x.max(max_relative_error(&ax, &fx));
            max_u = max_u.max(max_relative_error(&au, &fu));
        }
        Ok(GradientCheck {
            n_probes,
            max_rel_error_x: max_x,
            max_rel_error_u: max_u,
            tolerance,
            pass: max_x <= tolerance && max_u <= tolerance,
        })
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn max_relative_error<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}

/// Sampling box of the gradient self-check. Adjoint entries are drawn
/// uniformly from `[-adjoint_scale, adjoint_scale]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBox<T> {
    pub t_max: T,
    pub x_lower: Vec<T>,
    pub x_upper: Vec<T>,
    pub u_lower: Vec<T>,
    pub u_upper: Vec<T>,
    pub adjoint_scale: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    pub n_probes: usize,
    pub max_rel_error_x: f64,
    pub max_rel_error_u: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Adjoint processes `(p, q, r)` on a grid for a set of paths.
#[derive(Clone, Debug)]
pub struct AdjointTriple<T: Real> {
    values: BsdeSolution<T>,
    /// State components whose adjoint is not computed (stored as zero).
    pub omitted_components: Vec<usize>,
    pub notes: Vec<String>,
}

impl<T: Real> AdjointTriple<T> {
    /// Wraps a solved adjoint BSDE; dimensions must match `model`.
    pub fn from_solution(solution: BsdeSolution<T>, model: &JumpDiffusionModel<T>) -> Result<Self> {
        check_dim("adjoint p", model.state_dim(), solution.y_dim())?;
        check_dim("adjoint q columns", model.noise_dim(), solution.noise_dim())?;
        check_dim("adjoint r marks", model.n_marks(), solution.n_marks())?;
        if solution.mark_weights() != model.jumps().weights().as_slice() {
            return Err(invalid("adjoint marks differ from the jump measure"));
        }
        Ok(Self {
            values: solution,
            omitted_components: Vec::new(),
            notes: Vec::new(),
        })
    }

    /// Builds `(p, q, r)` from a closure `fill(path_index, node, p, q, r)`.
    pub fn from_fn(
        grid: TimeGrid<T>,
        path_ids: Vec<usize>,
        model: &JumpDiffusionModel<T>,
        mut fill: impl FnMut(usize, usize, &mut [T], &mut [T], &mut [T]),
    ) -> Result<Self> {
        let (n, d, m) = (model.state_dim(), model.noise_dim(), model.n_marks());
        let rows = path_ids.len() * grid.n_nodes();
        let (mut p, mut q, mut r) = (vec![T::zero(); rows * n], vec![T::zero(); rows * n * d], vec![T::zero(); rows * n * m]);
        for (i, &id) in path_ids.iter().enumerate() {
            for k in 0..grid.n_nodes() {
                let row = i * grid.n_nodes() + k;
                fill(
                    id,
                    k,
                    &mut p[row * n..(row + 1) * n],
                    &mut q[row * n * d..(row + 1) * n * d],
                    &mut r[row * n * m..(row + 1) * n * m],
                );
            }
        }
        let values = BsdeSolution::from_parts(grid, path_ids, n, d, model.jumps().weights(), p, q, r)?;
        Self::from_solution(values, model)
    }

    pub fn with_omitted(mut self, components: Vec<usize>, note: impl Into<String>) -> Self {
        self.omitted_components = components;
        self.notes.push(note.into());
        self
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        self.values.grid()
    }

    pub fn path_ids(&self) -> &[usize] {
        self.values.path_ids()
    }

    pub fn n_paths(&self) -> usize {
        self.values.n_paths()
    }

    pub fn state_dim(&self) -> usize {
        self.values.y_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.values.noise_dim()
    }

    pub fn n_marks(&self) -> usize {
        self.values.n_marks()
    }

    pub fn p(&self, i: usize, k: usize) -> &[T] {
        self.values.y(i, k)
    }

    pub fn q(&self, i: usize, k: usize) -> &[T] {
        self.values.z(i, k)
    }

    pub fn r(&self, i: usize, k: usize) -> &[T] {
        self.values.k(i, k)
    }

    /// Position of bundle path `id` among the stored paths.
    pub fn index_of_path(&self, id: usize) -> Option<usize> {
        self.values.path_ids().binary_search(&id).ok()
    }

    pub fn as_solution(&self) -> &BsdeSolution<T> {
        &self.values
    }
}

/// Driver `g(t, x, u, p, q, r) = grad_x H(t, x, u, p, q, r)`.
///
/// Evaluation errors are reported as NaN, which the solvers treat as
/// divergence.
#[derive(Clone, Debug)]
pub struct AdjointDriver<T: Real>(pub Hamiltonian<T>);

impl<T: Real> Driver<T> for AdjointDriver<T> {
    fn eval(&self, t: T, x: &[T], u: &[T], y: &[T], z: &[T], k: &[T], out: &mut [T]) {
        match self.0.grad_x(t, x, u, y, z, k) {
            Ok(g) => out.copy_from_slice(&g),
            Err(_) => out.fill(T::nan()),
        }
    }
}

/// Adjoint BSDE along the candidate paths in `bundle`: driver
/// `grad_x H(t, X_t, u_t, p, q, r)`, zero limit at infinity, constants
/// probed at up to `max_samples` bundle points.
pub fn adjoint_problem<T: Real>(hamiltonian: &Hamiltonian<T>, bundle: &PathBundle<T>, max_samples: usize) -> Result<BsdeProblem<T>> {
    let model = hamiltonian.model();
    check_dim("bundle state", model.state_dim(), bundle.state_dim())?;
    check_dim("bundle noise", model.noise_dim(), bundle.noise_dim())?;
    if bundle.mark_weights() != model.jumps().weights().as_slice() {
        return Err(invalid("bundle marks differ from the jump measure"));
    }
    let driver = AdjointDriver(hamiltonian.clone());
    let constants = StructuralConstants::estimate(&driver, model.state_dim(), bundle, max_samples)?;
    BsdeProblem::new(
        model.state_dim(),
        model.noise_dim(),
        model.jumps().weights(),
        Arc::new(driver),
        constants,
        Terminal::infinite_zero(),
    )
}
