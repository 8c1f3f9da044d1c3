//! Linear BSDE
//!
//! ```text
//! -dY = (A Y + beta . Z + C + sum_m w_m alpha_m K_m) dt - Z dB - sum_m K_m dNtilde_m
//! ```
//!
//! solved through `Y_t = E[ int_t^T Gamma_{t,s} C_s ds | F_t ]`, with
//! `dGamma = Gamma (A dt + beta dB + alpha dNtilde)`.

use std::fmt;
use std::sync::Arc;

use super::solution::BsdeSolution;
use super::solver::project_step;
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::performance::Envelope;
use crate::regression::{Basis, Projection};
use crate::scalar::Real;
use crate::simulate::PathBundle;

type ScalarCoef<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;
type VectorCoef<T> = Arc<dyn Fn(T, &[T], &[T], &mut [T]) + Send + Sync>;
type MarkCoef<T> = Arc<dyn Fn(T, &[T], &[T], usize) -> T + Send + Sync>;

/// Coefficients as functions of `(t, X_t, u_t)` along a bundle.
#[derive(Clone)]
pub struct LinearBsde<T: Real> {
    pub a: ScalarCoef<T>,
    /// Fills `noise_dim` values.
    pub beta: VectorCoef<T>,
    /// Value at a flat mark index.
    pub alpha: MarkCoef<T>,
    pub c: ScalarCoef<T>,
    /// Envelope of `E[Gamma_{0,s} |C_s|]`, used for the truncation bound.
    pub tail: Option<Envelope<T>>,
}

impl<T: Real> fmt::Debug for LinearBsde<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearBsde").field("tail", &self.tail).finish_non_exhaustive()
    }
}

impl<T: Real> LinearBsde<T> {
    pub fn new(
        a: impl Fn(T, &[T], &[T]) -> T + Send + Sync + 'static,
        beta: impl Fn(T, &[T], &[T], &mut [T]) + Send + Sync + 'static,
        alpha: impl Fn(T, &[T], &[T], usize) -> T + Send + Sync + 'static,
        c: impl Fn(T, &[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            a: Arc::new(a),
            beta: Arc::new(beta),
            alpha: Arc::new(alpha),
            c: Arc::new(c),
            tail: None,
        }
    }

    pub fn with_tail(mut self, envelope: Envelope<T>) -> Self {
        self.tail = Some(envelope);
        self
    }
}

/// `Gamma_{0, t_k}` per valid path; `Gamma_{t,s} = Gamma_{0,s} / Gamma_{0,t}`.
#[derive(Clone, Debug)]
pub struct GammaFactor<T: Real> {
    grid: TimeGrid<T>,
    path_ids: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> GammaFactor<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn path_ids(&self) -> &[usize] {
        &self.path_ids
    }

    /// `Gamma_{0, t_k}` for stored path `i`.
    pub fn value(&self, i: usize, k: usize) -> T {
        self.values[i * self.grid.n_nodes() + k]
    }

    /// `Gamma_{t_k, t_l}` for stored path `i`.
    pub fn ratio(&self, i: usize, k: usize, l: usize) -> T {
        self.value(i, l) / self.value(i, k)
    }
}

/// Integrates `Gamma` along every valid path of `bundle`.
///
/// Coefficients are frozen over each recording interval and the interval is
/// integrated exactly, so `Gamma` stays positive whenever `1 + alpha > 0`.
pub fn gamma_factor<T: Real>(linear: &LinearBsde<T>, bundle: &PathBundle<T>) -> Result<GammaFactor<T>> {
    let grid = *bundle.grid();
    let paths = bundle.valid_paths();
    let nodes = grid.n_nodes();
    let d = bundle.noise_dim();
    let weights = bundle.mark_weights();
    let dt = grid.dt();
    let mut values = vec![T::zero(); paths.len() * nodes];
    let mut beta = vec![T::zero(); d];
    let mut alpha = vec![T::zero(); weights.len()];
    for (i, &p) in paths.iter().enumerate() {
        let row = &mut values[i * nodes..(i + 1) * nodes];
        row[0] = T::one();
        let mut log_gamma = T::zero();
        for k in 0..grid.n_steps() {
            let (t, x, u) = (grid.time(k), bundle.x(p, k), bundle.u(p, k));
            let a = (linear.a)(t, x, u);
            (linear.beta)(t, x, u, &mut beta);
            let mut comp = T::zero();
            for (f, (al, w)) in alpha.iter_mut().zip(weights).enumerate() {
                *al = (linear.alpha)(t, x, u, f);
                if *w > T::zero() && *al <= -T::one() {
                    return Err(invalid(format!("1 + alpha <= 0 at mark {f}, t = {t}: Gamma would not stay positive")));
                }
                comp = comp + *w * *al;
            }
            let b2: T = beta.iter().map(|b| *b * *b).sum();
            let db = bundle.db(p, k);
            let mut incr = (a - T::half() * b2 - comp) * dt;
            for j in 0..d {
                incr = incr + beta[j] * db[j];
            }
            for e in bundle.jumps_in(p, k) {
                incr = incr + (T::one() + alpha[e.mark as usize]).ln();
            }
            log_gamma = log_gamma + incr;
            row[k + 1] = log_gamma.exp();
        }
    }
    Ok(GammaFactor {
        grid,
        path_ids: paths,
        values,
    })
}

/// Solves the linear BSDE on the bundle horizon with zero value beyond it.
///
/// `Y_k` is the regression on `basis(X_k)` of the pathwise functional
/// `sum_l Gamma_{t_k, t_l} C_l dt` (trapezoidal); `Z` and `K` come from
/// regressing the increments of `Y` against the noise.
pub fn solve_linear_closed_form<T: Real>(linear: &LinearBsde<T>, bundle: &PathBundle<T>, basis: &Basis<T>) -> Result<BsdeSolution<T>> {
    if !basis.spans_constants() {
        return Err(invalid("regression basis must span the constants"));
    }
    let gamma = gamma_factor(linear, bundle)?;
    let grid = *bundle.grid();
    let paths = gamma.path_ids().to_vec();
    let p = paths.len();
    if p == 0 {
        return Err(invalid("no valid paths"));
    }
    let n_steps = grid.n_steps();
    let nodes = grid.n_nodes();
    let dt = grid.dt();

    // S_k = int_{t_k}^T Gamma_{0,s} C_s ds per path, trapezoidal.
    let mut s = vec![T::zero(); p * nodes];
    for (i, &path) in paths.iter().enumerate() {
        let gc = |k: usize| gamma.value(i, k) * (linear.c)(grid.time(k), bundle.x(path, k), bundle.u(path, k));
        let mut next = gc(n_steps);
        for k in (0..n_steps).rev() {
            let cur = gc(k);
            s[i * nodes + k] = s[i * nodes + k + 1] + T::half() * (cur + next) * dt;
            next = cur;
        }
    }

    let mut sol = BsdeSolution::zeros(grid, paths.clone(), 1, bundle.noise_dim(), bundle.mark_weights().to_vec());
    let n = bundle.state_dim();
    let mut y_next: Vec<T> = vec![T::zero(); p];
    let mut max_err = T::zero();
    let mut dropped = 0;
    for k in (0..n_steps).rev() {
        let proj = Projection::from_rows(basis, n, p, |i| bundle.x(paths[i], k))?;
        dropped += proj.dropped();
        let step = project_step(bundle, &paths, k, &proj, &y_next, 1)?;
        let targets: Vec<T> = (0..p).map(|i| s[i * nodes + k] / gamma.value(i, k)).collect();
        let fit = proj.fit(&targets, 1)?;
        max_err = max_err.max(fit.prediction_error(0));
        for i in 0..p {
            y_next[i] = fit.fitted(i, 0);
            sol.y_mut(i, k)[0] = y_next[i];
            let zw = sol.z(i, k).len();
            sol.z_mut(i, k).copy_from_slice(&step.z[i * zw..(i + 1) * zw]);
            let kw = sol.k(i, k).len();
            sol.k_mut(i, k).copy_from_slice(&step.k[i * kw..(i + 1) * kw]);
        }
    }
    if dropped > 0 {
        log::debug!("linear solve dropped {dropped} basis columns");
    }
    sol.diagnostics.max_prediction_error = max_err.to_f64_lossy();
    sol.diagnostics.dropped_columns = dropped;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlPolicy, ControlSet, Dynamics, JumpDiffusionModel, JumpMeasure, MarkDistribution};
    use crate::simulate::simulate_paths;

    struct Drifting;

    impl Dynamics<f64> for Drifting {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.1;
        }
        fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.3;
        }
        fn jump(&self, _t: f64, _x: &[f64], _u: &[f64], _c: usize, z: f64, out: &mut [f64]) {
            out[0] = z;
        }
    }

    fn bundle(horizon: f64, n: usize) -> PathBundle<f64> {
        let marks = MarkDistribution::from_probabilities(1.0, vec![-0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let model = JumpDiffusionModel::new(Arc::new(Drifting), JumpMeasure::new(vec![marks]), vec![1.0]).unwrap();
        let policy = ControlPolicy::constant(vec![0.0], ControlSet::unbounded(1)).unwrap();
        simulate_paths(&model, &policy, &TimeGrid::new(horizon, n).unwrap(), 500, 5).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let lin = LinearBsde::new(|_, _, _| 0.2, |_, _, _, b: &mut [f64]| b[0] = 0.1, |_, _, _, _| 0.3, |_, _, _| 0.0);
        let sol = solve_linear_closed_form(&lin, &bundle(2.0, 20), &Basis::default()).unwrap();
        for i in 0..sol.n_paths() {
            for k in 0..=20 {
                assert_eq!(sol.y(i, k)[0], 0.0);
                assert_eq!(sol.z(i, k)[0], 0.0);
                assert!(sol.k(i, k).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn deterministic_exponential_source() {
        let lin = LinearBsde::new(|_, _, _| 0.0, |_, _, _, b: &mut [f64]| b[0] = 0.0, |_, _, _, _| 0.0, |t: f64, _, _| (-t).exp());
        let sol = solve_linear_closed_form(&lin, &bundle(30.0, 3000), &Basis::default()).unwrap();
        for k in [0, 500, 1000, 2000] {
            let t = k as f64 * 0.01;
            assert!((sol.y(3, k)[0] - (-t).exp()).abs() < 1e-4 * (-t).exp().max(1e-3), "t = {t}");
        }
    }

    #[test]
    fn nonpositive_gamma_is_rejected() {
        let lin = LinearBsde::new(|_, _, _| 0.0, |_, _, _, b: &mut [f64]| b[0] = 0.0, |_, _, _, f| if f == 0 { -1.0 } else { 0.0 }, |_, _, _| 1.0);
        assert!(gamma_factor(&lin, &bundle(1.0, 10)).is_err());
    }

    #[test]
    fn gamma_starts_at_one_and_stays_positive() {
        let lin = LinearBsde::new(|_, _, _| -0.2, |_, _, _, b: &mut [f64]| b[0] = 0.5, |_, _, _, f| if f == 0 { -0.9 } else { 2.0 }, |_, _, _| 1.0);
        let g = gamma_factor(&lin, &bundle(2.0, 20)).unwrap();
        for i in 0..g.path_ids().len() {
            assert_eq!(g.value(i, 0), 1.0);
            assert!((0..=20).all(|k| g.value(i, k) > 0.0));
            assert!((g.ratio(i, 7, 7) - 1.0).abs() < 1e-15);
        }
    }
}
