//! Backward least-squares Monte Carlo for BSDEs with jumps, and the
//! truncation ladder for infinite horizons.

use serde::Serialize;

use super::problem::{BsdeProblem, Horizon};
use super::solution::{weighted_distance, weighted_norm_upto, BsdeSolution};
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::regression::{Basis, Projection};
use crate::scalar::Real;
use crate::simulate::{overflow_guard, PathBundle};

/// Martingale integrands `(Z_k, K_k)` of one step.
pub(crate) struct StepProjection<T> {
    pub z: Vec<T>,
    pub k: Vec<T>,
}

/// Regresses the products of `Y_{k+1} - E[Y_{k+1} | X_k]` with the Brownian
/// and compensated Poisson increments of interval `k` on the basis of `X_k`.
///
/// `y_next` holds `y_dim` values per entry of `paths`.
pub(crate) fn project_step<T: Real>(
    bundle: &PathBundle<T>,
    paths: &[usize],
    k: usize,
    proj: &Projection<T>,
    y_next: &[T],
    y_dim: usize,
) -> Result<StepProjection<T>> {
    let p = paths.len();
    let d = bundle.noise_dim();
    let weights = bundle.mark_weights();
    let m = weights.len();
    let dt = bundle.grid().dt();

    let fit = proj.fit(y_next, y_dim)?;

    let width = y_dim * (d + m);
    let mut targets = vec![T::zero(); p * width];
    let mut dn = vec![T::zero(); m];
    for (i, &path) in paths.iter().enumerate() {
        let db = bundle.db(path, k);
        bundle.compensated_increments(path, k, &mut dn);
        let row = &mut targets[i * width..(i + 1) * width];
        for l in 0..y_dim {
            let c = y_next[i * y_dim + l] - fit.fitted(i, l);
            for j in 0..d {
                row[l * d + j] = c * db[j];
            }
            for f in 0..m {
                row[y_dim * d + l * m + f] = c * dn[f];
            }
        }
    }
    let mut z = vec![T::zero(); p * y_dim * d];
    let mut kk = vec![T::zero(); p * y_dim * m];
    if width > 0 {
        let mfit = proj.fit(&targets, width)?;
        for i in 0..p {
            let row = mfit.fitted_row(i);
            for l in 0..y_dim {
                for j in 0..d {
                    z[(i * y_dim + l) * d + j] = row[l * d + j] / dt;
                }
                for f in 0..m {
                    let w = weights[f];
                    kk[(i * y_dim + l) * m + f] = if w > T::zero() { row[y_dim * d + l * m + f] / (w * dt) } else { T::zero() };
                }
            }
        }
    }
    Ok(StepProjection { z, k: kk })
}

/// Solves the BSDE on `[0, horizon]` (or up to a finite terminal time, if
/// earlier) with terminal value `xi_horizon`, by backward regression on
/// `basis` of the bundle state.
pub fn solve_truncated<T: Real>(
    problem: &BsdeProblem<T>,
    horizon: T,
    bundle: &PathBundle<T>,
    basis: &Basis<T>,
) -> Result<BsdeSolution<T>> {
    let check = problem.check_lambda_condition();
    if !check.pass {
        return Err(Error::LambdaCondition { margin: check.margin });
    }
    if !basis.spans_constants() {
        return Err(invalid("regression basis must span the constants"));
    }
    problem.check_bundle(bundle)?;
    let end = match problem.terminal().horizon {
        Horizon::Finite(t) if t < horizon => t,
        _ => horizon,
    };
    let n_end = bundle
        .grid()
        .index_of(end)
        .ok_or_else(|| invalid(format!("horizon {end} is not a node of the bundle grid (T = {})", bundle.grid().horizon())))?;
    if n_end == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let grid = bundle.grid().truncate(n_end)?;
    let paths = bundle.valid_paths();
    let p = paths.len();
    if p == 0 {
        return Err(invalid("no valid paths"));
    }
    let (y_dim, d, m) = (problem.y_dim(), bundle.noise_dim(), bundle.n_marks());
    let n = bundle.state_dim();
    let dt = grid.dt();
    let guard = overflow_guard::<T>();
    let mut sol = BsdeSolution::zeros(grid, paths.clone(), y_dim, d, bundle.mark_weights().to_vec());

    let mut y_next = vec![T::zero(); p * y_dim];
    let t_end = grid.time(n_end);
    for (i, &path) in paths.iter().enumerate() {
        problem.terminal().value_at(t_end, bundle.x(path, n_end), &mut y_next[i * y_dim..(i + 1) * y_dim]);
        sol.y_mut(i, n_end).copy_from_slice(&y_next[i * y_dim..(i + 1) * y_dim]);
    }

    let mut g = vec![T::zero(); y_dim];
    let mut dn = vec![T::zero(); m];
    let mut max_err = T::zero();
    let mut dropped = 0;
    let mut residual_sq = T::zero();
    for k in (0..n_end).rev() {
        let t = grid.time(k);
        let proj = Projection::from_rows(basis, n, p, |i| bundle.x(paths[i], k))?;
        dropped += proj.dropped();
        let step = project_step(bundle, &paths, k, &proj, &y_next, y_dim)?;
        let mut targets = vec![T::zero(); p * y_dim];
        for (i, &path) in paths.iter().enumerate() {
            let yn = &y_next[i * y_dim..(i + 1) * y_dim];
            let z = &step.z[i * y_dim * d..(i + 1) * y_dim * d];
            let kk = &step.k[i * y_dim * m..(i + 1) * y_dim * m];
            problem.driver().eval(t, bundle.x(path, k), bundle.u(path, k), yn, z, kk, &mut g);
            for l in 0..y_dim {
                targets[i * y_dim + l] = yn[l] + g[l] * dt;
            }
            sol.z_mut(i, k).copy_from_slice(z);
            sol.k_mut(i, k).copy_from_slice(kk);
        }
        let fit = proj.fit(&targets, y_dim)?;
        for j in 0..y_dim {
            max_err = max_err.max(fit.prediction_error(j));
        }
        for (i, &path) in paths.iter().enumerate() {
            let db = bundle.db(path, k);
            bundle.compensated_increments(path, k, &mut dn);
            for l in 0..y_dim {
                let y = fit.fitted(i, l);
                if !y.is_finite() || y.abs() > guard {
                    return Err(Error::SolverDivergence { t: t.to_f64_lossy() });
                }
                let mut mart = T::zero();
                for j in 0..d {
                    mart = mart + sol.z(i, k)[l * d + j] * db[j];
                }
                for f in 0..m {
                    mart = mart + sol.k(i, k)[l * m + f] * dn[f];
                }
                let r = y - targets[i * y_dim + l] + mart;
                residual_sq = residual_sq + r * r;
                y_next[i * y_dim + l] = y;
            }
            sol.y_mut(i, k).copy_from_slice(&y_next[i * y_dim..(i + 1) * y_dim]);
        }
    }
    if dropped > 0 {
        log::debug!("rank-deficient regressions: {dropped} basis columns dropped over {n_end} steps");
    }
    sol.diagnostics.max_prediction_error = max_err.to_f64_lossy();
    sol.diagnostics.dropped_columns = dropped;
    sol.diagnostics.residual_rms = (residual_sq / T::from_count(p * n_end * y_dim)).sqrt().to_f64_lossy();
    Ok(sol)
}

/// Settings of the truncation ladder.
#[derive(Clone, Debug)]
pub struct LadderOptions<T: Real> {
    /// Increasing rung horizons.
    pub horizons: Vec<T>,
    /// Acceptance level of the relative weighted distance.
    pub tolerance: T,
    /// Distances are measured on `[0, window]`; `None` uses the first rung.
    pub window: Option<T>,
    pub basis: Basis<T>,
}

impl<T: Real> Default for LadderOptions<T> {
    fn default() -> Self {
        Self {
            horizons: vec![T::lit(10.0), T::lit(20.0), T::lit(40.0)],
            tolerance: T::lit(1e-2),
            window: None,
            basis: Basis::default(),
        }
    }
}

/// History of a ladder run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderDiagnostics {
    pub horizons: Vec<f64>,
    /// Weighted distance between rung `i + 1` and rung `i`.
    pub distances: Vec<f64>,
    /// `sqrt(distance / norm of the finer rung)` on the same window.
    pub relative_distances: Vec<f64>,
    pub window: f64,
    pub lambda: f64,
    pub lambda_margin: f64,
    pub tolerance: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct InfiniteSolution<T: Real> {
    /// Finest rung computed.
    pub solution: BsdeSolution<T>,
    pub diagnostics: LadderDiagnostics,
}

/// Solves an infinite-horizon BSDE through a ladder of truncated problems.
///
/// Stops at the first rung whose relative distance to the previous rung is
/// below tolerance. Two consecutive non-decreasing distances above
/// tolerance are reported as [`Error::ConvergenceFailure`].
pub fn solve_infinite<T: Real>(problem: &BsdeProblem<T>, bundle: &PathBundle<T>, options: &LadderOptions<T>) -> Result<InfiniteSolution<T>> {
    let check = problem.check_lambda_condition();
    if !check.pass {
        return Err(Error::LambdaCondition { margin: check.margin });
    }
    let hs = &options.horizons;
    if hs.is_empty() || hs.windows(2).any(|w| w[1] <= w[0]) || hs[0] <= T::zero() {
        return Err(invalid("ladder horizons must be positive and strictly increasing"));
    }
    if !(options.tolerance > T::zero()) {
        return Err(invalid("ladder tolerance must be positive"));
    }
    let window = options.window.unwrap_or(hs[0]);
    if !(window > T::zero() && window <= hs[0]) {
        return Err(invalid("distance window must lie in (0, first rung]"));
    }
    let grid: &TimeGrid<T> = bundle.grid();
    let upto = grid
        .index_of(window)
        .ok_or_else(|| invalid("distance window is not a grid node"))?;
    let lambda = problem.constants().lambda;

    let mut diag = LadderDiagnostics {
        horizons: Vec::new(),
        distances: Vec::new(),
        relative_distances: Vec::new(),
        window: window.to_f64_lossy(),
        lambda: lambda.to_f64_lossy(),
        lambda_margin: check.margin,
        tolerance: options.tolerance.to_f64_lossy(),
        converged: false,
    };
    let mut prev: Option<BsdeSolution<T>> = None;
    for &h in hs {
        let sol = solve_truncated(problem, h, bundle, &options.basis)?;
        diag.horizons.push(h.to_f64_lossy());
        if let Some(prev) = &prev {
            let dist = weighted_distance(&sol, prev, lambda, upto)?;
            let scale = weighted_norm_upto(&sol, lambda, upto);
            let rel = if dist == T::zero() {
                T::zero()
            } else {
                (dist / scale).sqrt()
            };
            log::info!("ladder rung {h}: distance {dist}, relative {rel}");
            diag.distances.push(dist.to_f64_lossy());
            diag.relative_distances.push(rel.to_f64_lossy());
            if rel < options.tolerance {
                diag.converged = true;
                return Ok(InfiniteSolution { solution: sol, diagnostics: diag });
            }
            let nd = diag.distances.len();
            if nd >= 2 && diag.distances[nd - 1] >= diag.distances[nd - 2] {
                return Err(Error::ConvergenceFailure {
                    horizons: diag.horizons,
                    distances: diag.distances,
                });
            }
        }
        prev = Some(sol);
    }
    Ok(InfiniteSolution {
        solution: prev.expect("at least one rung"),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bsde::problem::{FnDriver, StructuralConstants, Terminal, TerminalValue};
    use crate::model::{ControlPolicy, ControlSet, Dynamics, JumpDiffusionModel, JumpMeasure};
    use crate::simulate::simulate_paths;

    struct BrownianState;

    impl Dynamics<f64> for BrownianState {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
        }
    }

    fn bundle(horizon: f64, n: usize, paths: usize) -> PathBundle<f64> {
        let model = JumpDiffusionModel::new(Arc::new(BrownianState), JumpMeasure::none(), vec![0.0]).unwrap();
        let policy = ControlPolicy::constant(vec![0.0], ControlSet::unbounded(1)).unwrap();
        simulate_paths(&model, &policy, &TimeGrid::new(horizon, n).unwrap(), paths, 17).unwrap()
    }

    #[test]
    fn constant_fixed_point() {
        let rho = 0.1;
        let c = 3.0;
        let driver = FnDriver::new(move |_, _, _, y: &[f64], _, _, out: &mut [f64]| out[0] = -rho * y[0] + rho * c);
        let constants = StructuralConstants::new(-rho, 0.0, 0.0).unwrap();
        let terminal = Terminal::finite(2.0, TerminalValue::Constant(vec![c]));
        let problem = BsdeProblem::new(1, 1, vec![], Arc::new(driver), constants, terminal).unwrap();
        let b = bundle(2.0, 20, 200);
        let sol = solve_truncated(&problem, 2.0, &b, &Basis::default()).unwrap();
        for i in 0..sol.n_paths() {
            for k in 0..=20 {
                assert!((sol.y(i, k)[0] - c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn martingale_terminal_value() {
        let terminal = Terminal::finite(1.0, TerminalValue::Conditional(Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = x[0])));
        let constants = StructuralConstants::new(0.0, 0.0, 0.0).unwrap();
        let problem = BsdeProblem::new(1, 1, vec![], Arc::new(FnDriver::zero()), constants, terminal).unwrap();
        let b = bundle(1.0, 20, 10_000);
        let sol = solve_truncated(&problem, 1.0, &b, &Basis::default()).unwrap();
        assert_eq!(sol.y(0, 20)[0], b.x(0, 20)[0]);
        let mut sq = 0.0;
        let mut count = 0.0;
        for (i, &p) in sol.path_ids().iter().enumerate() {
            for k in 1..=20 {
                sq += (sol.y(i, k)[0] - b.x(p, k)[0]).powi(2);
                count += 1.0;
            }
        }
        // X has unit volatility, so the RMS error is directly comparable to 2%.
        assert!((sq / count).sqrt() < 0.02);
        // Z recovers the unit volatility.
        assert!((sol.z(0, 5)[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn lambda_gate() {
        let constants = StructuralConstants::new(0.0, 1.0, 1.0).unwrap().with_lambda(2.0);
        let problem = BsdeProblem::new(1, 1, vec![], Arc::new(FnDriver::zero()), constants, Terminal::infinite_zero()).unwrap();
        let b = bundle(4.0, 8, 10);
        let options = LadderOptions {
            horizons: vec![1.0, 2.0, 4.0],
            ..LadderOptions::default()
        };
        assert!(matches!(solve_infinite(&problem, &b, &options), Err(Error::LambdaCondition { .. })));
        let admitted = problem.with_lambda(3.0);
        let out = solve_infinite(&admitted, &b, &options).unwrap();
        assert!(out.diagnostics.converged);
        assert_eq!(out.diagnostics.distances, vec![0.0]);
    }
}
