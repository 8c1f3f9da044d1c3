use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

/// Per-solve diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// Largest standard error of a fitted conditional mean of `Y`.
    pub max_prediction_error: f64,
    /// Basis columns dropped for rank deficiency, summed over steps.
    pub dropped_columns: usize,
    /// RMS of the one-step residual `Y_k - Y_{k+1} - g dt + Z dB + K dNtilde`.
    pub residual_rms: f64,
}

/// Discrete solution `(Y, Z, K)` on the nodes of `grid` for a set of paths.
///
/// Values are stored per path (in the order of [`path_ids`](Self::path_ids))
/// and node. `Z` and `K` at the last node are zero.
#[derive(Clone, Debug)]
pub struct BsdeSolution<T: Real> {
    grid: TimeGrid<T>,
    path_ids: Vec<usize>,
    y_dim: usize,
    noise_dim: usize,
    mark_weights: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    k: Vec<T>,
    pub diagnostics: SolveDiagnostics,
}

impl<T: Real> BsdeSolution<T> {
    pub(crate) fn zeros(grid: TimeGrid<T>, path_ids: Vec<usize>, y_dim: usize, noise_dim: usize, mark_weights: Vec<T>) -> Self {
        let p = path_ids.len();
        let nodes = grid.n_nodes();
        let m = mark_weights.len();
        Self {
            grid,
            y: vec![T::zero(); p * nodes * y_dim],
            z: vec![T::zero(); p * nodes * y_dim * noise_dim],
            k: vec![T::zero(); p * nodes * y_dim * m],
            path_ids,
            y_dim,
            noise_dim,
            mark_weights,
            diagnostics: SolveDiagnostics::default(),
        }
    }

    /// Builds a solution from explicit arrays laid out as in the accessors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        grid: TimeGrid<T>,
        path_ids: Vec<usize>,
        y_dim: usize,
        noise_dim: usize,
        mark_weights: Vec<T>,
        y: Vec<T>,
        z: Vec<T>,
        k: Vec<T>,
    ) -> Result<Self> {
        let rows = path_ids.len() * grid.n_nodes();
        check_dim("solution Y", rows * y_dim, y.len())?;
        check_dim("solution Z", rows * y_dim * noise_dim, z.len())?;
        check_dim("solution K", rows * y_dim * mark_weights.len(), k.len())?;
        Ok(Self {
            grid,
            path_ids,
            y_dim,
            noise_dim,
            mark_weights,
            y,
            z,
            k,
            diagnostics: SolveDiagnostics::default(),
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    /// Bundle path index of each stored path.
    pub fn path_ids(&self) -> &[usize] {
        &self.path_ids
    }

    pub fn n_paths(&self) -> usize {
        self.path_ids.len()
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

    fn row(&self, i: usize, k: usize) -> usize {
        i * self.grid.n_nodes() + k
    }

    pub fn y(&self, i: usize, k: usize) -> &[T] {
        let b = self.row(i, k) * self.y_dim;
        &self.y[b..b + self.y_dim]
    }

    pub fn z(&self, i: usize, k: usize) -> &[T] {
        let w = self.y_dim * self.noise_dim;
        let b = self.row(i, k) * w;
        &self.z[b..b + w]
    }

    pub fn k(&self, i: usize, k: usize) -> &[T] {
        let w = self.y_dim * self.n_marks();
        let b = self.row(i, k) * w;
        &self.k[b..b + w]
    }

    pub(crate) fn y_mut(&mut self, i: usize, k: usize) -> &mut [T] {
        let b = self.row(i, k) * self.y_dim;
        &mut self.y[b..b + self.y_dim]
    }

    pub(crate) fn z_mut(&mut self, i: usize, k: usize) -> &mut [T] {
        let w = self.y_dim * self.noise_dim;
        let b = self.row(i, k) * w;
        &mut self.z[b..b + w]
    }

    pub(crate) fn k_mut(&mut self, i: usize, k: usize) -> &mut [T] {
        let w = self.y_dim * self.n_marks();
        let b = self.row(i, k) * w;
        &mut self.k[b..b + w]
    }

    /// Copy restricted to the first `n_nodes` nodes.
    pub fn truncated(&self, n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 || n_nodes > self.grid.n_nodes() {
            return Err(invalid("truncation outside the solution grid"));
        }
        let grid = self.grid.truncate(n_nodes - 1)?;
        let mut out = Self::zeros(grid, self.path_ids.clone(), self.y_dim, self.noise_dim, self.mark_weights.clone());
        for i in 0..self.n_paths() {
            for k in 0..n_nodes {
                out.y_mut(i, k).copy_from_slice(self.y(i, k));
                out.z_mut(i, k).copy_from_slice(self.z(i, k));
                out.k_mut(i, k).copy_from_slice(self.k(i, k));
            }
        }
        out.diagnostics = self.diagnostics.clone();
        Ok(out)
    }

    /// Mean over paths of `Y` at node `k`, per component.
    pub fn mean_y(&self, k: usize) -> Vec<T> {
        let mut m = vec![T::zero(); self.y_dim];
        for i in 0..self.n_paths() {
            for (a, v) in m.iter_mut().zip(self.y(i, k)) {
                *a = *a + *v;
            }
        }
        let n = T::from_count(self.n_paths().max(1));
        m.into_iter().map(|v| v / n).collect()
    }
}

/// Weighted norm
/// `E[ sup_k e^{lambda t_k}|Y_k|^2 + sum_k e^{lambda t_k}(|Y_k|^2 + |Z_k|^2) dt
///    + sum_k e^{lambda t_k} sum_m w_m |K_{k,m}|^2 dt ]`
/// with left Riemann sums over the first `upto` steps (all steps when `None`).
pub fn weighted_norm<T: Real>(solution: &BsdeSolution<T>, lambda: T) -> T {
    weighted_norm_upto(solution, lambda, solution.grid().n_steps())
}

pub fn weighted_norm_upto<T: Real>(solution: &BsdeSolution<T>, lambda: T, upto: usize) -> T {
    norm_of(solution, None, lambda, upto)
}

/// Weighted norm of `a - b` over the first `upto` steps of both solutions.
pub fn weighted_distance<T: Real>(a: &BsdeSolution<T>, b: &BsdeSolution<T>, lambda: T, upto: usize) -> Result<T> {
    if a.path_ids != b.path_ids || a.y_dim != b.y_dim || a.noise_dim != b.noise_dim || a.mark_weights != b.mark_weights {
        return Err(invalid("solutions are not comparable"));
    }
    if a.grid.dt() != b.grid.dt() {
        return Err(invalid("solutions live on different grids"));
    }
    if upto > a.grid.n_steps() || upto > b.grid.n_steps() {
        return Err(invalid("distance window exceeds a solution grid"));
    }
    Ok(norm_of(a, Some(b), lambda, upto))
}

fn norm_of<T: Real>(a: &BsdeSolution<T>, b: Option<&BsdeSolution<T>>, lambda: T, upto: usize) -> T {
    let grid = a.grid();
    let dt = grid.dt();
    let upto = upto.min(grid.n_steps());
    let sq = |u: &[T], v: Option<&[T]>| -> T {
        match v {
            Some(v) => u.iter().zip(v).map(|(x, y)| (*x - *y) * (*x - *y)).sum(),
            None => u.iter().map(|x| *x * *x).sum(),
        }
    };
    let m = a.n_marks();
    let y_dim = a.y_dim();
    let mut total = T::zero();
    for i in 0..a.n_paths() {
        let mut sup = T::zero();
        let mut integral = T::zero();
        for k in 0..=upto {
            let w = (lambda * grid.time(k)).exp();
            let ey = w * sq(a.y(i, k), b.map(|b| b.y(i, k)));
            sup = sup.max(ey);
            if k == upto {
                break;
            }
            let ez = sq(a.z(i, k), b.map(|b| b.z(i, k)));
            let ka = a.k(i, k);
            let mut ek = T::zero();
            for l in 0..y_dim {
                for (f, wf) in a.mark_weights().iter().enumerate() {
                    let mut v = ka[l * m + f];
                    if let Some(b) = b {
                        v = v - b.k(i, k)[l * m + f];
                    }
                    ek = ek + *wf * v * v;
                }
            }
            integral = integral + ey * dt + w * (ez + ek) * dt;
        }
        total = total + sup + integral;
    }
    total / T::from_count(a.n_paths().max(1))
}
