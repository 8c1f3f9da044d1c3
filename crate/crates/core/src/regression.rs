//! Least-squares regression used for every conditional expectation.
//!
//! Columns of the design matrix are scaled to unit RMS, the Gram matrix is
//! regularised with a small ridge and factored by Cholesky. A column whose
//! pivot falls below the precision's pivot threshold is dropped.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, invalid, Result};
use crate::scalar::Real;

type BasisFn<T> = Arc<dyn Fn(&[T], &mut Vec<T>) + Send + Sync>;

/// Regression basis on the conditioning variables.
#[derive(Clone)]
pub enum Basis<T: Real> {
    /// Only the constant: conditional expectation becomes the plain mean.
    Constant,
    /// All monomials of total degree `<= degree`.
    Polynomial { degree: usize },
    /// Constant plus `x_i^j` for `j` in `-degree..=degree`, `j != 0`, per
    /// component. Suited to positive, multiplicative states.
    Laurent { degree: usize },
    /// User basis; `len` functions, `spans_constants` asserted by the caller.
    Custom {
        len: usize,
        spans_constants: bool,
        eval: BasisFn<T>,
    },
}

impl<T: Real> fmt::Debug for Basis<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant => write!(f, "Constant"),
            Self::Polynomial { degree } => write!(f, "Polynomial {{ degree: {degree} }}"),
            Self::Laurent { degree } => write!(f, "Laurent {{ degree: {degree} }}"),
            Self::Custom { len, .. } => write!(f, "Custom {{ len: {len} }}"),
        }
    }
}

impl<T: Real> Default for Basis<T> {
    fn default() -> Self {
        Self::Polynomial { degree: 2 }
    }
}

fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    let mut frontier = vec![vec![0; dim]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            // extend only at or after the last raised index to avoid duplicates
            let start = m.iter().rposition(|&e| e > 0).unwrap_or(0);
            for i in start..dim {
                let mut e = m.clone();
                e[i] += 1;
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl<T: Real> Basis<T> {
    pub fn len(&self, dim: usize) -> usize {
        match self {
            Self::Constant => 1,
            Self::Polynomial { degree } => monomials(dim, *degree).len(),
            Self::Laurent { degree } => 1 + 2 * degree * dim,
            Self::Custom { len, .. } => *len,
        }
    }

    pub fn spans_constants(&self) -> bool {
        match self {
            Self::Custom { spans_constants, .. } => *spans_constants,
            _ => true,
        }
    }

    /// Evaluator for `dim`-dimensional inputs.
    pub fn evaluator(&self, dim: usize) -> BasisEvaluator<T> {
        let exponents = match self {
            Self::Polynomial { degree } => monomials(dim, *degree),
            _ => Vec::new(),
        };
        BasisEvaluator {
            basis: self.clone(),
            exponents,
        }
    }
}

/// Basis with precomputed exponent tables.
#[derive(Clone, Debug)]
pub struct BasisEvaluator<T: Real> {
    basis: Basis<T>,
    exponents: Vec<Vec<usize>>,
}

impl<T: Real> BasisEvaluator<T> {
    pub fn eval(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        match &self.basis {
            Basis::Constant => out.push(T::one()),
            Basis::Polynomial { .. } => {
                for e in &self.exponents {
                    let mut v = T::one();
                    for (xi, &p) in x.iter().zip(e) {
                        if p > 0 {
                            v = v * xi.powi(p as i32);
                        }
                    }
                    out.push(v);
                }
            }
            Basis::Laurent { degree } => {
                out.push(T::one());
                for xi in x {
                    let inv = xi.recip();
                    let (mut up, mut down) = (T::one(), T::one());
                    for _ in 0..*degree {
                        up = up * *xi;
                        down = down * inv;
                        out.push(up);
                        out.push(down);
                    }
                }
            }
            Basis::Custom { eval, .. } => eval(x, out),
        }
    }
}

/// Factored design matrix for a fixed sample of conditioning values.
///
/// One projection serves any number of regression targets.
#[derive(Clone, Debug)]
pub struct Projection<T: Real> {
    evaluator: BasisEvaluator<T>,
    dim: usize,
    n_obs: usize,
    n_cols: usize,
    /// Normalised design, `n_obs x kept.len()`, row-major.
    design: Vec<T>,
    scales: Vec<T>,
    kept: Vec<usize>,
    /// Lower Cholesky factor of the regularised Gram matrix of kept columns.
    chol: Vec<T>,
}

impl<T: Real> Projection<T> {
    /// `features` holds `dim` conditioning values per observation.
    pub fn new(basis: &Basis<T>, features: &[T], dim: usize) -> Result<Self> {
        let n_obs = features.len().checked_div(dim).unwrap_or(0);
        if dim == 0 || n_obs * dim != features.len() {
            return Err(invalid("feature matrix is not a whole number of rows"));
        }
        Self::from_rows(basis, dim, n_obs, |i| &features[i * dim..(i + 1) * dim])
    }

    /// Like [`Projection::new`] with rows supplied by a closure.
    pub fn from_rows<'a>(basis: &Basis<T>, dim: usize, n_obs: usize, row: impl Fn(usize) -> &'a [T]) -> Result<Self> {
        if n_obs == 0 {
            return Err(invalid("regression needs at least one observation"));
        }
        let evaluator = basis.evaluator(dim);
        let n_cols = basis.len(dim);
        let mut raw = Vec::with_capacity(n_obs * n_cols);
        let mut buf = Vec::with_capacity(n_cols);
        for i in 0..n_obs {
            let r = row(i);
            check_dim("regression features", dim, r.len())?;
            evaluator.eval(r, &mut buf);
            check_dim("basis length", n_cols, buf.len())?;
            raw.extend_from_slice(&buf);
        }
        let nf = T::from_count(n_obs);
        let mut scales = vec![T::zero(); n_cols];
        for i in 0..n_obs {
            for (s, v) in scales.iter_mut().zip(&raw[i * n_cols..(i + 1) * n_cols]) {
                *s = *s + *v * *v;
            }
        }
        for s in scales.iter_mut() {
            *s = (*s / nf).sqrt();
        }
        let candidates: Vec<usize> = (0..n_cols).filter(|&c| scales[c] > T::zero() && scales[c].is_finite()).collect();

        // Gram of normalised candidate columns
        let p = candidates.len();
        let mut gram = vec![T::zero(); p * p];
        for i in 0..n_obs {
            let r = &raw[i * n_cols..(i + 1) * n_cols];
            for a in 0..p {
                let va = r[candidates[a]] / scales[candidates[a]];
                for b in 0..=a {
                    let vb = r[candidates[b]] / scales[candidates[b]];
                    gram[a * p + b] = gram[a * p + b] + va * vb;
                }
            }
        }
        let ridge = T::lit(T::RIDGE);
        for a in 0..p {
            for b in 0..=a {
                gram[a * p + b] = gram[a * p + b] / nf;
            }
            gram[a * p + a] = gram[a * p + a] + ridge;
        }

        // Cholesky over candidates, skipping columns with small pivots.
        let tol = T::lit(T::PIVOT_TOL);
        let mut kept_local: Vec<usize> = Vec::with_capacity(p);
        let mut chol: Vec<T> = Vec::new();
        for a in 0..p {
            let m = kept_local.len();
            let mut row = vec![T::zero(); m + 1];
            for (bi, &b) in kept_local.iter().enumerate() {
                let mut s = gram[a * p + b];
                for c in 0..bi {
                    s = s - row[c] * chol[bi * (bi + 1) / 2 + c];
                }
                row[bi] = s / chol[bi * (bi + 1) / 2 + bi];
            }
            let mut pivot = gram[a * p + a];
            for v in row.iter().take(m) {
                pivot = pivot - *v * *v;
            }
            if pivot > tol {
                row[m] = pivot.sqrt();
                chol.extend_from_slice(&row);
                kept_local.push(a);
            }
        }
        let kept: Vec<usize> = kept_local.iter().map(|&a| candidates[a]).collect();
        let dropped = n_cols - kept.len();
        if dropped > 0 {
            log::debug!("regression dropped {dropped} of {n_cols} basis columns");
        }
        let k = kept.len();
        let mut design = Vec::with_capacity(n_obs * k);
        for i in 0..n_obs {
            let r = &raw[i * n_cols..(i + 1) * n_cols];
            design.extend(kept.iter().map(|&c| r[c] / scales[c]));
        }
        Ok(Self {
            evaluator,
            dim,
            n_obs,
            n_cols,
            design,
            scales,
            kept,
            chol,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Number of basis columns retained after pivoting.
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn dropped(&self) -> usize {
        self.n_cols - self.kept.len()
    }

    fn solve(&self, rhs: &mut [T]) {
        let k = self.kept.len();
        let l = |i: usize, j: usize| self.chol[i * (i + 1) / 2 + j];
        for i in 0..k {
            let mut s = rhs[i];
            for j in 0..i {
                s = s - l(i, j) * rhs[j];
            }
            rhs[i] = s / l(i, i);
        }
        for i in (0..k).rev() {
            let mut s = rhs[i];
            for j in i + 1..k {
                s = s - l(j, i) * rhs[j];
            }
            rhs[i] = s / l(i, i);
        }
    }

    /// Regresses `m` targets per observation (`targets[i * m + j]`).
    pub fn fit(&self, targets: &[T], m: usize) -> Result<Fit<T>> {
        check_dim("regression targets", self.n_obs * m, targets.len())?;
        let k = self.kept.len();
        let nf = T::from_count(self.n_obs);
        let mut coef = vec![T::zero(); k * m];
        for i in 0..self.n_obs {
            let row = &self.design[i * k..(i + 1) * k];
            let y = &targets[i * m..(i + 1) * m];
            for (a, va) in row.iter().enumerate() {
                for (j, yj) in y.iter().enumerate() {
                    coef[a * m + j] = coef[a * m + j] + *va * *yj;
                }
            }
        }
        let mut col = vec![T::zero(); k];
        for j in 0..m {
            for a in 0..k {
                col[a] = coef[a * m + j] / nf;
            }
            self.solve(&mut col);
            for a in 0..k {
                coef[a * m + j] = col[a];
            }
        }
        let mut fitted = vec![T::zero(); self.n_obs * m];
        let mut sse = vec![T::zero(); m];
        for i in 0..self.n_obs {
            let row = &self.design[i * k..(i + 1) * k];
            for j in 0..m {
                let mut v = T::zero();
                for (a, va) in row.iter().enumerate() {
                    v = v + *va * coef[a * m + j];
                }
                fitted[i * m + j] = v;
                let r = targets[i * m + j] - v;
                sse[j] = sse[j] + r * r;
            }
        }
        let dof = T::from_count(self.n_obs.saturating_sub(k).max(1));
        let residual_var = sse.into_iter().map(|s| s / dof).collect();
        Ok(Fit {
            m,
            coef,
            fitted,
            residual_var,
            rank: k,
            n_obs: self.n_obs,
        })
    }

    /// Conditional expectation estimate at a new point from a fit of this projection.
    pub fn predict(&self, fit: &Fit<T>, x: &[T], out: &mut [T]) {
        let mut buf = Vec::with_capacity(self.n_cols);
        self.evaluator.eval(x, &mut buf);
        out.fill(T::zero());
        for (a, &c) in self.kept.iter().enumerate() {
            let phi = buf[c] / self.scales[c];
            for (j, o) in out.iter_mut().enumerate().take(fit.m) {
                *o = *o + phi * fit.coef[a * fit.m + j];
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Result of [`Projection::fit`].
#[derive(Clone, Debug)]
pub struct Fit<T> {
    m: usize,
    coef: Vec<T>,
    fitted: Vec<T>,
    residual_var: Vec<T>,
    rank: usize,
    n_obs: usize,
}

impl<T: Real> Fit<T> {
    /// Fitted conditional expectation at sample `i`, target `j`.
    pub fn fitted(&self, i: usize, j: usize) -> T {
        self.fitted[i * self.m + j]
    }

    pub fn fitted_row(&self, i: usize) -> &[T] {
        &self.fitted[i * self.m..(i + 1) * self.m]
    }

    pub fn residual_var(&self, j: usize) -> T {
        self.residual_var[j]
    }

    /// Standard error of the fitted conditional mean, `sqrt(s^2 p / N)`.
    pub fn prediction_error(&self, j: usize) -> T {
        (self.residual_var[j] * T::from_count(self.rank) / T::from_count(self.n_obs)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 2).len(), 3);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 3).len(), 20);
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let proj = Projection::new(&Basis::Polynomial { degree: 2 }, &xs, 1).unwrap();
        let fit = proj.fit(&ys, 1).unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert!((fit.fitted(i, 0) - y).abs() < 1e-5);
        }
        let mut out = [0.0];
        proj.predict(&fit, &[10.0], &mut out);
        assert!((out[0] - (1.0 - 20.0 + 50.0)).abs() < 1e-3);
    }

    #[test]
    fn collinear_columns_are_dropped() {
        let xs = vec![2.0_f64; 30];
        let ys: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let proj = Projection::new(&Basis::Laurent { degree: 2 }, &xs, 1).unwrap();
        assert_eq!(proj.rank(), 1);
        let fit = proj.fit(&ys, 1).unwrap();
        assert!((fit.fitted(0, 0) - 14.5).abs() < 1e-6);
    }

    #[test]
    fn laurent_fits_reciprocal() {
        let xs: Vec<f64> = (1..100).map(|i| 0.2 + i as f64 / 20.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        let fit = Projection::new(&Basis::Laurent { degree: 1 }, &xs, 1).unwrap().fit(&ys, 1).unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert!((fit.fitted(i, 0) - y).abs() < 1e-5 * y.abs().max(1.0));
        }
    }

    #[test]
    fn constant_basis_is_mean_for_many_targets() {
        let xs = vec![0.0_f64; 4];
        let ys = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let fit = Projection::new(&Basis::Constant, &xs, 1).unwrap().fit(&ys, 2).unwrap();
        assert!((fit.fitted(0, 0) - 2.5).abs() < 1e-6);
        assert!((fit.fitted(3, 1) - 25.0).abs() < 1e-5);
    }
}
