//! Portfolio selection with consumption: a fraction `u` of wealth in the
//! stock, consumption `lambda X`, power utility discounted at `delta`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::hamiltonian::{AdjointTriple, ProbeBox};
use crate::model::{ControlPolicy, ControlSet, Dynamics, JumpDiffusionModel, JumpMeasure};
use crate::performance::{Envelope, FnReward};
use crate::scalar::Real;
use crate::simulate::{EulerStepper, NoiseStream, PathBundle, StepNoise};

use super::{adjoint_along, ControlExample, ExampleParams};

struct PortfolioDynamics<T> {
    rho: T,
    mu: T,
    sigma: T,
}

impl<T: Real> Dynamics<T> for PortfolioDynamics<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * (self.rho + u[0] * (self.mu - self.rho) - u[1]);
    }
    fn diffusion(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * self.sigma * u[0];
    }
    fn drift_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.rho + u[0] * (self.mu - self.rho) - u[1];
        du[0] = x[0] * (self.mu - self.rho);
        du[1] = -x[0];
        true
    }
    fn diffusion_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.sigma * u[0];
        du[0] = x[0] * self.sigma;
        du[1] = T::zero();
        true
    }
}

/// `dX = X [(rho + u (mu - rho) - lambda) dt + sigma u dB]` with reward
/// `e^{-delta (s + t)} (lambda X)^gamma / gamma`.
#[derive(Clone, Debug)]
pub struct Example4<T: Real> {
    params: ExampleParams<T>,
    model: JumpDiffusionModel<T>,
    u_hat: T,
    lambda_hat: T,
}

impl<T: Real> Example4<T> {
    pub fn new(params: ExampleParams<T>) -> Result<Self> {
        params.check_common()?;
        let (g, d) = (params.gamma, params.delta);
        if g >= T::one() || g == T::zero() {
            return Err(invalid(format!("gamma must satisfy gamma < 1 and gamma != 0, got {g}")));
        }
        let (rho, mu, sigma) = (params.rho, params.mu, params.sigma);
        let gm1 = g - T::one();
        let excess = mu - rho;
        let u_hat = -excess / (sigma * sigma * gm1);
        let lambda_hat = -d / gm1 + g * rho / gm1 - T::half() * g * excess * excess / (sigma * sigma * gm1 * gm1);
        if !(lambda_hat > T::zero()) {
            return Err(Error::IllPosed(format!("optimal consumption rate {lambda_hat} is not positive")));
        }
        let dynamics = PortfolioDynamics { rho, mu, sigma };
        let model = JumpDiffusionModel::new(Arc::new(dynamics), JumpMeasure::none(), vec![params.x0])?;
        Ok(Self {
            params,
            model,
            u_hat,
            lambda_hat,
        })
    }

    /// Optimal stock fraction `-(mu - rho) / (sigma^2 (gamma - 1))`.
    pub fn u_hat(&self) -> T {
        self.u_hat
    }

    /// Optimal consumption rate.
    pub fn lambda_hat(&self) -> T {
        self.lambda_hat
    }

    /// `B = -delta / (gamma - 1)`.
    pub fn b(&self) -> T {
        -self.params.delta / (self.params.gamma - T::one())
    }

    /// `K = lambda_hat e^{B s}`, so that `p^{1/(gamma-1)} = X K e^{B t}`.
    pub fn k(&self) -> T {
        self.lambda_hat * (self.b() * self.params.s).exp()
    }

    /// `gamma a + gamma (gamma - 1) sigma^2 u^2 / 2` with
    /// `a = rho + u (mu - rho) - lambda`: the growth rate of `E X^gamma`.
    pub fn kappa(&self, u: T, lambda: T) -> T {
        let p = &self.params;
        let a = p.rho + u * (p.mu - p.rho) - lambda;
        p.gamma * a + T::half() * p.gamma * (p.gamma - T::one()) * p.sigma * p.sigma * u * u
    }

    fn constant_control_of(&self, bundle: &PathBundle<T>) -> Result<(T, T)> {
        let paths = bundle.valid_paths();
        let first = *paths.first().ok_or_else(|| invalid("bundle has no valid paths"))?;
        let c = bundle.u(first, 0);
        let (u, l) = (c[0], c[1]);
        let close = |a: T, b: T| (a - b).abs() <= T::lit(1e-12) * (T::one() + b.abs());
        for &p in &paths {
            for k in 0..bundle.grid().n_nodes() {
                let v = bundle.u(p, k);
                if !close(v[0], u) || !close(v[1], l) {
                    return Err(invalid("closed-form adjoint needs a constant control"));
                }
            }
        }
        Ok((u, l))
    }
}

impl<T: Real> ControlExample<T> for Example4<T> {
    fn id(&self) -> u8 {
        4
    }

    fn params(&self) -> &ExampleParams<T> {
        &self.params
    }

    fn model(&self) -> &JumpDiffusionModel<T> {
        &self.model
    }

    fn control_set(&self) -> ControlSet<T> {
        ControlSet::new(vec![T::neg_infinity(), T::zero()], vec![T::infinity(), T::infinity()]).expect("valid bounds")
    }

    fn optimal_policy(&self) -> Result<ControlPolicy<T>> {
        self.constant_policy(&[self.u_hat, self.lambda_hat])
    }

    fn optimal_control(&self) -> Option<Vec<T>> {
        Some(vec![self.u_hat, self.lambda_hat])
    }

    fn reward(&self, control: Option<&[T]>) -> FnReward<T> {
        let (d, g, s) = (self.params.delta, self.params.gamma, self.params.s);
        let r = FnReward::new(move |t: T, x: &[T], u: &[T]| (-d * (s + t)).exp() * (u[1] * x[0]).powf(g) / g).with_gradient(
            move |t, x, u, gx, gu| {
                let e = (-d * (s + t)).exp();
                gx[0] = e * u[1].powf(g) * x[0].powf(g - T::one());
                gu[0] = T::zero();
                gu[1] = e * u[1].powf(g - T::one()) * x[0].powf(g);
            },
        );
        match control {
            Some(c) => {
                let scale = (-d * s).exp() * (c[1] * self.params.x0).powf(g) / g.abs();
                r.with_envelope(Envelope::exponential(scale, d - self.kappa(c[0], c[1])))
            }
            None => r,
        }
    }

    /// For a constant control `(u, lambda)` with `delta > kappa`:
    /// `p = lambda^gamma X^{gamma-1} e^{-delta (s+t)} / (delta - kappa)` and
    /// `q = (gamma - 1) sigma u p`.
    fn analytic_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>> {
        let (u, l) = self.constant_control_of(bundle)?;
        let p = &self.params;
        let denom = p.delta - self.kappa(u, l);
        if !(denom > T::zero()) {
            return Err(Error::IllPosed(format!(
                "delta - kappa = {denom} <= 0: the adjoint of this control is infinite"
            )));
        }
        let (d, g, s, sigma) = (p.delta, p.gamma, p.s, p.sigma);
        let scale = l.powf(g) / denom;
        adjoint_along(&self.model, bundle, |t, x, _u, pp, q, _r| {
            pp[0] = scale * x[0].powf(g - T::one()) * (-d * (s + t)).exp();
            q[0] = (g - T::one()) * sigma * u * pp[0];
        })
    }

    fn performance(&self, control: &[T], horizon: Option<T>) -> Option<T> {
        let p = &self.params;
        let (u, l) = (control[0], control[1]);
        let rate = p.delta - self.kappa(u, l);
        let c = (-p.delta * p.s).exp() * (l * p.x0).powf(p.gamma) / p.gamma;
        match horizon {
            None if rate > T::zero() => Some(c / rate),
            None => None,
            Some(h) if rate == T::zero() => Some(c * h),
            Some(h) => Some(c * (T::one() - (-rate * h).exp()) / rate),
        }
    }

    fn probe_box(&self) -> ProbeBox<T> {
        let x0 = self.params.x0;
        ProbeBox {
            t_max: T::lit(20.0),
            x_lower: vec![x0 * T::half()],
            x_upper: vec![x0 * T::two()],
            u_lower: vec![self.u_hat - T::one(), self.lambda_hat * T::half()],
            u_upper: vec![self.u_hat + T::one(), self.lambda_hat * T::two()],
            adjoint_scale: T::lit(5.0),
        }
    }
}

/// Constancy of `p^{1/(gamma-1)} / (X e^{B t})` along simulated paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MertonCheck {
    pub u_hat: f64,
    pub lambda_hat: f64,
    pub b: f64,
    pub k: f64,
    /// RMS over paths and nodes of the ratio relative to `K`, minus one.
    pub rms_relative_deviation: f64,
    pub max_relative_deviation: f64,
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Simulates wealth under `(u_hat, lambda_hat)` together with the adjoint
/// SDE `dp = -rho p dt - ((mu - rho) / sigma) p dB` on the same Brownian
/// increments, starting from `p(0) = (lambda_hat x0)^{gamma-1} e^{-delta s}`,
/// and measures how far the ratio drifts from `K`.
pub fn merton_consistency<T: Real>(example: &Example4<T>, horizon: T, dt: T, n_paths: usize, seed: u64) -> Result<MertonCheck> {
    if n_paths == 0 {
        return Err(invalid("n_paths must be positive"));
    }
    let grid = TimeGrid::with_step(horizon, dt)?;
    let p = example.params();
    let model = example.model();
    let (g, b, k) = (p.gamma, example.b(), example.k());
    let gm1 = g - T::one();
    let control = [example.u_hat(), example.lambda_hat()];
    let vol = (p.mu - p.rho) / p.sigma;
    let p0 = (example.lambda_hat() * p.x0).powf(gm1) * (-p.delta * p.s).exp();
    let h = grid.dt();
    let per_path: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut noise = NoiseStream::new(model, h, seed, path);
            let mut stepper = EulerStepper::new(model);
            let mut step = StepNoise::default();
            let mut x = vec![p.x0];
            let mut adj = p0;
            let (mut sq, mut worst) = (0.0_f64, 0.0_f64);
            for j in 0..grid.n_steps() {
                let t = grid.time(j);
                noise.next(&mut step);
                stepper.step(t, h, &mut x, &control, &step);
                adj = adj - p.rho * adj * h - vol * adj * step.db[0];
                let ratio = adj.powf(T::one() / gm1) / (x[0] * (b * grid.time(j + 1)).exp());
                let dev = (ratio / k - T::one()).to_f64_lossy();
                sq += dev * dev;
                worst = worst.max(dev.abs());
            }
            (sq, worst)
        })
        .collect();
    let total: f64 = per_path.iter().map(|(s, _)| s).sum();
    let worst = per_path.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    let count = (n_paths * grid.n_steps()) as f64;
    Ok(MertonCheck {
        u_hat: example.u_hat().to_f64_lossy(),
        lambda_hat: example.lambda_hat().to_f64_lossy(),
        b: b.to_f64_lossy(),
        k: k.to_f64_lossy(),
        rms_relative_deviation: (total / count).sqrt(),
        max_relative_deviation: worst,
        n_paths,
        n_steps: grid.n_steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Example4<f64> {
        Example4::new(ExampleParams::merton()).unwrap()
    }

    #[test]
    fn closed_form_constants() {
        let ex = defaults();
        assert!((ex.u_hat() - 2.0).abs() < 1e-12);
        assert!((ex.lambda_hat() - 0.13).abs() < 1e-12);
        assert!((ex.b() - 0.2).abs() < 1e-12);
        // delta - kappa equals lambda_hat at the optimum
        assert!((0.1 - ex.kappa(2.0, 0.13) - 0.13).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        for g in [1.0, 1.5, 0.0] {
            let p = ExampleParams { gamma: g, ..ExampleParams::merton() };
            assert!(matches!(Example4::<f64>::new(p), Err(Error::InvalidArgument(_))));
        }
        let p = ExampleParams {
            delta: 0.0,
            ..ExampleParams::merton()
        };
        assert!(matches!(Example4::<f64>::new(p), Err(Error::IllPosed(_))));
    }

    #[test]
    fn performance_is_maximal_at_the_optimum() {
        let ex = defaults();
        let j = |u: f64, l: f64| ex.performance(&[u, l], None).unwrap();
        let best = j(2.0, 0.13);
        for (du, dl) in [(0.05, 0.0), (-0.05, 0.0), (0.0, 0.005), (0.0, -0.005)] {
            assert!(best > j(2.0 + du, 0.13 + dl));
        }
    }

    #[test]
    fn short_merton_run() {
        let c = merton_consistency(&defaults(), 1.0, 1e-3, 200, 3).unwrap();
        assert!(c.rms_relative_deviation < 0.01, "{c:?}");
    }
}
