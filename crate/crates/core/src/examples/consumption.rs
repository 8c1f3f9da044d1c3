//! Log-utility consumption problems `J(u) = E int e^{-rho t} ln(u X) dt`.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::hamiltonian::{AdjointTriple, ProbeBox};
use crate::model::{
    ControlPolicy, ControlSet, Dynamics, InformationFlow, InitialState, JumpDiffusionModel, JumpMeasure, MarkDistribution, PolicyMap,
};
use crate::performance::{Envelope, FnReward};
use crate::scalar::Real;
use crate::simulate::PathBundle;

use super::{adjoint_along, discounted_affine, ControlExample, ExampleParams};

fn nonnegative_controls<T: Real>() -> ControlSet<T> {
    ControlSet::new(vec![T::zero()], vec![T::infinity()]).expect("valid bounds")
}

/// Envelope of `e^{-r t} |ln(u X_t)|` when `ln X_t` has drift `drift`,
/// volatility `vol` and an extra `jump_abs * t` of expected absolute jumps.
fn log_envelope<T: Real>(u: T, x0: T, drift: T, vol: T, jump_abs: T, rate: T) -> Envelope<T> {
    let scale = u.ln().abs() + x0.ln().abs() + vol * T::half();
    let linear = drift.abs() + vol * T::half() + jump_abs;
    Envelope {
        scale,
        rate,
        slope: if scale > T::zero() { linear / scale } else { T::zero() },
    }
}

fn log_reward<T: Real>(rho: T) -> FnReward<T> {
    FnReward::new(move |t: T, x: &[T], u: &[T]| (-rho * t).exp() * (u[0] * x[0]).ln()).with_gradient(move |t, x, u, gx, gu| {
        let e = (-rho * t).exp();
        gx[0] = e / x[0];
        gu[0] = e / u[0];
    })
}

fn log_probe_box<T: Real>(p: &ExampleParams<T>, u_lower: T, u_upper: T) -> ProbeBox<T> {
    ProbeBox {
        t_max: T::lit(20.0),
        x_lower: vec![p.x0 * T::half()],
        x_upper: vec![p.x0 * T::two()],
        u_lower: vec![u_lower],
        u_upper: vec![u_upper],
        adjoint_scale: T::lit(10.0),
    }
}

struct Dynamics1<T> {
    mu: T,
    sigma: T,
}

impl<T: Real> Dynamics<T> for Dynamics1<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * (self.mu - u[0]);
    }
    fn diffusion(&self, _t: T, x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = x[0] * self.sigma;
    }
    fn drift_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.mu - u[0];
        du[0] = -x[0];
        true
    }
    fn diffusion_jacobian(&self, _t: T, _x: &[T], _u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.sigma;
        du[0] = T::zero();
        true
    }
}

/// `dX = X (mu - u) dt + X sigma dB`, optimal consumption rate `u = rho`.
#[derive(Clone, Debug)]
pub struct Example1<T: Real> {
    params: ExampleParams<T>,
    model: JumpDiffusionModel<T>,
}

impl<T: Real> Example1<T> {
    pub fn new(params: ExampleParams<T>) -> Result<Self> {
        params.check_common()?;
        if params.rho == T::zero() {
            return Err(invalid("rho = 0 leaves the optimal control undefined"));
        }
        let dynamics = Dynamics1 {
            mu: params.mu,
            sigma: params.sigma,
        };
        let model = JumpDiffusionModel::new(Arc::new(dynamics), JumpMeasure::none(), vec![params.x0])?;
        Ok(Self { params, model })
    }

    /// `p(0) = 1 / (rho x0)`.
    pub fn p0(&self) -> T {
        T::one() / (self.params.rho * self.params.x0)
    }
}

impl<T: Real> ControlExample<T> for Example1<T> {
    fn id(&self) -> u8 {
        1
    }

    fn params(&self) -> &ExampleParams<T> {
        &self.params
    }

    fn model(&self) -> &JumpDiffusionModel<T> {
        &self.model
    }

    fn control_set(&self) -> ControlSet<T> {
        nonnegative_controls()
    }

    fn optimal_policy(&self) -> Result<ControlPolicy<T>> {
        self.constant_policy(&[self.params.rho])
    }

    fn optimal_control(&self) -> Option<Vec<T>> {
        Some(vec![self.params.rho])
    }

    fn reward(&self, control: Option<&[T]>) -> FnReward<T> {
        let p = &self.params;
        let r = log_reward(p.rho);
        match control {
            Some(u) => {
                let drift = p.mu - u[0] - p.sigma * p.sigma * T::half();
                r.with_envelope(log_envelope(u[0], p.x0, drift, p.sigma, T::zero(), p.rho))
            }
            None => r,
        }
    }

    /// `p = e^{-rho t} / (rho X)`, `q = -sigma p`; valid for any control.
    fn analytic_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>> {
        let (rho, sigma) = (self.params.rho, self.params.sigma);
        adjoint_along(&self.model, bundle, |t, x, _u, p, q, _r| {
            p[0] = (-rho * t).exp() / (rho * x[0]);
            q[0] = -sigma * p[0];
        })
    }

    fn performance(&self, control: &[T], horizon: Option<T>) -> Option<T> {
        let p = &self.params;
        let u = control[0];
        let a = u.ln() + p.x0.ln();
        let b = p.mu - u - p.sigma * p.sigma * T::half();
        discounted_affine(a, b, p.rho, horizon)
    }

    fn probe_box(&self) -> ProbeBox<T> {
        let r = self.params.rho;
        log_probe_box(&self.params, r * T::half(), r * T::lit(3.0))
    }
}

struct Dynamics2<T> {
    mu: T,
    sigma: T,
}

impl<T: Real> Dynamics<T> for Dynamics2<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * self.mu * (T::one() - u[0]);
    }
    fn diffusion(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * self.sigma * (T::one() - u[0]);
    }
    fn drift_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.mu * (T::one() - u[0]);
        du[0] = -x[0] * self.mu;
        true
    }
    fn diffusion_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx[0] = self.sigma * (T::one() - u[0]);
        du[0] = -x[0] * self.sigma;
        true
    }
}

/// `dX = X mu (1 - u) dt + X sigma (1 - u) dB`.
///
/// [`stated_control`](Example2::stated_control) is `rho / (mu + sigma)`,
/// which solves the stationarity condition only with `q = sigma p`. The
/// adjoint of this model has `q = -sigma (1 - u) p`, and the stationary
/// constant control is the positive root of
/// `sigma^2 u^2 + (mu - sigma^2) u - rho = 0`, returned by
/// [`optimal_control`](ControlExample::optimal_control).
#[derive(Clone, Debug)]
pub struct Example2<T: Real> {
    params: ExampleParams<T>,
    model: JumpDiffusionModel<T>,
}

impl<T: Real> Example2<T> {
    pub fn new(params: ExampleParams<T>) -> Result<Self> {
        params.check_common()?;
        if params.mu + params.sigma == T::zero() {
            return Err(invalid("mu + sigma = 0 leaves the stated control undefined"));
        }
        if params.rho == T::zero() {
            return Err(invalid("rho = 0 leaves the adjoint undefined"));
        }
        let dynamics = Dynamics2 {
            mu: params.mu,
            sigma: params.sigma,
        };
        let model = JumpDiffusionModel::new(Arc::new(dynamics), JumpMeasure::none(), vec![params.x0])?;
        Ok(Self { params, model })
    }

    /// `rho / (mu + sigma)`.
    pub fn stated_control(&self) -> T {
        self.params.rho / (self.params.mu + self.params.sigma)
    }

    /// Positive root of `sigma^2 u^2 + (mu - sigma^2) u - rho = 0`.
    pub fn stationary_control(&self) -> T {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let b = p.mu - s2;
        let disc = (b * b + T::lit(4.0) * s2 * p.rho).sqrt();
        // stable form of (-b + disc) / (2 s2)
        if b > T::zero() {
            T::two() * p.rho / (b + disc)
        } else {
            (disc - b) / (T::two() * s2)
        }
    }

    /// Adjoint with the stated `q = sigma p`.
    pub fn stated_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>> {
        let (rho, sigma) = (self.params.rho, self.params.sigma);
        let adj = adjoint_along(&self.model, bundle, |t, x, _u, p, q, _r| {
            p[0] = (-rho * t).exp() / (rho * x[0]);
            q[0] = sigma * p[0];
        })?;
        Ok(adj.with_omitted(Vec::new(), "q = sigma p does not solve the adjoint equation of this model"))
    }
}

impl<T: Real> ControlExample<T> for Example2<T> {
    fn id(&self) -> u8 {
        2
    }

    fn params(&self) -> &ExampleParams<T> {
        &self.params
    }

    fn model(&self) -> &JumpDiffusionModel<T> {
        &self.model
    }

    fn control_set(&self) -> ControlSet<T> {
        nonnegative_controls()
    }

    fn optimal_policy(&self) -> Result<ControlPolicy<T>> {
        self.constant_policy(&[self.stationary_control()])
    }

    fn optimal_control(&self) -> Option<Vec<T>> {
        Some(vec![self.stationary_control()])
    }

    fn reward(&self, control: Option<&[T]>) -> FnReward<T> {
        let p = &self.params;
        let r = log_reward(p.rho);
        match control {
            Some(u) => {
                let c = T::one() - u[0];
                let drift = p.mu * c - p.sigma * p.sigma * c * c * T::half();
                r.with_envelope(log_envelope(u[0], p.x0, drift, p.sigma * c.abs(), T::zero(), p.rho))
            }
            None => r,
        }
    }

    /// `p = e^{-rho t} / (rho X)`, `q = -sigma (1 - u) p`; valid for any control.
    fn analytic_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>> {
        let (rho, sigma) = (self.params.rho, self.params.sigma);
        adjoint_along(&self.model, bundle, |t, x, u, p, q, _r| {
            p[0] = (-rho * t).exp() / (rho * x[0]);
            q[0] = -sigma * (T::one() - u[0]) * p[0];
        })
    }

    fn performance(&self, control: &[T], horizon: Option<T>) -> Option<T> {
        let p = &self.params;
        let u = control[0];
        let c = T::one() - u;
        let a = u.ln() + p.x0.ln();
        let b = p.mu * c - p.sigma * p.sigma * c * c * T::half();
        discounted_affine(a, b, p.rho, horizon)
    }

    fn probe_box(&self) -> ProbeBox<T> {
        log_probe_box(&self.params, T::lit(0.2), T::lit(2.0))
    }
}

/// State `(X, rho)`: the discount rate rides along as a constant state so
/// that a random rate is drawn once per path.
struct Dynamics3<T> {
    mu: T,
    sigma: T,
    theta: T,
}

impl<T: Real> Dynamics<T> for Dynamics3<T> {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        out[0] = x[0] * (self.mu - u[0]);
        out[1] = T::zero();
    }
    fn diffusion(&self, _t: T, x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = x[0] * self.sigma;
        out[1] = T::zero();
    }
    fn jump(&self, _t: T, x: &[T], _u: &[T], _component: usize, mark: T, out: &mut [T]) {
        out[0] = x[0] * self.theta * mark;
        out[1] = T::zero();
    }
    fn drift_jacobian(&self, _t: T, x: &[T], u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx.fill(T::zero());
        dx[0] = self.mu - u[0];
        du[0] = -x[0];
        du[1] = T::zero();
        true
    }
    fn diffusion_jacobian(&self, _t: T, _x: &[T], _u: &[T], dx: &mut [T], du: &mut [T]) -> bool {
        dx.fill(T::zero());
        dx[0] = self.sigma;
        du.fill(T::zero());
        true
    }
    fn jump_jacobian(&self, _t: T, _x: &[T], _u: &[T], _component: usize, mark: T, dx: &mut [T], du: &mut [T]) -> bool {
        dx.fill(T::zero());
        dx[0] = self.theta * mark;
        du.fill(T::zero());
        true
    }
}

/// Consumption with jumps `X theta z Ntilde(dz, dt)`, a possibly random
/// discount rate and partial information. The stated optimal control is
/// `E[rho | E_t]`.
#[derive(Clone, Debug)]
pub struct Example3<T: Real> {
    params: ExampleParams<T>,
    flow: InformationFlow<T>,
    model: JumpDiffusionModel<T>,
    rho_mean: T,
    rho_min: T,
}

impl<T: Real> Example3<T> {
    pub fn new(params: ExampleParams<T>, flow: InformationFlow<T>) -> Result<Self> {
        params.check_common()?;
        flow.validate()?;
        let (atoms, probs) = if params.rho_atoms.is_empty() {
            (vec![params.rho], vec![T::one()])
        } else {
            (params.rho_atoms.clone(), params.rho_probabilities.clone())
        };
        if atoms.iter().any(|r| !(*r > T::zero() && r.is_finite())) {
            return Err(invalid("discount rates must be positive"));
        }
        if atoms.len() != probs.len() {
            return Err(invalid("rho atoms and probabilities differ in length"));
        }
        for z in &params.jump_marks {
            if !(T::one() + params.theta * *z > T::zero()) {
                return Err(invalid(format!("mark {z} makes 1 + theta z <= 0")));
            }
        }
        let jumps = if params.jump_intensity > T::zero() {
            JumpMeasure::new(vec![MarkDistribution::from_probabilities(
                params.jump_intensity,
                params.jump_marks.clone(),
                params.jump_probabilities.clone(),
            )?])
        } else {
            JumpMeasure::none()
        };
        let initial = if atoms.len() == 1 {
            InitialState::Fixed(vec![params.x0, atoms[0]])
        } else {
            InitialState::Discrete {
                atoms: atoms.iter().map(|r| vec![params.x0, *r]).collect(),
                probabilities: probs.clone(),
            }
        };
        let dynamics = Dynamics3 {
            mu: params.mu,
            sigma: params.sigma,
            theta: params.theta,
        };
        let model = JumpDiffusionModel::with_initial(Arc::new(dynamics), jumps, initial)?;
        let rho_mean = atoms.iter().zip(&probs).map(|(a, p)| *a * *p).sum();
        let rho_min = atoms.iter().copied().fold(T::infinity(), T::min);
        Ok(Self {
            params,
            flow,
            model,
            rho_mean,
            rho_min,
        })
    }

    pub fn flow(&self) -> InformationFlow<T> {
        self.flow
    }

    pub fn rho_mean(&self) -> T {
        self.rho_mean
    }

    /// `E[rho | E_t]` given the observed state, `E[rho]` without one.
    pub fn stated_control(&self, observation: Option<&[T]>) -> T {
        observation.map_or(self.rho_mean, |o| o[1])
    }

    fn rho_law(&self) -> Vec<(T, T)> {
        if self.params.rho_atoms.is_empty() {
            vec![(self.params.rho, T::one())]
        } else {
            self.params.rho_atoms.iter().copied().zip(self.params.rho_probabilities.iter().copied()).collect()
        }
    }

    /// `sum_f w_f (ln(1 + theta z_f) - theta z_f)`, the jump part of the drift of `ln X`.
    fn jump_log_drift(&self) -> T {
        self.model
            .jumps()
            .nodes()
            .map(|n| n.weight * ((T::one() + self.params.theta * n.mark).ln() - self.params.theta * n.mark))
            .sum()
    }
}

impl<T: Real> ControlExample<T> for Example3<T> {
    fn id(&self) -> u8 {
        3
    }

    fn params(&self) -> &ExampleParams<T> {
        &self.params
    }

    fn model(&self) -> &JumpDiffusionModel<T> {
        &self.model
    }

    fn control_set(&self) -> ControlSet<T> {
        nonnegative_controls()
    }

    fn optimal_policy(&self) -> Result<ControlPolicy<T>> {
        let mean = self.rho_mean;
        let map: PolicyMap<T> = Arc::new(move |_, obs: Option<&[T]>, out: &mut [T]| out[0] = obs.map_or(mean, |o| o[1]));
        ControlPolicy::new(self.flow, self.control_set(), map)
    }

    fn optimal_control(&self) -> Option<Vec<T>> {
        let deterministic = self.rho_law().len() == 1;
        (deterministic || self.flow == InformationFlow::Trivial).then(|| vec![self.rho_mean])
    }

    fn reward(&self, control: Option<&[T]>) -> FnReward<T> {
        let r = FnReward::new(|t: T, x: &[T], u: &[T]| (-x[1] * t).exp() * (u[0] * x[0]).ln()).with_gradient(|t, x, u, gx, gu| {
            let e = (-x[1] * t).exp();
            gx[0] = e / x[0];
            gx[1] = -t * e * (u[0] * x[0]).ln();
            gu[0] = e / u[0];
        });
        match control {
            Some(u) => {
                let p = &self.params;
                let jump_abs: T = self
                    .model
                    .jumps()
                    .nodes()
                    .map(|n| n.weight * ((T::one() + p.theta * n.mark).ln().abs() + (p.theta * n.mark).abs()))
                    .sum();
                let drift = p.mu - u[0] - p.sigma * p.sigma * T::half();
                r.with_envelope(log_envelope(u[0], p.x0, drift, p.sigma, jump_abs, self.rho_min))
            }
            None => r,
        }
    }

    /// `p_X = e^{-rho t} / (rho X)`, `q_X = -sigma p_X`,
    /// `r_X(z) = -p_X theta z / (1 + theta z)`. The adjoint of the `rho`
    /// component has no closed form and is stored as zero.
    fn analytic_adjoint(&self, bundle: &PathBundle<T>) -> Result<AdjointTriple<T>> {
        let (sigma, theta) = (self.params.sigma, self.params.theta);
        let marks: Vec<T> = self.model.jumps().nodes().map(|n| n.mark).collect();
        let m = marks.len();
        let adj = adjoint_along(&self.model, bundle, |t, x, _u, p, q, r| {
            let rho = x[1];
            p[0] = (-rho * t).exp() / (rho * x[0]);
            p[1] = T::zero();
            q[0] = -sigma * p[0];
            q[1] = T::zero();
            for (f, z) in marks.iter().enumerate() {
                r[f] = -p[0] * theta * *z / (T::one() + theta * *z);
                r[m + f] = T::zero();
            }
        })?;
        Ok(adj.with_omitted(vec![1], "adjoint of the discount-rate state is not computed"))
    }

    fn performance(&self, control: &[T], horizon: Option<T>) -> Option<T> {
        let p = &self.params;
        let u = control[0];
        let a = u.ln() + p.x0.ln();
        let b = p.mu - u - p.sigma * p.sigma * T::half() + self.jump_log_drift();
        let mut total = T::zero();
        for (rho, prob) in self.rho_law() {
            total = total + prob * discounted_affine(a, b, rho, horizon)?;
        }
        Some(total)
    }

    fn probe_box(&self) -> ProbeBox<T> {
        let p = &self.params;
        let (lo, hi) = self.rho_law().iter().fold((T::infinity(), T::neg_infinity()), |(l, h), (r, _)| (l.min(*r), h.max(*r)));
        ProbeBox {
            t_max: T::lit(20.0),
            x_lower: vec![p.x0 * T::half(), lo],
            x_upper: vec![p.x0 * T::two(), hi],
            u_lower: vec![lo * T::half()],
            u_upper: vec![hi * T::lit(3.0)],
            adjoint_scale: T::lit(10.0),
        }
    }
}
