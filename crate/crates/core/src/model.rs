//! Controlled jump-diffusion model, information flows and feedback policies.
//!
//! State dynamics
//!
//! ```text
//! dX = b(t, X, u) dt + sigma(t, X, u) dB + sum_j int theta_.j(t, X, u, z) Ntilde_j(dz, dt)
//! ```
//!
//! with finite-activity jump measures given by discrete mark distributions.
//! Coefficients are assumed Lipschitz in `x`; nothing here checks it.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::scalar::Real;

/// Coefficients `b`, `sigma`, `theta` of a controlled jump diffusion.
///
/// Matrices are row-major. `diffusion` fills an `n x d` matrix where `d` is
/// [`noise_dim`](Dynamics::noise_dim); `jump` fills column `component` of
/// `theta`, i.e. the state change caused by one jump of that component.
///
/// The Jacobian methods return `false` when the model does not provide
/// analytic derivatives; callers then fall back to finite differences.
pub trait Dynamics<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    fn drift(&self, t: T, x: &[T], u: &[T], out: &mut [T]);

    fn diffusion(&self, t: T, x: &[T], u: &[T], out: &mut [T]);

    fn jump(&self, _t: T, _x: &[T], _u: &[T], _component: usize, _mark: T, out: &mut [T]) {
        out.fill(T::zero());
    }

    /// `dx[i * n + l] = d b_i / d x_l`, `du[i * k + c] = d b_i / d u_c`.
    fn drift_jacobian(&self, _t: T, _x: &[T], _u: &[T], _dx: &mut [T], _du: &mut [T]) -> bool {
        false
    }

    /// `dx[(i * d + j) * n + l] = d sigma_ij / d x_l`, same layout with `k` for `du`.
    fn diffusion_jacobian(&self, _t: T, _x: &[T], _u: &[T], _dx: &mut [T], _du: &mut [T]) -> bool {
        false
    }

    /// Jacobian of the jump column: `dx[i * n + l] = d theta_ij / d x_l` for `j = component`.
    #[allow(clippy::too_many_arguments)]
    fn jump_jacobian(
        &self,
        _t: T,
        _x: &[T],
        _u: &[T],
        _component: usize,
        _mark: T,
        _dx: &mut [T],
        _du: &mut [T],
    ) -> bool {
        false
    }
}

/// Discrete mark distribution of one compound-Poisson component.
///
/// `weights[m]` is the intensity of jumps with mark `marks[m]`, so the
/// weights sum to the component intensity and integrals against the
/// Lévy measure are exact finite sums.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkDistribution<T> {
    marks: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> MarkDistribution<T> {
    pub fn new(marks: Vec<T>, weights: Vec<T>) -> Result<Self> {
        check_dim("mark weights", marks.len(), weights.len())?;
        if marks.is_empty() {
            return Err(invalid("mark distribution needs at least one mark"));
        }
        if marks.iter().any(|z| !z.is_finite()) {
            return Err(invalid("marks must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(invalid("mark weights must be finite and non-negative"));
        }
        Ok(Self { marks, weights })
    }

    /// Intensity `intensity` split over `marks` with the given probabilities.
    pub fn from_probabilities(intensity: T, marks: Vec<T>, probabilities: Vec<T>) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= T::zero()) {
            return Err(invalid(format!("jump intensity must be finite and >= 0, got {intensity}")));
        }
        let total: T = probabilities.iter().copied().sum();
        if probabilities.iter().any(|p| *p < T::zero()) || (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(8.0)) {
            return Err(invalid("mark probabilities must be non-negative and sum to one"));
        }
        let weights = probabilities.into_iter().map(|p| p * intensity).collect();
        Self::new(marks, weights)
    }

    pub fn intensity(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn marks(&self) -> &[T] {
        &self.marks
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }
}

/// Independent compound-Poisson components; marks are addressed by a flat
/// index running over all components.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct JumpMeasure<T> {
    components: Vec<MarkDistribution<T>>,
    offsets: Vec<usize>,
}

/// One quadrature node of the jump measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkNode<T> {
    pub component: usize,
    pub mark: T,
    pub weight: T,
}

impl<T: Real> JumpMeasure<T> {
    pub fn none() -> Self {
        Self {
            components: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn new(components: Vec<MarkDistribution<T>>) -> Self {
        let mut offsets = Vec::with_capacity(components.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for c in &components {
            acc += c.len();
            offsets.push(acc);
        }
        Self { components, offsets }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, j: usize) -> &MarkDistribution<T> {
        &self.components[j]
    }

    pub fn components(&self) -> &[MarkDistribution<T>] {
        &self.components
    }

    /// Total number of quadrature marks over all components.
    pub fn n_marks(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn flat_index(&self, component: usize, m: usize) -> usize {
        self.offsets[component] + m
    }

    pub fn node(&self, flat: usize) -> MarkNode<T> {
        let j = self.offsets.partition_point(|&o| o <= flat) - 1;
        let m = flat - self.offsets[j];
        MarkNode {
            component: j,
            mark: self.components[j].marks[m],
            weight: self.components[j].weights[m],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = MarkNode<T>> + '_ {
        (0..self.n_marks()).map(move |f| self.node(f))
    }

    /// Weights of all marks in flat order.
    pub fn weights(&self) -> Vec<T> {
        self.components.iter().flat_map(|c| c.weights.iter().copied()).collect()
    }

    pub fn total_intensity(&self) -> T {
        self.components.iter().map(|c| c.intensity()).sum()
    }
}

/// Initial condition; random initial states are drawn once per path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum InitialState<T> {
    Fixed(Vec<T>),
    /// Finitely many atoms with probabilities.
    Discrete { atoms: Vec<Vec<T>>, probabilities: Vec<T> },
}

impl<T: Real> InitialState<T> {
    fn dim(&self) -> Option<usize> {
        match self {
            Self::Fixed(x) => Some(x.len()),
            Self::Discrete { atoms, .. } => {
                let d = atoms.first()?.len();
                atoms.iter().all(|a| a.len() == d).then_some(d)
            }
        }
    }

    /// Expected initial state.
    pub fn mean(&self) -> Vec<T> {
        match self {
            Self::Fixed(x) => x.clone(),
            Self::Discrete { atoms, probabilities } => {
                let mut m = vec![T::zero(); atoms[0].len()];
                for (a, p) in atoms.iter().zip(probabilities) {
                    for (mi, ai) in m.iter_mut().zip(a) {
                        *mi = *mi + *p * *ai;
                    }
                }
                m
            }
        }
    }
}

/// A controlled jump diffusion: coefficients, jump measure and initial state.
#[derive(Clone)]
pub struct JumpDiffusionModel<T: Real> {
    dynamics: Arc<dyn Dynamics<T>>,
    jumps: JumpMeasure<T>,
    initial: InitialState<T>,
}

impl<T: Real> fmt::Debug for JumpDiffusionModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpDiffusionModel")
            .field("state_dim", &self.state_dim())
            .field("control_dim", &self.control_dim())
            .field("noise_dim", &self.noise_dim())
            .field("jumps", &self.jumps)
            .field("initial", &self.initial)
            .finish()
    }
}

impl<T: Real> JumpDiffusionModel<T> {
    pub fn new(dynamics: Arc<dyn Dynamics<T>>, jumps: JumpMeasure<T>, x0: Vec<T>) -> Result<Self> {
        Self::with_initial(dynamics, jumps, InitialState::Fixed(x0))
    }

    pub fn with_initial(
        dynamics: Arc<dyn Dynamics<T>>,
        jumps: JumpMeasure<T>,
        initial: InitialState<T>,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        if n == 0 {
            return Err(invalid("state dimension must be positive"));
        }
        match initial.dim() {
            Some(d) => check_dim("initial state", n, d)?,
            None => return Err(invalid("initial state atoms are empty or ragged")),
        }
        if let InitialState::Discrete { atoms, probabilities } = &initial {
            check_dim("initial state probabilities", atoms.len(), probabilities.len())?;
            let total: T = probabilities.iter().copied().sum();
            if probabilities.iter().any(|p| *p < T::zero()) || (total - T::one()).abs() > T::lit(1e-6) {
                return Err(invalid("initial state probabilities must sum to one"));
            }
        }
        let x_ok = match &initial {
            InitialState::Fixed(x) => x.iter().all(|v| v.is_finite()),
            InitialState::Discrete { atoms, .. } => atoms.iter().flatten().all(|v| v.is_finite()),
        };
        if !x_ok {
            return Err(invalid("initial state must be finite"));
        }
        Ok(Self {
            dynamics,
            jumps,
            initial,
        })
    }

    pub fn dynamics(&self) -> &dyn Dynamics<T> {
        self.dynamics.as_ref()
    }

    pub fn jumps(&self) -> &JumpMeasure<T> {
        &self.jumps
    }

    pub fn initial(&self) -> &InitialState<T> {
        &self.initial
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.dynamics.noise_dim()
    }

    pub fn n_marks(&self) -> usize {
        self.jumps.n_marks()
    }

    /// Coefficient Jacobians at `(t, x, u)`, analytic when the dynamics
    /// provide them, central differences otherwise.
    pub fn jacobians(&self, t: T, x: &[T], u: &[T]) -> CoefficientJacobians<T> {
        CoefficientJacobians::evaluate(self, t, x, u)
    }
}

/// All first derivatives of `b`, `sigma` and `theta` at one point.
///
/// `jump_dx[f]` / `jump_du[f]` hold the Jacobian of the jump column at flat
/// mark `f`.
#[derive(Clone, Debug)]
pub struct CoefficientJacobians<T> {
    pub drift_dx: Vec<T>,
    pub drift_du: Vec<T>,
    pub diffusion_dx: Vec<T>,
    pub diffusion_du: Vec<T>,
    pub jump_dx: Vec<Vec<T>>,
    pub jump_du: Vec<Vec<T>>,
}

impl<T: Real> CoefficientJacobians<T> {
    fn evaluate(model: &JumpDiffusionModel<T>, t: T, x: &[T], u: &[T]) -> Self {
        let dynamics = model.dynamics();
        let (n, k, d) = (model.state_dim(), model.control_dim(), model.noise_dim());
        let mut jac = Self {
            drift_dx: vec![T::zero(); n * n],
            drift_du: vec![T::zero(); n * k],
            diffusion_dx: vec![T::zero(); n * d * n],
            diffusion_du: vec![T::zero(); n * d * k],
            jump_dx: Vec::with_capacity(model.n_marks()),
            jump_du: Vec::with_capacity(model.n_marks()),
        };
        if !dynamics.drift_jacobian(t, x, u, &mut jac.drift_dx, &mut jac.drift_du) {
            fd_jacobian(n, x, u, |xx, uu, out| dynamics.drift(t, xx, uu, out), &mut jac.drift_dx, &mut jac.drift_du);
        }
        if !dynamics.diffusion_jacobian(t, x, u, &mut jac.diffusion_dx, &mut jac.diffusion_du) {
            fd_jacobian(
                n * d,
                x,
                u,
                |xx, uu, out| dynamics.diffusion(t, xx, uu, out),
                &mut jac.diffusion_dx,
                &mut jac.diffusion_du,
            );
        }
        for node in model.jumps().nodes() {
            let mut dx = vec![T::zero(); n * n];
            let mut du = vec![T::zero(); n * k];
            if !dynamics.jump_jacobian(t, x, u, node.component, node.mark, &mut dx, &mut du) {
                fd_jacobian(
                    n,
                    x,
                    u,
                    |xx, uu, out| dynamics.jump(t, xx, uu, node.component, node.mark, out),
                    &mut dx,
                    &mut du,
                );
            }
            jac.jump_dx.push(dx);
            jac.jump_du.push(du);
        }
        jac
    }
}

/// Central step for coordinate value `v`.
#[inline]
pub(crate) fn fd_step<T: Real>(base: T, v: T) -> T {
    base.max(base * v.abs())
}

/// Central-difference Jacobian of a vector map `(x, u) -> out` with `m` outputs.
pub(crate) fn fd_jacobian<T: Real>(
    m: usize,
    x: &[T],
    u: &[T],
    mut f: impl FnMut(&[T], &[T], &mut [T]),
    dx: &mut [T],
    du: &mut [T],
) {
    let (n, k) = (x.len(), u.len());
    let base = T::lit(T::FD_STEP);
    let mut xp = x.to_vec();
    let mut up = u.to_vec();
    let mut plus = vec![T::zero(); m];
    let mut minus = vec![T::zero(); m];
    for l in 0..n {
        let h = fd_step(base, x[l]);
        xp[l] = x[l] + h;
        f(&xp, u, &mut plus);
        xp[l] = x[l] - h;
        f(&xp, u, &mut minus);
        xp[l] = x[l];
        for i in 0..m {
            dx[i * n + l] = (plus[i] - minus[i]) / (T::two() * h);
        }
    }
    for c in 0..k {
        let h = fd_step(base, u[c]);
        up[c] = u[c] + h;
        f(x, &up, &mut plus);
        up[c] = u[c] - h;
        f(x, &up, &mut minus);
        up[c] = u[c];
        for i in 0..m {
            du[i * k + c] = (plus[i] - minus[i]) / (T::two() * h);
        }
    }
}

/// Information available to the controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum InformationFlow<T> {
    /// The full state filtration.
    Full,
    /// No information: controls are deterministic functions of time.
    Trivial,
    /// The state observed with a lag `d >= 0`.
    Delayed(T),
}

impl<T: Real> InformationFlow<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Delayed(d) if !(d.is_finite() && *d >= T::zero()) => {
                Err(invalid(format!("delay must be finite and >= 0, got {d}")))
            }
            _ => Ok(()),
        }
    }

    /// Lag in steps of size `dt`; `None` for the trivial flow.
    pub fn lag_steps(&self, dt: T) -> Option<usize> {
        match self {
            Self::Full => Some(0),
            Self::Trivial => None,
            Self::Delayed(d) => (*d / dt).round().to_usize(),
        }
    }

    /// Index of the state visible at step `k`, or `None` when nothing is.
    pub fn observed_index(&self, k: usize, dt: T) -> Option<usize> {
        let lag = self.lag_steps(dt)?;
        k.checked_sub(lag)
    }

    /// State visible at step `k` of a path whose history is `history`
    /// (`dim` values per step).
    pub fn observe<'h>(&self, k: usize, dt: T, history: &'h [T], dim: usize) -> Option<&'h [T]> {
        let j = self.observed_index(k, dt)?;
        history.get(j * dim..(j + 1) * dim)
    }
}

/// Box-shaped admissible control set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlSet<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> ControlSet<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        check_dim("control bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(invalid("control bounds must satisfy lower <= upper"));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![T::neg_infinity(); dim],
            upper: vec![T::infinity(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Clamps `u` in place; returns whether any component moved.
    pub fn clamp(&self, u: &mut [T]) -> bool {
        let mut moved = false;
        for (v, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            if *v < *l {
                *v = *l;
                moved = true;
            } else if *v > *h {
                *v = *h;
                moved = true;
            }
        }
        moved
    }
}

/// Feedback map `(t, observation) -> u`; the observation is `None` when the
/// information flow reveals nothing at time `t`.
pub type PolicyMap<T> = Arc<dyn Fn(T, Option<&[T]>, &mut [T]) + Send + Sync>;

/// A control policy measurable with respect to an [`InformationFlow`].
#[derive(Clone)]
pub struct ControlPolicy<T: Real> {
    flow: InformationFlow<T>,
    set: ControlSet<T>,
    map: PolicyMap<T>,
}

impl<T: Real> fmt::Debug for ControlPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlPolicy")
            .field("flow", &self.flow)
            .field("set", &self.set)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ControlPolicy<T> {
    pub fn new(flow: InformationFlow<T>, set: ControlSet<T>, map: PolicyMap<T>) -> Result<Self> {
        flow.validate()?;
        Ok(Self { flow, set, map })
    }

    /// Constant control; measurable under every flow.
    pub fn constant(value: Vec<T>, set: ControlSet<T>) -> Result<Self> {
        check_dim("constant control", set.dim(), value.len())?;
        if !set.contains(&value) {
            return Err(invalid("constant control lies outside the admissible set"));
        }
        let map: PolicyMap<T> = Arc::new(move |_, _, out: &mut [T]| out.copy_from_slice(&value));
        Self::new(InformationFlow::Trivial, set, map)
    }

    pub fn flow(&self) -> InformationFlow<T> {
        self.flow
    }

    pub fn control_set(&self) -> &ControlSet<T> {
        &self.set
    }

    pub fn control_dim(&self) -> usize {
        self.set.dim()
    }

    /// Evaluates and clamps the control; returns whether clamping happened.
    pub fn evaluate(&self, t: T, observation: Option<&[T]>, out: &mut [T]) -> bool {
        (self.map)(t, observation, out);
        self.set.clamp(out)
    }

    /// Control at step `k` of a path with the given state history.
    pub fn control_at(&self, k: usize, t: T, dt: T, history: &[T], dim: usize, out: &mut [T]) -> bool {
        let obs = self.flow.observe(k, dt, history, dim);
        self.evaluate(t, obs, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear;

    impl Dynamics<f64> for Linear {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * x[0] + x[1] * u[0];
            out[1] = x[0] * x[0];
        }
        fn diffusion(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out.fill(0.0);
            out[0] = x[1];
            out[3] = 1.0;
        }
    }

    #[test]
    fn fd_jacobians_of_polynomial_drift() {
        let model = JumpDiffusionModel::new(Arc::new(Linear), JumpMeasure::none(), vec![1.0, 2.0]).unwrap();
        let jac = model.jacobians(0.0, &[1.5, -0.5], &[3.0]);
        let expect_dx = [2.0, 3.0, 3.0, 0.0];
        for (a, b) in jac.drift_dx.iter().zip(expect_dx) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((jac.drift_du[0] + 0.5).abs() < 1e-8);
        // d sigma_00 / d x_1 = 1
        assert!((jac.diffusion_dx[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mark_distribution_weights() {
        let md = MarkDistribution::from_probabilities(2.0_f64, vec![-0.5, 0.5], vec![0.25, 0.75]).unwrap();
        assert_eq!(md.weights(), &[0.5, 1.5]);
        assert!((md.intensity() - 2.0).abs() < 1e-15);
        assert!(MarkDistribution::from_probabilities(1.0_f64, vec![0.0], vec![0.5]).is_err());
        assert!(MarkDistribution::new(vec![1.0_f64], vec![-1.0]).is_err());
    }

    #[test]
    fn flat_mark_indexing() {
        let a = MarkDistribution::new(vec![1.0_f64, 2.0], vec![0.1, 0.2]).unwrap();
        let b = MarkDistribution::new(vec![3.0_f64], vec![0.3]).unwrap();
        let jm = JumpMeasure::new(vec![a, b]);
        assert_eq!(jm.n_marks(), 3);
        let node = jm.node(2);
        assert_eq!((node.component, node.mark, node.weight), (1, 3.0, 0.3));
        assert_eq!(jm.flat_index(1, 0), 2);
        assert_eq!(jm.weights(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn delayed_zero_is_full() {
        let hist = [1.0_f64, 2.0, 3.0, 4.0];
        let full = InformationFlow::Full.observe(3, 0.1, &hist, 1);
        let d0 = InformationFlow::Delayed(0.0).observe(3, 0.1, &hist, 1);
        assert_eq!(full, d0);
        assert_eq!(InformationFlow::Delayed(0.2).observe(3, 0.1, &hist, 1), Some(&hist[1..2]));
        assert_eq!(InformationFlow::Delayed(0.5).observe(3, 0.1, &hist, 1), None);
        assert_eq!(InformationFlow::<f64>::Trivial.observe(3, 0.1, &hist, 1), None);
        assert!(InformationFlow::Delayed(-1.0_f64).validate().is_err());
    }

    #[test]
    fn delayed_policy_ignores_recent_path() {
        // Path surgery: histories agree up to step k - lag and differ afterwards.
        let set = ControlSet::unbounded(1);
        let map: PolicyMap<f64> = Arc::new(|_, obs, out| out[0] = obs.map_or(-1.0, |x| x[0]));
        let policy = ControlPolicy::new(InformationFlow::Delayed(0.3), set, map).unwrap();
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut b = a.clone();
        for v in b.iter_mut().skip(5) {
            *v = 100.0;
        }
        for k in 0..8 {
            let (mut ua, mut ub) = ([0.0], [0.0]);
            policy.control_at(k, k as f64 * 0.1, 0.1, &a, 1, &mut ua);
            policy.control_at(k, k as f64 * 0.1, 0.1, &b, 1, &mut ub);
            assert_eq!(ua, ub, "step {k}");
        }
    }

    #[test]
    fn clamping_reports_events() {
        let set = ControlSet::new(vec![0.0_f64], vec![1.0]).unwrap();
        let map: PolicyMap<f64> = Arc::new(|t, _, out| out[0] = t);
        let policy = ControlPolicy::new(InformationFlow::Trivial, set, map).unwrap();
        let mut u = [0.0];
        assert!(!policy.evaluate(0.5, None, &mut u));
        assert!(policy.evaluate(2.0, None, &mut u));
        assert_eq!(u[0], 1.0);
        assert!(ControlPolicy::constant(vec![2.0], ControlSet::new(vec![0.0], vec![1.0]).unwrap()).is_err());
    }
}
