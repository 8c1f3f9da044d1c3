//! Euler–Maruyama simulation of controlled jump diffusions.
//!
//! Every path draws its noise from its own ChaCha stream keyed by
//! `(seed, path index)`, so a bundle does not depend on how paths are
//! scheduled across threads, and two runs with the same seed but different
//! controls see identical Brownian and Poisson realisations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::model::{ControlPolicy, InitialState, JumpDiffusionModel, MarkNode};
use crate::scalar::Real;

const INITIAL_STATE_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

/// Noise of one Euler step: Brownian increments and the flat indices of
/// the marks that jumped during the step.
#[derive(Clone, Debug, Default)]
pub struct StepNoise<T> {
    pub db: Vec<T>,
    pub jumps: Vec<usize>,
}

/// Per-path generator of step noise.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    noise_dim: usize,
    components: Vec<ComponentSampler>,
}

struct ComponentSampler {
    count: Option<Poisson<f64>>,
    offset: usize,
    cumulative: Vec<f64>,
}

impl NoiseStream {
    pub fn new<T: Real>(model: &JumpDiffusionModel<T>, dt: T, seed: u64, path: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let dt = dt.to_f64_lossy();
        let jumps = model.jumps();
        let components = (0..jumps.n_components())
            .map(|j| {
                let dist = jumps.component(j);
                let intensity = dist.intensity().to_f64_lossy();
                let mut acc = 0.0;
                let cumulative = dist
                    .weights()
                    .iter()
                    .map(|w| {
                        acc += w.to_f64_lossy() / intensity;
                        acc
                    })
                    .collect();
                ComponentSampler {
                    count: (intensity > 0.0).then(|| Poisson::new(intensity * dt).expect("positive Poisson mean")),
                    offset: jumps.flat_index(j, 0),
                    cumulative,
                }
            })
            .collect();
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
            noise_dim: model.noise_dim(),
            components,
        }
    }

    pub fn next<T: Real>(&mut self, noise: &mut StepNoise<T>) {
        noise.db.resize(self.noise_dim, T::zero());
        for v in noise.db.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = T::lit(z * self.sqrt_dt);
        }
        noise.jumps.clear();
        for c in &self.components {
            let Some(count) = &c.count else { continue };
            let n = count.sample(&mut self.rng) as usize;
            for _ in 0..n {
                let v: f64 = self.rng.random();
                let m = c.cumulative.partition_point(|&p| p <= v).min(c.cumulative.len() - 1);
                noise.jumps.push(c.offset + m);
            }
        }
    }
}

/// Initial state of `path`; random initial laws use a stream separate from
/// the step noise so the driving noise does not depend on them.
pub fn initial_state<T: Real>(model: &JumpDiffusionModel<T>, seed: u64, path: usize) -> Vec<T> {
    match model.initial() {
        InitialState::Fixed(x) => x.clone(),
        InitialState::Discrete { atoms, probabilities } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INITIAL_STATE_KEY);
            rng.set_stream(path as u64);
            let v: f64 = rng.random();
            let mut acc = 0.0;
            for (a, p) in atoms.iter().zip(probabilities) {
                acc += p.to_f64_lossy();
                if v < acc {
                    return a.clone();
                }
            }
            atoms[atoms.len() - 1].clone()
        }
    }
}

/// One Euler–Maruyama step with compensated jumps.
pub struct EulerStepper<'m, T: Real> {
    model: &'m JumpDiffusionModel<T>,
    nodes: Vec<MarkNode<T>>,
    drift: Vec<T>,
    diffusion: Vec<T>,
    column: Vec<T>,
    increment: Vec<T>,
}

impl<'m, T: Real> EulerStepper<'m, T> {
    pub fn new(model: &'m JumpDiffusionModel<T>) -> Self {
        let n = model.state_dim();
        Self {
            model,
            nodes: model.jumps().nodes().collect(),
            drift: vec![T::zero(); n],
            diffusion: vec![T::zero(); n * model.noise_dim()],
            column: vec![T::zero(); n],
            increment: vec![T::zero(); n],
        }
    }

    /// Advances `x` in place over `[t, t + dt]` under control `u`.
    pub fn step(&mut self, t: T, dt: T, x: &mut [T], u: &[T], noise: &StepNoise<T>) {
        let dynamics = self.model.dynamics();
        let d = self.model.noise_dim();
        dynamics.drift(t, x, u, &mut self.drift);
        dynamics.diffusion(t, x, u, &mut self.diffusion);
        for (i, inc) in self.increment.iter_mut().enumerate() {
            let mut v = self.drift[i] * dt;
            for j in 0..d {
                v = v + self.diffusion[i * d + j] * noise.db[j];
            }
            *inc = v;
        }
        for node in &self.nodes {
            if node.weight == T::zero() {
                continue;
            }
            dynamics.jump(t, x, u, node.component, node.mark, &mut self.column);
            for (inc, c) in self.increment.iter_mut().zip(&self.column) {
                *inc = *inc - node.weight * *c * dt;
            }
        }
        for &f in &noise.jumps {
            let node = self.nodes[f];
            dynamics.jump(t, x, u, node.component, node.mark, &mut self.column);
            for (inc, c) in self.increment.iter_mut().zip(&self.column) {
                *inc = *inc + *c;
            }
        }
        for (xi, inc) in x.iter_mut().zip(&self.increment) {
            *xi = *xi + *inc;
        }
    }
}

/// Largest magnitude a state component may reach before the path is
/// declared divergent.
pub(crate) fn overflow_guard<T: Real>() -> T {
    T::max_value().sqrt()
}

pub(crate) fn is_diverged<T: Real>(x: &[T]) -> bool {
    let guard = overflow_guard::<T>();
    x.iter().any(|v| !v.is_finite() || v.abs() > guard)
}

/// A jump recorded in a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct JumpEvent {
    /// Recording interval `[t_k, t_{k+1})` containing the jump.
    pub interval: u32,
    /// Fine simulation step of the jump.
    pub step: u32,
    /// Flat mark index.
    pub mark: u32,
}

/// Simulation settings beyond the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Fine Euler steps per recorded interval.
    pub substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

/// Simulated paths recorded on a (possibly coarser) grid.
///
/// States and controls are stored at recording nodes; Brownian increments
/// and jump counts are aggregated over recording intervals.
#[derive(Clone, Debug)]
pub struct PathBundle<T: Real> {
    grid: TimeGrid<T>,
    fine_grid: TimeGrid<T>,
    substeps: usize,
    n_paths: usize,
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    mark_weights: Vec<T>,
    x: Vec<T>,
    u: Vec<T>,
    db: Vec<T>,
    jumps: Vec<Vec<JumpEvent>>,
    divergent: Vec<bool>,
    clamp_events: u64,
    seed: u64,
}

impl<T: Real> PathBundle<T> {
    /// Recording grid.
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    /// Grid of the Euler scheme.
    pub fn fine_grid(&self) -> &TimeGrid<T> {
        &self.fine_grid
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
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

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// State trajectory of one path, `state_dim` values per node.
    pub fn path(&self, path: usize) -> &[T] {
        let len = self.grid.n_nodes() * self.state_dim;
        &self.x[path * len..(path + 1) * len]
    }

    pub fn x(&self, path: usize, k: usize) -> &[T] {
        let n = self.state_dim;
        let base = (path * self.grid.n_nodes() + k) * n;
        &self.x[base..base + n]
    }

    pub fn u(&self, path: usize, k: usize) -> &[T] {
        let c = self.control_dim;
        let base = (path * self.grid.n_nodes() + k) * c;
        &self.u[base..base + c]
    }

    /// Brownian increment over recording interval `k`.
    pub fn db(&self, path: usize, k: usize) -> &[T] {
        let d = self.noise_dim;
        let base = (path * self.grid.n_steps() + k) * d;
        &self.db[base..base + d]
    }

    pub fn jumps(&self, path: usize) -> &[JumpEvent] {
        &self.jumps[path]
    }

    /// Jumps of one path in recording interval `k`.
    pub fn jumps_in(&self, path: usize, k: usize) -> &[JumpEvent] {
        let ev = &self.jumps[path];
        let lo = ev.partition_point(|e| (e.interval as usize) < k);
        let hi = ev.partition_point(|e| (e.interval as usize) <= k);
        &ev[lo..hi]
    }

    /// Compensated Poisson increments `N_m - w_m dt` per flat mark over
    /// recording interval `k`.
    pub fn compensated_increments(&self, path: usize, k: usize, out: &mut [T]) {
        let dt = self.grid.dt();
        for (o, w) in out.iter_mut().zip(&self.mark_weights) {
            *o = -*w * dt;
        }
        for e in self.jumps_in(path, k) {
            out[e.mark as usize] = out[e.mark as usize] + T::one();
        }
    }

    pub fn is_divergent(&self, path: usize) -> bool {
        self.divergent[path]
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    /// Indices of paths usable by estimators.
    pub fn valid_paths(&self) -> Vec<usize> {
        (0..self.n_paths).filter(|&p| !self.divergent[p]).collect()
    }

    /// Whether `other` was driven by the same noise on the same grid.
    pub fn shares_noise_with(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.n_paths == other.n_paths
            && self.grid == other.grid
            && self.fine_grid == other.fine_grid
            && self.noise_dim == other.noise_dim
            && self.mark_weights == other.mark_weights
    }

    /// Sample mean and standard error of the state at node `k`, per component,
    /// over non-divergent paths.
    pub fn state_moments(&self, k: usize) -> Vec<(T, T)> {
        let valid = self.valid_paths();
        (0..self.state_dim)
            .map(|i| {
                let v: Vec<T> = valid.iter().map(|&p| self.x(p, k)[i]).collect();
                crate::scalar::mean_and_std_err(&v)
            })
            .collect()
    }
}

/// Simulates `n_paths` paths on `grid`, recording every node.
pub fn simulate_paths<T: Real>(
    model: &JumpDiffusionModel<T>,
    policy: &ControlPolicy<T>,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle<T>> {
    simulate_paths_with(model, policy, grid, n_paths, seed, SimOptions::default())
}

/// Simulates on `grid` and records every `options.substeps`-th node.
pub fn simulate_paths_with<T: Real>(
    model: &JumpDiffusionModel<T>,
    policy: &ControlPolicy<T>,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
    options: SimOptions,
) -> Result<PathBundle<T>> {
    check_dim("policy control dimension", model.control_dim(), policy.control_dim())?;
    if n_paths == 0 {
        return Err(invalid("n_paths must be positive"));
    }
    if model.control_dim() == 0 || model.noise_dim() == 0 {
        return Err(invalid("control and noise dimensions must be positive"));
    }
    let s = options.substeps;
    if s == 0 || !grid.n_steps().is_multiple_of(s) {
        return Err(invalid(format!(
            "substeps {s} must divide the number of steps {}",
            grid.n_steps()
        )));
    }
    let record = TimeGrid::new(grid.horizon(), grid.n_steps() / s)?;
    let (n, k, d) = (model.state_dim(), model.control_dim(), model.noise_dim());
    let nodes = record.n_nodes();
    let intervals = record.n_steps();

    let mut x = vec![T::zero(); n_paths * nodes * n];
    let mut u = vec![T::zero(); n_paths * nodes * k];
    let mut db = vec![T::zero(); n_paths * intervals * d];

    let outcomes: Vec<(Vec<JumpEvent>, bool, u64)> = x
        .par_chunks_mut(nodes * n)
        .zip(u.par_chunks_mut(nodes * k))
        .zip(db.par_chunks_mut(intervals * d))
        .enumerate()
        .map(|(path, ((xp, up), dbp))| simulate_one(model, policy, grid, s, seed, path, xp, up, dbp))
        .collect();

    let mut jumps = Vec::with_capacity(n_paths);
    let mut divergent = Vec::with_capacity(n_paths);
    let mut clamp_events = 0;
    for (j, div, c) in outcomes {
        jumps.push(j);
        divergent.push(div);
        clamp_events += c;
    }
    let n_div = divergent.iter().filter(|v| **v).count();
    if n_div > 0 {
        log::warn!("{n_div} of {n_paths} paths diverged and are excluded from estimators");
    }
    if n_div * 1000 > n_paths {
        return Err(Error::TooManyDivergent {
            divergent: n_div,
            n_paths,
        });
    }
    Ok(PathBundle {
        grid: record,
        fine_grid: *grid,
        substeps: s,
        n_paths,
        state_dim: n,
        control_dim: k,
        noise_dim: d,
        mark_weights: model.jumps().weights(),
        x,
        u,
        db,
        jumps,
        divergent,
        clamp_events,
        seed,
    })
}

/// Observation available to `policy` at fine step `k`.
pub(crate) fn observation<'a, T: Real>(lag: Option<usize>, k: usize, x: &'a [T], history: &'a [T], n: usize) -> Option<&'a [T]> {
    match lag? {
        0 => Some(x),
        l => k.checked_sub(l).map(|j| &history[j * n..(j + 1) * n]),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_one<T: Real>(
    model: &JumpDiffusionModel<T>,
    policy: &ControlPolicy<T>,
    grid: &TimeGrid<T>,
    substeps: usize,
    seed: u64,
    path: usize,
    xp: &mut [T],
    up: &mut [T],
    dbp: &mut [T],
) -> (Vec<JumpEvent>, bool, u64) {
    let (n, k, d) = (model.state_dim(), model.control_dim(), model.noise_dim());
    let dt = grid.dt();
    let lag = policy.flow().lag_steps(dt);
    let keep_history = matches!(lag, Some(l) if l > 0);
    let mut history = Vec::new();
    let mut stepper = EulerStepper::new(model);
    let mut stream = NoiseStream::new(model, dt, seed, path);
    let mut noise = StepNoise::default();
    let mut x = initial_state(model, seed, path);
    let mut uk = vec![T::zero(); k];
    let mut events = Vec::new();
    let mut clamps = 0;

    for step in 0..=grid.n_steps() {
        if keep_history {
            history.extend_from_slice(&x);
        }
        let t = grid.time(step);
        let obs = observation(lag, step, &x, &history, n);
        if policy.evaluate(t, obs, &mut uk) {
            clamps += 1;
        }
        if step % substeps == 0 {
            let node = step / substeps;
            xp[node * n..(node + 1) * n].copy_from_slice(&x);
            up[node * k..(node + 1) * k].copy_from_slice(&uk);
        }
        if step == grid.n_steps() {
            break;
        }
        stream.next(&mut noise);
        let interval = step / substeps;
        for (acc, v) in dbp[interval * d..(interval + 1) * d].iter_mut().zip(&noise.db) {
            *acc = *acc + *v;
        }
        for &f in &noise.jumps {
            events.push(JumpEvent {
                interval: interval as u32,
                step: step as u32,
                mark: f as u32,
            });
        }
        stepper.step(t, dt, &mut x, &uk, &noise);
        if is_diverged(&x) {
            let first = step / substeps + 1;
            xp[first * n..].fill(T::nan());
            up[first * k..].fill(T::nan());
            return (events, true, clamps);
        }
    }
    (events, false, clamps)
}
