//! Numerical checks of the individual optimality conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::hamiltonian::{AdjointTriple, Hamiltonian};
use crate::model::{ControlSet, InformationFlow};
use crate::regression::{Basis, Projection};
use crate::scalar::{mean_and_std_err, Real};
use crate::simulate::PathBundle;

use super::{check_alignment, Verdict, VerifyOptions};

/// Tail-window proxy of `E[limsup p^T (X - X_hat)]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransversalityEstimate {
    pub estimate: f64,
    pub std_err: f64,
    /// `[t_start, t_end]` of the tail window.
    pub window: (f64, f64),
    /// Least-squares slope of `|E p^T (X - X_hat)|` over the window.
    pub trend_slope: f64,
    pub trend_nonincreasing: bool,
    /// Absolute slack `rtol * E|p(0)^T X_hat(0)|` added to `3 std_err`.
    pub tolerance: f64,
    pub n_paths: usize,
    pub verdict: Verdict,
}

pub fn estimate_transversality<T: Real>(
    adjoint: &AdjointTriple<T>,
    candidate: &PathBundle<T>,
    competitor: &PathBundle<T>,
    options: &VerifyOptions<T>,
) -> Result<TransversalityEstimate> {
    check_alignment(adjoint, candidate)?;
    check_alignment(adjoint, competitor)?;
    if !candidate.shares_noise_with(competitor) {
        return Err(invalid("candidate and competitor must share their noise"));
    }
    if !(options.tail_window > 0.0 && options.tail_window <= 1.0) {
        return Err(invalid("tail window must be a fraction in (0, 1]"));
    }
    let grid = adjoint.grid();
    let last = grid.n_steps();
    let first = ((1.0 - options.tail_window) * last as f64).floor() as usize;
    let n = adjoint.state_dim();
    let paths: Vec<(usize, usize)> = adjoint
        .path_ids()
        .iter()
        .enumerate()
        .filter(|(_, &p)| !competitor.is_divergent(p))
        .map(|(i, &p)| (i, p))
        .collect();
    if paths.is_empty() {
        return Err(invalid("no path is valid under both controls"));
    }
    let product = |i: usize, p: usize, k: usize| -> T {
        let (pk, x, xh) = (adjoint.p(i, k), competitor.x(p, k), candidate.x(p, k));
        (0..n).map(|l| pk[l] * (x[l] - xh[l])).sum()
    };
    let sups: Vec<T> = paths
        .iter()
        .map(|&(i, p)| (first..=last).map(|k| product(i, p, k)).fold(T::neg_infinity(), T::max))
        .collect();
    let (est, se) = mean_and_std_err(&sups);
    let (estimate, std_err) = (est.to_f64_lossy(), se.to_f64_lossy());

    let scale = paths
        .iter()
        .map(|&(i, p)| {
            let (p0, x0) = (adjoint.p(i, 0), candidate.x(p, 0));
            (0..n).map(|l| p0[l] * x0[l]).sum::<T>().abs().to_f64_lossy()
        })
        .sum::<f64>()
        / paths.len() as f64;
    let tolerance = if scale > 0.0 {
        options.transversality_rtol * scale
    } else {
        options.atol
    };

    let (mut ts, mut ms) = (Vec::new(), Vec::new());
    for k in first..=last {
        let mean = paths.iter().map(|&(i, p)| product(i, p, k).to_f64_lossy()).sum::<f64>() / paths.len() as f64;
        ts.push(grid.time(k).to_f64_lossy());
        ms.push(mean.abs());
    }
    let trend_slope = slope(&ts, &ms);
    let span = ts.last().copied().unwrap_or(0.0) - ts[0];
    let trend_nonincreasing = trend_slope <= 0.0 || trend_slope * span <= tolerance;

    let verdict = if !estimate.is_finite() || estimate < -3.0 * std_err - tolerance {
        Verdict::Violated
    } else if !trend_nonincreasing {
        Verdict::Inconclusive
    } else {
        Verdict::Verified
    };
    Ok(TransversalityEstimate {
        estimate,
        std_err,
        window: (ts[0], ts.last().copied().unwrap_or(ts[0])),
        trend_slope,
        trend_nonincreasing,
        tolerance,
        n_paths: paths.len(),
        verdict,
    })
}

fn slope(t: &[f64], v: &[f64]) -> f64 {
    let n = t.len() as f64;
    if t.len() < 2 {
        return 0.0;
    }
    let (mt, mv) = (t.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(v) {
        sxy += (a - mt) * (b - mv);
        sxx += (a - mt) * (a - mt);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Nodes `[start, end)` of each time bucket, thinned to at most
/// `max_nodes` evaluated nodes overall.
pub(crate) fn bucket_nodes(n_steps: usize, n_buckets: usize, max_nodes: usize) -> Vec<Vec<usize>> {
    let b = n_buckets.clamp(1, n_steps.max(1));
    let stride = n_steps.div_ceil(max_nodes.max(1)).max(1);
    (0..b)
        .map(|j| {
            let (lo, hi) = (j * n_steps / b, (j + 1) * n_steps / b);
            let mut v: Vec<usize> = (lo..hi).step_by(stride).collect();
            if v.is_empty() {
                v.push(lo);
            }
            v
        })
        .filter(|v| v[0] < n_steps.max(1))
        .collect()
}

/// Regression design for conditioning on `E_t` at node `k`.
fn conditioning<T: Real>(
    flow: InformationFlow<T>,
    basis: &Basis<T>,
    bundle: &PathBundle<T>,
    paths: &[usize],
    k: usize,
) -> Result<Projection<T>> {
    let dt = bundle.grid().dt();
    match flow.observed_index(k, dt) {
        Some(j) => Projection::from_rows(basis, bundle.state_dim(), paths.len(), |i| bundle.x(paths[i], j)),
        None => {
            let ones = vec![T::one(); paths.len()];
            Projection::new(&Basis::Constant, &ones, 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapBucket {
    pub t_start: f64,
    pub t_end: f64,
    /// Mean over nodes and paths of `max(0, max_v E[H(v) - H(u_hat) | E_t])`.
    pub gap: f64,
    pub tolerance: f64,
    /// Index of the probe with the largest mean conditional value.
    pub argmax_probe: usize,
    pub regression_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaxConditionResult {
    pub probes: Vec<Vec<f64>>,
    pub buckets: Vec<GapBucket>,
    pub max_gap: f64,
    pub verdict: Verdict,
}

/// Compares `E[H(t, X, v, p, q, r) | E_t]` over the `probes` with the value
/// at the candidate's realised control.
pub fn check_max_condition<T: Real>(
    hamiltonian: &Hamiltonian<T>,
    adjoint: &AdjointTriple<T>,
    bundle: &PathBundle<T>,
    probes: &[Vec<T>],
    flow: InformationFlow<T>,
    options: &VerifyOptions<T>,
) -> Result<MaxConditionResult> {
    if probes.is_empty() {
        return Err(invalid("probe set is empty"));
    }
    check_alignment(adjoint, bundle)?;
    flow.validate()?;
    for v in probes {
        if v.len() != bundle.control_dim() {
            return Err(invalid("probe control has the wrong dimension"));
        }
    }
    let grid = adjoint.grid();
    let paths = adjoint.path_ids();
    let np = probes.len();
    let mut buckets = Vec::new();
    for nodes in bucket_nodes(grid.n_steps(), options.n_buckets, options.max_nodes) {
        let (mut gap, mut tol, mut err) = (0.0, 0.0, 0.0f64);
        let mut means = vec![0.0; np];
        for &k in &nodes {
            let t = grid.time(k);
            let mut diffs = vec![T::zero(); paths.len() * np];
            for (i, &p) in paths.iter().enumerate() {
                let (x, u) = (bundle.x(p, k), bundle.u(p, k));
                let (pp, q, r) = (adjoint.p(i, k), adjoint.q(i, k), adjoint.r(i, k));
                let base = hamiltonian.eval(t, x, u, pp, q, r)?;
                for (j, v) in probes.iter().enumerate() {
                    diffs[i * np + j] = hamiltonian.eval(t, x, v, pp, q, r)? - base;
                }
            }
            let fit = conditioning(flow, &options.basis, bundle, paths, k)?.fit(&diffs, np)?;
            let mut node_gap = 0.0;
            for i in 0..paths.len() {
                let row = fit.fitted_row(i);
                let best = row.iter().fold(T::zero(), |a, b| a.max(*b));
                node_gap += best.to_f64_lossy();
                for (j, v) in row.iter().enumerate() {
                    means[j] += v.to_f64_lossy();
                }
            }
            let node_err = (0..np).map(|j| fit.prediction_error(j).to_f64_lossy()).fold(0.0, f64::max);
            gap += node_gap / paths.len() as f64;
            tol += 2.0 * node_err + options.atol;
            err = err.max(node_err);
        }
        let nn = nodes.len() as f64;
        let (gap, tolerance) = (gap / nn, tol / nn);
        let argmax_probe = means
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, m)| if *m > acc.1 { (j, *m) } else { acc })
            .0;
        buckets.push(GapBucket {
            t_start: grid.time(nodes[0]).to_f64_lossy(),
            t_end: grid.time(*nodes.last().unwrap()).to_f64_lossy(),
            gap,
            tolerance,
            argmax_probe,
            regression_error: err,
            pass: gap <= tolerance,
        });
    }
    let max_gap = buckets.iter().map(|b| b.gap).fold(0.0, f64::max);
    let verdict = if buckets.iter().all(|b| b.pass) {
        Verdict::Verified
    } else {
        Verdict::Violated
    };
    Ok(MaxConditionResult {
        probes: probes.iter().map(|v| v.iter().map(|x| x.to_f64_lossy()).collect()).collect(),
        buckets,
        max_gap,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityBucket {
    pub t_start: f64,
    pub t_end: f64,
    /// Mean of `grad_u H` over paths and bucket nodes, per control component.
    pub residual: Vec<f64>,
    pub std_err: Vec<f64>,
    /// RMS over paths of the fitted `E[grad_u H | E_t]`, averaged over nodes.
    pub conditional_rms: Vec<f64>,
    pub regression_error: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityResult {
    pub buckets: Vec<StationarityBucket>,
    pub fraction_failing: f64,
    pub verdict: Verdict,
}

/// Estimates `E[grad_u H(t, X, u, p, q, r) | E_t]` per time bucket.
///
/// A bucket passes when every component satisfies `|mean| <= 3 se + atol`
/// and, for informative flows, the fitted conditional mean has RMS within
/// `3` regression errors of zero.
pub fn stationarity_residual<T: Real>(
    hamiltonian: &Hamiltonian<T>,
    adjoint: &AdjointTriple<T>,
    bundle: &PathBundle<T>,
    flow: InformationFlow<T>,
    options: &VerifyOptions<T>,
) -> Result<StationarityResult> {
    check_alignment(adjoint, bundle)?;
    flow.validate()?;
    let grid = adjoint.grid();
    let paths = adjoint.path_ids();
    let kd = bundle.control_dim();
    let mut buckets = Vec::new();
    for nodes in bucket_nodes(grid.n_steps(), options.n_buckets, options.max_nodes) {
        let mut per_path = vec![vec![T::zero(); paths.len()]; kd];
        let mut rms = vec![0.0; kd];
        let mut regerr = vec![0.0; kd];
        let mut informative = false;
        for &k in &nodes {
            let t = grid.time(k);
            let mut g = vec![T::zero(); paths.len() * kd];
            for (i, &p) in paths.iter().enumerate() {
                let v = hamiltonian.grad_u(t, bundle.x(p, k), bundle.u(p, k), adjoint.p(i, k), adjoint.q(i, k), adjoint.r(i, k))?;
                for c in 0..kd {
                    g[i * kd + c] = v[c];
                    per_path[c][i] = per_path[c][i] + v[c];
                }
            }
            if flow.observed_index(k, grid.dt()).is_some() {
                informative = true;
                let fit = conditioning(flow, &options.basis, bundle, paths, k)?.fit(&g, kd)?;
                for c in 0..kd {
                    let ms = (0..paths.len()).map(|i| fit.fitted(i, c).to_f64_lossy().powi(2)).sum::<f64>() / paths.len() as f64;
                    rms[c] += ms.sqrt();
                    regerr[c] += fit.prediction_error(c).to_f64_lossy();
                }
            }
        }
        let nn = T::from_count(nodes.len());
        let mut residual = Vec::with_capacity(kd);
        let mut std_err = Vec::with_capacity(kd);
        let mut pass = true;
        for c in 0..kd {
            let samples: Vec<T> = per_path[c].iter().map(|v| *v / nn).collect();
            let (m, s) = mean_and_std_err(&samples);
            let (m, s) = (m.to_f64_lossy(), s.to_f64_lossy());
            pass &= m.abs() <= 3.0 * s + options.atol;
            rms[c] /= nodes.len() as f64;
            regerr[c] /= nodes.len() as f64;
            if informative {
                pass &= rms[c] <= 3.0 * regerr[c] + options.atol;
            }
            residual.push(m);
            std_err.push(s);
        }
        buckets.push(StationarityBucket {
            t_start: grid.time(nodes[0]).to_f64_lossy(),
            t_end: grid.time(*nodes.last().unwrap()).to_f64_lossy(),
            residual,
            std_err,
            conditional_rms: rms,
            regression_error: regerr,
            pass,
        });
    }
    let failing = buckets.iter().filter(|b| !b.pass).count();
    let fraction_failing = failing as f64 / buckets.len().max(1) as f64;
    Ok(StationarityResult {
        buckets,
        fraction_failing,
        verdict: if failing == 0 { Verdict::Verified } else { Verdict::Violated },
    })
}

/// Second differences of `H` along random segments in `(x, u)` centred at
/// candidate points, with the adjoint frozen at its value there.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcavityProbe {
    pub n_probes: usize,
    /// Second differences divided by `max(1, |H|)` on the segment.
    pub min_second_difference: f64,
    pub max_second_difference: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

pub fn concavity_probe<T: Real>(
    hamiltonian: &Hamiltonian<T>,
    adjoint: &AdjointTriple<T>,
    bundle: &PathBundle<T>,
    set: &ControlSet<T>,
    options: &VerifyOptions<T>,
) -> Result<ConcavityProbe> {
    check_alignment(adjoint, bundle)?;
    if options.concavity_probes == 0 {
        return Err(invalid("concavity probe needs at least one segment"));
    }
    let grid = adjoint.grid();
    check_dim("control set", bundle.control_dim(), set.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let radius = options.concavity_radius;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut done = 0;
    let mut attempts = 0;
    while done < options.concavity_probes && attempts < 20 * options.concavity_probes {
        attempts += 1;
        let i = rng.random_range(0..adjoint.n_paths());
        let k = rng.random_range(0..grid.n_steps().max(1));
        let p = adjoint.path_ids()[i];
        let t = grid.time(k);
        let (x, u) = (bundle.x(p, k), bundle.u(p, k));
        let step = |v: T, rng: &mut ChaCha8Rng| -> T {
            let s: f64 = rng.random_range(-1.0..1.0);
            T::lit(s * radius) * v.abs().max(T::lit(1e-3))
        };
        let dx: Vec<T> = x.iter().map(|v| step(*v, &mut rng)).collect();
        let du: Vec<T> = u.iter().map(|v| step(*v, &mut rng)).collect();
        let shift = |sign: T| -> (Vec<T>, Vec<T>) {
            (
                x.iter().zip(&dx).map(|(a, b)| *a + sign * *b).collect(),
                u.iter().zip(&du).map(|(a, b)| *a + sign * *b).collect(),
            )
        };
        let (xp, up) = shift(T::one());
        let (xm, um) = shift(-T::one());
        if !set.contains(&up) || !set.contains(&um) {
            continue;
        }
        let (pp, q, r) = (adjoint.p(i, k), adjoint.q(i, k), adjoint.r(i, k));
        let h0 = hamiltonian.eval(t, x, u, pp, q, r)?.to_f64_lossy();
        let hp = hamiltonian.eval(t, &xp, &up, pp, q, r)?.to_f64_lossy();
        let hm = hamiltonian.eval(t, &xm, &um, pp, q, r)?.to_f64_lossy();
        if !(h0.is_finite() && hp.is_finite() && hm.is_finite()) {
            continue;
        }
        let scale = h0.abs().max(hp.abs()).max(hm.abs()).max(1.0);
        let sd = (hp - 2.0 * h0 + hm) / scale;
        lo = lo.min(sd);
        hi = hi.max(sd);
        done += 1;
    }
    if done == 0 {
        return Err(invalid("no admissible concavity segment found"));
    }
    let tolerance = options.concavity_tol;
    Ok(ConcavityProbe {
        n_probes: done,
        min_second_difference: lo,
        max_second_difference: hi,
        tolerance,
        verdict: if hi <= tolerance { Verdict::Verified } else { Verdict::Violated },
    })
}

/// Finiteness proxy of an integrability condition: mean integrand density
/// on `[T/4, T/2)` against `[T/2, T]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegrabilityFlag {
    pub name: String,
    pub early: f64,
    pub late: f64,
    pub finite: bool,
    pub nongrowing: bool,
    pub verdict: Verdict,
}

impl IntegrabilityFlag {
    fn new(name: &str, early: f64, late: f64, atol: f64) -> Self {
        let finite = early.is_finite() && late.is_finite();
        let nongrowing = late <= early * 1.1 + atol;
        let verdict = match (finite, nongrowing) {
            (false, _) => Verdict::Violated,
            (true, false) => Verdict::Inconclusive,
            (true, true) => Verdict::Verified,
        };
        Self {
            name: name.to_string(),
            early,
            late,
            finite,
            nongrowing,
            verdict,
        }
    }
}

/// Proxies for the square-integrability of `(X_hat - X)^T q` and
/// `(X_hat - X)^T r` against a competitor, of `sigma^T p` and `theta^T p`
/// along the competitor, and of `grad_u H` along the candidate.
pub fn integrability_flags<T: Real>(
    hamiltonian: &Hamiltonian<T>,
    adjoint: &AdjointTriple<T>,
    candidate: &PathBundle<T>,
    competitor: &PathBundle<T>,
    options: &VerifyOptions<T>,
) -> Result<Vec<IntegrabilityFlag>> {
    check_alignment(adjoint, candidate)?;
    check_alignment(adjoint, competitor)?;
    let model = hamiltonian.model();
    let dynamics = model.dynamics();
    let grid = adjoint.grid();
    let (n, d, m) = (adjoint.state_dim(), adjoint.noise_dim(), adjoint.n_marks());
    let weights = model.jumps().weights();
    let nodes = grid.n_steps();
    let stride = nodes.div_ceil(options.max_nodes.max(1)).max(1);
    let (q1, q2) = (nodes / 4, nodes / 2);
    let mut sums = [[0.0f64; 2]; 3];
    let mut counts = [0usize; 2];
    let mut sigma = vec![T::zero(); n * d];
    let mut theta = vec![T::zero(); n];
    for k in (q1..=nodes).step_by(stride) {
        let w = usize::from(k >= q2);
        counts[w] += 1;
        let t = grid.time(k);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        let mut used = 0usize;
        for (i, &p) in adjoint.path_ids().iter().enumerate() {
            if competitor.is_divergent(p) {
                continue;
            }
            used += 1;
            let (xh, x, u) = (candidate.x(p, k), competitor.x(p, k), competitor.u(p, k));
            let (pp, q, r) = (adjoint.p(i, k), adjoint.q(i, k), adjoint.r(i, k));
            let diff: Vec<T> = xh.iter().zip(x).map(|(a, b)| *a - *b).collect();
            for j in 0..d {
                let s: T = (0..n).map(|l| diff[l] * q[l * d + j]).sum();
                a += s.to_f64_lossy().powi(2);
            }
            dynamics.diffusion(t, x, u, &mut sigma);
            for j in 0..d {
                let s: T = (0..n).map(|l| sigma[l * d + j] * pp[l]).sum();
                b += s.to_f64_lossy().powi(2);
            }
            for (f, node) in model.jumps().nodes().enumerate() {
                let wf = weights[f].to_f64_lossy();
                if wf == 0.0 {
                    continue;
                }
                let s: T = (0..n).map(|l| diff[l] * r[l * m + f]).sum();
                a += wf * s.to_f64_lossy().powi(2);
                dynamics.jump(t, x, u, node.component, node.mark, &mut theta);
                let s: T = (0..n).map(|l| theta[l] * pp[l]).sum();
                b += wf * s.to_f64_lossy().powi(2);
            }
            let g = hamiltonian.grad_u(t, xh, candidate.u(p, k), pp, q, r)?;
            c += g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
        }
        let used = used.max(1) as f64;
        sums[0][w] += a / used;
        sums[1][w] += b / used;
        sums[2][w] += c / used;
    }
    let avg = |s: [f64; 2]| (s[0] / counts[0].max(1) as f64, s[1] / counts[1].max(1) as f64);
    let names = ["adjoint_martingale_q_r", "adjoint_martingale_sigma_theta", "control_gradient_l2"];
    Ok(names
        .iter()
        .zip(sums)
        .map(|(name, s)| {
            let (e, l) = avg(s);
            IntegrabilityFlag::new(name, e, l, options.atol)
        })
        .collect())
}
