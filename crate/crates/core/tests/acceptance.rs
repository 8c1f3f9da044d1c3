//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mpjump::bsde::{solve_infinite, solve_linear_closed_form, LadderOptions, LinearBsde};
use mpjump::examples::{merton_consistency, ControlExample, Example1, Example2, Example3, Example4, ExampleParams};
use mpjump::hamiltonian::{adjoint_problem, AdjointTriple};
use mpjump::model::{ControlPolicy, ControlSet, Dynamics, InformationFlow, JumpDiffusionModel, JumpMeasure, MarkDistribution, PolicyMap};
use mpjump::performance::{compare_performance, estimate_performance};
use mpjump::regression::Basis;
use mpjump::simulate::{simulate_paths, simulate_paths_with, PathBundle, SimOptions};
use mpjump::verify::{estimate_transversality, first_variation, stationarity_residual, Direction, Verdict, VerifyOptions};
use mpjump::{Error, TimeGrid};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Outcome);

const PATHS: usize = 10_000;
const HORIZON: f64 = 50.0;
const DT: f64 = 0.01;
/// Fine steps per recorded node; the recorded grid has step 0.1.
const SUBSTEPS: usize = 10;

fn bundle(model: &JumpDiffusionModel<f64>, policy: &ControlPolicy<f64>, horizon: f64, paths: usize, seed: u64) -> mpjump::Result<PathBundle<f64>> {
    let grid = TimeGrid::with_step(horizon, DT)?;
    simulate_paths_with(model, policy, &grid, paths, seed, SimOptions { substeps: SUBSTEPS })
}

fn closed_form_rms(ex: &Example1<f64>, b: &PathBundle<f64>, path_ids: &[usize], window: f64, y: impl Fn(usize, usize) -> f64) -> f64 {
    let rho = ex.params().rho;
    let last = b.grid().index_of(window).expect("window on grid");
    let (mut sq, mut n) = (0.0, 0.0);
    for (i, &p) in path_ids.iter().enumerate() {
        for k in 0..=last {
            let exact = (-rho * b.grid().time(k)).exp() / (rho * b.x(p, k)[0]);
            sq += (y(i, k) / exact - 1.0).powi(2);
            n += 1.0;
        }
    }
    (sq / n).sqrt()
}

fn criterion_1() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let rho = ex.params().rho;
    let reward = ex.reward(None);
    let candidate = bundle(ex.model(), &ex.optimal_policy()?, HORIZON, PATHS, 1)?;
    let mut ok = true;
    let mut detail = String::new();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for j in 0..7 {
        let factor = 0.5 + 0.25 * j as f64;
        let u = factor * rho;
        let other = if j == 2 { None } else { Some(bundle(ex.model(), &ex.constant_policy(&[u])?, HORIZON, PATHS, 1)?) };
        let b = other.as_ref().unwrap_or(&candidate);
        let j_hat = estimate_performance(b, &reward)?.j_hat;
        if j_hat > best.0 {
            best = (j_hat, factor);
        }
        if [0.5, 0.75, 1.5, 2.0].contains(&factor) {
            let c = compare_performance(&candidate, b, &reward)?;
            let pass = c.difference > 3.0 * c.paired_std_err && c.difference > 0.0;
            ok &= pass;
            detail += &format!("J(rho)-J({factor}rho)={:.4}+-{:.1e} ", c.difference, c.paired_std_err);
        }
    }
    ok &= best.1 == 1.0;
    detail += &format!("argmax={}rho", best.1);
    Ok((ok, detail))
}

fn example1_linear(ex: &Example1<f64>) -> LinearBsde<f64> {
    let p = ex.params().clone();
    let (mu, sigma, rho) = (p.mu, p.sigma, p.rho);
    LinearBsde::new(
        move |_, _, u: &[f64]| mu - u[0],
        move |_, _, _, out: &mut [f64]| out[0] = sigma,
        |_, _, _, _| 0.0,
        move |t, x: &[f64], _| (-rho * t).exp() / x[0],
    )
}

fn criterion_2() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let b = bundle(ex.model(), &ex.optimal_policy()?, HORIZON, PATHS, 2)?;
    let sol = solve_linear_closed_form(&example1_linear(&ex), &b, &Basis::Laurent { degree: 1 })?;
    // compare where the truncation at T contributes at most e^{-rho (T - t)} < 2%
    let window = 10.0;
    let rms = closed_form_rms(&ex, &b, sol.path_ids(), window, |i, k| sol.y(i, k)[0]);
    let rho = ex.params().rho;
    let last = b.grid().index_of(window).unwrap();
    let (mut sq, mut n) = (0.0, 0.0);
    for (i, &p) in sol.path_ids().iter().enumerate() {
        for k in 0..=last {
            let inv = sol.y(i, k)[0] * b.x(p, k)[0] * (rho * b.grid().time(k)).exp();
            sq += (inv - 1.0 / rho).powi(2);
            n += 1.0;
        }
    }
    let inv_rms = (sq / n).sqrt() * rho;
    Ok((
        rms <= 0.05 && inv_rms <= 0.02,
        format!("relative RMS {rms:.4} (<= 0.05), invariant RMS {inv_rms:.4} (<= 0.02) on [0, {window}]"),
    ))
}

fn criterion_3() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let b = bundle(ex.model(), &ex.optimal_policy()?, 40.0, PATHS, 3)?;
    let problem = adjoint_problem(&ex.hamiltonian(), &b, 2000)?;
    let options = LadderOptions {
        basis: Basis::Laurent { degree: 1 },
        ..LadderOptions::default()
    };
    let out = solve_infinite(&problem, &b, &options)?;
    let d = &out.diagnostics.distances;
    let monotone = d.len() == 2 && d[1] < d[0];
    let sol = &out.solution;
    let rms = closed_form_rms(&ex, &b, sol.path_ids(), 10.0, |i, k| sol.y(i, k)[0]);
    Ok((
        monotone && rms <= 0.05,
        format!("distances {d:?}, final rung relative RMS {rms:.4} (<= 0.05) on [0, 10]"),
    ))
}

fn criterion_4() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let b = bundle(ex.model(), &ex.optimal_policy()?, 40.0, 1000, 4)?;
    let problem = adjoint_problem(&ex.hamiltonian(), &b, 2000)?;
    let bound = problem.constants().lambda_bound();
    let options = LadderOptions {
        basis: Basis::Laurent { degree: 1 },
        ..LadderOptions::default()
    };
    let refused = [bound, bound - 0.5]
        .iter()
        .all(|&l| matches!(solve_infinite(&problem.clone().with_lambda(l), &b, &options), Err(Error::LambdaCondition { .. })));
    let admitted = solve_infinite(&problem.clone().with_lambda(bound + 1.0), &b, &options).is_ok();
    Ok((
        refused && admitted,
        format!("bound {bound:.4}: refused at bound and bound-0.5: {refused}, admitted at bound+1: {admitted}"),
    ))
}

fn stationarity_of(ex: &dyn ControlExample<f64>, control: &[f64], seed: u64) -> mpjump::Result<mpjump::verify::StationarityResult> {
    let b = bundle(ex.model(), &ex.constant_policy(control)?, HORIZON, PATHS, seed)?;
    let adj = ex.analytic_adjoint(&b)?;
    stationarity_residual(&ex.hamiltonian(), &adj, &b, InformationFlow::Full, &VerifyOptions::default())
}

fn criterion_5() -> Outcome {
    let e1 = Example1::new(ExampleParams::default())?;
    let e2 = Example2::new(ExampleParams::default())?;
    let e4 = Example4::new(ExampleParams::merton())?;
    let mut ok = true;
    let mut detail = String::new();
    let cases: [(&dyn ControlExample<f64>, &str); 3] = [(&e1, "ex1"), (&e2, "ex2"), (&e4, "ex4")];
    for (ex, name) in cases {
        let u = ex.optimal_control().expect("constant optimum");
        let s = stationarity_of(ex, &u, 5)?;
        let pass = s.fraction_failing == 0.0 && s.verdict == Verdict::Verified;
        ok &= pass;
        detail += &format!("{name} at u_hat failing {:.2}; ", s.fraction_failing);
    }
    let rho = e1.params().rho;
    let s = stationarity_of(&e1, &[2.0 * rho], 5)?;
    let negative = s.buckets.iter().filter(|b| !b.pass).all(|b| b.residual[0] < 0.0);
    ok &= s.fraction_failing >= 0.8 && negative;
    detail += &format!("ex1 at 2rho failing {:.2} (>= 0.8), residuals negative: {negative}; ", s.fraction_failing);
    // informational: the control rho/(mu+sigma) against the model's own adjoint
    let stated = stationarity_of(&e2, &[e2.stated_control()], 5)?;
    detail += &format!("[info] ex2 at rho/(mu+sigma) failing {:.2}", stated.fraction_failing);
    Ok((ok, detail))
}

fn criterion_6() -> Outcome {
    let ex = Example4::new(ExampleParams::merton())?;
    let c = merton_consistency(&ex, 5.0, 1e-3, PATHS, 6)?;
    let exact = (c.u_hat - 2.0).abs() < 1e-12 && (c.lambda_hat - 0.13).abs() < 1e-12;
    Ok((
        exact && c.rms_relative_deviation <= 0.01,
        format!(
            "u_hat {}, lambda_hat {}, ratio RMS deviation {:.4} (<= 0.01)",
            c.u_hat, c.lambda_hat, c.rms_relative_deviation
        ),
    ))
}

fn criterion_7() -> Outcome {
    let random_rho = ExampleParams {
        rho_atoms: vec![0.05, 0.15],
        rho_probabilities: vec![0.5, 0.5],
        ..ExampleParams::default()
    };
    let examples: Vec<Box<dyn ControlExample<f64>>> = vec![
        Box::new(Example1::new(ExampleParams::default())?),
        Box::new(Example2::new(ExampleParams::default())?),
        Box::new(Example3::new(ExampleParams::default(), InformationFlow::Full)?),
        Box::new(Example3::new(random_rho, InformationFlow::Trivial)?),
        Box::new(Example4::new(ExampleParams::merton())?),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (j, ex) in examples.iter().enumerate() {
        let g = ex.hamiltonian().check_gradients(&ex.probe_box(), 100, 70 + j as u64, 1e-4)?;
        ok &= g.pass;
        detail += &format!("ex{}: x {:.1e}, u {:.1e}; ", ex.id(), g.max_rel_error_x, g.max_rel_error_u);
    }
    Ok((ok, detail))
}

fn criterion_8() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let rho = ex.params().rho;
    let eps = 1e-4;
    let grid = TimeGrid::new(HORIZON, 5000)?;
    let base = simulate_paths(ex.model(), &ex.constant_policy(&[rho])?, &grid, 1000, 8)?;
    let bumped = simulate_paths(ex.model(), &ex.constant_policy(&[rho + eps])?, &grid, 1000, 8)?;
    let y = first_variation(ex.model(), &base, &Direction::Constant(vec![1.0]))?;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &p) in y.path_ids().iter().enumerate() {
        for k in 0..grid.n_nodes() {
            let fd = (bumped.x(p, k)[0] - base.x(p, k)[0]) / eps;
            num += (y.y(i, k)[0] - fd).powi(2);
            den += fd * fd;
        }
    }
    let rms = (num / den).sqrt();
    Ok((rms <= 0.01, format!("relative RMS {rms:.2e} (<= 0.01), eps {eps}")))
}

struct PureJump;

impl Dynamics<f64> for PureJump {
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
        out[0] = 0.0;
    }
    fn jump(&self, _t: f64, _x: &[f64], _u: &[f64], _c: usize, z: f64, out: &mut [f64]) {
        out[0] = z;
    }
}

fn within_three_se(values: impl Iterator<Item = f64>, target: f64) -> (bool, f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    ((mean - target).abs() <= 3.0 * se, mean, se)
}

fn criterion_9() -> Outcome {
    let marks = MarkDistribution::from_probabilities(2.0, vec![-0.5, 1.0], vec![0.6, 0.4])?;
    let model = JumpDiffusionModel::new(Arc::new(PureJump), JumpMeasure::new(vec![marks]), vec![1.0])?;
    let zero = ControlPolicy::constant(vec![0.0], ControlSet::unbounded(1))?;
    let grid = TimeGrid::new(1.0, 100)?;
    let b = simulate_paths(&model, &zero, &grid, PATHS, 9)?;
    let (mart, m1, s1) = within_three_se((0..PATHS).map(|p| b.x(p, 100)[0] - 1.0), 0.0);

    let ex = Example1::new(ExampleParams::default())?;
    let b = simulate_paths(ex.model(), &ex.optimal_policy()?, &grid, PATHS, 9)?;
    let (gbm, m2, s2) = within_three_se((0..PATHS).map(|p| b.x(p, 100)[0]), (-0.03f64).exp());

    let ex3 = Example3::new(ExampleParams::default(), InformationFlow::Full)?;
    let policy = ex3.optimal_policy()?;
    let run = |threads: usize| -> mpjump::Result<PathBundle<f64>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        pool.install(|| simulate_paths(ex3.model(), &policy, &grid, 2000, 99))
    };
    let (a, c) = (run(1)?, run(4)?);
    let identical = (0..2000).all(|p| {
        a.path(p).iter().zip(c.path(p)).all(|(x, y)| x.to_bits() == y.to_bits())
            && (0..100).all(|k| a.db(p, k) == c.db(p, k) && a.u(p, k) == c.u(p, k))
            && a.jumps(p) == c.jumps(p)
    });
    Ok((
        mart && gbm && identical,
        format!("jump martingale mean {m1:.2e} (se {s1:.1e}); GBM mean {m2:.5} vs {:.5} (se {s2:.1e}); 1 vs 4 threads bit-identical: {identical}", (-0.03f64).exp()),
    ))
}

/// `dX = u dt`, deterministic: drives the constructed transversality violation.
struct Controlled;

impl Dynamics<f64> for Controlled {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

fn criterion_10() -> Outcome {
    let ex = Example1::new(ExampleParams::default())?;
    let rho = ex.params().rho;
    let opts = VerifyOptions::default();
    let cand = bundle(ex.model(), &ex.optimal_policy()?, HORIZON, PATHS, 10)?;
    let comp = bundle(ex.model(), &ex.constant_policy(&[2.0 * rho])?, HORIZON, PATHS, 10)?;
    let adj = ex.analytic_adjoint(&cand)?;
    let t = estimate_transversality(&adj, &cand, &comp, &opts)?;
    let ok1 = t.estimate >= -3.0 * t.std_err - t.tolerance && t.trend_nonincreasing && t.verdict == Verdict::Verified;

    let model = JumpDiffusionModel::new(Arc::new(Controlled), JumpMeasure::none(), vec![0.0])?;
    let grid = TimeGrid::new(10.0, 100)?;
    let dt = grid.dt();
    let set = ControlSet::unbounded(1);
    let zero = ControlPolicy::constant(vec![0.0], set.clone())?;
    // one step at rate -1/dt puts X one unit below the candidate for good
    let kick: PolicyMap<f64> = Arc::new(move |t, _, out: &mut [f64]| out[0] = if t < 0.5 * dt { -1.0 / dt } else { 0.0 });
    let kicked = ControlPolicy::new(InformationFlow::Trivial, set, kick)?;
    let cand = simulate_paths(&model, &zero, &grid, 100, 11)?;
    let comp = simulate_paths(&model, &kicked, &grid, 100, 11)?;
    let exploding = AdjointTriple::from_fn(grid, cand.valid_paths(), &model, |_, k, p, q, _| {
        p[0] = grid.time(k).exp();
        q[0] = 0.0;
    })?;
    let v = estimate_transversality(&exploding, &cand, &comp, &opts)?;
    let ok2 = v.verdict == Verdict::Violated;
    Ok((
        ok1 && ok2,
        format!(
            "ex1 u_hat vs 2rho: estimate {:.4} (se {:.1e}, tol {:.3}, slope {:.2e}) {}; constructed model: estimate {:.3e} {}",
            t.estimate, t.std_err, t.tolerance, t.trend_slope, t.verdict, v.estimate, v.verdict
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("example-1 optimality", criterion_1),
        ("linear BSDE oracle", criterion_2),
        ("truncation ladder convergence", criterion_3),
        ("lambda-gap gating", criterion_4),
        ("necessary-condition discrimination", criterion_5),
        ("Merton consistency", criterion_6),
        ("gradient checks", criterion_7),
        ("first-variation oracle", criterion_8),
        ("simulation soundness", criterion_9),
        ("transversality proxy", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (j, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", j + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{label}: {} ({:.1}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
