use mpjump::examples::*;
use mpjump::model::InformationFlow;
use mpjump::performance::{compare_performance, estimate_performance};
use mpjump::simulate::{simulate_paths, PathBundle};
use mpjump::verify::{stationarity_residual, Verdict, VerifyOptions};
use mpjump::TimeGrid;

fn run(ex: &dyn ControlExample<f64>, u: &[f64], horizon: f64, n_steps: usize, paths: usize, seed: u64) -> PathBundle<f64> {
    let grid = TimeGrid::new(horizon, n_steps).unwrap();
    simulate_paths(ex.model(), &ex.constant_policy(u).unwrap(), &grid, paths, seed).unwrap()
}

/// Simulated J at the optimum beats +-25% perturbations of each component.
fn assert_oracle_optimality(ex: &dyn ControlExample<f64>, paths: usize) {
    let best = ex.optimal_control().unwrap();
    let reward = ex.reward(None);
    let cand = run(ex, &best, 50.0, 1000, paths, 5);
    for c in 0..best.len() {
        for f in [0.75, 1.25] {
            let mut u = best.clone();
            u[c] *= f;
            let other = run(ex, &u, 50.0, 1000, paths, 5);
            let cmp = compare_performance(&cand, &other, &reward).unwrap();
            assert!(
                cmp.difference > 3.0 * cmp.paired_std_err,
                "example {} component {c} factor {f}: {cmp:?}",
                ex.id()
            );
        }
    }
}

#[test]
fn oracle_optimality() {
    assert_oracle_optimality(&Example1::new(ExampleParams::default()).unwrap(), 1000);
    assert_oracle_optimality(&Example2::new(ExampleParams::default()).unwrap(), 1000);
    assert_oracle_optimality(&Example3::new(ExampleParams::default(), InformationFlow::Full).unwrap(), 1000);
    // the utility gap is about 1% here, so it needs more paths
    assert_oracle_optimality(&Example4::new(ExampleParams::merton()).unwrap(), 10_000);
}

#[test]
fn simulated_performance_matches_closed_forms() {
    let examples: Vec<Box<dyn ControlExample<f64>>> = vec![
        Box::new(Example1::new(ExampleParams::default()).unwrap()),
        Box::new(Example2::new(ExampleParams::default()).unwrap()),
        Box::new(Example3::new(ExampleParams::default(), InformationFlow::Full).unwrap()),
        Box::new(Example4::new(ExampleParams::merton()).unwrap()),
    ];
    for ex in &examples {
        let u = ex.optimal_control().unwrap();
        let b = run(ex.as_ref(), &u, 50.0, 5000, 4000, 7);
        let est = estimate_performance(&b, &ex.reward(Some(&u))).unwrap();
        let exact = ex.performance(&u, Some(50.0)).unwrap();
        // Euler bias on the log of the state is O(dt); allow it on top of 3 se
        let tol = 3.0 * est.std_err + 2e-3 * exact.abs().max(1.0);
        assert!((est.j_hat - exact).abs() < tol, "example {}: {} vs {exact} (se {})", ex.id(), est.j_hat, est.std_err);
        let tail = est.tail_bound.unwrap();
        let full = ex.performance(&u, None).unwrap();
        assert!((full - exact).abs() <= tail, "example {}: tail {tail} vs {}", ex.id(), full - exact);
    }
}

#[test]
fn stationarity_holds_at_each_optimum() {
    let examples: Vec<Box<dyn ControlExample<f64>>> = vec![
        Box::new(Example1::new(ExampleParams::default()).unwrap()),
        Box::new(Example2::new(ExampleParams::default()).unwrap()),
        Box::new(Example3::new(ExampleParams::default(), InformationFlow::Full).unwrap()),
        Box::new(Example4::new(ExampleParams::merton()).unwrap()),
    ];
    for ex in &examples {
        let u = ex.optimal_control().unwrap();
        let b = run(ex.as_ref(), &u, 30.0, 300, 1000, 8);
        let adj = ex.analytic_adjoint(&b).unwrap();
        let s = stationarity_residual(&ex.hamiltonian(), &adj, &b, InformationFlow::Full, &VerifyOptions::default()).unwrap();
        assert_eq!(s.verdict, Verdict::Verified, "example {}", ex.id());
        for f in [0.75, 1.25] {
            let v: Vec<f64> = u.iter().map(|c| c * f).collect();
            let b = run(ex.as_ref(), &v, 30.0, 300, 1000, 8);
            let adj = ex.analytic_adjoint(&b).unwrap();
            let s = stationarity_residual(&ex.hamiltonian(), &adj, &b, InformationFlow::Full, &VerifyOptions::default()).unwrap();
            assert_eq!(s.verdict, Verdict::Violated, "example {} at factor {f}", ex.id());
        }
    }
}

#[test]
fn random_rate_under_full_information() {
    let p = ExampleParams {
        rho_atoms: vec![0.05, 0.15],
        rho_probabilities: vec![0.5, 0.5],
        ..ExampleParams::default()
    };
    let ex = Example3::new(p, InformationFlow::Full).unwrap();
    assert!(ex.optimal_control().is_none());
    let grid = TimeGrid::new(20.0, 200).unwrap();
    let b = simulate_paths(ex.model(), &ex.optimal_policy().unwrap(), &grid, 1000, 9).unwrap();
    let mut seen = [false; 2];
    for path in 0..1000 {
        let rho = b.x(path, 0)[1];
        assert_eq!(b.u(path, 5)[0], rho);
        seen[(rho > 0.1) as usize] = true;
    }
    assert!(seen[0] && seen[1]);
    let adj = ex.analytic_adjoint(&b).unwrap();
    assert_eq!(adj.omitted_components, vec![1]);
    let s = stationarity_residual(&ex.hamiltonian(), &adj, &b, InformationFlow::Full, &VerifyOptions::default()).unwrap();
    assert_eq!(s.verdict, Verdict::Verified);
}

#[test]
fn example3_without_jumps_is_example1() {
    let p = ExampleParams {
        jump_intensity: 0.0,
        ..ExampleParams::default()
    };
    let e3 = Example3::new(p.clone(), InformationFlow::Full).unwrap();
    let e1 = Example1::new(p).unwrap();
    assert_eq!(e3.optimal_control(), e1.optimal_control());
    let grid = TimeGrid::new(10.0, 100).unwrap();
    let b3 = simulate_paths(e3.model(), &e3.optimal_policy().unwrap(), &grid, 200, 10).unwrap();
    let b1 = simulate_paths(e1.model(), &e1.optimal_policy().unwrap(), &grid, 200, 10).unwrap();
    for path in 0..200 {
        for k in 0..=100 {
            assert_eq!(b3.x(path, k)[0], b1.x(path, k)[0]);
            assert_eq!(b3.u(path, k), b1.u(path, k));
        }
    }
    let (a3, a1) = (e3.analytic_adjoint(&b3).unwrap(), e1.analytic_adjoint(&b1).unwrap());
    assert_eq!(a3.p(3, 40)[0], a1.p(3, 40)[0]);
    assert_eq!(
        e3.performance(&[0.1], Some(10.0)).unwrap(),
        e1.performance(&[0.1], Some(10.0)).unwrap()
    );
}

#[test]
fn example2_adjoints() {
    let ex = Example2::new(ExampleParams::default()).unwrap();
    let sigma = ex.params().sigma;
    let u = ex.optimal_control().unwrap();
    let b = run(&ex, &u, 5.0, 50, 20, 11);
    let stated = ex.stated_adjoint(&b).unwrap();
    let derived = ex.analytic_adjoint(&b).unwrap();
    for i in 0..20 {
        for k in [0, 10, 50] {
            assert!((stated.q(i, k)[0] / stated.p(i, k)[0] - sigma).abs() < 1e-15);
            let ratio = derived.q(i, k)[0] / derived.p(i, k)[0];
            assert!((ratio + sigma * (1.0 - u[0])).abs() < 1e-15);
        }
    }
    assert!(!stated.notes.is_empty());
}

#[test]
fn example4_adjoint_preconditions() {
    let ex = Example4::new(ExampleParams::merton()).unwrap();
    // admissible constant controls always have delta > kappa once lambda_hat > 0
    for (u, l) in [(2.0, 0.0), (-3.0, 0.0), (6.0, 0.0), (2.0, 1.0)] {
        assert!(ex.kappa(u, l) < ex.params().delta);
    }
    let grid = TimeGrid::new(5.0, 50).unwrap();
    let varying = mpjump::model::ControlPolicy::new(
        InformationFlow::Trivial,
        ex.control_set(),
        std::sync::Arc::new(|t: f64, _: Option<&[f64]>, out: &mut [f64]| {
            out[0] = 2.0;
            out[1] = 0.1 + 0.01 * t;
        }),
    )
    .unwrap();
    let b = simulate_paths(ex.model(), &varying, &grid, 10, 12).unwrap();
    assert!(ex.analytic_adjoint(&b).is_err());
}

#[test]
fn example4_adjoint_representation() {
    let ex = Example4::new(ExampleParams::merton()).unwrap();
    let u = ex.optimal_control().unwrap();
    let b = run(&ex, &u, 5.0, 500, 50, 13);
    let adj = ex.analytic_adjoint(&b).unwrap();
    let g = ex.params().gamma;
    for i in 0..50 {
        for k in [0, 100, 500] {
            let t = b.grid().time(k);
            let ratio = adj.p(i, k)[0].powf(1.0 / (g - 1.0)) / (b.x(i, k)[0] * (ex.b() * t).exp());
            assert!((ratio / ex.k() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn factory_dispatch_and_errors() {
    for id in 1..=4u8 {
        let params = if id == 4 { ExampleParams::merton() } else { ExampleParams::default() };
        assert_eq!(example::<f64>(id, params, InformationFlow::Full).unwrap().id(), id);
    }
    assert!(example::<f64>(5, ExampleParams::default(), InformationFlow::Full).is_err());
    let neg_sigma = ExampleParams {
        sigma: -0.2,
        ..ExampleParams::default()
    };
    assert!(example::<f64>(1, neg_sigma, InformationFlow::Full).is_err());
    let neg_rho = ExampleParams {
        rho: -0.1,
        ..ExampleParams::default()
    };
    assert!(example::<f64>(3, neg_rho, InformationFlow::Full).is_err());
}

#[test]
fn single_precision_examples() {
    let ex = Example1::<f32>::new(ExampleParams::default()).unwrap();
    assert_eq!(ex.optimal_control(), Some(vec![0.1f32]));
    let e4 = Example4::<f32>::new(ExampleParams::merton()).unwrap();
    assert!((e4.u_hat() - 2.0).abs() < 1e-5);
    assert!((e4.lambda_hat() - 0.13).abs() < 1e-5);
}
