use mpjump::examples::{ControlExample, Example1, Example2, Example4, ExampleParams};
use mpjump::model::ControlSet;
use mpjump::performance::RunningReward;
use mpjump::simulate::simulate_paths;
use mpjump::verify::Verdict;
use mpjump::TimeGrid;
use proptest::prelude::*;

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Verified), Just(Verdict::Inconclusive), Just(Verdict::Violated)]
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_nodes_round_trip(horizon in 0.1f64..200.0, n in 1usize..5000) {
        let g = TimeGrid::new(horizon, n).unwrap();
        prop_assert_eq!(g.time(0), 0.0);
        prop_assert_eq!(g.time(n), horizon);
        prop_assert_eq!(g.n_nodes(), n + 1);
        for k in [0, n / 3, n / 2, n] {
            prop_assert_eq!(g.index_of(g.time(k)), Some(k));
            prop_assert!(g.index_floor(g.time(k)) == k);
        }
        prop_assert!((g.dt() * n as f64 - horizon).abs() < 1e-9 * horizon);
    }

    #[test]
    fn verdict_and_is_a_meet(a in verdict(), b in verdict(), c in verdict()) {
        prop_assert_eq!(a.and(b), b.and(a));
        prop_assert_eq!(a.and(b).and(c), a.and(b.and(c)));
        prop_assert_eq!(a.and(Verdict::Verified), a);
        prop_assert_eq!(a.and(Verdict::Violated), Verdict::Violated);
        prop_assert_eq!(a.and(a), a);
    }

    #[test]
    fn clamp_projects_into_the_box(
        lo in prop::collection::vec(-5.0f64..0.0, 3),
        width in prop::collection::vec(0.0f64..5.0, 3),
        u in prop::collection::vec(-20.0f64..20.0, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let set = ControlSet::new(lo, hi).unwrap();
        let mut v = u.clone();
        let changed = set.clamp(&mut v);
        prop_assert!(set.contains(&v));
        prop_assert_eq!(changed, v != u);
        let mut w = v.clone();
        prop_assert!(!set.clamp(&mut w));
        prop_assert_eq!(w, v);
    }

    #[test]
    fn hamiltonian_without_adjoints_is_the_reward(x in 0.01f64..50.0, u in 0.001f64..2.0, t in 0.0f64..30.0) {
        let ex = Example1::<f64>::new(ExampleParams::default()).unwrap();
        let h = ex.hamiltonian();
        let f = ex.reward(None).value(t, &[x], &[u]);
        prop_assert_eq!(h.eval(t, &[x], &[u], &[0.0], &[0.0], &[]).unwrap(), f);
    }

    #[test]
    fn hamiltonian_is_affine_in_the_adjoints(
        x in 0.01f64..50.0, u in 0.001f64..2.0, p in -5.0f64..5.0, q in -5.0f64..5.0, a in -3.0f64..3.0,
    ) {
        let ex = Example1::<f64>::new(ExampleParams::default()).unwrap();
        let h = ex.hamiltonian();
        let h0 = h.eval(1.0, &[x], &[u], &[0.0], &[0.0], &[]).unwrap();
        let h1 = h.eval(1.0, &[x], &[u], &[p], &[q], &[]).unwrap();
        let ha = h.eval(1.0, &[x], &[u], &[a * p], &[a * q], &[]).unwrap();
        prop_assert!(((ha - h0) - a * (h1 - h0)).abs() < 1e-9 * (1.0 + h1.abs() + ha.abs()));
    }

    #[test]
    fn analytic_gradients_match_differences(
        x in 0.1f64..10.0, u in 0.01f64..1.0, p in -3.0f64..3.0, q in -3.0f64..3.0,
    ) {
        let ex = Example1::<f64>::new(ExampleParams::default()).unwrap();
        let h = ex.hamiltonian();
        let gx = h.grad_x(0.5, &[x], &[u], &[p], &[q], &[]).unwrap()[0];
        let gu = h.grad_u(0.5, &[x], &[u], &[p], &[q], &[]).unwrap()[0];
        let fx = central(|y| h.eval(0.5, &[y], &[u], &[p], &[q], &[]).unwrap(), x, 1e-5 * x);
        let fu = central(|v| h.eval(0.5, &[x], &[v], &[p], &[q], &[]).unwrap(), u, 1e-5 * u);
        prop_assert!((gx - fx).abs() < 1e-5 * (1.0 + gx.abs()));
        prop_assert!((gu - fu).abs() < 1e-5 * (1.0 + gu.abs()));
    }

    #[test]
    fn example2_root_is_stationary(mu in 0.0f64..0.2, sigma in 0.05f64..0.6, rho in 0.02f64..0.3) {
        let params = ExampleParams { mu, sigma, rho, ..ExampleParams::default() };
        let Ok(ex) = Example2::<f64>::new(params) else { return Ok(()) };
        let u = ex.stationary_control();
        prop_assume!(u > 0.0 && u < 1.0 / sigma);
        let j = |v: f64| ex.performance(&[v], None).unwrap_or(f64::NAN);
        let h = 1e-5 * u;
        prop_assume!(j(u - h).is_finite() && j(u + h).is_finite());
        let d = central(j, u, h);
        prop_assert!(d.abs() < 1e-4 * (1.0 + j(u).abs()), "dJ/du = {d} at u = {u}");
        prop_assert!(j(u) >= j(0.9 * u) && j(u) >= j(1.1 * u));
    }

    #[test]
    fn merton_constants_are_stationary(
        mu in 0.03f64..0.12, sigma in 0.1f64..0.5, gamma in -2.0f64..0.9, delta in 0.05f64..0.3,
    ) {
        prop_assume!(gamma.abs() > 0.05);
        let params = ExampleParams { mu, sigma, gamma, delta, ..ExampleParams::merton() };
        let Ok(ex) = Example4::<f64>::new(params) else { return Ok(()) };
        let (u, l) = (ex.u_hat(), ex.lambda_hat());
        let j = |a: f64, b: f64| ex.performance(&[a, b], None).unwrap_or(f64::NAN);
        let best = j(u, l);
        prop_assume!(best.is_finite());
        let du = central(|a| j(a, l), u, 1e-5 * u.abs().max(1e-3));
        let dl = central(|b| j(u, b), l, 1e-5 * l);
        let scale = 1.0 + best.abs();
        prop_assert!(du.abs() < 1e-4 * scale, "dJ/du = {du}");
        prop_assert!(dl.abs() < 1e-4 * scale / l, "dJ/dlambda = {dl}");
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), n in 1usize..40) {
        let ex = Example1::<f64>::new(ExampleParams::default()).unwrap();
        let grid = TimeGrid::new(2.0, n).unwrap();
        let policy = ex.optimal_policy().unwrap();
        let a = simulate_paths(ex.model(), &policy, &grid, 8, seed).unwrap();
        let b = simulate_paths(ex.model(), &policy, &grid, 8, seed).unwrap();
        for i in 0..8 {
            prop_assert_eq!(a.path(i), b.path(i));
            prop_assert!(a.x(i, n)[0] > 0.0);
        }
    }
}
