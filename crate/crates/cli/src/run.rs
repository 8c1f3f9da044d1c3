//! Dispatch of a resolved config to the library.

use std::time::Instant;

use mpjump::bsde::{solve_infinite, InfiniteSolution, LadderOptions};
use mpjump::examples::{example, ControlExample, Example1, Example2, Example3, Example4, ExampleParams};
use mpjump::hamiltonian::{adjoint_problem, AdjointTriple};
use mpjump::model::{ControlPolicy, InformationFlow};
use mpjump::performance::estimate_performance;
use mpjump::regression::Basis;
use mpjump::simulate::{simulate_paths_with, PathBundle, SimOptions};
use mpjump::verify::{verify_candidate, Verdict, VerificationInput, VerificationReport, VerifyOptions};
use mpjump::TimeGrid;
use serde_json::{json, Value as Json};
use toml::Table;

use crate::config::{self, AdjointSource, BasisKind, FlowKind, RunConfig, Subcommand};
use crate::output::{self, num, Csv, OutputDir};
use crate::ExitError;

struct Run {
    cfg: RunConfig,
    hash: String,
    ex: Box<dyn ControlExample<f64>>,
}

pub fn run(verbatim: &str, table: Table) -> Result<(), ExitError> {
    let start = Instant::now();
    let cfg = config::from_table(&table)?;
    let hash = config::config_hash(&table);
    let out = OutputDir::create(&cfg.out)?;
    out.clear()?;
    out.write(output::CONFIG_ECHO, verbatim)?;
    out.write(output::RESOLVED, &config::canonical(&table))?;
    let ex = build_example(&cfg)?;
    let r = Run { cfg, hash, ex };
    let result = match r.cfg.subcommand {
        Subcommand::Simulate => r.simulate(&out),
        Subcommand::Bsde => r.bsde(&out),
        Subcommand::Verify => r.verify(&out),
        Subcommand::Example => r.example(&out),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => e.code,
    };
    if let Err(e) = &result {
        if !matches!(code, ExitError::VIOLATED | ExitError::CONVERGENCE) || !out.exists(output::REPORT) {
            out.write_json(
                output::REPORT,
                &json!({"config_hash": r.hash, "error": e.message, "exit_code": code}),
            )?;
        }
    }
    let meta = json!({
        "subcommand": r.cfg.subcommand.name(),
        "seed": r.cfg.seed,
        "config_hash": r.hash,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "exit_code": code,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": rayon_threads(),
    });
    out.write_json(output::META, &meta)?;
    result
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn params(cfg: &RunConfig) -> ExampleParams<f64> {
    let mut p = if cfg.example == 4 { ExampleParams::merton() } else { ExampleParams::default() };
    let o = &cfg.params;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.rho, o.rho);
    set(&mut p.mu, o.mu);
    set(&mut p.sigma, o.sigma);
    set(&mut p.delta, o.delta);
    set(&mut p.gamma, o.gamma);
    set(&mut p.theta, o.theta);
    set(&mut p.x0, o.x0);
    set(&mut p.s, o.s);
    set(&mut p.jump_intensity, o.jump_intensity);
    for (dst, v) in [
        (&mut p.jump_marks, &o.jump_marks),
        (&mut p.jump_probabilities, &o.jump_probabilities),
        (&mut p.rho_atoms, &o.rho_atoms),
        (&mut p.rho_probabilities, &o.rho_probabilities),
    ] {
        if let Some(v) = v {
            dst.clone_from(v);
        }
    }
    p
}

fn flow(cfg: &RunConfig) -> InformationFlow<f64> {
    match cfg.information.flow {
        FlowKind::Full => InformationFlow::Full,
        FlowKind::Trivial => InformationFlow::Trivial,
        FlowKind::Delayed => InformationFlow::Delayed(cfg.information.delay),
    }
}

fn build_example(cfg: &RunConfig) -> Result<Box<dyn ControlExample<f64>>, ExitError> {
    Ok(example(cfg.example, params(cfg), flow(cfg))?)
}

fn basis(cfg: &RunConfig) -> Basis<f64> {
    let d = cfg.bsde.degree;
    match cfg.bsde.basis {
        BasisKind::Constant => Basis::Constant,
        BasisKind::Polynomial => Basis::Polynomial { degree: d },
        BasisKind::Laurent => Basis::Laurent { degree: d },
    }
}

fn verdict_code(v: Verdict) -> Result<(), ExitError> {
    if v == Verdict::Violated {
        Err(ExitError {
            code: ExitError::VIOLATED,
            message: "verification verdict: violated".into(),
        })
    } else {
        Ok(())
    }
}

impl Run {
    fn grid(&self) -> Result<TimeGrid<f64>, ExitError> {
        Ok(TimeGrid::new(self.cfg.grid.horizon, self.cfg.n_fine_steps())?)
    }

    /// Constant candidate control, if any.
    fn candidate(&self) -> Option<Vec<f64>> {
        self.cfg.control.candidate.clone().or_else(|| self.ex.optimal_control())
    }

    fn candidate_policy(&self) -> Result<ControlPolicy<f64>, ExitError> {
        Ok(match &self.cfg.control.candidate {
            Some(c) => self.ex.constant_policy(c)?,
            None => self.ex.optimal_policy()?,
        })
    }

    fn simulate_with(&self, policy: &ControlPolicy<f64>) -> Result<PathBundle<f64>, ExitError> {
        let options = SimOptions {
            substeps: self.cfg.grid.substeps,
        };
        Ok(simulate_paths_with(self.ex.model(), policy, &self.grid()?, self.cfg.n_paths, self.cfg.seed, options)?)
    }

    fn candidate_label(&self) -> String {
        match &self.cfg.control.candidate {
            Some(c) => format!("constant {c:?}"),
            None => "closed-form optimum".into(),
        }
    }

    fn performance_json(&self, bundle: &PathBundle<f64>) -> Result<Json, ExitError> {
        let u = self.candidate();
        let reward = self.ex.reward(u.as_deref());
        let est = estimate_performance(bundle, &reward)?;
        let exact = u.as_ref().and_then(|u| self.ex.performance(u, Some(bundle.grid().horizon())));
        let full = u.as_ref().and_then(|u| self.ex.performance(u, None));
        Ok(json!({
            "j_hat": est.j_hat,
            "std_err": est.std_err,
            "tail_bound": est.tail_bound,
            "n_used": est.n_used,
            "n_divergent": est.n_divergent,
            "closed_form_truncated": exact,
            "closed_form_infinite": full,
        }))
    }

    fn simulate(&self, out: &OutputDir) -> Result<(), ExitError> {
        let bundle = self.simulate_with(&self.candidate_policy()?)?;
        let (n, k) = (bundle.state_dim(), bundle.control_dim());
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("X_{i}")));
        header.extend((1..=k).map(|i| format!("u_{i}")));
        let mut csv = Csv::new(&self.hash, &header);
        let grid = bundle.grid();
        for path in bundle.valid_paths().into_iter().take(self.cfg.output.max_paths) {
            for node in 0..grid.n_nodes() {
                let mut row = vec![path.to_string(), num(grid.time(node))];
                row.extend(bundle.x(path, node).iter().map(|v| num(*v)));
                row.extend(bundle.u(path, node).iter().map(|v| num(*v)));
                csv.row(&row);
            }
        }
        out.write(output::RESULTS, &csv.into_string())?;
        let last = grid.n_steps();
        let moments: Vec<Json> = bundle
            .state_moments(last)
            .into_iter()
            .map(|(m, v)| json!({"mean": m, "variance": v}))
            .collect();
        let report = json!({
            "config_hash": self.hash,
            "example": self.cfg.example,
            "candidate": self.candidate_label(),
            "n_paths": bundle.n_paths(),
            "n_divergent": bundle.n_divergent(),
            "clamp_events": bundle.clamp_events(),
            "recorded_nodes": grid.n_nodes(),
            "terminal_state_moments": moments,
            "performance": self.performance_json(&bundle)?,
        });
        out.write_json(output::REPORT, &report)
    }

    fn ladder(&self, bundle: &PathBundle<f64>) -> Result<(InfiniteSolution<f64>, Json), ExitError> {
        let mut problem = adjoint_problem(&self.ex.hamiltonian(), bundle, self.cfg.bsde.max_samples)?;
        if let Some(l) = self.cfg.bsde.lambda {
            problem = problem.with_lambda(l);
        }
        let constants = *problem.constants();
        let check = problem.check_lambda_condition();
        let options = LadderOptions {
            horizons: self.cfg.bsde.horizons.clone(),
            tolerance: self.cfg.bsde.tolerance,
            window: self.cfg.bsde.window,
            basis: basis(&self.cfg),
        };
        let info = json!({
            "constants": constants,
            "lambda_bound": constants.lambda_bound(),
            "lambda_margin": check.margin,
        });
        let sol = solve_infinite(&problem, bundle, &options)?;
        Ok((sol, info))
    }

    fn bsde(&self, out: &OutputDir) -> Result<(), ExitError> {
        let bundle = self.simulate_with(&self.candidate_policy()?)?;
        let (sol, info) = self.ladder(&bundle)?;
        let s = &sol.solution;
        let n = s.y_dim();
        let analytic = self.ex.analytic_adjoint(&bundle).ok();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("mean_Y_{i}")));
        header.extend((1..=n).map(|i| format!("mean_p_analytic_{i}")));
        let mut csv = Csv::new(&self.hash, &header);
        let window = sol.diagnostics.window;
        let mut sq = 0.0;
        let mut count = 0usize;
        for node in 0..s.grid().n_nodes() {
            let t = s.grid().time(node);
            let mut row = vec![num(t)];
            row.extend(s.mean_y(node).into_iter().map(num));
            let mut exact = vec![f64::NAN; n];
            if let Some(a) = &analytic {
                exact.fill(0.0);
                for (i, &p) in s.path_ids().iter().enumerate() {
                    let j = a.index_of_path(p).expect("analytic adjoint covers every valid path");
                    for l in 0..n {
                        exact[l] += a.p(j, node)[l];
                        if t <= window + 1e-12 && !a.omitted_components.contains(&l) {
                            let e = a.p(j, node)[l];
                            if e != 0.0 {
                                sq += (s.y(i, node)[l] / e - 1.0).powi(2);
                                count += 1;
                            }
                        }
                    }
                }
                for v in &mut exact {
                    *v /= s.n_paths() as f64;
                }
            }
            row.extend(exact.into_iter().map(num));
            csv.row(&row);
        }
        out.write(output::RESULTS, &csv.into_string())?;
        let rms = (count > 0).then(|| (sq / count as f64).sqrt());
        let report = json!({
            "config_hash": self.hash,
            "example": self.cfg.example,
            "candidate": self.candidate_label(),
            "problem": info,
            "ladder": sol.diagnostics,
            "solve": s.diagnostics,
            "relative_rms_vs_analytic": rms,
            "analytic_notes": analytic.as_ref().map(|a| a.notes.clone()),
        });
        out.write_json(output::REPORT, &report)?;
        if sol.diagnostics.converged {
            Ok(())
        } else {
            let d = &sol.diagnostics;
            Err(ExitError {
                code: ExitError::CONVERGENCE,
                message: format!(
                    "ladder {:?} did not reach tolerance {}: relative distances {:?}",
                    d.horizons, d.tolerance, d.relative_distances
                ),
            })
        }
    }

    fn competitor_controls(&self) -> Result<Vec<Vec<f64>>, ExitError> {
        if !self.cfg.control.competitors.is_empty() {
            return Ok(self.cfg.control.competitors.clone());
        }
        match self.candidate() {
            Some(u) => Ok(vec![u.iter().map(|v| 2.0 * v).collect()]),
            None => Err(ExitError::validation(
                "key `control.competitors`: required when the candidate is not a constant control",
            )),
        }
    }

    fn probes(&self, competitors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if !self.cfg.verify.probes.is_empty() {
            return self.cfg.verify.probes.clone();
        }
        let mut probes: Vec<Vec<f64>> = Vec::new();
        if let Some(u) = self.candidate() {
            for f in [0.5, 0.75, 1.25, 1.5, 2.0] {
                probes.push(u.iter().map(|v| f * v).collect());
            }
        }
        probes.extend(competitors.iter().cloned());
        let set = self.ex.control_set();
        probes.retain(|p| p.len() == set.dim() && set.contains(p));
        probes
    }

    fn adjoint(&self, bundle: &PathBundle<f64>) -> Result<(AdjointTriple<f64>, Json), ExitError> {
        match self.cfg.verify.adjoint {
            AdjointSource::Analytic => Ok((self.ex.analytic_adjoint(bundle)?, Json::Null)),
            AdjointSource::Bsde => {
                let (sol, info) = self.ladder(bundle)?;
                let diag = serde_json::to_value(&sol.diagnostics).expect("diagnostics serialise");
                let adj = AdjointTriple::from_solution(sol.solution, self.ex.model())?;
                Ok((adj, json!({"problem": info, "ladder": diag})))
            }
        }
    }

    fn verification(&self, bundle: &PathBundle<f64>) -> Result<(VerificationReport, Json), ExitError> {
        let competitors = self.competitor_controls()?;
        let mut bundles = Vec::with_capacity(competitors.len());
        for c in &competitors {
            bundles.push(self.simulate_with(&self.ex.constant_policy(c)?)?);
        }
        let (adjoint, adjoint_info) = self.adjoint(bundle)?;
        let ham = self.ex.hamiltonian();
        let v = &self.cfg.verify;
        let check = ham.check_gradients(&self.ex.probe_box(), v.gradient_probes, self.cfg.seed, v.gradient_tolerance)?;
        let set = self.ex.control_set();
        let input = VerificationInput {
            label: self.candidate_label(),
            hamiltonian: &ham,
            adjoint: &adjoint,
            candidate: bundle,
            competitors: bundles.iter().collect(),
            probes: self.probes(&competitors),
            flow: flow(&self.cfg),
            control_set: &set,
            gradient_check: Some(check),
        };
        let options = VerifyOptions {
            n_buckets: v.buckets,
            max_nodes: v.max_nodes,
            tail_window: v.tail_window,
            transversality_rtol: v.transversality_rtol,
            concavity_probes: v.concavity_probes,
            seed: self.cfg.seed,
            ..VerifyOptions::default()
        };
        let report = verify_candidate(&input, &options)?;
        eprint!("{}", report.to_table());
        Ok((report, json!({"competitors": competitors, "adjoint": adjoint_info})))
    }

    fn verification_csv(&self, report: &VerificationReport) -> String {
        let header: Vec<String> = ["condition", "t_start", "t_end", "component", "estimate", "std_err", "tolerance", "pass"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut csv = Csv::new(&self.hash, &header);
        let atol = VerifyOptions::<f64>::default().atol;
        for b in &report.stationarity.buckets {
            for (c, (r, se)) in b.residual.iter().zip(&b.std_err).enumerate() {
                csv.row(&[
                    "stationarity".into(),
                    num(b.t_start),
                    num(b.t_end),
                    (c + 1).to_string(),
                    num(*r),
                    num(*se),
                    num(3.0 * se + atol),
                    b.pass.to_string(),
                ]);
            }
        }
        for b in &report.hamiltonian_gap.buckets {
            csv.row(&[
                "hamiltonian_gap".into(),
                num(b.t_start),
                num(b.t_end),
                "0".into(),
                num(b.gap),
                num(b.regression_error),
                num(b.tolerance),
                b.pass.to_string(),
            ]);
        }
        for (i, t) in report.transversality.iter().enumerate() {
            csv.row(&[
                format!("transversality_{}", i + 1),
                num(t.window.0),
                num(t.window.1),
                "0".into(),
                num(t.estimate),
                num(t.std_err),
                num(t.tolerance),
                (t.verdict != Verdict::Violated).to_string(),
            ]);
        }
        csv.into_string()
    }

    fn verify(&self, out: &OutputDir) -> Result<(), ExitError> {
        let bundle = self.simulate_with(&self.candidate_policy()?)?;
        let (report, extra) = self.verification(&bundle)?;
        out.write(output::RESULTS, &self.verification_csv(&report))?;
        let doc = json!({
            "config_hash": self.hash,
            "example": self.cfg.example,
            "overall": report.overall(),
            "report": report,
            "inputs": extra,
        });
        out.write_json(output::REPORT, &doc)?;
        verdict_code(report.overall())
    }

    fn closed_forms(&self) -> Result<Json, ExitError> {
        let p = params(&self.cfg);
        Ok(match self.cfg.example {
            1 => {
                let e = Example1::new(p)?;
                json!({"p_hat_0": e.p0()})
            }
            2 => {
                let e = Example2::new(p)?;
                json!({"stated_control": e.stated_control(), "stationary_control": e.stationary_control()})
            }
            3 => {
                let e = Example3::new(p, flow(&self.cfg))?;
                json!({"rho_mean": e.rho_mean(), "stated_control": e.stated_control(None)})
            }
            _ => {
                let e = Example4::new(p)?;
                json!({"u_hat": e.u_hat(), "lambda_hat": e.lambda_hat(), "b": e.b(), "k": e.k()})
            }
        })
    }

    fn example(&self, out: &OutputDir) -> Result<(), ExitError> {
        let bundle = self.simulate_with(&self.candidate_policy()?)?;
        let (report, extra) = self.verification(&bundle)?;
        out.write(output::RESULTS, &self.verification_csv(&report))?;
        let u_hat = self.ex.optimal_control();
        let verdicts: Vec<Json> = report
            .conditions()
            .into_iter()
            .map(|c| json!({"name": c.name, "verdict": c.verdict}))
            .collect();
        let doc = json!({
            "config_hash": self.hash,
            "example": self.cfg.example,
            "params": params(&self.cfg),
            "u_hat": u_hat,
            "closed_forms": self.closed_forms()?,
            "performance": self.performance_json(&bundle)?,
            "verdicts": verdicts,
            "sufficiency": report.sufficiency,
            "necessity": report.necessity,
            "overall": report.overall(),
            "report": report,
            "inputs": extra,
        });
        out.write_json(output::REPORT, &doc)?;
        verdict_code(report.overall())
    }
}
