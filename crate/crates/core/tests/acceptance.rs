//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use flagopt::bench::{
    fit_rate, generate_problem, reference_optimum, run_against_reference, run_and_trace, Algorithm,
    FitStatus, Generator, ProblemDescriptor, RunConfig, DEFAULT_BURN_IN,
};
use flagopt::flag::{flag_run, FlagConfig, DEFAULT_DELTA};
use flagopt::oracles::{
    check_binary_search, check_eta_chain, check_flag_run, check_gradient_mapping,
    check_min_diag_metric, check_mirror_descent_inequality, check_prox_lipschitz, CheckReport,
};
use flagopt::{CompositeProblem, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn reports_pass(reports: &[CheckReport]) -> (bool, String) {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({} violations)", r.name, r.violations))
        .collect();
    let trials: usize = reports.iter().map(|r| r.trials).sum();
    if failed.is_empty() {
        (
            true,
            format!("{} checks, {trials} trials, 0 violations", reports.len()),
        )
    } else {
        (false, format!("failed: {}", failed.join(", ")))
    }
}

fn reference_lasso() -> (CompositeProblem, f64) {
    let p = generate_problem(&ProblemDescriptor::reference_lasso()).expect("reference lasso");
    let f_star = reference_optimum(&p, 50_000)
        .expect("reference optimum")
        .value;
    (p, f_star)
}

/// One default instance per generator: lasso and logistic unconstrained,
/// box_qp on its default `[−1, 1]^d`.
fn all_generators() -> Vec<(Generator, CompositeProblem)> {
    Generator::ALL
        .iter()
        .map(|&g| {
            (
                g,
                generate_problem(&ProblemDescriptor::new(g, 7, 50, 20, 0.1)).expect("generator"),
            )
        })
        .collect()
}

/// Explicit rate bound `F(y_{T+1}) − F* ≤ 1001·q_T²·L·D/T³`.
fn explicit_rate_bound() -> Outcome {
    let (p, f_star) = reference_lasso();
    let d_inf = p.set().diameters().linf_sq;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for t in [50usize, 200, 500] {
        let out = flag_run(&p, &FlagConfig::new(t)).expect("flag run");
        let gap = p.eval(&out.solution).unwrap() - f_star;
        let q = out.q();
        let bound = 1001.0 * q * q * p.lipschitz() * d_inf / (t as f64).powi(3);
        ok &= gap <= bound * (1.0 + 1e-6);
        worst = worst.max(gap / bound);
    }
    Outcome::new(
        ok,
        format!("max gap/bound = {worst:.3e} over T in {{50, 200, 500}}"),
    )
}

fn flag_runs() -> Vec<(CompositeProblem, flagopt::FlagOutput)> {
    let mut runs = Vec::new();
    for (_, p) in all_generators() {
        for t in [50usize, 200] {
            let out = flag_run(&p, &FlagConfig::new(t)).expect("flag run");
            runs.push((p.clone(), out));
        }
    }
    runs
}

fn eta_recurrence(runs: &[(CompositeProblem, flagopt::FlagOutput)]) -> Outcome {
    let mut reports: Vec<CheckReport> = runs
        .iter()
        .flat_map(|(p, out)| check_flag_run(p, out))
        .filter(|r| r.name == "flag_eta_recurrence")
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let ls: Vec<f64> = (0..200)
            .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
            .collect();
        reports.push(check_eta_chain(&ls).expect("positive sequence"));
    }
    let (ok, detail) = reports_pass(&reports);
    Outcome::new(ok, detail)
}

fn adagrad_inequalities(runs: &[(CompositeProblem, flagopt::FlagOutput)]) -> Outcome {
    let mut reports: Vec<CheckReport> = runs
        .iter()
        .flat_map(|(p, out)| check_flag_run(p, out))
        .filter(|r| r.name == "adagrad_metric_sum" || r.name == "q_bounds")
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for set in 0..20 {
        let d = rng.random_range(1..=5);
        let t = rng.random_range(1..=10);
        let gs: Vec<Vector> = (0..t)
            .map(|_| loop {
                let v: Vector = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.dot(&v).sqrt();
                if n > 1e-3 {
                    break v / n;
                }
            })
            .collect();
        reports.push(check_min_diag_metric(&gs, 1000, set).expect("valid g set"));
    }
    let (ok, detail) = reports_pass(&reports);
    Outcome::new(ok, detail)
}

fn sampling_suites() -> Outcome {
    let mut reports = Vec::new();
    let (mut gm_caught, mut pl_caught) = (0, 0);
    let mut controls = Vec::new();
    for (g, p) in all_generators() {
        reports.push(check_gradient_mapping(&p, 500, 11));
        reports.push(check_prox_lipschitz(&p, 500, 12));
        let broken = p.rescaled_lipschitz(0.1).expect("rescale");
        let gm = check_gradient_mapping(&broken, 500, 11).violations;
        let pl = check_prox_lipschitz(&broken, 500, 12).violations;
        gm_caught += gm;
        pl_caught += pl;
        controls.push(format!("{} {gm}/{pl}", g.name()));
    }
    let (ok, detail) = reports_pass(&reports);
    let controls_ok = gm_caught > 0 && pl_caught > 0;
    Outcome::new(
        ok && controls_ok,
        format!(
            "{detail}; L/10 controls (gradient mapping/prox) {}",
            controls.join(", ")
        ),
    )
}

fn binary_search_contract(runs: &[(CompositeProblem, flagopt::FlagOutput)]) -> Outcome {
    let mut reports = Vec::new();
    for (_, p) in all_generators() {
        let eps = FlagConfig::new(100).epsilon(p.dim());
        reports.push(check_binary_search(&p, 200, 5, eps));
    }
    reports.extend(
        runs.iter()
            .flat_map(|(p, out)| check_flag_run(p, out))
            .filter(|r| r.name == "prox_call_budget"),
    );
    let max_calls = runs
        .iter()
        .flat_map(|(_, out)| out.checks.iter().map(|c| c.prox_calls))
        .max()
        .unwrap_or(0);
    let (ok, detail) = reports_pass(&reports);
    Outcome::new(
        ok,
        format!("{detail}; max prox calls per iteration {max_calls}"),
    )
}

fn rate_separation() -> Outcome {
    let (p, f_star) = reference_lasso();
    let t = 500;
    let mut parts = Vec::new();
    let mut ok = true;
    let bands: [(Algorithm, f64, f64); 4] = [
        (Algorithm::Flag, f64::NEG_INFINITY, -1.3),
        (Algorithm::Fista, f64::NEG_INFINITY, -1.3),
        (Algorithm::Ista, -1.3, -0.7),
        (Algorithm::Adagrad, -1.2, -0.3),
    ];
    for (alg, lo, hi) in bands {
        let run = run_against_reference(&p, alg, t, DEFAULT_DELTA, f_star).expect("run");
        match fit_rate(&run.trace, DEFAULT_BURN_IN) {
            Ok(fit) => {
                let inside = fit.slope >= lo && fit.slope <= hi;
                ok &= inside;
                let note = if fit.status == FitStatus::ConvergedExactly {
                    " (exact)"
                } else {
                    ""
                };
                let verdict = if inside { "ok" } else { "out of band" };
                parts.push(format!("{}={:.3}{note} {verdict}", alg.name(), fit.slope));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{}: {e}", alg.name()));
            }
        }
    }
    Outcome::new(ok, parts.join("; "))
}

fn mirror_descent() -> Outcome {
    let desc = ProblemDescriptor::new(Generator::BoxQp, 7, 0, 20, 0.0);
    let p = generate_problem(&desc).expect("box qp");
    let out = flag_run(&p, &FlagConfig::new(100).with_history()).expect("flag run");
    if out.stopped_early {
        return Outcome::new(false, "run stopped before T = 100");
    }
    match check_mirror_descent_inequality(&p, &out, 50, 3) {
        Ok(rep) => Outcome::new(
            rep.passed(),
            format!(
                "{} u samples, {} violations, worst margin {:.3e}",
                rep.trials, rep.violations, rep.worst_margin
            ),
        ),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn strip_elapsed(text: &str) -> String {
    text.lines()
        .map(|l| match l.rsplit_once(',') {
            Some((head, _)) if !l.starts_with('#') => head,
            _ => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let desc = ProblemDescriptor::new(Generator::Lasso, 3, 40, 12, 0.05).with_box(-5.0, 5.0);
    for alg in Algorithm::ALL {
        let mut texts = Vec::new();
        for rep in 0..2 {
            let mut cfg = RunConfig::new(desc.clone(), alg, 150);
            cfg.ref_iters = 3000;
            let path = dir.path().join(format!("{}-{rep}.csv", alg.name()));
            cfg.out_path = Some(path.clone());
            if let Err(e) = run_and_trace(&cfg) {
                return Outcome::new(false, format!("{}: {e}", alg.name()));
            }
            texts.push(strip_elapsed(
                &std::fs::read_to_string(path).expect("trace"),
            ));
        }
        if texts[0] != texts[1] {
            return Outcome::new(false, format!("{} traces differ", alg.name()));
        }
    }
    Outcome::new(
        true,
        "traces of all five algorithms byte-identical excluding elapsed_s",
    )
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let mut report = |id: u32, name: &str, limit_s: f64, run: &dyn Fn() -> Outcome| {
        let clock = Instant::now();
        let outcome = run();
        let secs = clock.elapsed().as_secs_f64();
        let passed = outcome.passed && secs <= limit_s;
        all_passed &= passed;
        let limit = if limit_s.is_finite() {
            format!("limit {limit_s:.1}s")
        } else {
            "no limit".into()
        };
        println!(
            "criterion {id} {name:<26} {}  [{secs:.2}s, {limit}]  {}",
            if passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
    };
    report(1, "explicit_rate_bound", 60.0, &explicit_rate_bound);
    let clock = Instant::now();
    let runs = flag_runs();
    let setup = clock.elapsed().as_secs_f64();
    report(2, "eta_recurrence", 5.0 - setup, &|| eta_recurrence(&runs));
    report(3, "adagrad_inequalities", 10.0 - setup, &|| {
        adagrad_inequalities(&runs)
    });
    report(4, "gradient_mapping_and_prox", 10.0, &sampling_suites);
    report(5, "binary_search_contract", 10.0 - setup, &|| {
        binary_search_contract(&runs)
    });
    report(6, "rate_separation", 120.0, &rate_separation);
    report(7, "mirror_descent_inequality", 5.0, &mirror_descent);
    report(8, "determinism", f64::INFINITY, &determinism);
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
