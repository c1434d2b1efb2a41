//! Numerical checks of the inequalities behind FLAG's convergence proof.
//!
//! Each check samples inputs from a fixed seed, evaluates both sides of an
//! inequality by direct computation and reports how many samples violate
//! it beyond the mixed tolerance `lhs ≤ rhs + atol + rtol·|rhs|`. Sampling
//! is split into per-trial RNG streams so results do not depend on the
//! number of worker threads.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flag::{binary_search, halving_count, next_eta, FlagOutput, SearchCase};
use crate::par::{map_indexed, Execution};
use crate::problem::{CompositeProblem, Vector};
use crate::prox::{prox, UNIT_NORM_TOL};

/// Absolute and relative slack for single inequalities.
pub const TOL: f64 = 1e-9;
/// Slack for quantities summed over a whole run.
pub const AGGREGATE_TOL: f64 = 1e-6;
pub const DEFAULT_TRIALS: usize = 500;
/// Half-width of the cube sampled on unbounded sets.
pub const SAMPLE_RADIUS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` observed (negative means the raw inequality failed).
    pub worst_margin: f64,
    pub skipped: bool,
}

impl CheckReport {
    fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            trials: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            skipped: false,
        }
    }

    pub fn skipped(name: impl Into<String>) -> Self {
        CheckReport {
            skipped: true,
            ..Self::new(name)
        }
    }

    pub fn passed(&self) -> bool {
        !self.skipped && self.violations == 0
    }

    /// Records `lhs ≤ rhs` under the mixed tolerance.
    fn record(&mut self, lhs: f64, rhs: f64, atol: f64, rtol: f64) {
        self.worst_margin = self.worst_margin.min(rhs - lhs);
        if !(lhs <= rhs + atol + rtol * rhs.abs()) {
            self.violations += 1;
        }
    }

    fn fail(&mut self) {
        self.violations += 1;
        self.worst_margin = self.worst_margin.min(f64::NEG_INFINITY);
    }

    fn merge(mut self, other: CheckReport) -> Self {
        self.trials += other.trials;
        self.violations += other.violations;
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        self
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.skipped {
            "skipped"
        } else if self.violations == 0 {
            "pass"
        } else {
            "FAIL"
        };
        write!(
            f,
            "{:<32} {:>7} {:>10} {:>14.6e} {}",
            self.name, self.trials, self.violations, self.worst_margin, status
        )
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn sample_point(problem: &CompositeProblem, rng: &mut ChaCha8Rng) -> Vector {
    problem.set().sample(problem.dim(), SAMPLE_RADIUS, rng)
}

/// Perturbation size of the local pairs drawn by [`sample_pair`].
pub const LOCAL_STEP: f64 = 1e-3;

/// Even trials: two independent feasible points. Odd trials: a feasible
/// point and a copy moved by `LOCAL_STEP` along one random coordinate.
fn sample_pair(problem: &CompositeProblem, seed: u64, trial: usize) -> (Vector, Vector) {
    let mut rng = trial_rng(seed, trial);
    let x = sample_point(problem, &mut rng);
    if trial.is_multiple_of(2) {
        let y = sample_point(problem, &mut rng);
        return (x, y);
    }
    let i = rng.random_range(0..problem.dim());
    let mut y = x.clone();
    y[i] += LOCAL_STEP;
    let y = problem.set().project(&y);
    if y != x {
        return (x, y);
    }
    let mut y = x.clone();
    y[i] -= LOCAL_STEP;
    (x.clone(), problem.set().project(&y))
}

fn run_trials(
    name: &str,
    trials: usize,
    exec: Execution,
    trial: impl Fn(usize, &mut CheckReport) + Sync + Send,
) -> CheckReport {
    map_indexed(trials, exec, |i| {
        let mut r = CheckReport::new(name);
        r.trials = 1;
        trial(i, &mut r);
        r
    })
    .into_iter()
    .fold(CheckReport::new(name), CheckReport::merge)
}

fn norm(v: &Vector) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `F(prox(x)) ≤ F(y) + ⟨L(prox(x) − x), y − x⟩ − (L/2)‖x − prox(x)‖²`
/// at random feasible pairs, plus the `y = x` special case.
pub fn check_gradient_mapping(problem: &CompositeProblem, trials: usize, seed: u64) -> CheckReport {
    check_gradient_mapping_with(problem, trials, seed, Execution::default())
}

pub fn check_gradient_mapping_with(
    problem: &CompositeProblem,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> CheckReport {
    let l = problem.lipschitz();
    run_trials("gradient_mapping", trials, exec, |i, rep| {
        let mut rng = trial_rng(seed, i);
        let x = sample_point(problem, &mut rng);
        let y = sample_point(problem, &mut rng);
        let px = prox(problem, &x).expect("dimension");
        let f_px = problem.eval(&px).expect("dimension");
        let step = &px - &x;
        let half_sq = 0.5 * l * step.dot(&step);
        let rhs = problem.eval(&y).expect("dimension") + l * step.dot(&(&y - &x)) - half_sq;
        rep.record(f_px, rhs, TOL, TOL);
        let rhs_self = problem.eval(&x).expect("dimension") - half_sq;
        rep.record(f_px, rhs_self, TOL, TOL);
    })
}

/// `‖prox(x) − prox(y)‖ ≤ 2‖x − y‖` at random feasible pairs. Odd trials
/// use pairs differing in one coordinate by [`LOCAL_STEP`]; far-apart pairs
/// on a box are mostly clamped onto the same faces and hide any expansion.
pub fn check_prox_lipschitz(problem: &CompositeProblem, trials: usize, seed: u64) -> CheckReport {
    check_prox_lipschitz_with(problem, trials, seed, Execution::default())
}

pub fn check_prox_lipschitz_with(
    problem: &CompositeProblem,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> CheckReport {
    run_trials("prox_lipschitz", trials, exec, |i, rep| {
        let (x, y) = sample_pair(problem, seed, i);
        let lhs = norm(&(&prox(problem, &x).unwrap() - &prox(problem, &y).unwrap()));
        rep.record(lhs, 2.0 * norm(&(&x - &y)), TOL, 0.0);
    })
}

/// Largest observed `‖prox(x) − prox(y)‖/‖x − y‖` over random pairs.
pub fn prox_lipschitz_ratio(problem: &CompositeProblem, trials: usize, seed: u64) -> f64 {
    map_indexed(trials, Execution::default(), |i| {
        let (x, y) = sample_pair(problem, seed, i);
        norm(&(&prox(problem, &x).unwrap() - &prox(problem, &y).unwrap())) / norm(&(&x - &y))
    })
    .into_iter()
    .fold(0.0, f64::max)
}

/// Closed-form minimizer of `Σ_k g_kᵀ diag(s)⁻¹ g_k` over `s > 0`, `Σs ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinDiagMetric {
    /// `s*(i) = √a(i)/Σⱼ√a(j)` with `a(i) = Σ_k g_k(i)²`.
    pub weights: Vector,
    /// `q² = (Σᵢ√a(i))²`
    pub q_sq: f64,
}

pub fn min_diag_metric(g_list: &[Vector]) -> Result<MinDiagMetric> {
    let d = g_list
        .first()
        .map(|g| g.len())
        .ok_or_else(|| Error::invalid("empty g list"))?;
    let mut a = Vector::zeros(d);
    for g in g_list {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.len(),
            });
        }
        if (norm(g) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid("g vectors must have unit norm"));
        }
        for (ai, gi) in a.iter_mut().zip(g) {
            *ai += gi * gi;
        }
    }
    let roots = a.mapv(f64::sqrt);
    let total: f64 = roots.sum();
    Ok(MinDiagMetric {
        weights: roots / total,
        q_sq: total * total,
    })
}

/// `Σ_k Σ_i g_k(i)²/s(i)`, summing only over coordinates where `g_k(i) ≠ 0`.
fn metric_objective(g_list: &[Vector], s: &Vector) -> f64 {
    g_list
        .iter()
        .map(|g| {
            g.iter()
                .zip(s)
                .filter(|(gi, _)| **gi != 0.0)
                .map(|(gi, si)| gi * gi / si)
                .sum::<f64>()
        })
        .sum()
}

/// Verifies the closed-form minimizing diagonal metric: its objective equals
/// `q²` and no random trace-one diagonal metric does better.
pub fn check_min_diag_metric(g_list: &[Vector], samples: usize, seed: u64) -> Result<CheckReport> {
    let best = min_diag_metric(g_list)?;
    let value = metric_objective(g_list, &best.weights);
    let mut rep = check_metric_domination(g_list, &best.weights, samples, seed)?;
    rep.name = "min_diag_metric".into();
    rep.trials += 1;
    if (value - best.q_sq).abs() > TOL * best.q_sq.max(1.0) {
        rep.fail();
    }
    if (best.weights.sum() - 1.0).abs() > TOL {
        rep.fail();
    }
    Ok(rep)
}

/// Counts random trace-one diagonal metrics that beat `candidate`.
pub fn check_metric_domination(
    g_list: &[Vector],
    candidate: &Vector,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let d = candidate.len();
    if g_list.iter().any(|g| g.len() != d) {
        return Err(Error::invalid(
            "dimension mismatch between metric and g list",
        ));
    }
    let value = metric_objective(g_list, candidate);
    let mut rep = CheckReport::new("metric_domination");
    for i in 0..samples {
        let mut rng = trial_rng(seed, i);
        let raw: Vector = (0..d).map(|_| rng.random_range(1e-3..1.0)).collect();
        let s = &raw / raw.sum();
        rep.trials += 1;
        rep.record(value, metric_objective(g_list, &s), TOL, TOL);
    }
    Ok(rep)
}

/// Checks the stepsize identities on given `(L_k, η_k)` sequences:
/// `η_k²L_k = Σ_{i≤k} η_i`, `η_{k−1}²L_{k−1} − η_k²L_k + η_k = 0`,
/// `η_kL_k ≥ 1`, and the stepsize-sum bound `Σ η_k ≥ k³/(1000 Σ L_k)`
/// at every prefix.
pub fn check_eta_sequence(l_list: &[f64], eta_list: &[f64]) -> Result<CheckReport> {
    if l_list.len() != eta_list.len() || l_list.is_empty() {
        return Err(Error::invalid(
            "L and η sequences must be nonempty and equally long",
        ));
    }
    let mut rep = CheckReport::new("eta_recurrence");
    let (mut eta_sum, mut l_sum, mut prev_weight) = (0.0, 0.0, 0.0);
    for (k, (&l, &eta)) in l_list.iter().zip(eta_list).enumerate() {
        let k = (k + 1) as f64;
        eta_sum += eta;
        l_sum += l;
        let weight = eta * eta * l;
        rep.trials += 1;
        // The weight identity as two one-sided checks on |η²L − Ση| ≤ 1e−9·Ση.
        rep.record((weight - eta_sum).abs(), TOL * eta_sum, 0.0, 0.0);
        rep.record((prev_weight - weight + eta).abs(), TOL * weight, 0.0, 0.0);
        rep.record(1.0 - TOL, eta * l, 0.0, 0.0);
        rep.record(k * k * k / (1000.0 * l_sum), eta_sum, 0.0, TOL);
        prev_weight = weight;
    }
    Ok(rep)
}

/// Runs the stepsize recurrence over `l_list` with an independent formula
/// (`η_k = (1 + √(1 + 4L_kΣ_{i<k}η_i))/(2L_k)`), cross-checks it against
/// [`next_eta`] and verifies the stepsize identities on the result.
pub fn check_eta_chain(l_list: &[f64]) -> Result<CheckReport> {
    if l_list.is_empty() || l_list.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("L sequence must be nonempty and positive"));
    }
    let mut etas = Vec::with_capacity(l_list.len());
    let mut sum = 0.0;
    let (mut lib_eta, mut lib_l) = (0.0, 0.0);
    let mut mismatches = 0;
    for &l in l_list {
        let eta = (1.0 + (1.0 + 4.0 * l * sum).sqrt()) / (2.0 * l);
        let lib = next_eta(lib_eta, lib_l, l);
        if (lib - eta).abs() > 1e-12 * eta {
            mismatches += 1;
        }
        lib_eta = lib;
        lib_l = l;
        sum += eta;
        etas.push(eta);
    }
    let mut rep = check_eta_sequence(l_list, &etas)?;
    rep.name = "eta_chain".into();
    rep.violations += mismatches;
    Ok(rep)
}

/// `(Σ η_k)(Σ L_k)/T³` for the recurrence driven by `l_list`; never below 1/1000.
pub fn stepsize_sum_ratio(l_list: &[f64]) -> f64 {
    let (mut eta, mut lp, mut eta_sum) = (0.0, 0.0, 0.0);
    for &l in l_list {
        eta = next_eta(eta, lp, l);
        lp = l;
        eta_sum += eta;
    }
    let t = l_list.len() as f64;
    eta_sum * l_list.iter().sum::<f64>() / (t * t * t)
}

/// Samples feasible `(y, z)` pairs, runs [`binary_search`] with `epsilon`
/// and checks whichever trichotomy case it returned.
pub fn check_binary_search(
    problem: &CompositeProblem,
    trials: usize,
    seed: u64,
    epsilon: f64,
) -> CheckReport {
    check_binary_search_claim(problem, trials, seed, epsilon, epsilon)
}

/// Like [`check_binary_search`], but verifies the interior-case residual bound against
/// `claimed_epsilon` instead of the accuracy the search ran with.
pub fn check_binary_search_claim(
    problem: &CompositeProblem,
    trials: usize,
    seed: u64,
    epsilon: f64,
    claimed_epsilon: f64,
) -> CheckReport {
    run_trials("binary_search", trials, Execution::default(), |i, rep| {
        let mut rng = trial_rng(seed, i);
        let y = sample_point(problem, &mut rng);
        let z = sample_point(problem, &mut rng);
        let out = binary_search(problem, &z, &y, epsilon).expect("valid inputs");
        let x = &out.point;
        let r_x = &prox(problem, x).unwrap() - x;
        match out.case {
            SearchCase::AtY => {
                if *x != y {
                    rep.fail();
                }
                rep.record(0.0, r_x.dot(&(x - &z)), TOL, 0.0);
            }
            SearchCase::AtZ => {
                if *x != z {
                    rep.fail();
                }
                rep.record(r_x.dot(&(&y - x)), 0.0, TOL, 0.0);
            }
            SearchCase::Interior { t } => {
                let w = &z + &((&y - &z) * t);
                if !(t > 0.0 && t < 1.0) || norm(&(&w - x)) > 1e-12 * (1.0 + norm(x)) {
                    rep.fail();
                }
                let dir = &y - &z;
                rep.record(
                    r_x.dot(&dir).abs(),
                    3.0 * dir.dot(&dir) * claimed_epsilon,
                    0.0,
                    0.0,
                );
            }
        }
    })
}

/// Summed mirror-descent inequality
/// `Σ_k η_k⟨p_k, z_k − u⟩ ≤ Σ_k (η_k²/2) p_kᵀS_k⁻¹p_k + (D/2)‖s_T‖₁`
/// for `u_samples` random feasible `u` plus the returned solution.
pub fn check_mirror_descent_inequality(
    problem: &CompositeProblem,
    run: &FlagOutput,
    u_samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    check_mirror_descent_scaled(problem, run, u_samples, seed, 1.0)
}

/// Same inequality with the diameter term multiplied by `diameter_scale`.
pub fn check_mirror_descent_scaled(
    problem: &CompositeProblem,
    run: &FlagOutput,
    u_samples: usize,
    seed: u64,
    diameter_scale: f64,
) -> Result<CheckReport> {
    let name = "mirror_descent_inequality";
    let d_inf = problem.set().diameters().linf_sq;
    if !d_inf.is_finite() {
        return Ok(CheckReport::skipped(name));
    }
    let history = run
        .history
        .as_ref()
        .ok_or_else(|| Error::invalid("FLAG run was not recorded with history"))?;
    let Some(last) = history.last() else {
        return Ok(CheckReport::skipped(name));
    };
    let dual_sum: f64 = history
        .iter()
        .map(|h| {
            let mut acc = 0.0;
            for i in 0..h.p.len() {
                acc += h.p[i] * h.p[i] / (h.s[i] + run.delta);
            }
            0.5 * h.eta * h.eta * acc
        })
        .sum();
    let q_t: f64 = last.s.iter().sum();
    let rhs = dual_sum + diameter_scale * 0.5 * d_inf * q_t;

    let mut us: Vec<Vector> = (0..u_samples)
        .map(|i| sample_point(problem, &mut trial_rng(seed, i)))
        .collect();
    us.push(run.solution.clone());
    let mut rep = CheckReport::new(name);
    for u in &us {
        let lhs: f64 = history.iter().map(|h| h.eta * h.p.dot(&(&h.z - u))).sum();
        rep.trials += 1;
        rep.record(lhs, rhs, AGGREGATE_TOL, AGGREGATE_TOL);
    }
    Ok(rep)
}

/// Run-level invariants of a completed FLAG run: stepsize identities and sum,
/// AdaGrad-type bounds on `Σ g_kᵀS_k⁻¹g_k` and `q_k`, the per-iteration prox
/// budget, descent of the prox step, and (on bounded sets) the coupling
/// inequality `⟨p_k, x_k − z_k⟩ ≤ (η_kL_k − 1)⟨p_k, y_k − x_k⟩ + DLη_kL_k/T³`.
pub fn check_flag_run(problem: &CompositeProblem, run: &FlagOutput) -> Vec<CheckReport> {
    let checks = &run.checks;
    let mut reports = Vec::new();
    if checks.is_empty() {
        return reports;
    }
    let d = problem.dim() as f64;
    let l = problem.lipschitz();
    let t = run.iterations as f64;

    let lks: Vec<f64> = checks.iter().map(|c| c.l_k).collect();
    let etas: Vec<f64> = checks.iter().map(|c| c.eta).collect();
    let mut eta_rep = check_eta_sequence(&lks, &etas).expect("equal lengths");
    eta_rep.name = "flag_eta_recurrence".into();
    // The state's own running sum and stored η_{k−1}²L_{k−1} must agree too.
    for c in checks {
        eta_rep.record(
            (c.eta * c.eta * c.l_k - c.eta_sum).abs(),
            TOL * c.eta_sum,
            0.0,
            0.0,
        );
        eta_rep.record(
            (c.prev_weight - c.eta * c.eta * c.l_k + c.eta).abs(),
            TOL * c.eta_sum,
            0.0,
            0.0,
        );
    }
    reports.push(eta_rep);

    let mut ada = CheckReport::new("adagrad_metric_sum");
    let mut q_rep = CheckReport::new("q_bounds");
    let mut quad_sum = 0.0;
    let mut q_prev = 0.0;
    for c in checks {
        let k = c.k as f64;
        quad_sum += c.metric_quad;
        ada.trials += 1;
        ada.record(quad_sum, 2.0 * c.q, AGGREGATE_TOL, 0.0);
        ada.record(c.l_k, l * c.metric_quad, 0.0, TOL);
        q_rep.trials += 1;
        q_rep.record(k.sqrt(), c.q, TOL, TOL);
        q_rep.record(c.q, (d * k).sqrt(), TOL, TOL);
        q_rep.record(q_prev, c.q, TOL, TOL);
        q_prev = c.q;
    }
    reports.push(ada);
    reports.push(q_rep);

    let budget = 1 + halving_count(0.0, 1.0, run.epsilon);
    let mut calls = CheckReport::new("prox_call_budget");
    for c in checks {
        calls.trials += 1;
        calls.record(c.prox_calls as f64, budget as f64, 0.0, 0.0);
    }
    reports.push(calls);

    let mut descent = CheckReport::new("prox_descent");
    for c in checks {
        descent.trials += 1;
        descent.record(c.f_next, c.f_x - 0.5 * l * c.step_sq, TOL, TOL);
    }
    reports.push(descent);

    let d_inf = problem.set().diameters().linf_sq;
    if d_inf.is_finite() {
        let mut coupling = CheckReport::new("coupling_inequality");
        for c in checks {
            let el = c.eta * c.l_k;
            let rhs = (el - 1.0) * c.coupling_inner + d_inf * l * el / (t * t * t);
            coupling.trials += 1;
            coupling.record(c.coupling_lhs, rhs, TOL, TOL);
        }
        reports.push(coupling);
    } else {
        reports.push(CheckReport::skipped("coupling_inequality"));
    }
    reports
}

/// The sampling checks for one problem: gradient mapping, prox continuity
/// and the coupling search.
pub fn audit_problem(
    problem: &CompositeProblem,
    trials: usize,
    seed: u64,
    epsilon: f64,
) -> Vec<CheckReport> {
    vec![
        check_gradient_mapping(problem, trials, seed),
        check_prox_lipschitz(problem, trials, seed),
        check_binary_search(problem, trials, seed, epsilon),
    ]
}
