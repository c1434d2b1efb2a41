//! FLAG: proximal gradient steps linearly coupled with adaptively
//! preconditioned mirror steps, with the coupling weight found by a
//! bisection on the gradient-mapping inner product.
//!
//! One iteration `k`:
//!
//! 1. `y_{k+1} = prox(x_k)` and `p_k = −L(y_{k+1} − x_k)`
//! 2. `g_k = p_k/‖p_k‖`, accumulate `s_k(i) = ‖(g_1(i), …, g_k(i))‖₂`
//! 3. `S_k = diag(s_k) + δI`, `L_k = L·g_kᵀS_k⁻¹g_k`
//! 4. `η_k` is the positive root of `η²L_k − η − η_{k−1}²L_{k−1} = 0`
//! 5. `z_{k+1}` is the `S_k`-metric mirror step from `z_k` along `η_k p_k`
//! 6. `x_{k+1}` is picked on the segment `[z_{k+1}, y_{k+1}]` by [`binary_search`]

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{norm2, CompositeProblem, Vector};
use crate::prox::{
    mapping_from_prox, mirror_step, prox_unchecked, GradientAccumulator, MetricDiag,
};

pub const DEFAULT_DELTA: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FlagConfig {
    /// Iteration budget `T`.
    pub iterations: usize,
    /// Regularization `δ` added to the diagonal metric.
    pub delta: f64,
    /// Stop once `‖p_k‖₂` falls to this value; `None` means `1e−13·max(1, L)`.
    pub stationary_tol: Option<f64>,
    pub record_trace: bool,
    /// Keep the per-iteration vectors needed by the mirror-descent audit.
    pub record_history: bool,
    /// Common starting point `x₁ = y₁ = z₁`; defaults to the projected origin.
    pub start: Option<Vector>,
}

impl FlagConfig {
    pub fn new(iterations: usize) -> Self {
        FlagConfig {
            iterations,
            delta: DEFAULT_DELTA,
            stationary_tol: None,
            record_trace: true,
            record_history: false,
            start: None,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }

    pub fn with_start(mut self, start: Vector) -> Self {
        self.start = Some(start);
        self
    }

    /// Bisection accuracy `ε = 1/(6dT³)`.
    pub fn epsilon(&self, d: usize) -> f64 {
        let t = self.iterations as f64;
        1.0 / (6.0 * d as f64 * t * t * t)
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("δ must be positive and finite"));
        }
        Ok(())
    }
}

/// One trace row. `gap` is filled in by the benchmark harness once a
/// reference optimum is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    pub f_val: f64,
    pub gap: Option<f64>,
    pub eta_k: f64,
    pub l_k: f64,
    pub q_k: f64,
    pub prox_calls_cum: usize,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTrace {
    pub rows: Vec<IterateRecord>,
}

impl StepTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&IterateRecord> {
        self.rows.last()
    }
}

/// Which branch of the coupling search produced `x_{k+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SearchCase {
    /// `r(1) ≥ 0`: returned `y`.
    AtY,
    /// `r(0) ≤ 0`: returned `z`.
    AtZ,
    /// Returned `t·y + (1−t)·z` from the bisection.
    Interior { t: f64 },
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub point: Vector,
    /// `prox(point)`, reused as the next proximal step.
    pub prox_at_point: Vector,
    pub case: SearchCase,
    pub prox_calls: usize,
}

/// Scalars recorded at every completed iteration; the run-level
/// invariant checks are computed from these.
#[derive(Clone, Debug)]
pub struct IterationCheck {
    pub k: usize,
    pub prox_calls: usize,
    pub eta: f64,
    pub l_k: f64,
    /// `Σ_{i≤k} η_i`
    pub eta_sum: f64,
    /// `η_{k−1}²L_{k−1}`
    pub prev_weight: f64,
    /// `g_kᵀS_k⁻¹g_k`
    pub metric_quad: f64,
    pub q: f64,
    /// `F(x_k)`
    pub f_x: f64,
    /// `F(y_{k+1})`
    pub f_next: f64,
    /// `‖x_k − y_{k+1}‖₂²`
    pub step_sq: f64,
    /// `⟨p_k, x_k − z_k⟩`
    pub coupling_lhs: f64,
    /// `⟨p_k, y_k − x_k⟩`
    pub coupling_inner: f64,
    pub case: SearchCase,
}

/// Vectors kept per iteration when `record_history` is set.
#[derive(Clone, Debug)]
pub struct IterationHistory {
    pub z: Vector,
    pub p: Vector,
    pub s: Vector,
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct FlagOutput {
    /// `y_{T+1}`, or `y_{k+1}` on a stationary exit.
    pub solution: Vector,
    pub trace: StepTrace,
    pub checks: Vec<IterationCheck>,
    pub history: Option<Vec<IterationHistory>>,
    pub stopped_early: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub iterations: usize,
    /// Final row norms `s_T`.
    pub s: Vector,
}

impl FlagOutput {
    pub fn completed(&self) -> usize {
        self.checks.len()
    }

    /// `q_T = ‖s_T‖₁`.
    pub fn q(&self) -> f64 {
        q_value(&self.s)
    }

    pub fn eta_sum(&self) -> f64 {
        self.checks.last().map_or(0.0, |c| c.eta_sum)
    }

    pub fn lk_sum(&self) -> f64 {
        self.checks.iter().map(|c| c.l_k).sum()
    }

    pub fn total_prox_calls(&self) -> usize {
        self.checks.iter().map(|c| c.prox_calls).sum()
    }
}

/// Counts proximal evaluations.
pub(crate) struct ProxOracle<'a> {
    problem: &'a CompositeProblem,
    calls: usize,
}

impl<'a> ProxOracle<'a> {
    pub(crate) fn new(problem: &'a CompositeProblem) -> Self {
        ProxOracle { problem, calls: 0 }
    }

    pub(crate) fn prox(&mut self, x: &Vector) -> Vector {
        self.calls += 1;
        prox_unchecked(self.problem, x)
    }
}

/// Mutable state of one FLAG run.
#[derive(Clone, Debug)]
pub struct FlagState {
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
    /// `prox(x)` when already known from the previous coupling search.
    prox_x: Option<Vector>,
    pub accumulator: GradientAccumulator,
    pub s: Vector,
    pub eta_prev: f64,
    pub lk_prev: f64,
    pub eta_sum: f64,
    pub q: f64,
}

impl FlagState {
    pub fn new(start: Vector) -> Self {
        let d = start.len();
        FlagState {
            k: 0,
            x: start.clone(),
            y: start.clone(),
            z: start,
            prox_x: None,
            accumulator: GradientAccumulator::new(d),
            s: Vector::zeros(d),
            eta_prev: 0.0,
            lk_prev: 0.0,
            eta_sum: 0.0,
            q: 0.0,
        }
    }
}

/// `L_k = L·Σᵢ gᵢ²/(sᵢ + δ)`.
pub fn effective_lipschitz(lipschitz: f64, g: &Vector, metric: &MetricDiag) -> f64 {
    lipschitz * metric.inv_quad_form(g)
}

/// Positive root of `η²L_k − η − η_{k−1}²L_{k−1} = 0`.
pub fn next_eta(eta_prev: f64, lk_prev: f64, lk: f64) -> f64 {
    let half = 0.5 / lk;
    half + (half * half + eta_prev * eta_prev * lk_prev / lk).sqrt()
}

/// `q = ‖s‖₁`.
pub fn q_value(s: &Vector) -> f64 {
    s.iter().map(|v| v.abs()).sum()
}

/// Number of halvings that shrink `[lo, hi]` to width at most `epsilon`.
pub fn halving_count(lo: f64, hi: f64, epsilon: f64) -> usize {
    ((hi - lo) / epsilon).log2().ceil().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectionResult {
    pub t: f64,
    pub evaluations: usize,
}

/// Root of `r` on `[lo, hi]` to accuracy `epsilon`, given the endpoint values
/// `r_lo = r(lo)` and `r_hi = r(hi)` of opposite sign.
///
/// Performs exactly `⌈log₂((hi−lo)/ε)⌉` evaluations of `r` (fewer only if a
/// probe hits an exact zero) and returns the midpoint of the final bracket.
pub fn bisection(
    mut r: impl FnMut(f64) -> f64,
    (lo, r_lo): (f64, f64),
    (hi, r_hi): (f64, f64),
    epsilon: f64,
) -> Result<BisectionResult> {
    if !(epsilon > 0.0) || !(lo < hi) {
        return Err(Error::invalid("bisection needs lo < hi and ε > 0"));
    }
    if !(r_lo * r_hi < 0.0) {
        return Err(Error::invalid(
            "bisection endpoints must have opposite signs",
        ));
    }
    let (mut a, mut b) = (lo, hi);
    let lo_positive = r_lo > 0.0;
    let probes = halving_count(lo, hi, epsilon);
    for n in 1..=probes {
        let mid = 0.5 * (a + b);
        let v = r(mid);
        if v == 0.0 {
            return Ok(BisectionResult {
                t: mid,
                evaluations: n,
            });
        }
        if (v > 0.0) == lo_positive {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(BisectionResult {
        t: 0.5 * (a + b),
        evaluations: probes,
    })
}

/// Picks the coupling point on the segment from `z` to `y`.
///
/// With `r(t) = ⟨prox(w(t)) − w(t), y − z⟩` and `w(t) = t·y + (1−t)·z`:
/// returns `y` when `r(1) ≥ 0`, `z` when `r(0) ≤ 0`, and otherwise a
/// bisection point `w(t)` satisfying `|r(t)| ≤ 3‖y − z‖₂²·ε`.
pub fn binary_search(
    problem: &CompositeProblem,
    z: &Vector,
    y: &Vector,
    epsilon: f64,
) -> Result<SearchOutcome> {
    check_dim(problem.dim(), z.len())?;
    check_dim(problem.dim(), y.len())?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    let mut oracle = ProxOracle::new(problem);
    Ok(coupling_search(&mut oracle, z, y, epsilon))
}

pub(crate) fn coupling_search(
    oracle: &mut ProxOracle<'_>,
    z: &Vector,
    y: &Vector,
    epsilon: f64,
) -> SearchOutcome {
    let start = oracle.calls;
    let dir = y - z;
    let r_at = |oracle: &mut ProxOracle<'_>, w: &Vector| {
        let pw = oracle.prox(w);
        let r = (&pw - w).dot(&dir);
        (pw, r)
    };

    let (prox_y, r1) = r_at(oracle, y);
    if r1 >= 0.0 {
        return SearchOutcome {
            point: y.clone(),
            prox_at_point: prox_y,
            case: SearchCase::AtY,
            prox_calls: oracle.calls - start,
        };
    }
    let (prox_z, r0) = r_at(oracle, z);
    if r0 <= 0.0 {
        return SearchOutcome {
            point: z.clone(),
            prox_at_point: prox_z,
            case: SearchCase::AtZ,
            prox_calls: oracle.calls - start,
        };
    }

    // r(0) > 0 > r(1). Probes stop as soon as the interior-case residual bound
    // holds at the probe, so the returned point's prox is always known. The
    // cap ⌈log₂(1/ε)⌉ − 1 leaves a bracket of width ≤ 2ε whose better
    // endpoint is within ε of the root.
    let tol = 3.0 * dir.dot(&dir) * epsilon;
    let max_probes = halving_count(0.0, 1.0, epsilon).saturating_sub(1).max(1);
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let mut best: Option<(f64, f64, Vector, Vector)> = None;
    for _ in 0..max_probes {
        let t = 0.5 * (a + b);
        let w = z + &(&dir * t);
        let (pw, r) = r_at(oracle, &w);
        if r.abs() <= tol {
            return SearchOutcome {
                point: w,
                prox_at_point: pw,
                case: SearchCase::Interior { t },
                prox_calls: oracle.calls - start,
            };
        }
        if r > 0.0 {
            a = t;
        } else {
            b = t;
        }
        if best.as_ref().is_none_or(|(_, br, _, _)| r.abs() < *br) {
            best = Some((t, r.abs(), w, pw));
        }
    }
    let (t, _, point, prox_at_point) = best.expect("at least one probe");
    SearchOutcome {
        point,
        prox_at_point,
        case: SearchCase::Interior { t },
        prox_calls: oracle.calls - start,
    }
}

/// Runs FLAG for `config.iterations` iterations and returns `y_{T+1}`.
pub fn flag_run(problem: &CompositeProblem, config: &FlagConfig) -> Result<FlagOutput> {
    config.validate()?;
    let d = problem.dim();
    let l = problem.lipschitz();
    let start = match &config.start {
        Some(s) => {
            check_dim(d, s.len())?;
            problem.set().project(s)
        }
        None => problem.default_start(),
    };
    let epsilon = config.epsilon(d);
    let stationary_tol = config.stationary_tol.unwrap_or(1e-13 * l.max(1.0));
    let clock = Instant::now();

    let mut state = FlagState::new(start);
    let mut oracle = ProxOracle::new(problem);
    let mut trace = StepTrace::default();
    let mut checks = Vec::with_capacity(config.iterations);
    let mut history = config.record_history.then(Vec::new);
    let mut stopped_early = false;
    let mut solution = state.y.clone();
    let mut f_x = problem.objective(&state.x);

    for k in 1..=config.iterations {
        let calls_before = oracle.calls;
        let y_next = match state.prox_x.take() {
            Some(px) => px,
            None => oracle.prox(&state.x),
        };
        let f_next = problem.objective(&y_next);
        if !f_next.is_finite() {
            return Err(Error::Divergence {
                algorithm: "flag",
                iteration: k,
                trace: Box::new(trace),
            });
        }
        let p = mapping_from_prox(l, &state.x, &y_next);
        let p_norm = norm2(&p);
        if p_norm <= stationary_tol {
            solution = y_next;
            stopped_early = true;
            break;
        }
        let g = &p / p_norm;
        state.accumulator.push(&g)?;
        state.s = state.accumulator.row_norms();
        let metric = MetricDiag {
            s: state.s.clone(),
            delta: config.delta,
        };
        let metric_quad = metric.inv_quad_form(&g);
        let l_k = l * metric_quad;
        let eta = next_eta(state.eta_prev, state.lk_prev, l_k);
        let prev_weight = state.eta_prev * state.eta_prev * state.lk_prev;
        let z_next = mirror_step(&state.z, &p, eta, &metric, problem.set())?;
        let search = coupling_search(&mut oracle, &z_next, &y_next, epsilon);

        let step = &state.x - &y_next;
        state.eta_sum += eta;
        state.q = q_value(&state.s);
        checks.push(IterationCheck {
            k,
            prox_calls: oracle.calls - calls_before,
            eta,
            l_k,
            eta_sum: state.eta_sum,
            prev_weight,
            metric_quad,
            q: state.q,
            f_x,
            f_next,
            step_sq: step.dot(&step),
            coupling_lhs: p.dot(&(&state.x - &state.z)),
            coupling_inner: p.dot(&(&state.y - &state.x)),
            case: search.case,
        });
        if let Some(h) = history.as_mut() {
            h.push(IterationHistory {
                z: state.z.clone(),
                p: p.clone(),
                s: state.s.clone(),
                eta,
            });
        }
        if config.record_trace {
            trace.rows.push(IterateRecord {
                k,
                f_val: f_next,
                gap: None,
                eta_k: eta,
                l_k,
                q_k: state.q,
                prox_calls_cum: oracle.calls,
                elapsed_s: clock.elapsed().as_secs_f64(),
            });
        }

        state.k = k;
        state.eta_prev = eta;
        state.lk_prev = l_k;
        state.x = search.point;
        state.prox_x = Some(search.prox_at_point);
        state.y = y_next.clone();
        state.z = z_next;
        f_x = problem.objective(&state.x);
        solution = y_next;
    }

    Ok(FlagOutput {
        solution,
        trace,
        checks,
        history,
        stopped_early,
        epsilon,
        delta: config.delta,
        iterations: config.iterations,
        s: state.s,
    })
}
