//! Benchmark harness: seeded problem generators, reference optima, traced
//! runs of every algorithm, CSV / JSON-lines output and log-log rate fits.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::baselines::{run_baseline, BaselineAlgorithm, BaselineConfig};
use crate::error::{Error, Result};
use crate::flag::{flag_run, FlagConfig, StepTrace, DEFAULT_DELTA};
use crate::par::{map_slice, Execution};
use crate::problem::{CompositeProblem, FeasibleSet, NonsmoothPart, SmoothPart, Vector};
use crate::prox::prox_unchecked;

/// Precision of a reference optimum, relative to `max(1, |F*|)`. Objective
/// values this close to `F*` count as optimal; values lower by more than
/// this are a reference-quality failure.
pub const GAP_FLOOR: f64 = 1e-12;
pub const DEFAULT_BURN_IN: f64 = 0.2;
/// Minimum number of positive-gap rows for a rate fit.
pub const MIN_FIT_POINTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Lasso,
    LogisticL1,
    BoxQp,
}

impl Generator {
    pub const ALL: [Generator; 3] = [Generator::Lasso, Generator::LogisticL1, Generator::BoxQp];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Lasso => "lasso",
            Generator::LogisticL1 => "logistic_l1",
            Generator::BoxQp => "box_qp",
        }
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown generator '{s}'")))
    }
}

/// Everything needed to regenerate a problem instance bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemDescriptor {
    pub generator: Generator,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub box_lower: Option<f64>,
    pub box_upper: Option<f64>,
}

impl ProblemDescriptor {
    pub fn new(generator: Generator, seed: u64, n: usize, d: usize, lambda: f64) -> Self {
        ProblemDescriptor {
            generator,
            seed,
            n,
            d,
            lambda,
            box_lower: None,
            box_upper: None,
        }
    }

    pub fn with_box(mut self, lower: f64, upper: f64) -> Self {
        self.box_lower = Some(lower);
        self.box_upper = Some(upper);
        self
    }

    /// The lasso instance used throughout the test suite:
    /// n = 50, d = 20, seed 7, λ = 0.1, box `[−10, 10]^20`.
    pub fn reference_lasso() -> Self {
        Self::new(Generator::Lasso, 7, 50, 20, 0.1).with_box(-10.0, 10.0)
    }

    fn feasible_set(&self) -> Result<FeasibleSet> {
        match (self.box_lower, self.box_upper, self.generator) {
            (Some(lo), Some(hi), _) => FeasibleSet::cube(self.d, lo, hi),
            (None, None, Generator::BoxQp) => FeasibleSet::cube(self.d, -1.0, 1.0),
            (None, None, _) => Ok(FeasibleSet::FullSpace),
            _ => Err(Error::invalid(
                "box_lower and box_upper must be given together",
            )),
        }
    }
}

impl fmt::Display for ProblemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "generator={} seed={} n={} d={} lambda={}",
            self.generator.name(),
            self.seed,
            self.n,
            self.d,
            self.lambda
        )?;
        if let (Some(lo), Some(hi)) = (self.box_lower, self.box_upper) {
            write!(f, " box_lower={lo} box_upper={hi}")?;
        }
        Ok(())
    }
}

impl FromStr for ProblemDescriptor {
    type Err = Error;

    /// Parses `key = value` pairs separated by newlines, whitespace, commas or
    /// semicolons. Lines starting with `#` are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let mut generator = None;
        let mut desc = ProblemDescriptor::new(Generator::Lasso, 0, 0, 0, 0.0);
        let normalized: String = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let normalized = normalized.replace(" =", "=").replace("= ", "=");
        for token in normalized
            .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
            .filter(|t| !t.is_empty())
        {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got '{token}'")))?;
            let bad = |e: &dyn fmt::Display| Error::Parse(format!("{key}: {e}"));
            match key {
                "generator" => generator = Some(value.parse()?),
                "seed" => desc.seed = value.parse().map_err(|e| bad(&e))?,
                "n" => desc.n = value.parse().map_err(|e| bad(&e))?,
                "d" => desc.d = value.parse().map_err(|e| bad(&e))?,
                "lambda" => desc.lambda = value.parse().map_err(|e| bad(&e))?,
                "box_lower" => desc.box_lower = Some(value.parse().map_err(|e| bad(&e))?),
                "box_upper" => desc.box_upper = Some(value.parse().map_err(|e| bad(&e))?),
                other => return Err(Error::Parse(format!("unknown key '{other}'"))),
            }
        }
        desc.generator = generator.ok_or_else(|| Error::Parse("missing generator".into()))?;
        Ok(desc)
    }
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

fn sparse_signal(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    let k = (d / 5).max(1);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.shuffle(rng);
    let mut x = Vector::zeros(d);
    for &i in &idx[..k] {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        x[i] = sign * rng.random_range(1.0..2.0);
    }
    x
}

/// Builds the instance described by `desc`.
///
/// * `lasso`: `½‖Ax − b‖² + λ‖x‖₁`, `A` standard normal (n×d),
///   `b = Ax♮ + 0.1·noise` with a sparse `x♮`.
/// * `logistic_l1`: logistic loss on standard normal features with labels
///   `sign(Aw♮ + 0.5·noise)`, plus `λ‖x‖₁`.
/// * `box_qp`: `½Σᵢ i·(xᵢ − cᵢ)²` (Hessian `diag(1, …, d)`) with `cᵢ` uniform
///   in `[−2, 2]` so part of the unconstrained minimizer lies outside the box;
///   `n` is ignored.
pub fn generate_problem(desc: &ProblemDescriptor) -> Result<CompositeProblem> {
    if desc.d == 0 || (desc.generator != Generator::BoxQp && desc.n == 0) {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
    let set = desc.feasible_set()?;
    let h = if desc.lambda > 0.0 {
        NonsmoothPart::l1(desc.lambda)?
    } else {
        NonsmoothPart::Zero
    };
    let smooth = match desc.generator {
        Generator::Lasso => {
            let a = standard_normal_matrix(&mut rng, desc.n, desc.d);
            let x_true = sparse_signal(&mut rng, desc.d);
            let noise: Vector = (0..desc.n)
                .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let b = a.dot(&x_true) + noise;
            SmoothPart::least_squares(a, b)?
        }
        Generator::LogisticL1 => {
            let a = standard_normal_matrix(&mut rng, desc.n, desc.d);
            let w_true = sparse_signal(&mut rng, desc.d);
            let labels: Vector = a
                .dot(&w_true)
                .iter()
                .map(|m| {
                    let noisy = m + 0.5 * rng.sample::<f64, _>(StandardNormal);
                    if noisy >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            SmoothPart::logistic(a, labels)?
        }
        Generator::BoxQp => {
            let roots = Vector::from_iter((1..=desc.d).map(|i| (i as f64).sqrt()));
            let center: Vector = (0..desc.d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = &roots * &center;
            SmoothPart::least_squares(Array2::from_diag(&roots), b)?
        }
    };
    CompositeProblem::new(smooth, h, set)
}

#[derive(Clone, Debug)]
pub struct ReferenceOptimum {
    pub value: f64,
    pub point: Vector,
    /// `‖x − prox(x)‖∞` at `point`.
    pub residual: f64,
}

/// Best objective value seen over `ref_iters` FISTA iterations followed by
/// `ref_iters/10` ISTA polishing iterations.
pub fn reference_optimum(problem: &CompositeProblem, ref_iters: usize) -> Result<ReferenceOptimum> {
    if ref_iters == 0 {
        return Err(Error::invalid("ref_iters must be at least 1"));
    }
    let fista = run_baseline(
        problem,
        &BaselineConfig::new(BaselineAlgorithm::Fista, ref_iters),
    )?;
    let mut best = fista
        .trace
        .rows
        .iter()
        .map(|r| r.f_val)
        .fold(problem.objective(&problem.default_start()), f64::min);
    let mut best_point = fista.solution.clone();
    if problem.objective(&best_point) > best {
        best = problem.objective(&best_point);
    }
    let mut x = fista.solution;
    for k in 0..ref_iters / 10 {
        x = prox_unchecked(problem, &x);
        let f = problem.objective(&x);
        if !f.is_finite() {
            return Err(Error::Divergence {
                algorithm: "reference",
                iteration: ref_iters + k + 1,
                trace: Box::default(),
            });
        }
        if f <= best {
            best = f;
            best_point = x.clone();
        }
    }
    let px = prox_unchecked(problem, &best_point);
    let residual = (&best_point - &px)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(ReferenceOptimum {
        value: best,
        point: best_point,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Flag,
    Fista,
    Ista,
    Adagrad,
    MirrorDescent,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Flag,
        Algorithm::Fista,
        Algorithm::Ista,
        Algorithm::Adagrad,
        Algorithm::MirrorDescent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Flag => "flag",
            Algorithm::Fista => "fista",
            Algorithm::Ista => "ista",
            Algorithm::Adagrad => "adagrad",
            Algorithm::MirrorDescent => "mirror_descent",
        }
    }

    fn baseline(self) -> Option<BaselineAlgorithm> {
        match self {
            Algorithm::Flag => None,
            Algorithm::Fista => Some(BaselineAlgorithm::Fista),
            Algorithm::Ista => Some(BaselineAlgorithm::Ista),
            Algorithm::Adagrad => Some(BaselineAlgorithm::Adagrad),
            Algorithm::MirrorDescent => Some(BaselineAlgorithm::MirrorDescent),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s || (s == "mirror" && *a == Algorithm::MirrorDescent))
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    #[default]
    Csv,
    JsonLines,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json-lines" | "jsonl" => Ok(TraceFormat::JsonLines),
            _ => Err(Error::invalid(format!("unknown trace format '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub problem: ProblemDescriptor,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub delta: f64,
    pub ref_iters: usize,
    pub out_path: Option<PathBuf>,
    pub format: TraceFormat,
    pub emit_summary: bool,
}

impl RunConfig {
    pub fn new(problem: ProblemDescriptor, algorithm: Algorithm, iterations: usize) -> Self {
        RunConfig {
            problem,
            algorithm,
            iterations,
            delta: DEFAULT_DELTA,
            ref_iters: (10 * iterations).max(50_000),
            out_path: None,
            format: TraceFormat::Csv,
            emit_summary: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.ref_iters < 10 * self.iterations {
            return Err(Error::invalid(format!(
                "ref_iters ({}) must be at least 10·T ({})",
                self.ref_iters,
                10 * self.iterations
            )));
        }
        Ok(())
    }

    fn echo(&self) -> String {
        format!(
            "{} algorithm={} T={} delta={:e} ref_iters={}",
            self.problem,
            self.algorithm.name(),
            self.iterations,
            self.delta,
            self.ref_iters
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped on a vanishing gradient mapping before `T` iterations.
    Stationary,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Stationary => "stationary",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub completed: usize,
    pub final_gap: f64,
    /// `q_T = ‖s_T‖₁` (FLAG only).
    pub q_t: Option<f64>,
    /// `q_T²/(d·T)`, the normalized improvement factor in `[1/d, 1]` (FLAG only).
    pub j_b: Option<f64>,
    pub diameter_inf: f64,
    pub diameter_l2: f64,
    pub slope: Option<f64>,
    pub prox_calls: usize,
    pub wall_time_s: f64,
    pub status: RunStatus,
}

impl SummaryRow {
    pub const HEADER: &'static str = "algorithm         T  done     final_gap         q_T        J_B        D       D2     slope  prox_calls   wall_s  status";
}

fn opt(v: Option<f64>, width: usize, prec: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:>width$.prec$}"),
        Some(x) => format!("{x:>width$}"),
        None => format!("{:>width$}", "-"),
    }
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} {:>4} {:>5} {:>13.6e} {} {} {:>8} {:>8} {} {:>11} {:>8.3}  {}",
            self.algorithm.name(),
            self.iterations,
            self.completed,
            self.final_gap,
            opt(self.q_t, 11, 4),
            opt(self.j_b, 10, 5),
            self.diameter_inf,
            self.diameter_l2,
            opt(self.slope, 9, 3),
            self.prox_calls,
            self.wall_time_s,
            self.status.name()
        )
    }
}

/// Output of one algorithm on one problem, before gaps are attached.
#[derive(Clone, Debug)]
pub struct AlgorithmRun {
    pub solution: Vector,
    pub trace: StepTrace,
    pub q_t: Option<f64>,
    pub prox_calls: usize,
    pub status: RunStatus,
}

pub fn run_algorithm(
    problem: &CompositeProblem,
    algorithm: Algorithm,
    iterations: usize,
    delta: f64,
) -> Result<AlgorithmRun> {
    let result = match algorithm.baseline() {
        None => flag_run(problem, &FlagConfig::new(iterations).with_delta(delta)).map(|out| {
            AlgorithmRun {
                q_t: Some(out.q()),
                prox_calls: out.trace.last().map_or(0, |r| r.prox_calls_cum),
                status: if out.stopped_early {
                    RunStatus::Stationary
                } else {
                    RunStatus::Completed
                },
                solution: out.solution,
                trace: out.trace,
            }
        }),
        Some(b) => {
            let mut cfg = BaselineConfig::new(b, iterations);
            cfg.delta = delta;
            run_baseline(problem, &cfg).map(|out| AlgorithmRun {
                solution: out.solution,
                trace: out.trace,
                q_t: None,
                prox_calls: out.prox_calls,
                status: RunStatus::Completed,
            })
        }
    };
    match result {
        Err(Error::Divergence { trace, .. }) => Ok(AlgorithmRun {
            solution: Vector::zeros(problem.dim()),
            trace: *trace,
            q_t: None,
            prox_calls: 0,
            status: RunStatus::Diverged,
        }),
        other => other,
    }
}

/// Fills in `gap = F(y_k) − F*`. Gaps within `GAP_FLOOR·max(1, |F*|)` of
/// zero are below the reference's own precision and are recorded as 0.
pub fn attach_gaps(trace: &mut StepTrace, reference: f64) -> Result<()> {
    let floor = GAP_FLOOR * reference.abs().max(1.0);
    for row in &mut trace.rows {
        let gap = row.f_val - reference;
        if gap < -floor {
            return Err(Error::ReferenceQuality {
                reference,
                excess: -gap,
                iteration: row.k,
            });
        }
        row.gap = Some(if gap <= floor { 0.0 } else { gap });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitStatus {
    Fitted,
    ConvergedExactly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub points: usize,
    pub status: FitStatus,
}

/// Least-squares slope of `ln(gap)` against `ln(k)` over the rows after
/// the first `burn_in_fraction` of the trace, using rows with positive gap.
pub fn fit_rate(trace: &StepTrace, burn_in_fraction: f64) -> Result<RateFit> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::invalid("burn-in fraction must lie in [0, 1)"));
    }
    let skip = (burn_in_fraction * trace.len() as f64).floor() as usize;
    let window = &trace.rows[skip.min(trace.len())..];
    let gaps: Vec<(f64, f64)> = window
        .iter()
        .map(|r| (r.k as f64, r.gap.unwrap_or(f64::NAN)))
        .collect();
    if gaps.iter().any(|(_, g)| g.is_nan()) {
        return Err(Error::invalid("trace has no gap column"));
    }
    if !gaps.is_empty() && gaps.iter().all(|(_, g)| *g == 0.0) {
        return Ok(RateFit {
            slope: f64::NEG_INFINITY,
            points: 0,
            status: FitStatus::ConvergedExactly,
        });
    }
    let pts: Vec<(f64, f64)> = gaps
        .into_iter()
        .filter(|(_, g)| *g > 0.0)
        .map(|(k, g)| (k.ln(), g.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::invalid(format!(
            "need at least {MIN_FIT_POINTS} positive gaps after burn-in, have {}",
            pts.len()
        )));
    }
    Ok(RateFit {
        slope: least_squares_slope(&pts),
        points: pts.len(),
        status: FitStatus::Fitted,
    })
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: SummaryRow,
    pub trace: StepTrace,
    pub solution: Vector,
    pub reference: f64,
}

/// Runs `algorithm` on an already-built problem against a known reference value.
pub fn run_against_reference(
    problem: &CompositeProblem,
    algorithm: Algorithm,
    iterations: usize,
    delta: f64,
    reference: f64,
) -> Result<RunResult> {
    let clock = Instant::now();
    let run = run_algorithm(problem, algorithm, iterations, delta)?;
    let wall = clock.elapsed().as_secs_f64();
    let mut trace = run.trace;
    attach_gaps(&mut trace, reference)?;
    let completed = trace.len();
    let diam = problem.set().diameters();
    let final_gap = trace
        .last()
        .and_then(|r| r.gap)
        .unwrap_or_else(|| (problem.objective(&run.solution) - reference).max(0.0));
    let slope = fit_rate(&trace, DEFAULT_BURN_IN).ok().map(|f| f.slope);
    let d = problem.dim() as f64;
    let j_b = run
        .q_t
        .filter(|_| completed > 0)
        .map(|q| q * q / (d * completed as f64));
    Ok(RunResult {
        summary: SummaryRow {
            algorithm,
            iterations,
            completed,
            final_gap,
            q_t: run.q_t,
            j_b,
            diameter_inf: diam.linf_sq,
            diameter_l2: diam.l2_sq,
            slope,
            prox_calls: run.prox_calls,
            wall_time_s: wall,
            status: run.status,
        },
        trace,
        solution: run.solution,
        reference,
    })
}

/// Generates the problem, computes its reference optimum, runs the
/// configured algorithm and writes the trace when `out_path` is set.
pub fn run_and_trace(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let problem = generate_problem(&config.problem)?;
    let reference = reference_optimum(&problem, config.ref_iters)?;
    let result = run_against_reference(
        &problem,
        config.algorithm,
        config.iterations,
        config.delta,
        reference.value,
    )?;
    if let Some(path) = &config.out_path {
        write_trace(path, config.format, &config.echo(), &result.trace)?;
    }
    Ok(result)
}

/// Runs every algorithm in `algorithms` on one problem with a shared
/// reference optimum; runs execute in parallel when `exec` allows it.
pub fn compare(
    desc: &ProblemDescriptor,
    algorithms: &[Algorithm],
    iterations: usize,
    delta: f64,
    ref_iters: usize,
    exec: Execution,
) -> Result<Vec<RunResult>> {
    if ref_iters < 10 * iterations {
        return Err(Error::invalid("ref_iters must be at least 10·T"));
    }
    let problem = generate_problem(desc)?;
    let reference = reference_optimum(&problem, ref_iters)?.value;
    map_slice(algorithms, exec, |&alg| {
        run_against_reference(&problem, alg, iterations, delta, reference)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub algorithm: Algorithm,
    /// `(T, final gap)` pairs.
    pub points: Vec<(usize, f64)>,
    /// Slope of `ln(final gap)` against `ln(T)`, if at least two positive gaps exist.
    pub slope: Option<f64>,
}

/// Final gap as a function of the budget `T` for each algorithm.
pub fn sweep(
    desc: &ProblemDescriptor,
    algorithms: &[Algorithm],
    budgets: &[usize],
    delta: f64,
    ref_iters: usize,
    exec: Execution,
) -> Result<Vec<SweepResult>> {
    let max_t = budgets.iter().copied().max().unwrap_or(0);
    if max_t == 0 || ref_iters < 10 * max_t {
        return Err(Error::invalid(
            "budgets must be positive and ref_iters ≥ 10·max T",
        ));
    }
    let problem = generate_problem(desc)?;
    let reference = reference_optimum(&problem, ref_iters)?.value;
    let jobs: Vec<(Algorithm, usize)> = algorithms
        .iter()
        .flat_map(|&a| budgets.iter().map(move |&t| (a, t)))
        .collect();
    let gaps: Vec<Result<f64>> = map_slice(&jobs, exec, |&(alg, t)| {
        run_against_reference(&problem, alg, t, delta, reference).map(|r| r.summary.final_gap)
    });
    let mut gaps = gaps.into_iter();
    let mut out = Vec::new();
    for &alg in algorithms {
        let mut points = Vec::new();
        for &t in budgets {
            points.push((t, gaps.next().expect("one result per job")?));
        }
        let logs: Vec<(f64, f64)> = points
            .iter()
            .filter(|(_, g)| *g > 0.0)
            .map(|&(t, g)| ((t as f64).ln(), g.ln()))
            .collect();
        let slope = (logs.len() >= 2).then(|| least_squares_slope(&logs));
        out.push(SweepResult {
            algorithm: alg,
            points,
            slope,
        });
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "k,f_val,gap,eta_k,L_k,q_k,prox_calls_cum,elapsed_s";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:e}"))
}

/// Writes a trace. CSV: header line, then a `#` line echoing the problem
/// descriptor and run configuration, then one row per iteration.
/// JSON lines: a `{"meta": …}` object, then one object per iteration.
pub fn write_trace(path: &Path, format: TraceFormat, echo: &str, trace: &StepTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        TraceFormat::Csv => {
            writeln!(w, "{CSV_HEADER}").map_err(io)?;
            writeln!(w, "# {echo}").map_err(io)?;
            for r in &trace.rows {
                writeln!(
                    w,
                    "{},{:e},{},{:e},{:e},{:e},{},{:.6}",
                    r.k,
                    r.f_val,
                    fmt_opt(r.gap),
                    r.eta_k,
                    r.l_k,
                    r.q_k,
                    r.prox_calls_cum,
                    r.elapsed_s
                )
                .map_err(io)?;
            }
        }
        TraceFormat::JsonLines => {
            let meta = serde_json::json!({ "meta": echo });
            writeln!(w, "{meta}").map_err(io)?;
            for r in &trace.rows {
                let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flag::IterateRecord;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn synthetic(gap: impl Fn(f64) -> f64, n: usize) -> StepTrace {
        StepTrace {
            rows: (1..=n)
                .map(|k| IterateRecord {
                    k,
                    f_val: 0.0,
                    gap: Some(gap(k as f64)),
                    eta_k: 0.0,
                    l_k: 0.0,
                    q_k: 0.0,
                    prox_calls_cum: k,
                    elapsed_s: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn fit_rate_on_power_laws() {
        let t = synthetic(|k| 1.0 / (k * k), 200);
        assert_relative_eq!(fit_rate(&t, 0.2).unwrap().slope, -2.0, epsilon = 0.01);
        let t = synthetic(|k| 1.0 / k.sqrt(), 200);
        assert_relative_eq!(fit_rate(&t, 0.2).unwrap().slope, -0.5, epsilon = 0.01);
    }

    #[test]
    fn fit_rate_zero_gaps_and_short_traces() {
        let t = synthetic(|_| 0.0, 50);
        let fit = fit_rate(&t, 0.2).unwrap();
        assert_eq!(fit.status, FitStatus::ConvergedExactly);
        assert_eq!(fit.slope, f64::NEG_INFINITY);
        assert!(fit_rate(&synthetic(|k| 1.0 / k, 10), 0.2).is_err());
    }

    #[test]
    fn descriptor_round_trips_through_text() {
        let d = ProblemDescriptor::reference_lasso();
        let parsed: ProblemDescriptor = d.to_string().parse().unwrap();
        assert_eq!(parsed, d);
        let multi = "generator = box_qp\nseed = 3\nn = 0\nd = 4\nlambda = 0\n";
        let p: ProblemDescriptor = multi.parse().unwrap();
        assert_eq!(p.generator, Generator::BoxQp);
        assert!("generator=nope d=3".parse::<ProblemDescriptor>().is_err());
        assert!("seed=3 d=3".parse::<ProblemDescriptor>().is_err());
        assert!("generator=lasso colour=red"
            .parse::<ProblemDescriptor>()
            .is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let d = ProblemDescriptor::new(Generator::Lasso, 7, 50, 20, 0.1);
        let a = generate_problem(&d).unwrap();
        let b = generate_problem(&d).unwrap();
        assert_eq!(a.smooth(), b.smooth());
        assert_eq!(a.lipschitz().to_bits(), b.lipschitz().to_bits());
        let other = generate_problem(&ProblemDescriptor { seed: 8, ..d }).unwrap();
        assert_ne!(a.smooth(), other.smooth());
    }

    #[test]
    fn box_qp_has_diagonal_spectrum() {
        let d = 6;
        let p = generate_problem(&ProblemDescriptor::new(Generator::BoxQp, 1, 0, d, 0.0)).unwrap();
        let est = crate::problem::estimate_lipschitz(&p, 1e-9).unwrap();
        assert_relative_eq!(est, d as f64, max_relative = 1e-9);
        assert!(p.set().is_bounded());
    }

    #[test]
    fn unknown_generator_is_rejected() {
        assert!("foo".parse::<Generator>().is_err());
        let bad = ProblemDescriptor::new(Generator::Lasso, 1, 0, 5, 0.1);
        assert!(generate_problem(&bad).is_err());
    }

    #[test]
    fn reference_optimum_of_known_problems() {
        let smooth = SmoothPart::least_squares(Array2::eye(1), array![3.0]).unwrap();
        let p = CompositeProblem::new(smooth, NonsmoothPart::Zero, FeasibleSet::FullSpace).unwrap();
        assert!(reference_optimum(&p, 100).unwrap().value.abs() < 1e-10);

        let smooth = SmoothPart::least_squares(Array2::eye(1), array![1.0]).unwrap();
        let p = CompositeProblem::new(
            smooth,
            NonsmoothPart::l1(0.4).unwrap(),
            FeasibleSet::FullSpace,
        )
        .unwrap();
        let r = reference_optimum(&p, 1000).unwrap();
        assert_relative_eq!(r.value, 0.32, epsilon = 1e-12);
        assert_relative_eq!(r.point[0], 0.6, epsilon = 1e-10);
    }

    #[test]
    fn gaps_are_floored_and_large_beats_rejected() {
        let mut t = synthetic(|_| 0.0, 3);
        for (r, f) in t.rows.iter_mut().zip([1.0, 1.0 - 1e-13, 0.5]) {
            r.f_val = f;
        }
        let mut ok = t.clone();
        ok.rows.truncate(2);
        attach_gaps(&mut ok, 1.0).unwrap();
        assert_eq!(ok.rows[1].gap, Some(0.0));
        assert!(matches!(
            attach_gaps(&mut t, 1.0),
            Err(Error::ReferenceQuality { .. })
        ));
    }

    #[test]
    fn run_config_requires_long_reference() {
        let mut cfg = RunConfig::new(ProblemDescriptor::reference_lasso(), Algorithm::Flag, 100);
        cfg.ref_iters = 999;
        assert!(cfg.validate().is_err());
        cfg.ref_iters = 1000;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("adam".parse::<Algorithm>().is_err());
        assert_eq!(
            "json-lines".parse::<TraceFormat>().unwrap(),
            TraceFormat::JsonLines
        );
    }
}
