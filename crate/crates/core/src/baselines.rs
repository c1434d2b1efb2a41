//! Reference optimizers sharing FLAG's problem interface and trace format:
//! ISTA, FISTA, diagonal AdaGrad and Euclidean mirror descent.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::flag::{IterateRecord, StepTrace};
use crate::problem::{CompositeProblem, Vector};
use crate::prox::prox_unchecked;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineAlgorithm {
    Fista,
    Ista,
    Adagrad,
    MirrorDescent,
}

impl BaselineAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            BaselineAlgorithm::Fista => "fista",
            BaselineAlgorithm::Ista => "ista",
            BaselineAlgorithm::Adagrad => "adagrad",
            BaselineAlgorithm::MirrorDescent => "mirror_descent",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineConfig {
    pub algorithm: BaselineAlgorithm,
    pub iterations: usize,
    /// AdaGrad: defaults to `√D`. Mirror descent: when unset, the step is
    /// `√D₂/√(Σ_{j≤k}‖∇_j‖²)`, otherwise `step_scale/√k`.
    pub step_scale: Option<f64>,
    /// AdaGrad only.
    pub delta: f64,
    /// AdaGrad and mirror descent: report the uniform average of the iterates.
    pub average_output: bool,
    pub start: Option<Vector>,
}

impl BaselineConfig {
    pub fn new(algorithm: BaselineAlgorithm, iterations: usize) -> Self {
        BaselineConfig {
            algorithm,
            iterations,
            step_scale: None,
            delta: crate::flag::DEFAULT_DELTA,
            average_output: true,
            start: None,
        }
    }

    pub fn with_step_scale(mut self, scale: f64) -> Self {
        self.step_scale = Some(scale);
        self
    }

    pub fn with_start(mut self, start: Vector) -> Self {
        self.start = Some(start);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        if let Some(s) = self.step_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("step_scale must be positive"));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("δ must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub solution: Vector,
    pub trace: StepTrace,
    pub prox_calls: usize,
}

pub fn run_baseline(problem: &CompositeProblem, config: &BaselineConfig) -> Result<BaselineOutput> {
    match config.algorithm {
        BaselineAlgorithm::Fista => fista_run(problem, config),
        BaselineAlgorithm::Ista => ista_run(problem, config),
        BaselineAlgorithm::Adagrad => adagrad_run(problem, config),
        BaselineAlgorithm::MirrorDescent => mirror_descent_run(problem, config),
    }
}

struct Recorder {
    algorithm: &'static str,
    clock: Instant,
    trace: StepTrace,
}

impl Recorder {
    fn new(algorithm: &'static str) -> Self {
        Recorder {
            algorithm,
            clock: Instant::now(),
            trace: StepTrace::default(),
        }
    }

    fn push(
        &mut self,
        k: usize,
        f_val: f64,
        eta_k: f64,
        l_k: f64,
        q_k: f64,
        calls: usize,
    ) -> Result<()> {
        if !f_val.is_finite() {
            return Err(Error::Divergence {
                algorithm: self.algorithm,
                iteration: k,
                trace: Box::new(std::mem::take(&mut self.trace)),
            });
        }
        self.trace.rows.push(IterateRecord {
            k,
            f_val,
            gap: None,
            eta_k,
            l_k,
            q_k,
            prox_calls_cum: calls,
            elapsed_s: self.clock.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

fn start_point(problem: &CompositeProblem, config: &BaselineConfig) -> Result<Vector> {
    match &config.start {
        Some(s) => {
            crate::error::check_dim(problem.dim(), s.len())?;
            Ok(problem.set().project(s))
        }
        None => Ok(problem.default_start()),
    }
}

/// Proximal gradient: `x_{k+1} = prox(x_k)`.
pub fn ista_run(problem: &CompositeProblem, config: &BaselineConfig) -> Result<BaselineOutput> {
    config.validate()?;
    let l = problem.lipschitz();
    let mut x = start_point(problem, config)?;
    let mut rec = Recorder::new("ista");
    for k in 1..=config.iterations {
        x = prox_unchecked(problem, &x);
        rec.push(k, problem.objective(&x), 1.0 / l, l, 0.0, k)?;
    }
    Ok(BaselineOutput {
        solution: x,
        trace: rec.trace,
        prox_calls: config.iterations,
    })
}

/// Accelerated proximal gradient with `t_{k+1} = (1 + √(1 + 4t_k²))/2`.
pub fn fista_run(problem: &CompositeProblem, config: &BaselineConfig) -> Result<BaselineOutput> {
    config.validate()?;
    let l = problem.lipschitz();
    let mut x = start_point(problem, config)?;
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut rec = Recorder::new("fista");
    for k in 1..=config.iterations {
        let x_next = prox_unchecked(problem, &y);
        let t_next = fista_momentum(t);
        y = &x_next + &((&x_next - &x) * ((t - 1.0) / t_next));
        x = x_next;
        t = t_next;
        rec.push(k, problem.objective(&x), 1.0 / l, l, 0.0, k)?;
    }
    Ok(BaselineOutput {
        solution: x,
        trace: rec.trace,
        prox_calls: config.iterations,
    })
}

/// `t_{k+1} = (1 + √(1 + 4t_k²))/2`, the root of `t² − t = t_k²`.
pub fn fista_momentum(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

fn require_bounded(problem: &CompositeProblem, name: &str) -> Result<()> {
    if problem.set().is_bounded() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} requires a box feasible set"
        )))
    }
}

/// Uniform running average.
struct Average {
    mean: Vector,
    count: f64,
}

impl Average {
    fn new(d: usize) -> Self {
        Average {
            mean: Vector::zeros(d),
            count: 0.0,
        }
    }

    fn add(&mut self, x: &Vector) {
        self.count += 1.0;
        let w = 1.0 / self.count;
        self.mean.zip_mut_with(x, |m, xi| *m += w * (xi - *m));
    }
}

/// Projected diagonal AdaGrad on the subgradient of `F`:
/// `x_{k+1} = clamp(x_k − c·H_k⁻¹∇_k)` with `H_k = diag(√Σ_{j≤k}∇_j²) + δI`.
pub fn adagrad_run(problem: &CompositeProblem, config: &BaselineConfig) -> Result<BaselineOutput> {
    config.validate()?;
    require_bounded(problem, "adagrad")?;
    let d = problem.dim();
    let scale = config
        .step_scale
        .unwrap_or_else(|| problem.set().diameters().linf_sq.sqrt());
    let set = problem.set();
    let mut x = start_point(problem, config)?;
    let mut sq = Vector::zeros(d);
    let mut avg = Average::new(d);
    let mut rec = Recorder::new("adagrad");
    for k in 1..=config.iterations {
        let g = problem.subgradient(&x);
        sq.zip_mut_with(&g, |a, gi| *a += gi * gi);
        for i in 0..d {
            if g[i] != 0.0 {
                x[i] = set.clamp_coord(i, x[i] - scale * g[i] / (sq[i].sqrt() + config.delta));
            }
        }
        avg.add(&x);
        let out = if config.average_output { &avg.mean } else { &x };
        let q = sq.iter().map(|v| v.sqrt()).sum();
        rec.push(k, problem.objective(out), scale, problem.lipschitz(), q, 0)?;
    }
    let solution = if config.average_output { avg.mean } else { x };
    Ok(BaselineOutput {
        solution,
        trace: rec.trace,
        prox_calls: 0,
    })
}

/// Projected subgradient descent with `1/√k`-type steps.
pub fn mirror_descent_run(
    problem: &CompositeProblem,
    config: &BaselineConfig,
) -> Result<BaselineOutput> {
    config.validate()?;
    require_bounded(problem, "mirror descent")?;
    let d = problem.dim();
    let d2_sqrt = problem.set().diameters().l2_sq.sqrt();
    let mut x = start_point(problem, config)?;
    let mut grad_sq_sum = 0.0;
    let mut avg = Average::new(d);
    let mut rec = Recorder::new("mirror_descent");
    for k in 1..=config.iterations {
        let g = problem.subgradient(&x);
        grad_sq_sum += g.dot(&g);
        let step = match config.step_scale {
            Some(c) => c / (k as f64).sqrt(),
            None if grad_sq_sum > 0.0 => d2_sqrt / grad_sq_sum.sqrt(),
            None => 0.0,
        };
        x = problem.set().project(&(&x - &(&g * step)));
        avg.add(&x);
        let out = if config.average_output { &avg.mean } else { &x };
        rec.push(k, problem.objective(out), step, problem.lipschitz(), 0.0, 0)?;
    }
    let solution = if config.average_output { avg.mean } else { x };
    Ok(BaselineOutput {
        solution,
        trace: rec.trace,
        prox_calls: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FeasibleSet, NonsmoothPart, SmoothPart};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn scalar_quadratic(set: FeasibleSet) -> CompositeProblem {
        let smooth = SmoothPart::least_squares(Array2::eye(1), array![0.0]).unwrap();
        CompositeProblem::with_lipschitz(smooth, NonsmoothPart::Zero, set, 1.0).unwrap()
    }

    #[test]
    fn ista_solves_scalar_quadratic_in_one_step() {
        let p = scalar_quadratic(FeasibleSet::FullSpace);
        let cfg = BaselineConfig::new(BaselineAlgorithm::Ista, 1).with_start(array![1.0]);
        assert_eq!(ista_run(&p, &cfg).unwrap().solution, array![0.0]);
    }

    #[test]
    fn fista_first_step_equals_ista() {
        let a = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let smooth = SmoothPart::least_squares(a, array![1.0, 0.0, 2.0]).unwrap();
        let p = CompositeProblem::new(
            smooth,
            NonsmoothPart::l1(0.2).unwrap(),
            FeasibleSet::FullSpace,
        )
        .unwrap();
        let start = array![0.7, -0.4];
        let f = fista_run(
            &p,
            &BaselineConfig::new(BaselineAlgorithm::Fista, 1).with_start(start.clone()),
        )
        .unwrap();
        let i = ista_run(
            &p,
            &BaselineConfig::new(BaselineAlgorithm::Ista, 1).with_start(start),
        )
        .unwrap();
        assert_eq!(f.solution, i.solution);
    }

    #[test]
    fn fista_momentum_recurrence() {
        let mut t = 1.0;
        for _ in 0..50 {
            let next = fista_momentum(t);
            assert_relative_eq!(next * next - next, t * t, max_relative = 1e-14);
            t = next;
        }
    }

    #[test]
    fn adagrad_steps_shrink_like_inverse_sqrt() {
        // f(x) = ½(x₁ − 100)² far from the box: the gradient along e₁ stays
        // ≈ constant, so the k-th step on that coordinate is ≈ c/√k.
        let smooth = SmoothPart::least_squares(Array2::eye(2), array![100.0, 0.0]).unwrap();
        let set = FeasibleSet::cube(2, -1.0, 1.0).unwrap();
        let p = CompositeProblem::with_lipschitz(smooth, NonsmoothPart::Zero, set, 1.0).unwrap();
        let c = 1e-4;
        for k in 1..=5 {
            let mut cfg = BaselineConfig::new(BaselineAlgorithm::Adagrad, k)
                .with_step_scale(c)
                .with_start(array![-1.0, 0.0]);
            cfg.average_output = false;
            let moved = adagrad_run(&p, &cfg).unwrap().solution[0] + 1.0;
            let expected: f64 = (1..=k).map(|j| c / (j as f64).sqrt()).sum();
            assert_relative_eq!(moved, expected, max_relative = 1e-5);
        }
    }

    #[test]
    fn adagrad_with_huge_delta_is_plain_subgradient_descent() {
        let smooth = SmoothPart::least_squares(Array2::eye(2), array![0.5, -0.5]).unwrap();
        let set = FeasibleSet::cube(2, -1.0, 1.0).unwrap();
        let p = CompositeProblem::with_lipschitz(smooth, NonsmoothPart::Zero, set, 1.0).unwrap();
        let mut cfg = BaselineConfig::new(BaselineAlgorithm::Adagrad, 3).with_step_scale(1e6);
        cfg.delta = 1e7;
        cfg.average_output = false;
        let run = adagrad_run(&p, &cfg).unwrap();
        let mut x = array![0.0, 0.0];
        for _ in 0..3 {
            let g = p.subgradient(&x);
            x = p.set().project(&(&x - &(&g * 0.1)));
        }
        assert_relative_eq!(run.solution, x, max_relative = 1e-5);
    }

    #[test]
    fn mirror_descent_is_stationary_at_optimum() {
        let p = scalar_quadratic(FeasibleSet::cube(1, -1.0, 1.0).unwrap());
        let cfg = BaselineConfig::new(BaselineAlgorithm::MirrorDescent, 10).with_start(array![0.0]);
        let run = mirror_descent_run(&p, &cfg).unwrap();
        assert_eq!(run.solution, array![0.0]);
    }

    #[test]
    fn mirror_descent_steps_follow_schedule() {
        let p = scalar_quadratic(FeasibleSet::cube(1, -10.0, 10.0).unwrap());
        let cfg = BaselineConfig::new(BaselineAlgorithm::MirrorDescent, 8)
            .with_start(array![5.0])
            .with_step_scale(0.3);
        let run = mirror_descent_run(&p, &cfg).unwrap();
        for r in &run.trace.rows {
            assert_relative_eq!(r.eta_k * (r.k as f64).sqrt(), 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn subgradient_methods_need_a_box() {
        let p = scalar_quadratic(FeasibleSet::FullSpace);
        for alg in [BaselineAlgorithm::Adagrad, BaselineAlgorithm::MirrorDescent] {
            assert!(run_baseline(&p, &BaselineConfig::new(alg, 3)).is_err());
        }
    }
}
