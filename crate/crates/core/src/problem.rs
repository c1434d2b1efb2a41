//! Composite objectives `F = f + h` over a feasible set.
//!
//! Every solver in the crate talks to a problem only through
//! [`CompositeProblem`]: function values, smooth gradients, the Lipschitz
//! constant of the smooth gradient, the separable nonsmooth term and the
//! feasible set. The supported class (least-squares or logistic `f`,
//! zero or weighted-ℓ1 `h`, full space or box) is exactly the class for
//! which the proximal and mirror steps have coordinate-wise closed forms.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub type Vector = Array1<f64>;

/// Relative tolerance used when a problem estimates its own Lipschitz constant.
pub const LIPSCHITZ_REL_TOL: f64 = 1e-6;
/// Multiplier applied to the estimated Lipschitz constant.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;

const POWER_MAX_ITERS: usize = 100_000;

/// The smooth convex part `f`.
#[derive(Clone, Debug, PartialEq)]
pub enum SmoothPart {
    /// `f(x) = ½‖Ax − b‖₂²`
    LeastSquares { a: Array2<f64>, b: Vector },
    /// `f(x) = Σᵢ log(1 + exp(−yᵢ⟨aᵢ, x⟩))` with labels `yᵢ ∈ {−1, +1}`.
    Logistic { a: Array2<f64>, labels: Vector },
}

impl SmoothPart {
    pub fn least_squares(a: Array2<f64>, b: Vector) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        Ok(SmoothPart::LeastSquares { a, b })
    }

    pub fn logistic(a: Array2<f64>, labels: Vector) -> Result<Self> {
        check_dim(a.nrows(), labels.len())?;
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("logistic labels must be ±1"));
        }
        Ok(SmoothPart::Logistic { a, labels })
    }

    pub fn dim(&self) -> usize {
        self.matrix().ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        match self {
            SmoothPart::LeastSquares { a, .. } | SmoothPart::Logistic { a, .. } => a,
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            SmoothPart::LeastSquares { a, b } => {
                let r = a.dot(x) - b;
                0.5 * r.dot(&r)
            }
            SmoothPart::Logistic { a, labels } => a
                .dot(x)
                .iter()
                .zip(labels)
                .map(|(&m, &y)| softplus(-y * m))
                .sum(),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            SmoothPart::LeastSquares { a, b } => a.t().dot(&(a.dot(x) - b)),
            SmoothPart::Logistic { a, labels } => {
                let margins = a.dot(x);
                let weights: Vector = margins
                    .iter()
                    .zip(labels)
                    .map(|(&m, &y)| -y * sigmoid(-y * m))
                    .collect();
                a.t().dot(&weights)
            }
        }
    }

    /// Estimates the Lipschitz constant of `∇f`: `σ_max(A)²` for least squares,
    /// `σ_max(A)²/4` for logistic loss.
    pub fn estimate_lipschitz(&self, rel_tol: f64) -> Result<f64> {
        let top = top_eigenvalue_gram(self.matrix(), rel_tol)?;
        Ok(match self {
            SmoothPart::LeastSquares { .. } => top,
            SmoothPart::Logistic { .. } => top / 4.0,
        })
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration.
///
/// Stops once the eigen-residual `‖AᵀAv − ρv‖₂` drops below `rel_tol·ρ`,
/// which bounds the relative distance from the Rayleigh quotient `ρ` to an
/// eigenvalue of `AᵀA`.
pub fn top_eigenvalue_gram(a: &Array2<f64>, rel_tol: f64) -> Result<f64> {
    if !(rel_tol > 0.0) {
        return Err(Error::invalid("rel_tol must be positive"));
    }
    let d = a.ncols();
    if d == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    // Deterministic start with unequal weights so it is not orthogonal to
    // the top eigenvector of a structured matrix.
    let mut v: Vector = (0..d).map(|i| 1.0 + 0.5 / (i as f64 + 1.0)).collect();
    v /= norm2(&v);
    let mut rho = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = a.t().dot(&a.dot(&v));
        rho = v.dot(&w);
        if !(rho > 0.0) {
            return Err(Error::invalid("smooth part has zero curvature"));
        }
        let residual = norm2(&(&w - &(&v * rho)));
        if residual <= rel_tol * rho {
            return Ok(rho);
        }
        v = &w / norm2(&w);
    }
    Err(Error::Convergence {
        iterations: POWER_MAX_ITERS,
        last_estimate: rho,
    })
}

/// The nonsmooth, separable part `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NonsmoothPart {
    Zero,
    /// `h(x) = weight·‖x‖₁`
    L1 {
        weight: f64,
    },
}

impl NonsmoothPart {
    pub fn l1(weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::invalid("ℓ1 weight must be finite and nonnegative"));
        }
        Ok(NonsmoothPart::L1 { weight })
    }

    pub fn weight(&self) -> f64 {
        match *self {
            NonsmoothPart::Zero => 0.0,
            NonsmoothPart::L1 { weight } => weight,
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            NonsmoothPart::Zero => 0.0,
            NonsmoothPart::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// A subgradient of `h` at `x`, using `sign(0) = 0`.
    pub fn subgradient(&self, x: &Vector) -> Vector {
        match *self {
            NonsmoothPart::Zero => Vector::zeros(x.len()),
            NonsmoothPart::L1 { weight } => x.mapv(|v| weight * sign(v)),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared diameters of a feasible set: `D` in the ∞-norm and `D₂` in the 2-norm.
/// Both are `f64::INFINITY` on the full space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diameters {
    pub linf_sq: f64,
    pub l2_sq: f64,
}

impl Diameters {
    pub fn is_bounded(&self) -> bool {
        self.linf_sq.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    FullSpace,
    Box { lower: Vector, upper: Vector },
}

impl FeasibleSet {
    pub fn new_box(lower: Vector, upper: Vector) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid(
                "box requires lower(i) < upper(i) for every i",
            ));
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    /// The box `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(Vector::from_elem(d, lo), Vector::from_elem(d, hi))
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, FeasibleSet::Box { .. })
    }

    /// Euclidean projection; a coordinate-wise clamp on boxes.
    pub fn project(&self, v: &Vector) -> Vector {
        match self {
            FeasibleSet::FullSpace => v.clone(),
            FeasibleSet::Box { lower, upper } => {
                let mut out = v.clone();
                for ((o, &l), &u) in out.iter_mut().zip(lower).zip(upper) {
                    *o = o.clamp(l, u);
                }
                out
            }
        }
    }

    pub fn project_checked(&self, v: &Vector) -> Result<Vector> {
        if let FeasibleSet::Box { lower, .. } = self {
            check_dim(lower.len(), v.len())?;
        }
        Ok(self.project(v))
    }

    #[inline]
    pub(crate) fn clamp_coord(&self, i: usize, v: f64) -> f64 {
        match self {
            FeasibleSet::FullSpace => v,
            FeasibleSet::Box { lower, upper } => v.clamp(lower[i], upper[i]),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            FeasibleSet::FullSpace => x.iter().all(|v| v.is_finite()),
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((&v, &l), &u)| v >= l - tol && v <= u + tol),
        }
    }

    pub fn diameters(&self) -> Diameters {
        match self {
            FeasibleSet::FullSpace => Diameters {
                linf_sq: f64::INFINITY,
                l2_sq: f64::INFINITY,
            },
            FeasibleSet::Box { lower, upper } => {
                let widths = upper - lower;
                let max = widths.iter().cloned().fold(0.0, f64::max);
                Diameters {
                    linf_sq: max * max,
                    l2_sq: widths.dot(&widths),
                }
            }
        }
    }

    /// Uniform sample from the set; on the full space from `[−radius, radius]^d`.
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, radius: f64, rng: &mut R) -> Vector {
        match self {
            FeasibleSet::FullSpace => (0..d).map(|_| rng.random_range(-radius..=radius)).collect(),
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| rng.random_range(l..=u))
                .collect(),
        }
    }
}

/// `F = f + h` restricted to a feasible set.
#[derive(Clone, Debug)]
pub struct CompositeProblem {
    smooth: SmoothPart,
    nonsmooth: NonsmoothPart,
    set: FeasibleSet,
    lipschitz: f64,
}

impl CompositeProblem {
    /// Builds a problem, estimating `L` by power iteration (relative tolerance
    /// [`LIPSCHITZ_REL_TOL`]) and inflating it by [`LIPSCHITZ_SAFETY`].
    pub fn new(smooth: SmoothPart, nonsmooth: NonsmoothPart, set: FeasibleSet) -> Result<Self> {
        let l = smooth.estimate_lipschitz(LIPSCHITZ_REL_TOL)? * LIPSCHITZ_SAFETY;
        Self::with_lipschitz(smooth, nonsmooth, set, l)
    }

    /// Builds a problem with a caller-supplied Lipschitz constant.
    pub fn with_lipschitz(
        smooth: SmoothPart,
        nonsmooth: NonsmoothPart,
        set: FeasibleSet,
        lipschitz: f64,
    ) -> Result<Self> {
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(Error::invalid(
                "Lipschitz constant must be positive and finite",
            ));
        }
        if let FeasibleSet::Box { lower, .. } = &set {
            check_dim(smooth.dim(), lower.len())?;
        }
        Ok(CompositeProblem {
            smooth,
            nonsmooth,
            set,
            lipschitz,
        })
    }

    /// Copy of this problem with a different `L`; used by negative controls.
    pub fn rescaled_lipschitz(&self, factor: f64) -> Result<Self> {
        Self::with_lipschitz(
            self.smooth.clone(),
            self.nonsmooth,
            self.set.clone(),
            self.lipschitz * factor,
        )
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn smooth(&self) -> &SmoothPart {
        &self.smooth
    }

    pub fn nonsmooth(&self) -> NonsmoothPart {
        self.nonsmooth
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    /// `F(x) = f(x) + h(x)`.
    pub fn eval(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.objective(x))
    }

    #[inline]
    pub(crate) fn objective(&self, x: &Vector) -> f64 {
        self.smooth.value(x) + self.nonsmooth.value(x)
    }

    pub fn smooth_value(&self, x: &Vector) -> f64 {
        self.smooth.value(x)
    }

    pub fn smooth_grad(&self, x: &Vector) -> Vector {
        self.smooth.gradient(x)
    }

    /// A subgradient of `F` (gradient of `f` plus the `sign(0) = 0` subgradient of `h`).
    pub fn subgradient(&self, x: &Vector) -> Vector {
        self.smooth.gradient(x) + self.nonsmooth.subgradient(x)
    }

    /// The starting point used by every solver: the projection of the origin.
    pub fn default_start(&self) -> Vector {
        self.set.project(&Vector::zeros(self.dim()))
    }
}

/// Re-estimates `L` for an existing problem.
pub fn estimate_lipschitz(problem: &CompositeProblem, rel_tol: f64) -> Result<f64> {
    problem.smooth.estimate_lipschitz(rel_tol)
}

#[inline]
pub(crate) fn norm2(v: &Vector) -> f64 {
    v.dot(v).sqrt()
}
