//! Closed-form proximal, gradient-mapping and mirror steps.
//!
//! All three are exact for the supported problem class because both `h`
//! and the feasible set separate across coordinates.

use crate::error::{check_dim, Error, Result};
use crate::problem::{norm2, CompositeProblem, FeasibleSet, NonsmoothPart, Vector};

/// Accepted deviation of `‖g‖₂` from 1 in [`metric_update`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// `argmin_{y∈C} h(y) + L/2‖y − (x − ∇f(x)/L)‖²`.
pub fn prox(problem: &CompositeProblem, x: &Vector) -> Result<Vector> {
    check_dim(problem.dim(), x.len())?;
    Ok(prox_unchecked(problem, x))
}

pub(crate) fn prox_unchecked(problem: &CompositeProblem, x: &Vector) -> Vector {
    let l = problem.lipschitz();
    let mut v = x - &(problem.smooth_grad(x) / l);
    let set = problem.set();
    match problem.nonsmooth() {
        NonsmoothPart::Zero => {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = set.clamp_coord(i, *vi);
            }
        }
        NonsmoothPart::L1 { weight } => {
            let tau = weight / l;
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = set.clamp_coord(i, soft_threshold(*vi, tau));
            }
        }
    }
    v
}

/// `p = −L(prox(x) − x)`.
pub fn gradient_mapping(problem: &CompositeProblem, x: &Vector) -> Result<Vector> {
    let y = prox(problem, x)?;
    Ok(mapping_from_prox(problem.lipschitz(), x, &y))
}

#[inline]
pub(crate) fn mapping_from_prox(lipschitz: f64, x: &Vector, prox_x: &Vector) -> Vector {
    (x - prox_x) * lipschitz
}

/// Diagonal metric `S = diag(s) + δI`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricDiag {
    pub s: Vector,
    pub delta: f64,
}

impl MetricDiag {
    pub fn new(s: Vector, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || s.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("metric entries and δ must be nonnegative"));
        }
        Ok(MetricDiag { s, delta })
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.s[i] + self.delta
    }

    /// `vᵀS⁻¹v`, the squared dual norm. Coordinates with `vᵢ = 0` contribute
    /// nothing even when `Sᵢᵢ = 0`.
    pub fn inv_quad_form(&self, v: &Vector) -> f64 {
        v.iter()
            .enumerate()
            .filter(|(_, vi)| **vi != 0.0)
            .map(|(i, vi)| vi * vi / self.diag(i))
            .sum()
    }

    /// `vᵀSv`.
    pub fn quad_form(&self, v: &Vector) -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, vi)| vi * vi * self.diag(i))
            .sum()
    }
}

/// `argmin_{z'∈C} ⟨η p, z' − z⟩ + ½‖z' − z‖²_S`, solved coordinate-wise:
/// `z'ᵢ = clamp(zᵢ − η pᵢ/Sᵢᵢ)`.
pub fn mirror_step(
    z: &Vector,
    p: &Vector,
    eta: f64,
    metric: &MetricDiag,
    set: &FeasibleSet,
) -> Result<Vector> {
    check_dim(z.len(), p.len())?;
    check_dim(z.len(), metric.dim())?;
    if !(eta > 0.0) {
        return Err(Error::invalid("mirror step size must be positive"));
    }
    Ok(z.iter()
        .zip(p)
        .enumerate()
        .map(|(i, (&zi, &pi))| {
            let step = if pi == 0.0 {
                0.0
            } else {
                eta * pi / metric.diag(i)
            };
            set.clamp_coord(i, zi - step)
        })
        .collect())
}

/// Running per-coordinate sums of squares of the normalized gradient
/// mappings; `row_norms()` equals the row norms of the stacked matrix
/// `[g₁, …, g_k]` without storing it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientAccumulator {
    sq_sums: Vector,
}

impl GradientAccumulator {
    pub fn new(d: usize) -> Self {
        GradientAccumulator {
            sq_sums: Vector::zeros(d),
        }
    }

    pub fn push(&mut self, g: &Vector) -> Result<()> {
        check_dim(self.sq_sums.len(), g.len())?;
        let norm = norm2(g);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!(
                "expected a unit vector, got norm {norm}"
            )));
        }
        self.sq_sums.zip_mut_with(g, |a, gi| *a += gi * gi);
        Ok(())
    }

    pub fn squared_sums(&self) -> &Vector {
        &self.sq_sums
    }

    pub fn row_norms(&self) -> Vector {
        self.sq_sums.mapv(f64::sqrt)
    }
}

/// One accumulation step: returns the updated squared sums and the new row norms `s`.
pub fn metric_update(accumulator: &Vector, g: &Vector) -> Result<(Vector, Vector)> {
    let mut acc = GradientAccumulator {
        sq_sums: accumulator.clone(),
    };
    acc.push(g)?;
    let s = acc.row_norms();
    Ok((acc.sq_sums, s))
}
