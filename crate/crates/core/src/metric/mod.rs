//! Asymptotically Euclidean metrics on the exterior chart `{|x| >= R}`.
//!
//! A [`MetricField`] evaluates `g_ij` together with its first and second
//! coordinate derivatives. Families with closed-form derivatives live in
//! [`families`]; radial building blocks in [`profile`]; sampled metrics with
//! finite-difference derivatives in [`grid`].

pub mod catalog;
pub mod families;
pub mod grid;
pub mod profile;

use crate::{linalg, util, Error, Result};
use serde::{Deserialize, Serialize};

pub use families::{
    conformally_flat, flat, radial_perturbation, schwarzschild_isotropic, tensor_perturbation,
    FlatMetric, IsotropicMetric, TensorPerturbation,
};
pub use catalog::MetricSpec;
pub use grid::{lift_grid, sample_to_grid, GridMetric, LatticeSpec, LiftedGrid};
pub use profile::{ProfileKind, RadialProfile, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Analytic,
    C2,
    C1,
    W12Only,
    Grid,
}

impl Regularity {
    /// Whether pointwise second derivatives are meaningful everywhere.
    pub fn is_smooth(self) -> bool {
        matches!(self, Regularity::Analytic | Regularity::C2)
    }
}

/// Value and derivatives of a metric at one point.
///
/// Layout is row-major: `g[i*n + j]`, `dg[(k*n + i)*n + j] = ∂_k g_ij`,
/// `ddg[((k*n + l)*n + i)*n + j] = ∂_k ∂_l g_ij`. Derivative arrays are empty
/// when the requested order did not include them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricJet {
    pub n: usize,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    pub ddg: Vec<f64>,
}

impl MetricJet {
    pub fn flat(n: usize, order: usize) -> Self {
        MetricJet {
            n,
            g: linalg::identity(n),
            dg: if order >= 1 { vec![0.0; n * n * n] } else { Vec::new() },
            ddg: if order >= 2 { vec![0.0; n * n * n * n] } else { Vec::new() },
        }
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    #[inline]
    pub fn dg(&self, k: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.dg[(k * n + i) * n + j]
    }

    #[inline]
    pub fn ddg(&self, k: usize, l: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.ddg[((k * n + l) * n + i) * n + j]
    }

    pub fn order(&self) -> usize {
        if !self.ddg.is_empty() {
            2
        } else if !self.dg.is_empty() {
            1
        } else {
            0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().chain(&self.dg).chain(&self.ddg).all(|v| v.is_finite())
    }
}

/// A Riemannian metric on the exterior region, in the chart where the
/// background metric is `δ` and `r = |x|`.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// Inner radius `R` of the domain `{|x| >= R}`.
    fn inner_radius(&self) -> f64;

    /// Outer radius of the domain; infinite except for sampled metrics.
    fn outer_radius(&self) -> f64 {
        f64::INFINITY
    }

    fn regularity(&self) -> Regularity;

    /// Declared decay exponent `τ` of `e = g - δ`; `+∞` for the flat metric.
    fn falloff_tau(&self) -> f64;

    /// Declared `C >= 1` with `C⁻¹δ <= g <= Cδ`.
    fn comparability(&self) -> f64;

    /// Short identifier used in reports.
    fn id(&self) -> String;

    /// Highest derivative order [`MetricField::jet`] can provide.
    fn max_order(&self) -> usize {
        2
    }

    /// Metric and derivatives up to `order` (0, 1 or 2) at `x`.
    fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet>;

    /// Radii in `(a, b)` across which first derivatives jump.
    fn kink_radii(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(x, 0)?.g)
    }

    fn eval_d1(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(x, 1)?.dg)
    }

    fn eval_d2(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(x, 2)?.ddg)
    }
}

pub(crate) fn check_domain(x: &[f64], n: usize, inner: f64, outer: f64) -> Result<f64> {
    if x.len() != n {
        return Err(Error::InvalidParameter(format!(
            "point has {} coordinates, metric dimension is {n}",
            x.len()
        )));
    }
    let r = util::norm(x);
    // a relative slack keeps quadrature nodes placed exactly on R valid
    if r < inner * (1.0 - 1e-12) {
        return Err(Error::OutsideDomain {
            point: x.to_vec(),
            reason: format!("|x| = {r} < R = {inner}"),
        });
    }
    if r > outer * (1.0 + 1e-12) {
        return Err(Error::OutsideDomain {
            point: x.to_vec(),
            reason: format!("|x| = {r} > R_out = {outer}"),
        });
    }
    Ok(r)
}

/// Finite-difference step used to validate analytic derivatives.
pub fn validation_step(r: f64) -> f64 {
    (1e-4 * r).max(1e-4)
}

/// Largest deviation between the analytic derivatives of `metric` and
/// central differences of the lower order, over `points`.
///
/// Returns `(max |∂g - D_h g|, max |∂∂g - D_h ∂g|)`.
pub fn finite_difference_consistency(
    metric: &dyn MetricField,
    points: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let n = metric.dim();
    let mut e1: f64 = 0.0;
    let mut e2: f64 = 0.0;
    for x in points {
        let r = util::norm(x);
        let h = validation_step(r);
        let jet = metric.jet(x, 2)?;
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let jp = metric.jet(&xp, 1)?;
            let jm = metric.jet(&xm, 1)?;
            for i in 0..n {
                for j in 0..n {
                    let fd = (jp.g(i, j) - jm.g(i, j)) / (2.0 * h);
                    e1 = e1.max((fd - jet.dg(k, i, j)).abs());
                    for l in 0..n {
                        let fd2 = (jp.dg(l, i, j) - jm.dg(l, i, j)) / (2.0 * h);
                        e2 = e2.max((fd2 - jet.ddg(k, l, i, j)).abs());
                    }
                }
            }
        }
    }
    Ok((e1, e2))
}

/// Symmetry, positivity and comparability checks of `g` over `points`.
#[derive(Debug, Clone, Serialize)]
pub struct PointwiseAudit {
    pub max_asymmetry: f64,
    pub max_d1_asymmetry: f64,
    pub max_d2_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub within_comparability: bool,
}

pub fn audit_points(metric: &dyn MetricField, points: &[Vec<f64>]) -> Result<PointwiseAudit> {
    let n = metric.dim();
    let c = metric.comparability();
    let mut audit = PointwiseAudit {
        max_asymmetry: 0.0,
        max_d1_asymmetry: 0.0,
        max_d2_asymmetry: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        within_comparability: true,
    };
    let order = metric.max_order().min(2);
    for x in points {
        let jet = metric.jet(x, order)?;
        audit.max_asymmetry = audit.max_asymmetry.max(linalg::max_asymmetry(n, &jet.g));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if order >= 1 {
                        let d = (jet.dg(k, i, j) - jet.dg(k, j, i)).abs();
                        audit.max_d1_asymmetry = audit.max_d1_asymmetry.max(d);
                    }
                    if order >= 2 {
                        for l in 0..n {
                            let d = (jet.ddg(k, l, i, j) - jet.ddg(k, l, j, i))
                                .abs()
                                .max((jet.ddg(k, l, i, j) - jet.ddg(l, k, i, j)).abs());
                            audit.max_d2_asymmetry = audit.max_d2_asymmetry.max(d);
                        }
                    }
                }
            }
        }
        let ev = linalg::sym_eigenvalues(n, &jet.g);
        audit.min_eigenvalue = audit.min_eigenvalue.min(ev[0]);
        audit.max_eigenvalue = audit.max_eigenvalue.max(ev[n - 1]);
    }
    let tol = 1e-12;
    audit.within_comparability = audit.min_eigenvalue >= 1.0 / c - tol
        && audit.max_eigenvalue <= c + tol
        && audit.min_eigenvalue > 0.0;
    Ok(audit)
}

/// Deterministic sample of points in the annulus `[a, b]`, spread over
/// log-radius and direction (Halton sequence).
pub fn sample_annulus(n: usize, a: f64, b: f64, count: usize) -> Vec<Vec<f64>> {
    use crate::quadrature::sphere::halton_direction;
    (0..count)
        .map(|idx| {
            let (t, dir) = halton_direction(n, idx + 1);
            let r = a * (b / a).powf(t);
            dir.iter().map(|v| v * r).collect()
        })
        .collect()
}
