//! Mass functionals and the integral identities relating them.
//!
//! | method          | per-scale quantity                                          | prefactor                 |
//! |-----------------|-------------------------------------------------------------|---------------------------|
//! | surface         | `∫_{S_R} (∂_j e_ij - ∂_i tr e) x̂^i`                         | `1 / (2(n-1)ω)`           |
//! | weak            | `∫ (∂_k e_ik - ∂_i tr e)(-∂_i χ_α)`                          | `1 / (2(n-1)ω)`           |
//! | Ricci surface   | `∫_{S_R} G(X, x̂)`, `X = x^i ∂_i`                            | `-1 / ((n-1)(n-2)ω)`      |
//! | Ricci weak      | `∫ G(X, -Dχ_α)`                                             | `-1 / ((n-1)(n-2)ω)`      |
//!
//! All integrals use the flat measure; `ω` is the volume of `S^{n-1}`.

use crate::curvature::{curvature_from_jet, einstein_from_jet, CurvaturePointData};
use crate::metric::{MetricField, MetricJet};
use crate::quadrature::{
    integrate_annulus_vec, integrate_sphere_vec, CutoffFamily, Integral, QuadratureScheme,
};
use crate::report::{MassReport, Method};
use crate::{util, Error, Result};
use serde::Serialize;

pub const FLAG_SNAPPED: &str = "radius_snapped_off_kink";
pub const FLAG_ONE_SIDED: &str = "curvature_one_sided_at_kinks";

pub fn adm_normalization(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64 - 1.0) * util::unit_sphere_volume(n))
}

pub fn ricci_normalization(n: usize) -> f64 {
    -1.0 / ((n as f64 - 1.0) * (n as f64 - 2.0) * util::unit_sphere_volume(n))
}

pub fn normalization(method: Method, n: usize) -> f64 {
    match method {
        Method::RicciSurface | Method::RicciWeak => ricci_normalization(n),
        _ => adm_normalization(n),
    }
}

/// `(∂_k e_ik - ∂_i tr e)` for each `i`: the flat-contracted flux vector.
pub fn flux_vector(jet: &MetricJet) -> Vec<f64> {
    let n = jet.n;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|k| jet.dg(k, i, k) - jet.dg(i, k, k))
                .sum::<f64>()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `G_ij a^i b^j`.
fn einstein_pair(einstein: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += einstein[i * n + j] * a[i] * b[j];
        }
    }
    s
}

fn check_dim(metric: &dyn MetricField) -> Result<usize> {
    let n = metric.dim();
    if n < 3 {
        return Err(Error::Dimension(n));
    }
    Ok(n)
}

fn check_annulus(metric: &dyn MetricField, a: f64, b: f64) -> Result<()> {
    if a < metric.inner_radius() * (1.0 - 1e-12) || b > metric.outer_radius() * (1.0 + 1e-12) {
        return Err(Error::OutsideDomain {
            point: vec![a, b],
            reason: format!(
                "annulus [{a}, {b}] leaves the domain [{}, {}]",
                metric.inner_radius(),
                metric.outer_radius()
            ),
        });
    }
    Ok(())
}

fn check_order(metric: &dyn MetricField, needed: usize) -> Result<()> {
    if metric.max_order() < needed {
        return Err(Error::MissingDerivatives {
            needed,
            available: metric.max_order(),
        });
    }
    Ok(())
}

/// Moves `radius` off any declared kink; returns the radius used and
/// whether it moved.
fn snap_radius(metric: &dyn MetricField, radius: f64) -> (f64, bool) {
    let tol = 1e-9 * radius;
    if metric.kink_radii(radius - tol, radius + tol).is_empty() {
        (radius, false)
    } else {
        (radius * (1.0 + 1e-6), true)
    }
}

/// Normalised classical flux through `S_R` and its quadrature error.
pub fn adm_sphere_value(
    metric: &dyn MetricField,
    radius: f64,
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let n = check_dim(metric)?;
    check_annulus(metric, radius, radius)?;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let jet = metric.jet(x, 1)?;
        let r = util::norm(x);
        Ok(vec![dot(&flux_vector(&jet), x) / r])
    };
    let i = integrate_sphere_vec(n, &f, 1, radius, scheme)?;
    let c = adm_normalization(n);
    Ok((c * i.value(), c.abs() * i.error()))
}

pub fn adm_mass(
    metric: &dyn MetricField,
    radii: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    let n = check_dim(metric)?;
    let mut flags = Vec::new();
    let mut values = Vec::with_capacity(radii.len());
    let mut errors = Vec::with_capacity(radii.len());
    let mut used = Vec::with_capacity(radii.len());
    for &r in radii {
        let (r, snapped) = snap_radius(metric, r);
        if snapped {
            flags.push(format!("{FLAG_SNAPPED}:{r}"));
        }
        let (v, e) = adm_sphere_value(metric, r, scheme)?;
        used.push(r);
        values.push(v);
        errors.push(e);
    }
    MassReport::from_sequence(
        Method::AdmSurface,
        n,
        metric.id(),
        None,
        adm_normalization(n),
        used,
        values,
        errors,
        flags,
    )
}

fn breakpoints(metric: &dyn MetricField, a: f64, b: f64, extra: &[f64]) -> Vec<f64> {
    let mut k = metric.kink_radii(a, b);
    k.extend(extra.iter().copied().filter(|&r| r > a && r < b));
    k
}

/// Normalised weak-mass integral for one `α`.
pub fn weak_value(
    metric: &dyn MetricField,
    family: &CutoffFamily,
    alpha: f64,
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let n = check_dim(metric)?;
    let (a, b) = family.support(alpha);
    check_annulus(metric, a, b)?;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let jet = metric.jet(x, 1)?;
        let grad = family.grad(alpha, x);
        Ok(vec![-dot(&flux_vector(&jet), &grad)])
    };
    let i = integrate_annulus_vec(n, &f, 1, a, b, &breakpoints(metric, a, b, &[]), scheme)?;
    let c = adm_normalization(n);
    Ok((c * i.value(), c.abs() * i.error()))
}

pub fn weak_mass(
    metric: &dyn MetricField,
    family: &CutoffFamily,
    alphas: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    let n = check_dim(metric)?;
    let mut values = Vec::with_capacity(alphas.len());
    let mut errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (v, e) = weak_value(metric, family, alpha, scheme)?;
        values.push(v);
        errors.push(e);
    }
    MassReport::from_sequence(
        Method::Weak,
        n,
        metric.id(),
        Some(family.name()),
        adm_normalization(n),
        alphas.to_vec(),
        values,
        errors,
        Vec::new(),
    )
}

fn curvature_at(metric: &dyn MetricField, x: &[f64]) -> Result<CurvaturePointData> {
    curvature_from_jet(&metric.jet(x, 2)?, x)
}

fn einstein_at(metric: &dyn MetricField, x: &[f64]) -> Result<Vec<f64>> {
    einstein_from_jet(&metric.jet(x, 2)?, x)
}

fn smoothness_flags(metric: &dyn MetricField) -> Vec<String> {
    if metric.regularity().is_smooth() || metric.kink_radii(0.0, f64::INFINITY).is_empty() {
        Vec::new()
    } else {
        vec![FLAG_ONE_SIDED.to_string()]
    }
}

pub fn ricci_sphere_value(
    metric: &dyn MetricField,
    radius: f64,
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let n = check_dim(metric)?;
    check_order(metric, 2)?;
    check_annulus(metric, radius, radius)?;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let g = einstein_at(metric, x)?;
        let r = util::norm(x);
        // X = x, ν = x / r
        Ok(vec![einstein_pair(&g, x, x) / r])
    };
    let i = integrate_sphere_vec(n, &f, 1, radius, scheme)?;
    let c = ricci_normalization(n);
    Ok((c * i.value(), c.abs() * i.error()))
}

pub fn ricci_mass_surface(
    metric: &dyn MetricField,
    radii: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    let n = check_dim(metric)?;
    let mut flags = smoothness_flags(metric);
    let mut values = Vec::with_capacity(radii.len());
    let mut errors = Vec::with_capacity(radii.len());
    let mut used = Vec::with_capacity(radii.len());
    for &r in radii {
        let (r, snapped) = snap_radius(metric, r);
        if snapped {
            flags.push(format!("{FLAG_SNAPPED}:{r}"));
        }
        let (v, e) = ricci_sphere_value(metric, r, scheme)?;
        used.push(r);
        values.push(v);
        errors.push(e);
    }
    MassReport::from_sequence(
        Method::RicciSurface,
        n,
        metric.id(),
        None,
        ricci_normalization(n),
        used,
        values,
        errors,
        flags,
    )
}

pub fn ricci_weak_value(
    metric: &dyn MetricField,
    family: &CutoffFamily,
    alpha: f64,
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let n = check_dim(metric)?;
    check_order(metric, 2)?;
    let (a, b) = family.support(alpha);
    check_annulus(metric, a, b)?;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let g = einstein_at(metric, x)?;
        let grad = family.grad(alpha, x);
        Ok(vec![-einstein_pair(&g, x, &grad)])
    };
    let i = integrate_annulus_vec(n, &f, 1, a, b, &breakpoints(metric, a, b, &[]), scheme)?;
    let c = ricci_normalization(n);
    Ok((c * i.value(), c.abs() * i.error()))
}

pub fn ricci_weak_mass(
    metric: &dyn MetricField,
    family: &CutoffFamily,
    alphas: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    let n = check_dim(metric)?;
    let mut values = Vec::with_capacity(alphas.len());
    let mut errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (v, e) = ricci_weak_value(metric, family, alpha, scheme)?;
        values.push(v);
        errors.push(e);
    }
    MassReport::from_sequence(
        Method::RicciWeak,
        n,
        metric.id(),
        Some(family.name()),
        ricci_normalization(n),
        alphas.to_vec(),
        values,
        errors,
        smoothness_flags(metric),
    )
}

/// Radial test functions for the distributional identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TestFunction {
    /// `(1 - t²)³` on `(inner, outer)`, `t` the affine map to `(-1, 1)`.
    Bump { inner: f64, outer: f64 },
    /// Piecewise linear: 0 at `inner`, 1 at `peak`, 0 at `outer`.
    Tent { inner: f64, peak: f64, outer: f64 },
    /// Cubic smoothstep from 0 at `inner` to 1 at `outer`, then 1.
    Plateau { inner: f64, outer: f64 },
}

impl TestFunction {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFunction::Bump { inner, outer } | TestFunction::Plateau { inner, outer } => {
                inner > 0.0 && outer > inner
            }
            TestFunction::Tent { inner, peak, outer } => {
                inner > 0.0 && peak > inner && outer > peak
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("malformed test function {self:?}")))
        }
    }

    /// Annulus containing the support of the gradient.
    pub fn gradient_support(&self) -> (f64, f64) {
        match *self {
            TestFunction::Bump { inner, outer }
            | TestFunction::Plateau { inner, outer }
            | TestFunction::Tent { inner, outer, .. } => (inner, outer),
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, TestFunction::Plateau { .. })
    }

    /// Radii where the profile is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TestFunction::Bump { inner, outer } | TestFunction::Plateau { inner, outer } => {
                vec![inner, outer]
            }
            TestFunction::Tent { inner, peak, outer } => vec![inner, peak, outer],
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Bump { inner, outer } => {
                if r <= inner || r >= outer {
                    return 0.0;
                }
                let t = (2.0 * r - inner - outer) / (outer - inner);
                (1.0 - t * t).powi(3)
            }
            TestFunction::Tent { inner, peak, outer } => {
                if r <= inner || r >= outer {
                    0.0
                } else if r <= peak {
                    (r - inner) / (peak - inner)
                } else {
                    (outer - r) / (outer - peak)
                }
            }
            TestFunction::Plateau { inner, outer } => {
                if r <= inner {
                    0.0
                } else if r >= outer {
                    1.0
                } else {
                    let t = (r - inner) / (outer - inner);
                    t * t * (3.0 - 2.0 * t)
                }
            }
        }
    }

    pub fn d1(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Bump { inner, outer } => {
                if r <= inner || r >= outer {
                    return 0.0;
                }
                let t = (2.0 * r - inner - outer) / (outer - inner);
                -6.0 * t * (1.0 - t * t).powi(2) * 2.0 / (outer - inner)
            }
            TestFunction::Tent { inner, peak, outer } => {
                if r <= inner || r >= outer {
                    0.0
                } else if r <= peak {
                    1.0 / (peak - inner)
                } else {
                    -1.0 / (outer - peak)
                }
            }
            TestFunction::Plateau { inner, outer } => {
                if r <= inner || r >= outer {
                    0.0
                } else {
                    let t = (r - inner) / (outer - inner);
                    6.0 * t * (1.0 - t) / (outer - inner)
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = util::norm(x);
        let d = self.d1(r);
        x.iter().map(|v| d * v / r).collect()
    }
}

/// Jump of the flux of `V` across each kink sphere in `(a, b)`, weighted by
/// `weight(r_k)`: `Σ_k weight(r_k) ∮ (V⁺ - V⁻)·x̂`.
fn kink_flux_jumps(
    metric: &dyn MetricField,
    a: f64,
    b: f64,
    weight: &dyn Fn(f64) -> f64,
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let n = metric.dim();
    let mut total = 0.0;
    let mut err = 0.0;
    for rk in metric.kink_radii(a, b) {
        let w = weight(rk);
        if w == 0.0 {
            continue;
        }
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            let r = util::norm(x);
            let outer: Vec<f64> = x.iter().map(|v| v * (1.0 + 1e-10)).collect();
            let inner: Vec<f64> = x.iter().map(|v| v * (1.0 - 1e-10)).collect();
            let vp = v_field(metric, &outer)?;
            let vm = v_field(metric, &inner)?;
            let jump: f64 = vp.iter().zip(&vm).zip(x).map(|((p, m), xi)| (p - m) * xi / r).sum();
            Ok(vec![jump])
        };
        let i = integrate_sphere_vec(n, &f, 1, rk, scheme)?;
        total += w * i.value();
        err += w.abs() * i.error();
    }
    Ok((total, err))
}

/// `V^i = (g^{ij} g^{kl} - g^{ik} g^{jl}) ∂_k e_jl` from first derivatives only.
pub fn v_field(metric: &dyn MetricField, x: &[f64]) -> Result<Vec<f64>> {
    let jet = metric.jet(x, 1)?;
    let n = jet.n;
    let ginv = crate::linalg::inverse(n, &jet.g).ok_or_else(|| Error::Singular(x.to_vec()))?;
    let gi = |a: usize, b: usize| ginv[a * n + b];
    let mut v = vec![0.0; n];
    for (i, vi) in v.iter_mut().enumerate() {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    *vi += (gi(i, j) * gi(k, l) - gi(i, k) * gi(j, l)) * jet.dg(k, j, l);
                }
            }
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionalPairing {
    /// `∫ (V·(-Dφ) + φ Q^S) dμ`.
    pub pairing: f64,
    /// `∫ φ Scal dμ` plus flux jumps of `V` across kinks, when second
    /// derivatives exist away from kinks.
    pub strong_form: Option<f64>,
    pub quad_error: f64,
}

pub fn distributional_scalar(
    metric: &dyn MetricField,
    phi: &TestFunction,
    scheme: &QuadratureScheme,
) -> Result<DistributionalPairing> {
    let n = check_dim(metric)?;
    phi.validate()?;
    if !phi.is_compact() {
        return Err(Error::InvalidParameter(
            "test function must have compact support".into(),
        ));
    }
    let (a, b) = phi.gradient_support();
    check_annulus(metric, a, b)?;
    let second = metric.max_order() >= 2;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let r = util::norm(x);
        let p = phi.value(r);
        let grad = phi.grad(x);
        if second {
            let c = curvature_at(metric, x)?;
            Ok(vec![-dot(&c.v_field, &grad) + p * c.q_scalar, p * c.scal])
        } else {
            Err(Error::MissingDerivatives {
                needed: 2,
                available: metric.max_order(),
            })
        }
    };
    let i = integrate_annulus_vec(n, &f, 2, a, b, &breakpoints(metric, a, b, &phi.breakpoints()), scheme)?;
    let (jump, jump_err) = kink_flux_jumps(metric, a, b, &|r| phi.value(r), scheme)?;
    Ok(DistributionalPairing {
        pairing: i.values[0],
        strong_form: Some(i.values[1] + jump),
        quad_error: i.errors[0] + i.errors[1] + jump_err,
    })
}

/// Per-`α` pieces of the plateau identity.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityTerms {
    pub alpha: f64,
    /// `⟪Scal, φχ_α⟫` from pointwise curvature and kink jumps.
    pub scalar_pairing: f64,
    /// `∫ φ χ_α Q^S`.
    pub remainder: f64,
    /// `∫ χ_α V·(-Dφ)`.
    pub transition: f64,
    pub quad_error: f64,
}

/// The three integrals for one `α` (requires `α` beyond the transition of φ).
pub fn identity_terms(
    metric: &dyn MetricField,
    phi: &TestFunction,
    family: &CutoffFamily,
    alpha: f64,
    scheme: &QuadratureScheme,
) -> Result<IdentityTerms> {
    let n = check_dim(metric)?;
    check_order(metric, 2)?;
    let (pa, pb) = phi.gradient_support();
    let (ca, cb) = family.support(alpha);
    if ca < pb {
        return Err(Error::InvalidParameter(format!(
            "cutoff scale {alpha} must not start before the plateau is reached at {pb}"
        )));
    }
    check_annulus(metric, pa, cb)?;
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let r = util::norm(x);
        let c = curvature_at(metric, x)?;
        let weight = phi.value(r) * family.profile(alpha, r);
        let chi = family.profile(alpha, r);
        Ok(vec![
            weight * c.scal,
            weight * c.q_scalar,
            -chi * dot(&c.v_field, &phi.grad(x)),
        ])
    };
    let mut extra = phi.breakpoints();
    extra.extend([ca, cb]);
    let i = integrate_annulus_vec(n, &f, 3, pa, cb, &breakpoints(metric, pa, cb, &extra), scheme)?;
    let weight = |r: f64| phi.value(r) * family.profile(alpha, r);
    let (jump, jump_err) = kink_flux_jumps(metric, pa, cb, &weight, scheme)?;
    Ok(IdentityTerms {
        alpha,
        scalar_pairing: i.values[0] + jump,
        remainder: i.values[1],
        transition: i.values[2],
        quad_error: i.errors.iter().sum::<f64>() + jump_err,
    })
}

/// Weak mass recovered as
/// `(⟪Scal, φχ_α⟫ - ∫φχ_α Q^S - ∫χ_α V·(-Dφ)) / (2(n-1)ω)` along `alphas`,
/// with `⟪Scal, ·⟫` evaluated from pointwise curvature (plus kink jumps),
/// independently of `V` and `Q^S`.
pub fn plateau_identity_mass(
    metric: &dyn MetricField,
    phi: &TestFunction,
    family: &CutoffFamily,
    alphas: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    let n = check_dim(metric)?;
    phi.validate()?;
    if phi.is_compact() {
        return Err(Error::InvalidParameter(
            "identity needs a plateau test function equal to one at infinity".into(),
        ));
    }
    let norm = adm_normalization(n);
    let mut values = Vec::with_capacity(alphas.len());
    let mut errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let t = identity_terms(metric, phi, family, alpha, scheme)?;
        values.push(norm * (t.scalar_pairing - t.remainder - t.transition));
        errors.push(norm * t.quad_error);
    }
    MassReport::from_sequence(
        Method::CutoffIdentity,
        n,
        metric.id(),
        Some(family.name()),
        norm,
        alphas.to_vec(),
        values,
        errors,
        smoothness_flags(metric),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformalKillingReport {
    /// `∫ G(X, ∇φ) dμ_g`.
    pub lhs: f64,
    /// `-∫ φ ⟨G, ½ L_X g⟩_g dμ_g` with `½ L_X g = g + ½ X^v ∂_v e`.
    pub rhs: f64,
    /// Right side with `δ_jl + Γ^u_jl g_uv X^v` in place of `½ L_X g`.
    pub rhs_connection_form: f64,
    pub residual: f64,
    pub residual_connection_form: f64,
    pub quad_error: f64,
    pub flags: Vec<String>,
}

/// Integral identity from `div_g G = 0` and `X = x^i ∂_i` being conformal
/// Killing for `δ`: `∫ G(X, ∇φ) dμ_g = -∫ φ ⟨G, ½ L_X g⟩ dμ_g`.
pub fn conformal_killing_residual(
    metric: &dyn MetricField,
    phi: &TestFunction,
    scheme: &QuadratureScheme,
) -> Result<ConformalKillingReport> {
    let n = check_dim(metric)?;
    check_order(metric, 2)?;
    phi.validate()?;
    if !phi.is_compact() {
        return Err(Error::InvalidParameter(
            "test function must have compact support".into(),
        ));
    }
    let (a, b) = phi.gradient_support();
    check_annulus(metric, a, b)?;
    let mut flags = Vec::new();
    if !metric.kink_radii(a, b).is_empty() {
        flags.push(FLAG_ONE_SIDED.to_string());
    }
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let jet = metric.jet(x, 2)?;
        let c = curvature_from_jet(&jet, x)?;
        let r = util::norm(x);
        let vol = crate::linalg::determinant(n, &c.g).sqrt();
        let p = phi.value(r);
        let dphi = phi.grad(x);
        // ∇φ^j = g^{jk} ∂_k φ
        let up: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|k| c.ginv[j * n + k] * dphi[k]).sum())
            .collect();
        let lhs = einstein_pair(&c.einstein, x, &up) * vol;
        // G^{jl} = g^{ji} g^{lk} G_ik
        let gup = {
            let t = crate::linalg::matmul(n, &c.ginv, &c.einstein);
            crate::linalg::matmul(n, &t, &c.ginv)
        };
        let mut lie = 0.0;
        let mut conn = 0.0;
        for j in 0..n {
            for l in 0..n {
                let radial_derivative: f64 = (0..n).map(|v| x[v] * jet.dg(v, j, l)).sum();
                let s_lie = c.g[j * n + l] + 0.5 * radial_derivative;
                let mut s_conn = if j == l { 1.0 } else { 0.0 };
                for u in 0..n {
                    for v in 0..n {
                        s_conn += c.gamma[(u * n + j) * n + l] * c.g[u * n + v] * x[v];
                    }
                }
                lie += gup[j * n + l] * s_lie;
                conn += gup[j * n + l] * s_conn;
            }
        }
        Ok(vec![lhs, -p * lie * vol, -p * conn * vol])
    };
    let i = integrate_annulus_vec(n, &f, 3, a, b, &breakpoints(metric, a, b, &phi.breakpoints()), scheme)?;
    Ok(ConformalKillingReport {
        lhs: i.values[0],
        rhs: i.values[1],
        rhs_connection_form: i.values[2],
        residual: (i.values[0] - i.values[1]).abs(),
        residual_connection_form: (i.values[0] - i.values[2]).abs(),
        quad_error: i.errors.iter().sum(),
        flags,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionDecay {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    pub quad_errors: Vec<f64>,
    /// `σ` in `|value| ≈ C α^{-σ}`.
    pub fitted_exponent: f64,
    pub decays: bool,
}

/// Normalised `∫ [(g^{ij}g^{kl} - g^{ik}g^{jl}) - (δ^{ij}δ^{kl} - δ^{ik}δ^{jl})] ∂_k e_jl (-∂_i χ_α)`,
/// the difference between the curved and flat contractions of the weak-mass
/// integrand, which must vanish as `α → ∞`.
pub fn weak_correction_decay(
    metric: &dyn MetricField,
    family: &CutoffFamily,
    alphas: &[f64],
    scheme: &QuadratureScheme,
) -> Result<CorrectionDecay> {
    let n = check_dim(metric)?;
    if alphas.len() < crate::quadrature::limit::MIN_SCALES {
        return Err(Error::TooFewScales {
            needed: crate::quadrature::limit::MIN_SCALES,
            got: alphas.len(),
        });
    }
    let norm = adm_normalization(n);
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for &alpha in alphas {
        let (a, b) = family.support(alpha);
        check_annulus(metric, a, b)?;
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            let v = v_field(metric, x)?;
            let jet = metric.jet(x, 1)?;
            let flat = flux_vector(&jet);
            let grad = family.grad(alpha, x);
            Ok(vec![-v.iter().zip(&flat).zip(&grad).map(|((p, q), g)| (p - q) * g).sum::<f64>()])
        };
        let Integral { values: v, errors: e } =
            integrate_annulus_vec(n, &f, 1, a, b, &breakpoints(metric, a, b, &[]), scheme)?;
        values.push(norm * v[0]);
        errors.push(norm.abs() * e[0]);
    }
    let nonzero: Vec<(f64, f64)> = alphas
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.abs() > 1e-300)
        .map(|(a, v)| (*a, *v))
        .collect();
    let fitted_exponent = if nonzero.len() >= 2 {
        let (a, v): (Vec<f64>, Vec<f64>) = nonzero.into_iter().unzip();
        util::fit_power_decay(&a, &v).0
    } else {
        f64::INFINITY
    };
    Ok(CorrectionDecay {
        alphas: alphas.to_vec(),
        decays: fitted_exponent > 0.0,
        values,
        quad_errors: errors,
        fitted_exponent,
    })
}

/// Every method on one metric with shared schedule and cutoff.
pub fn mass_by_method(
    method: Method,
    metric: &dyn MetricField,
    family: &CutoffFamily,
    scales: &[f64],
    scheme: &QuadratureScheme,
) -> Result<MassReport> {
    match method {
        Method::AdmSurface => adm_mass(metric, scales, scheme),
        Method::Weak => weak_mass(metric, family, scales, scheme),
        Method::RicciSurface => ricci_mass_surface(metric, scales, scheme),
        Method::RicciWeak => ricci_weak_mass(metric, family, scales, scheme),
        Method::CutoffIdentity => {
            let first = scales.first().copied().unwrap_or(1.0);
            let phi = TestFunction::Plateau {
                inner: first / 2.0,
                outer: first,
            };
            plateau_identity_mass(metric, &phi, family, scales, scheme)
        }
    }
}
