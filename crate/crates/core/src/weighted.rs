//! Weighted Lebesgue and Sobolev norms on the exterior region.
//!
//! `‖T‖_{W^{k,p}_{-τ}} = Σ_{l<=k} (∫ r^{p(τ+l)-n} |D^l T|^p dμ)^{1/p}`, and for
//! `p = ∞` the supremum of `r^{τ+l} |D^l T|`. Norms are accumulated over
//! dyadic annuli; the per-annulus contributions give a tail estimate and a
//! decay rate from which membership is decided.

use crate::metric::{MetricField, RadialProfile};
use crate::quadrature::{integrate_annulus_vec, QuadratureScheme};
use crate::{linalg, util, Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Margin on the decay surplus separating members from non-members.
pub const MEMBERSHIP_MARGIN: f64 = 0.05;
/// Dyadic annuli used for the decay fit.
const FIT_WINDOW: usize = 4;

/// A tensor field with derivatives. `derivatives(x, l)` returns `D^l T` as a
/// flat array: derivative multi-index major, component minor.
pub trait TensorField: Sync {
    fn dim(&self) -> usize;
    fn max_order(&self) -> usize;
    fn derivatives(&self, x: &[f64], order: usize) -> Result<Vec<f64>>;
}

/// The zero scalar field.
pub struct ZeroField {
    pub n: usize,
}

impl TensorField for ZeroField {
    fn dim(&self) -> usize {
        self.n
    }
    fn max_order(&self) -> usize {
        usize::MAX
    }
    fn derivatives(&self, _x: &[f64], order: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.n.pow(order as u32)])
    }
}

/// `T(x) = a(|x|)` for a radial profile.
pub struct RadialScalar {
    pub n: usize,
    pub profile: Arc<dyn RadialProfile>,
}

impl TensorField for RadialScalar {
    fn dim(&self) -> usize {
        self.n
    }
    fn max_order(&self) -> usize {
        2
    }
    fn derivatives(&self, x: &[f64], order: usize) -> Result<Vec<f64>> {
        let n = self.n;
        let r = util::norm(x);
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        let p = &self.profile;
        Ok(match order {
            0 => vec![p.value(r)],
            1 => u.iter().map(|ui| p.d1(r) * ui).collect(),
            2 => {
                let (d1, d2) = (p.d1(r), p.d2(r));
                let mut h = vec![0.0; n * n];
                for k in 0..n {
                    for l in 0..n {
                        let d = if k == l { 1.0 } else { 0.0 };
                        h[k * n + l] = d2 * u[k] * u[l] + d1 / r * (d - u[k] * u[l]);
                    }
                }
                h
            }
            _ => {
                return Err(Error::MissingDerivatives {
                    needed: order,
                    available: 2,
                })
            }
        })
    }
}

/// `e = g - δ` of a metric, as a field.
pub struct MetricError<'a> {
    pub metric: &'a dyn MetricField,
}

impl TensorField for MetricError<'_> {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn max_order(&self) -> usize {
        self.metric.max_order()
    }
    fn derivatives(&self, x: &[f64], order: usize) -> Result<Vec<f64>> {
        let jet = self.metric.jet(x, order)?;
        Ok(match order {
            0 => jet
                .g
                .iter()
                .zip(linalg::identity(jet.n))
                .map(|(a, b)| a - b)
                .collect(),
            1 => jet.dg,
            2 => jet.ddg,
            _ => {
                return Err(Error::MissingDerivatives {
                    needed: order,
                    available: 2,
                })
            }
        })
    }
}

/// `u ⊗ v`, derivatives by the Leibniz rule (up to order 2).
pub struct ProductField<'a> {
    pub left: &'a dyn TensorField,
    pub right: &'a dyn TensorField,
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

impl TensorField for ProductField<'_> {
    fn dim(&self) -> usize {
        self.left.dim()
    }
    fn max_order(&self) -> usize {
        self.left.max_order().min(self.right.max_order()).min(2)
    }
    fn derivatives(&self, x: &[f64], order: usize) -> Result<Vec<f64>> {
        let n = self.dim();
        let u0 = self.left.derivatives(x, 0)?;
        let v0 = self.right.derivatives(x, 0)?;
        let (mu, mv) = (u0.len(), v0.len());
        let m = mu * mv;
        if order == 0 {
            return Ok(outer(&u0, &v0));
        }
        let u1 = self.left.derivatives(x, 1)?;
        let v1 = self.right.derivatives(x, 1)?;
        let du = |k: usize| &u1[k * mu..(k + 1) * mu];
        let dv = |k: usize| &v1[k * mv..(k + 1) * mv];
        match order {
            1 => {
                let mut out = vec![0.0; n * m];
                for k in 0..n {
                    let a = outer(du(k), &v0);
                    let b = outer(&u0, dv(k));
                    for c in 0..m {
                        out[k * m + c] = a[c] + b[c];
                    }
                }
                Ok(out)
            }
            2 => {
                let u2 = self.left.derivatives(x, 2)?;
                let v2 = self.right.derivatives(x, 2)?;
                let mut out = vec![0.0; n * n * m];
                for k in 0..n {
                    for l in 0..n {
                        let kl = k * n + l;
                        let t1 = outer(&u2[kl * mu..(kl + 1) * mu], &v0);
                        let t2 = outer(du(k), dv(l));
                        let t3 = outer(du(l), dv(k));
                        let t4 = outer(&u0, &v2[kl * mv..(kl + 1) * mv]);
                        for c in 0..m {
                            out[kl * m + c] = t1[c] + t2[c] + t3[c] + t4[c];
                        }
                    }
                }
                Ok(out)
            }
            _ => Err(Error::MissingDerivatives {
                needed: order,
                available: 2,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Exponent::Finite(p) if !(p >= 1.0 && p.is_finite()) => Err(Error::InvalidParameter(
                format!("integrability exponent must be >= 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn reciprocal(&self) -> f64 {
        match *self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Infinity => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormSpec {
    pub k: usize,
    pub p: Exponent,
    pub tau: f64,
    pub r_in: f64,
    pub r_out: f64,
    /// Sample points per annulus for `p = ∞`.
    pub sup_samples: usize,
}

impl WeightedNormSpec {
    pub fn new(k: usize, p: Exponent, tau: f64, r_in: f64, r_out: f64) -> Self {
        WeightedNormSpec {
            k,
            p,
            tau,
            r_in,
            r_out,
            sup_samples: 4096,
        }
    }

    fn validate(&self, field: &dyn TensorField) -> Result<()> {
        self.p.validate()?;
        if !(self.r_out > self.r_in && self.r_in > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation [{}, {}] is empty",
                self.r_in, self.r_out
            )));
        }
        if field.max_order() < self.k {
            return Err(Error::MissingDerivatives {
                needed: self.k,
                available: field.max_order(),
            });
        }
        Ok(())
    }

    /// Dyadic radii `r_in, 2 r_in, ...` ending exactly at `r_out`.
    pub fn dyadic_breaks(&self) -> Vec<f64> {
        let mut out = vec![self.r_in];
        let mut r = self.r_in;
        while 2.0 * r < self.r_out * (1.0 - 1e-12) {
            r *= 2.0;
            out.push(r);
        }
        out.push(self.r_out);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightedNorm {
    /// Norm over the truncation `[r_in, r_out]`.
    pub value: f64,
    /// Estimated integral of the `p`-th power integrand over `r > r_out`,
    /// summed over derivative orders (`∞` when divergent, 0 for `p = ∞`).
    pub tail_estimate: f64,
    /// Norm with the tail added.
    pub extrapolated: f64,
    /// Per derivative order `l`: contribution of each dyadic annulus (the
    /// integral for finite `p`, the supremum for `p = ∞`).
    pub annulus_contributions: Vec<Vec<f64>>,
    pub annulus_radii: Vec<f64>,
    pub quad_error: f64,
}

fn weight_exponent(spec: &WeightedNormSpec, l: usize, n: usize) -> f64 {
    match spec.p {
        Exponent::Finite(p) => p * (spec.tau + l as f64) - n as f64,
        Exponent::Infinity => spec.tau + l as f64,
    }
}

pub fn weighted_norm(
    field: &dyn TensorField,
    spec: &WeightedNormSpec,
    scheme: &QuadratureScheme,
) -> Result<WeightedNorm> {
    spec.validate(field)?;
    let n = field.dim();
    let breaks = spec.dyadic_breaks();
    let mut contributions = vec![Vec::with_capacity(breaks.len() - 1); spec.k + 1];
    let mut quad_error = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        match spec.p {
            Exponent::Finite(p) => {
                let f = |x: &[f64]| -> Result<Vec<f64>> {
                    let r = util::norm(x);
                    (0..=spec.k)
                        .map(|l| {
                            let d = field.derivatives(x, l)?;
                            let mag = util::norm(&d);
                            if !mag.is_finite() {
                                return Err(Error::NonFinite(format!("|D^{l}T| at {x:?}")));
                            }
                            Ok(r.powf(weight_exponent(spec, l, n)) * mag.powf(p))
                        })
                        .collect()
                };
                let i = integrate_annulus_vec(n, &f, spec.k + 1, a, b, &[], scheme)?;
                for l in 0..=spec.k {
                    contributions[l].push(i.values[l]);
                    quad_error += i.errors[l];
                }
            }
            Exponent::Infinity => {
                let pts = crate::metric::sample_annulus(n, a, b, spec.sup_samples);
                let vals = util::ordered_map(&pts, |x| -> Result<Vec<f64>> {
                    let r = util::norm(x);
                    (0..=spec.k)
                        .map(|l| {
                            let mag = util::norm(&field.derivatives(x, l)?);
                            if !mag.is_finite() {
                                return Err(Error::NonFinite(format!("|D^{l}T| at {x:?}")));
                            }
                            Ok(r.powf(weight_exponent(spec, l, n)) * mag)
                        })
                        .collect()
                });
                let mut sup = vec![0.0f64; spec.k + 1];
                for v in vals {
                    for (s, x) in sup.iter_mut().zip(v?) {
                        *s = s.max(x);
                    }
                }
                for l in 0..=spec.k {
                    contributions[l].push(sup[l]);
                }
            }
        }
    }

    let mut value = 0.0;
    let mut extrapolated = 0.0;
    let mut tail_total = 0.0;
    for c in &contributions {
        let (truncated, tail) = match spec.p {
            Exponent::Finite(_) => (util::pairwise_sum(c), geometric_tail(&breaks, c)),
            Exponent::Infinity => {
                let sup = c.iter().cloned().fold(0.0, f64::max);
                let tail = if decay_slope(&breaks, c).is_none_or(|s| s < 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                };
                (sup, tail)
            }
        };
        let root = |v: f64| match spec.p {
            Exponent::Finite(p) => v.powf(1.0 / p),
            Exponent::Infinity => v,
        };
        value += root(truncated);
        tail_total += tail;
        extrapolated += root(truncated + tail);
    }
    Ok(WeightedNorm {
        value,
        tail_estimate: tail_total,
        extrapolated,
        annulus_contributions: contributions,
        annulus_radii: breaks,
        quad_error,
    })
}

/// Whether the last annulus is a full dyad.
fn full_dyads(breaks: &[f64]) -> usize {
    let m = breaks.len() - 1;
    let last_full = (breaks[m] / breaks[m - 1] - 2.0).abs() < 1e-9;
    if last_full {
        m
    } else {
        m - 1
    }
}

/// Slope of `log(contribution)` against `log(radius)` over the last full
/// dyads; `None` when the contributions vanish.
fn decay_slope(breaks: &[f64], contributions: &[f64]) -> Option<f64> {
    let m = full_dyads(breaks);
    let start = m.saturating_sub(FIT_WINDOW);
    let pairs: Vec<(f64, f64)> = (start..m)
        .filter(|&j| contributions[j] > 1e-300)
        .map(|j| (breaks[j].ln(), contributions[j].ln()))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Some(util::fit_line(&x, &y).1)
}

/// Sum of the contributions beyond the truncation, continuing the last
/// dyadic ratio geometrically.
fn geometric_tail(breaks: &[f64], contributions: &[f64]) -> f64 {
    let m = full_dyads(breaks);
    if m < 2 {
        return 0.0;
    }
    let (prev, last) = (contributions[m - 2], contributions[m - 1]);
    if last <= 1e-300 {
        return 0.0;
    }
    let ratio = last / prev;
    if !(ratio < 1.0) {
        return f64::INFINITY;
    }
    // a truncated final annulus is completed before continuing
    let partial = if m < contributions.len() {
        contributions[m]
    } else {
        0.0
    };
    let completed_next = last * ratio;
    (completed_next - partial).max(0.0) + completed_next * ratio / (1.0 - ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Member,
    Borderline,
    NonMember,
}

/// Verdict from the decay surplus `ρ` of the dyadic contributions.
pub fn verdict_from_surplus(rho: f64) -> Verdict {
    if rho > MEMBERSHIP_MARGIN {
        Verdict::Member
    } else if rho > MEMBERSHIP_MARGIN / 2.0 {
        Verdict::Borderline
    } else {
        Verdict::NonMember
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub norm: WeightedNorm,
    /// Decay rate of the dyadic contributions per unit of `τ` (worst `l`).
    pub surplus: f64,
    pub verdict: Verdict,
}

/// Decides membership in `W^{k,p}_{-τ}` from the truncated norm: the dyadic
/// contributions must decay (so the norm is Cauchy under doubling `r_out`)
/// at a rate exceeding the margin.
pub fn membership(
    field: &dyn TensorField,
    spec: &WeightedNormSpec,
    scheme: &QuadratureScheme,
) -> Result<MembershipReport> {
    let norm = weighted_norm(field, spec, scheme)?;
    let mut surplus = f64::INFINITY;
    for c in &norm.annulus_contributions {
        let rho = match decay_slope(&norm.annulus_radii, c) {
            None => f64::INFINITY,
            Some(s) => match spec.p {
                Exponent::Finite(p) => -s / p,
                Exponent::Infinity => -s,
            },
        };
        surplus = surplus.min(rho);
    }
    Ok(MembershipReport {
        verdict: verdict_from_surplus(surplus),
        surplus,
        norm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FalloffReport {
    pub radii: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub fitted_sigma: f64,
    pub fitted_c: f64,
    pub residual: f64,
}

impl FalloffReport {
    /// Membership of `L^p_{-w}` implied by the fitted decay.
    pub fn verdict(&self, w: f64) -> Verdict {
        verdict_from_surplus(self.fitted_sigma - w)
    }
}

/// Log-spaced radial samples per dyadic shell in the falloff fit.
const SHELL_SAMPLES: usize = 64;

/// Fits `sup_{r <= |x| <= 2r} |T| ≈ C r^{-σ}` over `radii`. Taking the
/// supremum over a whole dyadic shell fits the envelope of oscillating
/// fields instead of aliasing their phase.
pub fn classify_falloff(
    field: &dyn TensorField,
    radii: &[f64],
    scheme: &QuadratureScheme,
) -> Result<FalloffReport> {
    if radii.len() < 4 {
        return Err(Error::TooFewScales {
            needed: 4,
            got: radii.len(),
        });
    }
    let n = field.dim();
    let rule = crate::quadrature::SphereRule::new(n, scheme)?;
    let mut magnitudes = Vec::with_capacity(radii.len());
    for &r in radii {
        let shells: Vec<f64> = (0..SHELL_SAMPLES)
            .map(|j| r * 2f64.powf(j as f64 / SHELL_SAMPLES as f64))
            .collect();
        let vals = util::ordered_map(&shells, |&rho| -> Result<f64> {
            let mut m: f64 = 0.0;
            for d in &rule.dirs {
                let x: Vec<f64> = d.iter().map(|v| v * rho).collect();
                m = m.max(util::norm(&field.derivatives(&x, 0)?));
            }
            Ok(m)
        });
        let mut m: f64 = 0.0;
        for v in vals {
            m = m.max(v?);
        }
        magnitudes.push(m);
    }
    let scale = magnitudes.iter().cloned().fold(0.0, f64::max);
    if scale <= 1e-14 {
        // rounding-level field: fast-decay sentinel
        return Ok(FalloffReport {
            radii: radii.to_vec(),
            magnitudes,
            fitted_sigma: f64::INFINITY,
            fitted_c: 0.0,
            residual: 0.0,
        });
    }
    let (sigma, c, residual) = util::fit_power_decay(radii, &magnitudes);
    Ok(FalloffReport {
        radii: radii.to_vec(),
        magnitudes,
        fitted_sigma: sigma,
        fitted_c: c,
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AeClassReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// `C⁻¹δ <= g <= Cδ` at all samples, with the declared `C`.
    pub comparable: bool,
    /// `g, g⁻¹ ∈ L^∞`.
    pub bounded: bool,
    pub error_membership: MembershipReport,
    pub member: bool,
}

pub fn check_ae_class(
    metric: &dyn MetricField,
    k: usize,
    p: Exponent,
    tau: f64,
    r_out: f64,
    scheme: &QuadratureScheme,
) -> Result<AeClassReport> {
    let r_in = metric.inner_radius();
    let pts = crate::metric::sample_annulus(metric.dim(), r_in, r_out, 512);
    let audit = crate::metric::audit_points(metric, &pts)?;
    let spec = WeightedNormSpec::new(k, p, tau, r_in, r_out);
    let error_membership = membership(&MetricError { metric }, &spec, scheme)?;
    let bounded = audit.max_eigenvalue.is_finite() && audit.min_eigenvalue > 0.0;
    let member =
        bounded && audit.within_comparability && error_membership.verdict == Verdict::Member;
    Ok(AeClassReport {
        min_eigenvalue: audit.min_eigenvalue,
        max_eigenvalue: audit.max_eigenvalue,
        comparable: audit.within_comparability,
        bounded,
        error_membership,
        member,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderExponents {
    pub k: usize,
    pub p1: Exponent,
    pub p2: Exponent,
    pub q: Exponent,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Constant the ratio may not exceed: `2^k` from the Leibniz rule.
    pub bound: f64,
}

/// `‖u₁ ⊗ u₂‖_{W^{k,q}_{-τ₁-τ₂}}` against `‖u₁‖_{W^{k,p₁}_{-τ₁}} ‖u₂‖_{W^{k,p₂}_{-τ₂}}`
/// on the truncation `[r_in, r_out]`.
pub fn holder_product_check(
    u1: &dyn TensorField,
    u2: &dyn TensorField,
    exps: &HolderExponents,
    r_in: f64,
    r_out: f64,
    scheme: &QuadratureScheme,
) -> Result<HolderReport> {
    for e in [exps.p1, exps.p2, exps.q] {
        e.validate()?;
    }
    let lhs_inv = exps.q.reciprocal();
    let rhs_inv = exps.p1.reciprocal() + exps.p2.reciprocal();
    if (lhs_inv - rhs_inv).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "exponents must satisfy 1/p1 + 1/p2 = 1/q, got {rhs_inv} vs {lhs_inv}"
        )));
    }
    let product = ProductField {
        left: u1,
        right: u2,
    };
    let lhs_spec = WeightedNormSpec::new(exps.k, exps.q, exps.tau1 + exps.tau2, r_in, r_out);
    let s1 = WeightedNormSpec::new(exps.k, exps.p1, exps.tau1, r_in, r_out);
    let s2 = WeightedNormSpec::new(exps.k, exps.p2, exps.tau2, r_in, r_out);
    let lhs = weighted_norm(&product, &lhs_spec, scheme)?.value;
    let rhs = weighted_norm(u1, &s1, scheme)?.value * weighted_norm(u2, &s2, scheme)?.value;
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(HolderReport {
        lhs,
        rhs,
        ratio,
        bound: 2f64.powi(exps.k as i32),
    })
}
