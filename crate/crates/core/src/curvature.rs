//! Pointwise curvature of `g` relative to the flat background.
//!
//! In the exterior chart the background is `δ`, so `e = g - δ`,
//! `f = g⁻¹ - δ`, `∂e = ∂g`, the difference tensor `Γ` is the Christoffel
//! symbol of `g`, and the background curvature terms vanish. Ricci and scalar
//! curvature are split into a second-order part and a first-order quadratic
//! remainder (`Q^R`, `Q^S`); every split is checked against an independent
//! route.
//!
//! Array layouts follow [`MetricJet`]: `Γ^k_ij` at `(k*n + i)*n + j`,
//! `∂_i f^{jk}` at `(i*n + j)*n + k`.

use crate::metric::{MetricField, MetricJet};
use crate::{linalg, util, Error, Result};
use serde::Serialize;

#[inline]
fn at3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

fn require_order(jet: &MetricJet, needed: usize) -> Result<()> {
    if jet.order() < needed {
        return Err(Error::MissingDerivatives {
            needed,
            available: jet.order(),
        });
    }
    Ok(())
}

fn inverse_or_singular(jet: &MetricJet, x: &[f64]) -> Result<Vec<f64>> {
    let n = jet.n;
    linalg::spd_inverse(n, &jet.g).ok_or_else(|| Error::Singular(x.to_vec()))
}

/// `e`, `f`, their first derivatives, and the residual of `∂(g g⁻¹) = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorTensors {
    pub n: usize,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub de: Vec<f64>,
    pub df: Vec<f64>,
    /// `max_k |∂_k e · g⁻¹ + g · ∂_k f|`: zero exactly when `∂f` is the
    /// derivative of the inverse.
    pub residual: f64,
}

/// `∂_i f^{jk} = -g^{jp} g^{kq} ∂_i e_pq`.
fn inverse_derivative(n: usize, ginv: &[f64], dg: &[f64]) -> Vec<f64> {
    let nn = n * n;
    let mut df = vec![0.0; n * nn];
    let mut left = vec![0.0; nn];
    for (slice, out) in dg.chunks_exact(nn).zip(df.chunks_exact_mut(nn)) {
        linalg::matmul_into(n, ginv, slice, &mut left);
        linalg::matmul_into(n, &left, ginv, out);
        out.iter_mut().for_each(|d| *d = -*d);
    }
    df
}

pub fn error_tensors_from_jet(jet: &MetricJet, x: &[f64]) -> Result<ErrorTensors> {
    require_order(jet, 1)?;
    let n = jet.n;
    let nn = n * n;
    let id = linalg::identity(n);
    let ginv = inverse_or_singular(jet, x)?;
    let e: Vec<f64> = jet.g.iter().zip(&id).map(|(a, b)| a - b).collect();
    let f: Vec<f64> = ginv.iter().zip(&id).map(|(a, b)| a - b).collect();
    let df = inverse_derivative(n, &ginv, &jet.dg);
    let mut residual: f64 = 0.0;
    for k in 0..n {
        let a = linalg::matmul(n, &jet.dg[k * nn..(k + 1) * nn], &ginv);
        let b = linalg::matmul(n, &jet.g, &df[k * nn..(k + 1) * nn]);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        residual = residual.max(util::frobenius(&sum));
    }
    Ok(ErrorTensors {
        n,
        e,
        f,
        de: jet.dg.clone(),
        df,
        residual,
    })
}

pub fn error_tensors(metric: &dyn MetricField, x: &[f64]) -> Result<ErrorTensors> {
    error_tensors_from_jet(&metric.jet(x, 1)?, x)
}

/// `Γ^k_ij = (g^{kl}/2)(∂_i e_jl + ∂_j e_il - ∂_l e_ij)`.
pub fn difference_tensor_from_jet(jet: &MetricJet, ginv: &[f64]) -> Vec<f64> {
    let n = jet.n;
    // lowered: A_lij = ∂_i g_jl + ∂_j g_il - ∂_l g_ij
    let mut lowered = vec![0.0; n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                lowered[at3(n, l, i, j)] = jet.dg(i, j, l) + jet.dg(j, i, l) - jet.dg(l, i, j);
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += ginv[k * n + l] * lowered[at3(n, l, i, j)];
                }
                gamma[at3(n, k, i, j)] = 0.5 * s;
                gamma[at3(n, k, j, i)] = 0.5 * s;
            }
        }
    }
    gamma
}

pub fn difference_tensor(metric: &dyn MetricField, x: &[f64]) -> Result<Vec<f64>> {
    let jet = metric.jet(x, 1)?;
    let ginv = inverse_or_singular(&jet, x)?;
    Ok(difference_tensor_from_jet(&jet, &ginv))
}

/// `|f| <= C |e|` and `|Γ| <= (3/2) C |∂e|` hold with `C` the
/// comparability constant; these are the constants used in the checks.
pub fn inverse_bound_constant(comparability: f64) -> f64 {
    comparability
}

pub fn gamma_bound_constant(comparability: f64) -> f64 {
    1.5 * comparability
}

/// Everything the mass functionals and identity checks need at one point.
#[derive(Debug, Clone, Serialize)]
pub struct CurvaturePointData {
    pub n: usize,
    pub g: Vec<f64>,
    pub ginv: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Second-derivative part of Ricci.
    pub ric_leading: Vec<f64>,
    pub q_ricci: Vec<f64>,
    pub ric: Vec<f64>,
    /// `g^{ij} Ric_ij`.
    pub scal: f64,
    pub einstein: Vec<f64>,
    pub v_field: Vec<f64>,
    pub div_v: f64,
    pub q_scalar: f64,
    /// `|Scal - div V - Q^S|`.
    pub scalar_residual: f64,
}

/// Sign applied to `Q^S` when assembling the scalar decomposition. Anything
/// other than `Correct` is a deliberate fault used to test the validation
/// pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalarRemainder {
    #[default]
    Correct,
    FlippedSign,
}

pub fn curvature_from_jet(jet: &MetricJet, x: &[f64]) -> Result<CurvaturePointData> {
    curvature_from_jet_with(jet, x, ScalarRemainder::Correct)
}

/// Second-derivative part of Ricci and `Q^R`, from the inverse metric, its
/// derivative and the difference tensor.
fn ricci_parts(jet: &MetricJet, ginv: &[f64], df: &[f64], gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = jet.n;
    let nn = n * n;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // g^{kl} ∂_k∂_i g_lj, g^{kl} ∂_k∂_l g_ij and g^{kl} ∂_i∂_j g_kl
    let mut mixed = vec![0.0; nn];
    let mut laplace = vec![0.0; nn];
    for k in 0..n {
        for i in 0..n {
            let block = &jet.ddg[(k * n + i) * nn..][..nn];
            let out = &mut mixed[i * n..][..n];
            for (w, row) in ginv[k * n..][..n].iter().zip(block.chunks_exact(n)) {
                for (o, d) in out.iter_mut().zip(row) {
                    *o += w * d;
                }
            }
        }
    }
    for (w, block) in ginv.iter().zip(jet.ddg.chunks_exact(nn)) {
        for (o, d) in laplace.iter_mut().zip(block) {
            *o += w * d;
        }
    }
    let trace_hessian: Vec<f64> = jet.ddg.chunks_exact(nn).map(|b| dot(ginv, b)).collect();

    // A_lij = ∂_i g_jl + ∂_j g_il - ∂_l g_ij, and A with (l, j) swapped to the back
    let mut lowered = vec![0.0; n * nn];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                lowered[at3(n, l, i, j)] = jet.dg(i, j, l) + jet.dg(j, i, l) - jet.dg(l, i, j);
            }
        }
    }
    let mut lowered_t = vec![0.0; n * nn];
    let mut gamma_t = vec![0.0; n * nn];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                lowered_t[at3(n, c, b, a)] = lowered[at3(n, a, b, c)];
                gamma_t[at3(n, b, c, a)] = gamma[at3(n, a, b, c)];
            }
        }
    }
    // Γ^v_vu
    let trace_gamma: Vec<f64> = (0..n).map(|u| (0..n).map(|v| gamma[at3(n, v, v, u)]).sum()).collect();
    // ∂_u g^{ul}
    let div_ginv: Vec<f64> = (0..n).map(|l| (0..n).map(|u| df[at3(n, u, u, l)]).sum()).collect();

    let mut ric_leading = vec![0.0; nn];
    let mut q_ricci = vec![0.0; nn];
    for i in 0..n {
        for j in i..n {
            let lead = 0.5
                * (mixed[i * n + j] + mixed[j * n + i] - laplace[i * n + j] - trace_hessian[i * n + j]);
            let mut q = 0.0;
            for u in 0..n {
                q += gamma[at3(n, u, i, j)] * trace_gamma[u];
                q += 0.5 * div_ginv[u] * lowered[at3(n, u, i, j)];
                // Γ^u_iv Γ^v_ju and ∂_i g^{ul} A_luj
                let ju = (j * n + u) * n;
                q -= dot(&gamma[(u * n + i) * n..][..n], &gamma_t[ju..][..n]);
                q -= 0.5 * dot(&df[(i * n + u) * n..][..n], &lowered_t[ju..][..n]);
            }
            ric_leading[i * n + j] = lead;
            ric_leading[j * n + i] = lead;
            q_ricci[i * n + j] = q;
            q_ricci[j * n + i] = q;
        }
    }
    (ric_leading, q_ricci)
}

/// Einstein tensor alone, for integrands that need nothing else.
pub fn einstein_from_jet(jet: &MetricJet, x: &[f64]) -> Result<Vec<f64>> {
    require_order(jet, 2)?;
    let ginv = inverse_or_singular(jet, x)?;
    let df = inverse_derivative(jet.n, &ginv, &jet.dg);
    let gamma = difference_tensor_from_jet(jet, &ginv);
    let (lead, q) = ricci_parts(jet, &ginv, &df, &gamma);
    let ric: Vec<f64> = lead.iter().zip(&q).map(|(a, b)| a + b).collect();
    let scal: f64 = ginv.iter().zip(&ric).map(|(a, b)| a * b).sum();
    Ok(ric.iter().zip(&jet.g).map(|(r, g)| r - 0.5 * scal * g).collect())
}

pub fn curvature_from_jet_with(
    jet: &MetricJet,
    x: &[f64],
    remainder: ScalarRemainder,
) -> Result<CurvaturePointData> {
    require_order(jet, 2)?;
    let n = jet.n;
    let nn = n * n;
    let ginv = inverse_or_singular(jet, x)?;
    let id = linalg::identity(n);
    let e: Vec<f64> = jet.g.iter().zip(&id).map(|(a, b)| a - b).collect();
    let f: Vec<f64> = ginv.iter().zip(&id).map(|(a, b)| a - b).collect();
    let df = inverse_derivative(n, &ginv, &jet.dg);
    let gamma = difference_tensor_from_jet(jet, &ginv);
    let (ric_leading, q_ricci) = ricci_parts(jet, &ginv, &df, &gamma);
    let gi = |a: usize, b: usize| ginv[a * n + b];
    let dgi = |i: usize, a: usize, b: usize| df[at3(n, i, a, b)];
    let gam = |k: usize, i: usize, j: usize| gamma[at3(n, k, i, j)];
    let trace_gamma: Vec<f64> = (0..n).map(|u| (0..n).map(|v| gam(v, v, u)).sum()).collect();
    let div_ginv: Vec<f64> = (0..n).map(|l| (0..n).map(|u| dgi(u, u, l)).sum()).collect();
    let ric: Vec<f64> = ric_leading.iter().zip(&q_ricci).map(|(a, b)| a + b).collect();
    let scal: f64 = (0..nn).map(|m| ginv[m] * ric[m]).sum();
    let einstein: Vec<f64> = ric
        .iter()
        .zip(&jet.g)
        .map(|(r, g)| r - 0.5 * scal * g)
        .collect();

    // V^i = (g^{ij} g^{kl} - g^{ik} g^{jl}) ∂_k e_jl
    let mut v_field = vec![0.0; n];
    let mut div_v = 0.0;
    for i in 0..n {
        let mut vi = 0.0;
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let w = gi(i, j) * gi(k, l) - gi(i, k) * gi(j, l);
                    if w == 0.0 {
                        continue;
                    }
                    vi += w * jet.dg(k, j, l);
                    div_v += w * jet.ddg(i, k, j, l);
                }
            }
        }
        v_field[i] = vi;
    }
    // ∂_i of the contraction weights
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let dw = dgi(i, i, j) * gi(k, l) + gi(i, j) * dgi(i, k, l)
                        - dgi(i, i, k) * gi(j, l)
                        - gi(i, k) * dgi(i, j, l);
                    div_v += dw * jet.dg(k, j, l);
                }
            }
        }
    }

    // Q^S = g^{ij}(Γ^u_ij Γ^v_vu - Γ^u_vi Γ^v_ju) - ∂_v g^{ij} Γ^v_ij + ∂_i g^{ij} Γ^v_vj
    let mut q_scalar = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut quad = 0.0;
            for u in 0..n {
                quad += gam(u, i, j) * trace_gamma[u];
                for v in 0..n {
                    quad -= gam(u, v, i) * gam(v, j, u);
                }
            }
            q_scalar += gi(i, j) * quad;
            for v in 0..n {
                q_scalar -= dgi(v, i, j) * gam(v, i, j);
            }
        }
    }
    for j in 0..n {
        q_scalar += div_ginv[j] * trace_gamma[j];
    }
    let sign = match remainder {
        ScalarRemainder::Correct => 1.0,
        ScalarRemainder::FlippedSign => -1.0,
    };
    let scalar_residual = (scal - div_v - sign * q_scalar).abs();

    Ok(CurvaturePointData {
        n,
        g: jet.g.clone(),
        ginv,
        e,
        f,
        df,
        gamma,
        ric_leading,
        q_ricci,
        ric,
        scal,
        einstein,
        v_field,
        div_v,
        q_scalar: sign * q_scalar,
        scalar_residual,
    })
}

pub fn curvature(metric: &dyn MetricField, x: &[f64]) -> Result<CurvaturePointData> {
    curvature_from_jet(&metric.jet(x, 2)?, x)
}

/// `(Ric, leading part, Q^R)`.
pub fn ricci(metric: &dyn MetricField, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let c = curvature(metric, x)?;
    Ok((c.ric, c.ric_leading, c.q_ricci))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarDecomposition {
    pub scal: f64,
    pub v_field: Vec<f64>,
    pub div_v: f64,
    pub q_scalar: f64,
    pub residual: f64,
}

pub fn scalar_decomposition(metric: &dyn MetricField, x: &[f64]) -> Result<ScalarDecomposition> {
    let c = curvature(metric, x)?;
    Ok(ScalarDecomposition {
        scal: c.scal,
        v_field: c.v_field,
        div_v: c.div_v,
        q_scalar: c.q_scalar,
        residual: c.scalar_residual,
    })
}

pub fn einstein(metric: &dyn MetricField, x: &[f64]) -> Result<Vec<f64>> {
    Ok(curvature(metric, x)?.einstein)
}

/// Ricci tensor by the textbook route
/// `R_ij = ∂_u Γ^u_ij - ∂_j Γ^u_iu + Γ^u_uv Γ^v_ij - Γ^u_jv Γ^v_iu`,
/// independent of the split into leading part and `Q^R`.
pub fn ricci_christoffel(jet: &MetricJet, x: &[f64]) -> Result<Vec<f64>> {
    require_order(jet, 2)?;
    let n = jet.n;
    let ginv = inverse_or_singular(jet, x)?;
    let df = inverse_derivative(n, &ginv, &jet.dg);
    let gamma = difference_tensor_from_jet(jet, &ginv);
    // ∂_m Γ^k_ij at ((m*n + k)*n + i)*n + j
    let mut dgamma = vec![0.0; n * n * n * n];
    for m in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let lowered = jet.dg(i, j, l) + jet.dg(j, i, l) - jet.dg(l, i, j);
                        let dlowered =
                            jet.ddg(m, i, j, l) + jet.ddg(m, j, i, l) - jet.ddg(m, l, i, j);
                        s += df[at3(n, m, k, l)] * lowered + ginv[k * n + l] * dlowered;
                    }
                    dgamma[((m * n + k) * n + i) * n + j] = 0.5 * s;
                }
            }
        }
    }
    let dg4 = |m: usize, k: usize, i: usize, j: usize| dgamma[((m * n + k) * n + i) * n + j];
    let gam = |k: usize, i: usize, j: usize| gamma[at3(n, k, i, j)];
    let mut ric = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for u in 0..n {
                s += dg4(u, u, i, j) - dg4(j, u, i, u);
                for v in 0..n {
                    s += gam(u, u, v) * gam(v, i, j) - gam(u, j, v) * gam(v, i, u);
                }
            }
            ric[i * n + j] = s;
        }
    }
    Ok(ric)
}

/// `|√det g₁ - √det g₂| <= K |g₁ - g₂|` for metrics with comparability `C`,
/// with `K = (√n / 2) C^{n/2 + 1}`.
pub fn volume_comparison_bound(n: usize, comparability: f64) -> f64 {
    0.5 * (n as f64).sqrt() * comparability.powf(n as f64 / 2.0 + 1.0)
}

pub fn sqrt_det(n: usize, g: &[f64]) -> f64 {
    linalg::determinant(n, g).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct BianchiReport {
    pub max: f64,
    pub mean: f64,
    pub samples: usize,
    pub flags: Vec<String>,
}

pub const FLAG_NEAR_KINK: &str = "stencil_crosses_kink";
pub const FLAG_NOT_SMOOTH: &str = "metric_not_c2";

/// `|div_g G|` at each point: `g^{ik}(∂_k G_ij - Γ^u_ki G_uj - Γ^u_kj G_iu)`
/// with `∂G` from central differences of step `step`.
pub fn bianchi_residual(
    metric: &dyn MetricField,
    points: &[Vec<f64>],
    step: f64,
) -> Result<BianchiReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let n = metric.dim();
    let mut flags = Vec::new();
    if !metric.regularity().is_smooth() {
        flags.push(FLAG_NOT_SMOOTH.to_string());
    }
    let per_point = util::ordered_map(points, |x| -> Result<(f64, bool)> {
        let r = util::norm(x);
        let reach = step * (n as f64).sqrt();
        let near_kink = !metric.kink_radii(r - reach, r + reach).is_empty();
        let centre = curvature(metric, x)?;
        let mut dg_e = vec![0.0; n * n * n];
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let gp = einstein(metric, &xp)?;
            let gm = einstein(metric, &xm)?;
            for m in 0..n * n {
                dg_e[k * n * n + m] = (gp[m] - gm[m]) / (2.0 * step);
            }
        }
        let gmat = |i: usize, j: usize| centre.einstein[i * n + j];
        let gam = |k: usize, i: usize, j: usize| centre.gamma[at3(n, k, i, j)];
        let mut div = vec![0.0; n];
        for (j, slot) in div.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                for k in 0..n {
                    let w = centre.ginv[i * n + k];
                    let mut cov = dg_e[at3(n, k, i, j)];
                    for u in 0..n {
                        cov -= gam(u, k, i) * gmat(u, j) + gam(u, k, j) * gmat(i, u);
                    }
                    s += w * cov;
                }
            }
            *slot = s;
        }
        Ok((util::norm(&div), near_kink))
    });
    let mut values = Vec::with_capacity(points.len());
    let mut kinked = false;
    for p in per_point {
        let (v, k) = p?;
        values.push(v);
        kinked |= k;
    }
    if kinked {
        flags.push(FLAG_NEAR_KINK.to_string());
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mean = if values.is_empty() {
        0.0
    } else {
        util::pairwise_sum(&values) / values.len() as f64
    };
    Ok(BianchiReport {
        max,
        mean,
        samples: values.len(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::profile::{DampedPower, PowerLaw};
    use crate::metric::{
        conformally_flat, flat, radial_perturbation, sample_annulus, schwarzschild_isotropic,
        tensor_perturbation,
    };
    use std::sync::Arc;

    #[test]
    fn flat_metric_has_no_curvature() {
        let m = flat(3).unwrap();
        let c = curvature(&m, &[5.0, 0.0, 0.0]).unwrap();
        assert!(c
            .e
            .iter()
            .chain(&c.f)
            .chain(&c.gamma)
            .chain(&c.ric)
            .chain(&c.q_ricci)
            .chain(&c.v_field)
            .all(|v| *v == 0.0));
        assert_eq!(c.scal, 0.0);
        assert_eq!(c.q_scalar, 0.0);
    }

    #[test]
    fn inverse_of_scaled_identity() {
        let a = Arc::new(PowerLaw::new(0.1, 0.0, 1.0));
        let m = radial_perturbation(3, a, 1.0).unwrap();
        let t = error_tensors(&m, &[2.0, 0.0, 0.0]).unwrap();
        assert!((t.f[0] - (1.0 / 1.1 - 1.0)).abs() < 1e-15);
        assert!(t.f[1].abs() < 1e-16);
    }

    /// Γ^k_ij for g = (1 + a) δ, written out by hand.
    fn radial_gamma_oracle(a: f64, da: f64, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let r = util::norm(x);
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let c = da / (2.0 * (1.0 + a));
        let mut out = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out[at3(n, k, i, j)] = c * (u[i] * d(j, k) + u[j] * d(i, k) - u[k] * d(i, j));
                }
            }
        }
        out
    }

    #[test]
    fn radial_difference_tensor_matches_closed_form() {
        let p = PowerLaw::new(0.0, 0.3, 1.0);
        let m = radial_perturbation(3, Arc::new(p.clone()), 1.0).unwrap();
        let x = [1.5, -2.0, 0.7];
        let r = util::norm(&x);
        let gamma = difference_tensor(&m, &x).unwrap();
        let oracle = radial_gamma_oracle(p.value(r), p.d1(r), &x);
        for (a, b) in gamma.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    use crate::metric::RadialProfile;

    #[test]
    fn schwarzschild_christoffel_at_four() {
        // u⁴δ with u = 1 + 1/(2r): Γ^k_ij = (2u'/u)(x̂_i δ_jk + x̂_j δ_ik - x̂_k δ_ij)
        let m = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let x = [4.0, 0.0, 0.0];
        let gamma = difference_tensor(&m, &x).unwrap();
        let u: f64 = 1.0 + 1.0 / 8.0;
        let du = -1.0 / 32.0;
        let psi = u.powi(4);
        let dpsi = 4.0 * u.powi(3) * du;
        let oracle = radial_gamma_oracle(psi - 1.0, dpsi, &x);
        for (a, b) in gamma.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((gamma[at3(3, 0, 0, 0)] - 2.0 * du / u).abs() < 1e-15);
    }

    #[test]
    fn schwarzschild_is_scalar_flat() {
        for n in 3..=5 {
            let m = schwarzschild_isotropic(n, 1.0, 1.0).unwrap();
            for x in sample_annulus(n, 3.0, 50.0, 30) {
                let c = curvature(&m, &x).unwrap();
                assert!(c.scal.abs() < 1e-12, "n={n}: {}", c.scal);
                assert!(c.scalar_residual < 1e-12);
                let g_minus_ric: f64 = c
                    .einstein
                    .iter()
                    .zip(&c.ric)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(g_minus_ric < 1e-12);
            }
        }
    }

    /// Ricci of ψδ in n dimensions, ψ = e^{2w}:
    /// Ric = -(n-2)(∇²w - dw⊗dw) - (Δw + (n-2)|dw|²) δ.
    fn conformal_ricci_oracle(n: usize, psi: f64, dpsi: f64, ddpsi: f64, x: &[f64]) -> Vec<f64> {
        let r = util::norm(x);
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        let w1 = dpsi / (2.0 * psi);
        let w2 = ddpsi / (2.0 * psi) - dpsi * dpsi / (2.0 * psi * psi);
        let nf = n as f64;
        let lap = w2 + (nf - 1.0) * w1 / r;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                let hess = w2 * u[i] * u[j] + w1 / r * (d - u[i] * u[j]);
                let dwdw = w1 * w1 * u[i] * u[j];
                out[i * n + j] =
                    -(nf - 2.0) * (hess - dwdw) - (lap + (nf - 2.0) * w1 * w1) * d;
            }
        }
        out
    }

    #[test]
    fn conformal_ricci_matches_transformation_formula() {
        let p = PowerLaw::new(0.0, 0.1, 1.0);
        let m = radial_perturbation(3, Arc::new(p.clone()), 1.0).unwrap();
        for x in sample_annulus(3, 2.0, 30.0, 20) {
            let r = util::norm(&x);
            let ric = ricci(&m, &x).unwrap().0;
            let oracle = conformal_ricci_oracle(3, 1.0 + p.value(r), p.d1(r), p.d2(r), &x);
            for (a, b) in ric.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn split_ricci_agrees_with_christoffel_route() {
        let t = tensor_perturbation(
            4,
            vec![
                0.2, 0.05, 0.0, 0.01, 0.05, -0.1, 0.02, 0.0, 0.0, 0.02, 0.3, 0.0, 0.01, 0.0, 0.0,
                0.1,
            ],
            vec![0.1, 0.2, -0.1, 0.0],
            2.0,
            2.0,
        )
        .unwrap();
        for x in sample_annulus(4, 2.2, 20.0, 20) {
            let jet = t.jet(&x, 2).unwrap();
            let c = curvature_from_jet(&jet, &x).unwrap();
            let direct = ricci_christoffel(&jet, &x).unwrap();
            for (a, b) in c.ric.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-13);
            }
            assert!(c.scalar_residual < 1e-13);
            assert!(linalg::max_asymmetry(4, &c.ric) < 1e-15);
        }
    }

    #[test]
    fn flipped_remainder_is_detected() {
        let u = Arc::new(DampedPower {
            base: 1.0,
            amp: 0.3,
            power: 1.0,
            scale: 5.0,
        });
        let m = conformally_flat(3, u, 1.0).unwrap();
        let x = [2.0, 1.0, 0.5];
        let jet = m.jet(&x, 2).unwrap();
        let good = curvature_from_jet(&jet, &x).unwrap();
        let bad = curvature_from_jet_with(&jet, &x, ScalarRemainder::FlippedSign).unwrap();
        assert!(good.scalar_residual < 1e-12);
        assert!(bad.scalar_residual > 1e-6);
    }

    #[test]
    fn harmonic_conformal_factor_gives_zero_scalar() {
        let u = Arc::new(PowerLaw::new(1.0, 0.2, 3.0));
        let m = conformally_flat(5, u, 1.0).unwrap();
        for x in sample_annulus(5, 1.5, 20.0, 20) {
            assert!(curvature(&m, &x).unwrap().scal.abs() < 1e-12);
        }
    }

    #[test]
    fn bianchi_on_schwarzschild() {
        let m = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let pts = sample_annulus(3, 4.0, 16.0, 50);
        let rep = bianchi_residual(&m, &pts, 1e-3).unwrap();
        assert!(rep.max < 1e-6, "{rep:?}");
        assert!(rep.flags.is_empty());
    }
}
