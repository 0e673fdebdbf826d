//! Estimating `lim_{s→∞} v(s)` from a finite increasing schedule.
//!
//! The model is `v(s) = L + c s^{-q}`. For a fixed `q` the model is linear in
//! `(L, c)`, so the fit minimises the residual over `q ∈ (0, Q_MAX]` with a
//! grid scan followed by golden-section refinement.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MIN_SCALES: usize = 4;
const TAIL_WINDOW: usize = 4;
const Q_MIN: f64 = 0.02;
const Q_MAX: f64 = 6.0;

pub const FLAG_NO_CONVERGENCE: &str = "no_convergence";
pub const FLAG_RICHARDSON: &str = "richardson_fallback";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Constant,
    PowerLaw,
    Richardson,
    Unconverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitFit {
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    pub c: f64,
    /// Fitted rate; `None` for constant or unconverged sequences.
    pub q: Option<f64>,
    pub stderr: f64,
    pub method: FitMethod,
    pub flags: Vec<String>,
}

impl LimitFit {
    pub fn converged(&self) -> bool {
        !self.flags.iter().any(|f| f == FLAG_NO_CONVERGENCE)
    }
}

pub fn extrapolate_limit(scales: &[f64], values: &[f64]) -> Result<LimitFit> {
    extrapolate_limit_with_noise(scales, values, &vec![0.0; values.len()])
}

/// As [`extrapolate_limit`], with per-value absolute noise levels (e.g.
/// quadrature error estimates) used to decide what counts as a real change.
pub fn extrapolate_limit_with_noise(
    scales: &[f64],
    values: &[f64],
    noise: &[f64],
) -> Result<LimitFit> {
    if scales.len() != values.len() || noise.len() != values.len() {
        return Err(Error::InvalidParameter(
            "scales, values and noise must have equal length".into(),
        ));
    }
    if scales.len() < MIN_SCALES {
        return Err(Error::TooFewScales {
            needed: MIN_SCALES,
            got: scales.len(),
        });
    }
    if scales.windows(2).any(|w| !(w[1] > w[0])) || scales[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "scales must be positive and strictly increasing".into(),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sequence value {v}")));
    }

    let start = scales.len() - TAIL_WINDOW.min(scales.len());
    let s = &scales[start..];
    let v = &values[start..];
    let tol: Vec<f64> = values[start..]
        .iter()
        .zip(&noise[start..])
        .map(|(v, e)| e.abs() + 1e-12 * v.abs().max(1.0))
        .collect();
    let last = *v.last().unwrap();
    let mut fit = LimitFit {
        scales: scales.to_vec(),
        values: values.to_vec(),
        limit: last,
        c: 0.0,
        q: None,
        stderr: tol.iter().cloned().fold(0.0, f64::max),
        method: FitMethod::Constant,
        flags: Vec::new(),
    };

    let spread = v.iter().map(|x| (x - last).abs()).fold(0.0, f64::max);
    if spread <= 2.0 * fit.stderr {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        fit.limit = mean;
        fit.stderr = fit.stderr.max(spread);
        return Ok(fit);
    }

    // successive differences must shrink and keep one sign, beyond noise
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let dnoise: Vec<f64> = tol.windows(2).map(|w| w[0] + w[1]).collect();
    let significant: Vec<f64> = diffs
        .iter()
        .zip(&dnoise)
        .filter(|(d, e)| d.abs() > 2.0 * **e)
        .map(|(d, _)| *d)
        .collect();
    let sign_change = significant.windows(2).any(|w| w[0].signum() != w[1].signum());
    let growing = diffs
        .windows(2)
        .zip(dnoise.windows(2))
        .any(|(d, e)| d[1].abs() > d[0].abs() + 2.0 * (e[0] + e[1]));
    if sign_change || growing {
        fit.method = FitMethod::Unconverged;
        fit.stderr = diffs.last().unwrap().abs().max(fit.stderr);
        fit.flags.push(FLAG_NO_CONVERGENCE.into());
        return Ok(fit);
    }

    match power_fit(s, v, &tol) {
        Some((l, c, q, se)) if q > Q_MIN * 1.01 && q < Q_MAX * 0.99 => {
            fit.limit = l;
            fit.c = c;
            fit.q = Some(q);
            fit.stderr = se;
            fit.method = FitMethod::PowerLaw;
        }
        _ => {
            // Richardson with q = 1 on the last two scales
            let (s1, s2) = (s[s.len() - 2], s[s.len() - 1]);
            let (v1, v2) = (v[v.len() - 2], v[v.len() - 1]);
            let l = (s2 * v2 - s1 * v1) / (s2 - s1);
            fit.limit = l;
            fit.c = (v2 - l) * s2;
            fit.q = Some(1.0);
            fit.stderr = (l - v2).abs().max(fit.stderr);
            fit.method = FitMethod::Richardson;
            fit.flags.push(FLAG_RICHARDSON.into());
        }
    }
    Ok(fit)
}

/// `(L, c, rss)` of the linear least-squares fit at fixed `q`.
fn linear_fit(s: &[f64], v: &[f64], q: f64) -> (f64, f64, f64) {
    let m = s.len() as f64;
    let b: Vec<f64> = s.iter().map(|x| x.powf(-q)).collect();
    let mb = b.iter().sum::<f64>() / m;
    let mv = v.iter().sum::<f64>() / m;
    let sbb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let sbv: f64 = b.iter().zip(v).map(|(x, y)| (x - mb) * (y - mv)).sum();
    let c = sbv / sbb;
    let l = mv - c * mb;
    let rss = b
        .iter()
        .zip(v)
        .map(|(x, y)| (y - l - c * x).powi(2))
        .sum();
    (l, c, rss)
}

fn power_fit(s: &[f64], v: &[f64], tol: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let objective = |q: f64| linear_fit(s, v, q).2;
    let steps = 600;
    let mut best_q = Q_MIN;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        let q = Q_MIN * (Q_MAX / Q_MIN).powf(i as f64 / steps as f64);
        let r = objective(q);
        if r < best {
            best = r;
            best_q = q;
        }
    }
    // golden section on the bracketing grid cell (in log q)
    let ratio = (Q_MAX / Q_MIN).powf(1.0 / steps as f64);
    let mut lo = (best_q / ratio).max(Q_MIN).ln();
    let mut hi = (best_q * ratio).min(Q_MAX).ln();
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let mut fa = objective(a.exp());
    let mut fb = objective(b.exp());
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = objective(a.exp());
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = objective(b.exp());
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let q = (0.5 * (lo + hi)).exp();
    let (l, c, rss) = linear_fit(s, v, q);
    if !(l.is_finite() && c.is_finite()) {
        return None;
    }

    // covariance of (L, c, q) from the Jacobian [1, s^-q, -c s^-q ln s]
    let m = s.len();
    let mut jtj = [[0.0f64; 3]; 3];
    for &x in s {
        let b = x.powf(-q);
        let row = [1.0, b, -c * b * x.ln()];
        for i in 0..3 {
            for j in 0..3 {
                jtj[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert3(&jtj)?;
    let dof = (m as f64 - 3.0).max(1.0);
    let sigma2 = rss / dof;
    let fit_var = (sigma2 * inv[0][0]).max(0.0);

    // propagate the value noise through the linear estimator for L
    let basis: Vec<f64> = s.iter().map(|x| x.powf(-q)).collect();
    let mb = basis.iter().sum::<f64>() / m as f64;
    let sbb: f64 = basis.iter().map(|x| (x - mb).powi(2)).sum();
    let noise_prop: f64 = basis
        .iter()
        .zip(tol)
        .map(|(x, e)| (1.0 / m as f64 - mb * (x - mb) / sbb).abs() * e)
        .sum();
    let stderr = fit_var.sqrt() + noise_prop;
    // an ill-conditioned covariance means the three parameters are not
    // separately identifiable from the window
    if !stderr.is_finite() || inv[0][0] > 1e12 {
        return None;
    }
    Some((l, c, q, stderr))
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let inv = m.try_inverse()?;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = inv[(i, j)];
        }
    }
    Some(out)
}
