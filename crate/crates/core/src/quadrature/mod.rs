//! Sphere and annulus integration, cutoff families and limit extrapolation.
//!
//! Integrals are evaluated in parallel and reduced with [`util::pairwise_sum`]
//! in a fixed order, so results do not depend on the number of workers.

pub mod cutoff;
pub mod gauss;
pub mod limit;
pub mod sphere;

pub use cutoff::{make_cutoff, CutoffFamily, CutoffKind};
pub use limit::{extrapolate_limit, extrapolate_limit_with_noise, FitMethod, LimitFit};
pub use sphere::SphereRule;

use crate::{util, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureScheme {
    /// Gauss–Legendre nodes per radial panel.
    pub radial_order: usize,
    /// Largest outer/inner radius ratio of one radial panel.
    pub max_panel_ratio: f64,
    /// Polar Gauss order of the product sphere rules (`n = 3, 4`).
    pub angular_order: usize,
    /// Total quasi-random sphere points (`n >= 5`), split over replicates.
    pub qmc_points: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        QuadratureScheme {
            radial_order: 8,
            max_panel_ratio: 1.25,
            angular_order: 12,
            qmc_points: 2048,
            replicates: 4,
            seed: 0x5eed,
        }
    }
}

impl QuadratureScheme {
    pub fn validate(&self) -> Result<()> {
        if self.radial_order < 2 || self.angular_order < 2 {
            return Err(Error::InvalidParameter(
                "quadrature orders must be at least 2".into(),
            ));
        }
        if !(self.max_panel_ratio > 1.0) {
            return Err(Error::InvalidParameter(
                "max_panel_ratio must exceed 1".into(),
            ));
        }
        if self.qmc_points < 2 * self.replicates.max(2) {
            return Err(Error::InvalidParameter(
                "qmc_points too small for the replicate count".into(),
            ));
        }
        Ok(())
    }
}

/// Integral value(s) with absolute error estimates, one per component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Integral {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl Integral {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
    pub fn error(&self) -> f64 {
        self.errors[0]
    }
}

/// Vector-valued integrand on points of `Rⁿ`.
pub type Integrand<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;

fn check_samples(width: usize, samples: &[Result<Vec<f64>>]) -> Result<()> {
    for s in samples {
        match s {
            Err(e) => return Err(e.clone()),
            Ok(v) if v.len() != width => {
                return Err(Error::InvalidParameter(format!(
                    "integrand returned {} components, expected {width}",
                    v.len()
                )))
            }
            Ok(v) => {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("integrand sample {bad}")));
                }
            }
        }
    }
    Ok(())
}

/// `∫_{S_R} f dμ_δ` component-wise, over the sphere of radius `radius`.
pub fn integrate_sphere_vec(
    n: usize,
    f: &Integrand<'_>,
    width: usize,
    radius: f64,
    scheme: &QuadratureScheme,
) -> Result<Integral> {
    let rule = SphereRule::new(n, scheme)?;
    let samples = util::ordered_map(&rule.dirs, |d| {
        let x: Vec<f64> = d.iter().map(|v| v * radius).collect();
        f(&x)
    });
    check_samples(width, &samples)?;
    let jac = radius.powi(n as i32 - 1);
    let mut out = Integral {
        values: vec![0.0; width],
        errors: vec![0.0; width],
    };
    let mut column = vec![0.0; rule.len()];
    for c in 0..width {
        for (slot, s) in column.iter_mut().zip(&samples) {
            *slot = s.as_ref().map(|v| v[c]).unwrap_or(0.0);
        }
        let (v, e) = rule.combine(&column);
        out.values[c] = jac * v;
        out.errors[c] = jac * e;
    }
    Ok(out)
}

pub fn integrate_sphere<F>(n: usize, f: F, radius: f64, scheme: &QuadratureScheme) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let wrapped = |x: &[f64]| f(x).map(|v| vec![v]);
    let i = integrate_sphere_vec(n, &wrapped, 1, radius, scheme)?;
    Ok((i.value(), i.error()))
}

/// Radial panel boundaries on `[a, b]`: geometric with ratio at most
/// `max_ratio`, and containing every kink radius in `(a, b)`.
pub fn radial_panels(a: f64, b: f64, kinks: &[f64], max_ratio: f64) -> Vec<f64> {
    let mut breaks = vec![a];
    breaks.extend(kinks.iter().copied().filter(|&k| k > a && k < b));
    breaks.push(b);
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * y.abs());
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let pieces = ((hi / lo).ln() / max_ratio.ln()).ceil().max(1.0) as usize;
        let step = (hi / lo).powf(1.0 / pieces as f64);
        for k in 1..pieces {
            out.push(lo * step.powi(k as i32));
        }
        out.push(hi);
    }
    out
}

struct RadialNode {
    r: f64,
    weight: f64,
    panel: usize,
    local: usize,
}

/// `∫_{a <= |x| <= b} f dμ_δ` component-wise. Radial panels never straddle
/// a radius in `kinks`.
pub fn integrate_annulus_vec(
    n: usize,
    f: &Integrand<'_>,
    width: usize,
    a: f64,
    b: f64,
    kinks: &[f64],
    scheme: &QuadratureScheme,
) -> Result<Integral> {
    if !(b > a && a > 0.0) {
        return Err(Error::InvalidParameter(format!("empty annulus [{a}, {b}]")));
    }
    scheme.validate()?;
    let rule = SphereRule::new(n, scheme)?;
    let (gx, gw) = gauss::gauss_legendre(scheme.radial_order);
    let panels = radial_panels(a, b, kinks, scheme.max_panel_ratio);
    let mut nodes = Vec::new();
    for (p, w) in panels.windows(2).enumerate() {
        let mid = 0.5 * (w[0] + w[1]);
        let half = 0.5 * (w[1] - w[0]);
        for (i, (x, wt)) in gx.iter().zip(&gw).enumerate() {
            nodes.push(RadialNode {
                r: mid + half * x,
                weight: half * wt,
                panel: p,
                local: i,
            });
        }
    }
    let points: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| (0..rule.len()).map(move |d| (i, d)))
        .collect();
    let samples = util::ordered_map(&points, |&(i, d)| {
        let r = nodes[i].r;
        let x: Vec<f64> = rule.dirs[d].iter().map(|v| v * r).collect();
        f(&x)
    });
    check_samples(width, &samples)?;

    let m = rule.len();
    let order = scheme.radial_order;
    let npanels = panels.len() - 1;
    let mut out = Integral {
        values: vec![0.0; width],
        errors: vec![0.0; width],
    };
    let mut column = vec![0.0; m];
    for c in 0..width {
        // shell integrals G(r) = r^{n-1} ∫_{S^{n-1}} f(r ω) dω at each node
        let mut shell = vec![0.0; nodes.len()];
        let mut terms = Vec::with_capacity(nodes.len());
        let mut ang_err = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            for (d, slot) in column.iter_mut().enumerate() {
                *slot = samples[i * m + d].as_ref().map(|v| v[c]).unwrap_or(0.0);
            }
            let (v, e) = rule.combine(&column);
            let jac = node.r.powi(n as i32 - 1);
            shell[i] = jac * v;
            terms.push(node.weight * shell[i]);
            ang_err.push(node.weight * jac * e);
        }
        let mut rad_err = Vec::with_capacity(npanels);
        for p in 0..npanels {
            let vals: Vec<f64> = nodes
                .iter()
                .zip(&shell)
                .filter(|(nd, _)| nd.panel == p)
                .map(|(_, v)| *v)
                .collect();
            let half = 0.5 * (panels[p + 1] - panels[p]);
            rad_err.push(half * legendre_tail(&gx, &gw, &vals, order));
        }
        debug_assert!(nodes.iter().all(|nd| nd.local < order));
        out.values[c] = util::pairwise_sum(&terms);
        out.errors[c] = util::pairwise_sum(&ang_err) + util::pairwise_sum(&rad_err);
    }
    Ok(out)
}

pub fn integrate_annulus<F>(
    n: usize,
    f: F,
    a: f64,
    b: f64,
    kinks: &[f64],
    scheme: &QuadratureScheme,
) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let wrapped = |x: &[f64]| f(x).map(|v| vec![v]);
    let i = integrate_annulus_vec(n, &wrapped, 1, a, b, kinks, scheme)?;
    Ok((i.value(), i.error()))
}

/// Error estimate of an `order`-point Gauss–Legendre panel sum from the decay
/// of the discrete Legendre coefficients of the sampled integrand.
fn legendre_tail(x: &[f64], w: &[f64], vals: &[f64], order: usize) -> f64 {
    let coeff = |k: usize| {
        let mut s = 0.0;
        for ((xi, wi), vi) in x.iter().zip(w).zip(vals) {
            s += wi * vi * legendre(k, *xi);
        }
        s * (2 * k + 1) as f64 / 2.0
    };
    let scale: f64 = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let top = coeff(order - 1).abs().max(coeff(order - 2).abs());
    let below = coeff(order - 3).abs().max(coeff(order - 4).abs());
    let rho = if below > 0.0 { (top / below).sqrt().min(1.0) } else { 1.0 };
    2.0 * top * rho.powi(order as i32 + 1) + 1e-15 * scale
}

fn legendre(k: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scheme() -> QuadratureScheme {
        QuadratureScheme::default()
    }

    #[test]
    fn sphere_area() {
        let (v, _) = integrate_sphere(3, |_| Ok(1.0), 2.0, &scheme()).unwrap();
        assert!((v - 16.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn odd_sphere_integrand_vanishes() {
        let (v, _) = integrate_sphere(3, |x| Ok(x[0]), 1.0, &scheme()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn quadratic_sphere_moment() {
        let (v, _) = integrate_sphere(3, |x| Ok(x[0] * x[0]), 1.0, &scheme()).unwrap();
        assert!((v - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn annulus_volume_and_power() {
        let (v, e) = integrate_annulus(3, |_| Ok(1.0), 1.0, 2.0, &[], &scheme()).unwrap();
        assert!((v - 4.0 * PI / 3.0 * 7.0).abs() < 1e-11);
        assert!(e < 1e-10);
        let (v, _) = integrate_annulus(
            3,
            |x| Ok(util::norm(x).powi(-4)),
            1.0,
            2.0,
            &[],
            &scheme(),
        )
        .unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-11);
    }

    #[test]
    fn jump_integrand_with_snapped_panel() {
        let f = |x: &[f64]| Ok(if util::norm(x) < 1.5 { 1.0 } else { 3.0 });
        let (v, _) = integrate_annulus(3, f, 1.0, 2.0, &[1.5], &scheme()).unwrap();
        let exact = 4.0 * PI / 3.0 * ((1.5f64.powi(3) - 1.0) + 3.0 * (8.0 - 1.5f64.powi(3)));
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn panels_contain_kinks_and_respect_ratio() {
        let p = radial_panels(8.0, 16.0, &[9.0, 13.0, 20.0], 1.25);
        assert!(p.contains(&9.0) && p.contains(&13.0));
        assert!(p.windows(2).all(|w| w[1] / w[0] <= 1.25 + 1e-12));
        assert_eq!(*p.first().unwrap(), 8.0);
        assert_eq!(*p.last().unwrap(), 16.0);
    }

    #[test]
    fn radial_error_estimate_flags_unresolved_jump() {
        let f = |x: &[f64]| Ok(if util::norm(x) < 1.5 { 1.0 } else { 3.0 });
        let (v, e) = integrate_annulus(3, f, 1.0, 2.0, &[], &scheme()).unwrap();
        let exact = 4.0 * PI / 3.0 * ((1.5f64.powi(3) - 1.0) + 3.0 * (8.0 - 1.5f64.powi(3)));
        assert!(e > 1e-6);
        assert!((v - exact).abs() < 10.0 * e);
    }
}
