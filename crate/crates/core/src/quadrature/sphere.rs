//! Quadrature rules on the unit sphere `S^{n-1}`.
//!
//! `n = 3, 4` use tensor-product Gauss rules in angular coordinates; higher
//! dimensions use antipodally symmetrised, randomly shifted Halton points
//! whose replicate spread is the error estimate.

use super::gauss::{gauss_chebyshev_second, gauss_legendre};
use super::QuadratureScheme;
use crate::{util, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut idx: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while idx > 0 {
        out += (idx % base) as f64 * inv;
        idx /= base;
        inv /= base as f64;
    }
    out
}

fn gaussian_direction(u: &[f64]) -> Vec<f64> {
    let normal = Normal::standard();
    let z: Vec<f64> = u
        .iter()
        .map(|&v| normal.inverse_cdf(v.clamp(1e-15, 1.0 - 1e-15)))
        .collect();
    let r = util::norm(&z);
    z.iter().map(|v| v / r).collect()
}

/// Deterministic low-discrepancy pair `(t, direction)` with `t ∈ [0, 1)` and
/// a unit vector in `Rⁿ`; `idx >= 1`.
pub fn halton_direction(n: usize, idx: usize) -> (f64, Vec<f64>) {
    assert!(n < PRIMES.len(), "dimension {n} too large for the Halton table");
    let t = radical_inverse(idx as u64, PRIMES[0]);
    let u: Vec<f64> = (1..=n)
        .map(|d| radical_inverse(idx as u64, PRIMES[d]))
        .collect();
    (t, gaussian_direction(&u))
}

/// Points and weights on `S^{n-1}`, plus alternative weightings of the same
/// points used to estimate the error.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub n: usize,
    pub dirs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// One alternative: a coarser embedded rule. Several: independent
    /// quasi-random replicates.
    pub alternates: Vec<Vec<f64>>,
}

impl SphereRule {
    pub fn new(n: usize, scheme: &QuadratureScheme) -> Result<Self> {
        match n {
            0..=1 => Err(Error::Dimension(n)),
            2 => Ok(circle(2 * scheme.angular_order)),
            3 => Ok(two_sphere(scheme.angular_order)),
            4 => Ok(three_sphere(scheme.angular_order)),
            _ => quasi_random(n, scheme),
        }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Integral and error estimate given the integrand values at `dirs`.
    pub fn combine(&self, values: &[f64]) -> (f64, f64) {
        let weighted = |w: &[f64]| {
            let terms: Vec<f64> = w.iter().zip(values).map(|(w, v)| w * v).collect();
            util::pairwise_sum(&terms)
        };
        let main = weighted(&self.weights);
        let alts: Vec<f64> = self.alternates.iter().map(|w| weighted(w)).collect();
        let err = match alts.len() {
            0 => 0.0,
            1 => (main - alts[0]).abs(),
            k => {
                let mean = alts.iter().sum::<f64>() / k as f64;
                let var = alts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
                (var / k as f64).sqrt()
            }
        };
        (main, err)
    }
}

fn circle(points: usize) -> SphereRule {
    let m = points.max(2) & !1;
    let dirs = (0..m)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / m as f64;
            vec![phi.cos(), phi.sin()]
        })
        .collect();
    let weights = vec![2.0 * PI / m as f64; m];
    let coarse = (0..m)
        .map(|j| if j % 2 == 0 { 4.0 * PI / m as f64 } else { 0.0 })
        .collect();
    SphereRule {
        n: 2,
        dirs,
        weights,
        alternates: vec![coarse],
    }
}

/// Lifts a rule on `S^{n-2}` to `S^{n-1}` using nodes `t` in the first
/// coordinate with weights for `(1-t²)^{(n-3)/2} dt`.
fn lift(inner: &SphereRule, t: &[f64], w: &[f64]) -> SphereRule {
    let mut dirs = Vec::with_capacity(t.len() * inner.len());
    let mut weights = Vec::with_capacity(dirs.capacity());
    let mut alternates = vec![Vec::with_capacity(dirs.capacity()); inner.alternates.len()];
    for (&ti, &wi) in t.iter().zip(w) {
        let s = (1.0 - ti * ti).max(0.0).sqrt();
        for (k, d) in inner.dirs.iter().enumerate() {
            let mut x = Vec::with_capacity(inner.n + 1);
            x.extend(d.iter().map(|v| s * v));
            x.push(ti);
            dirs.push(x);
            weights.push(wi * inner.weights[k]);
            for (a, ia) in alternates.iter_mut().zip(&inner.alternates) {
                a.push(wi * ia[k]);
            }
        }
    }
    SphereRule {
        n: inner.n + 1,
        dirs,
        weights,
        alternates,
    }
}

fn two_sphere(order: usize) -> SphereRule {
    let (t, w) = gauss_legendre(order.max(2));
    lift(&circle(2 * order.max(2)), &t, &w)
}

fn three_sphere(order: usize) -> SphereRule {
    let (t, w) = gauss_chebyshev_second(order.max(2));
    lift(&two_sphere(order), &t, &w)
}

fn quasi_random(n: usize, scheme: &QuadratureScheme) -> Result<SphereRule> {
    if n >= PRIMES.len() {
        return Err(Error::InvalidParameter(format!(
            "quasi-random sphere rule supports n < {}, got {n}",
            PRIMES.len()
        )));
    }
    let reps = scheme.replicates.max(2);
    let pairs = (scheme.qmc_points / (2 * reps)).max(1);
    let per_rep = 2 * pairs;
    let total = per_rep * reps;
    let omega = util::unit_sphere_volume(n);
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    let mut dirs = Vec::with_capacity(total);
    let mut alternates = Vec::with_capacity(reps);
    for rep in 0..reps {
        let shift: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        for k in 0..pairs {
            let u: Vec<f64> = (0..n)
                .map(|d| (radical_inverse((k + 1) as u64, PRIMES[d + 1]) + shift[d]).fract())
                .collect();
            let d = gaussian_direction(&u);
            let anti: Vec<f64> = d.iter().map(|v| -v).collect();
            dirs.push(d);
            dirs.push(anti);
        }
        let mut w = vec![0.0; total];
        for slot in w.iter_mut().skip(rep * per_rep).take(per_rep) {
            *slot = omega / per_rep as f64;
        }
        alternates.push(w);
    }
    Ok(SphereRule {
        n,
        dirs,
        weights: vec![omega / total as f64; total],
        alternates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> QuadratureScheme {
        QuadratureScheme::default()
    }

    #[test]
    fn constants_integrate_to_sphere_volume() {
        for n in 2..=7 {
            let rule = SphereRule::new(n, &scheme()).unwrap();
            let (v, _) = rule.combine(&vec![1.0; rule.len()]);
            let omega = util::unit_sphere_volume(n);
            assert!((v - omega).abs() < 1e-12 * omega, "n={n}: {v} vs {omega}");
        }
    }

    #[test]
    fn directions_are_unit_vectors() {
        for n in 3..=6 {
            let rule = SphereRule::new(n, &scheme()).unwrap();
            for d in &rule.dirs {
                assert!((util::norm(d) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn product_rules_are_exact_for_quadratic_moments() {
        for n in [3, 4] {
            let rule = SphereRule::new(n, &scheme()).unwrap();
            let omega = util::unit_sphere_volume(n);
            for i in 0..n {
                for j in 0..n {
                    let vals: Vec<f64> = rule.dirs.iter().map(|d| d[i] * d[j]).collect();
                    let (v, _) = rule.combine(&vals);
                    let exact = if i == j { omega / n as f64 } else { 0.0 };
                    assert!((v - exact).abs() < 1e-13, "n={n} ({i},{j}): {v}");
                }
            }
            // quartic moment ∫x₁⁴ = 3ω/(n(n+2))
            let vals: Vec<f64> = rule.dirs.iter().map(|d| d[0].powi(4)).collect();
            let (v, _) = rule.combine(&vals);
            assert!((v - 3.0 * omega / (n * (n + 2)) as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn odd_integrands_vanish_for_quasi_random_rules() {
        let rule = SphereRule::new(5, &scheme()).unwrap();
        let vals: Vec<f64> = rule.dirs.iter().map(|d| d[0] + d[3].powi(3)).collect();
        let (v, _) = rule.combine(&vals);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn quasi_random_error_estimate_is_honest() {
        let rule = SphereRule::new(5, &scheme()).unwrap();
        let omega = util::unit_sphere_volume(5);
        let vals: Vec<f64> = rule.dirs.iter().map(|d| d[0] * d[0]).collect();
        let (v, err) = rule.combine(&vals);
        let exact = omega / 5.0;
        assert!(err > 0.0);
        assert!((v - exact).abs() < 5.0 * err + 1e-12, "{v} {exact} {err}");
    }

    #[test]
    fn halton_direction_is_deterministic() {
        let (t1, d1) = halton_direction(4, 17);
        let (t2, d2) = halton_direction(4, 17);
        assert_eq!(t1, t2);
        assert_eq!(d1, d2);
        assert!((0.0..1.0).contains(&t1));
    }
}
