//! Metric families with closed-form derivatives.

use super::profile::{sampled_range, OnePlus, PowerLaw, PowerOf, ProfileKind, RadialProfile};
use super::{check_domain, MetricField, MetricJet, Regularity};
use crate::{linalg, util, Error, Result};
use std::sync::Arc;

fn check_dim(n: usize) -> Result<()> {
    if n < 3 {
        Err(Error::Dimension(n))
    } else {
        Ok(())
    }
}

fn check_radius(inner: f64) -> Result<()> {
    if !(inner > 0.0 && inner.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inner radius must be positive and finite, got {inner}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FlatMetric {
    n: usize,
    inner: f64,
}

/// The Euclidean metric on `{|x| >= 1}`.
pub fn flat(n: usize) -> Result<FlatMetric> {
    check_dim(n)?;
    Ok(FlatMetric { n, inner: 1.0 })
}

impl FlatMetric {
    pub fn with_inner_radius(mut self, inner: f64) -> Result<Self> {
        check_radius(inner)?;
        self.inner = inner;
        Ok(self)
    }
}

impl MetricField for FlatMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn inner_radius(&self) -> f64 {
        self.inner
    }
    fn regularity(&self) -> Regularity {
        Regularity::Analytic
    }
    fn falloff_tau(&self) -> f64 {
        f64::INFINITY
    }
    fn comparability(&self) -> f64 {
        1.0
    }
    fn id(&self) -> String {
        format!("flat(n={})", self.n)
    }
    fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet> {
        check_domain(x, self.n, self.inner, f64::INFINITY)?;
        Ok(MetricJet::flat(self.n, order))
    }
}

/// `g = ψ(|x|) δ` for a positive radial factor `ψ`.
#[derive(Debug, Clone)]
pub struct IsotropicMetric {
    n: usize,
    inner: f64,
    factor: Arc<dyn RadialProfile>,
    regularity: Regularity,
    tau: f64,
    comparability: f64,
    id: String,
}

impl IsotropicMetric {
    fn build(
        n: usize,
        inner: f64,
        factor: Arc<dyn RadialProfile>,
        tau: f64,
        id: String,
    ) -> Result<Self> {
        let (lo, hi) = sampled_range(factor.as_ref(), inner);
        if lo <= 0.0 || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "conformal factor leaves (0, ∞) on r >= {inner}: range [{lo}, {hi}]"
            )));
        }
        let regularity = match factor.kind() {
            ProfileKind::Kinked => Regularity::W12Only,
            _ => Regularity::Analytic,
        };
        Ok(IsotropicMetric {
            n,
            inner,
            factor,
            regularity,
            tau,
            comparability: hi.max(1.0 / lo).max(1.0),
            id,
        })
    }

    /// The radial factor `ψ` with `g = ψ δ`.
    pub fn factor(&self) -> &dyn RadialProfile {
        self.factor.as_ref()
    }
}

impl MetricField for IsotropicMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn inner_radius(&self) -> f64 {
        self.inner
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
    fn falloff_tau(&self) -> f64 {
        self.tau
    }
    fn comparability(&self) -> f64 {
        self.comparability
    }
    fn id(&self) -> String {
        self.id.clone()
    }
    fn kink_radii(&self, a: f64, b: f64) -> Vec<f64> {
        self.factor.kinks(a, b)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet> {
        let n = self.n;
        let r = check_domain(x, n, self.inner, f64::INFINITY)?;
        let psi = self.factor.value(r);
        let mut jet = MetricJet {
            n,
            g: linalg::identity(n).into_iter().map(|v| v * psi).collect(),
            dg: Vec::new(),
            ddg: Vec::new(),
        };
        if order >= 1 {
            let unit: Vec<f64> = x.iter().map(|v| v / r).collect();
            let d1 = self.factor.d1(r);
            let mut dg = vec![0.0; n * n * n];
            for k in 0..n {
                for i in 0..n {
                    dg[(k * n + i) * n + i] = d1 * unit[k];
                }
            }
            jet.dg = dg;
            if order >= 2 {
                let d2 = self.factor.d2(r);
                let mut ddg = vec![0.0; n * n * n * n];
                for k in 0..n {
                    for l in 0..n {
                        let delta = if k == l { 1.0 } else { 0.0 };
                        let h = d2 * unit[k] * unit[l] + d1 / r * (delta - unit[k] * unit[l]);
                        for i in 0..n {
                            ddg[((k * n + l) * n + i) * n + i] = h;
                        }
                    }
                }
                jet.ddg = ddg;
            }
        }
        if !jet.is_finite() {
            return Err(Error::NonFinite(format!("{} at {x:?}", self.id)));
        }
        Ok(jet)
    }
}

/// `g = u(|x|)^{4/(n-2)} δ`.
pub fn conformally_flat(
    n: usize,
    u: Arc<dyn RadialProfile>,
    inner: f64,
) -> Result<IsotropicMetric> {
    check_dim(n)?;
    check_radius(inner)?;
    let (lo, _) = sampled_range(u.as_ref(), inner);
    if lo <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "conformal factor u must be positive on r >= {inner}, min sampled {lo}"
        )));
    }
    let id = format!("conformal(n={n},u={})", u.describe());
    let tau = u.decay_rate();
    let factor = Arc::new(PowerOf {
        inner: u,
        exponent: 4.0 / (n as f64 - 2.0),
    });
    IsotropicMetric::build(n, inner, factor, tau, id)
}

/// Spatial Schwarzschild data in isotropic coordinates,
/// `u = 1 + m / (2 r^{n-2})`.
pub fn schwarzschild_isotropic(n: usize, m: f64, inner: f64) -> Result<IsotropicMetric> {
    check_dim(n)?;
    check_radius(inner)?;
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mass parameter must be nonnegative, got {m}"
        )));
    }
    let horizon = (m / 2.0).powf(1.0 / (n as f64 - 2.0));
    if inner <= horizon {
        return Err(Error::InvalidParameter(format!(
            "inner radius {inner} must exceed (m/2)^(1/(n-2)) = {horizon}"
        )));
    }
    let u = Arc::new(PowerLaw::new(1.0, m / 2.0, n as f64 - 2.0));
    let mut metric = conformally_flat(n, u, inner)?;
    metric.id = format!("schwarzschild(n={n},m={m})");
    metric.tau = if m == 0.0 {
        f64::INFINITY
    } else {
        n as f64 - 2.0
    };
    Ok(metric)
}

/// `g = (1 + a(|x|)) δ`, so that `e = a δ` exactly.
pub fn radial_perturbation(
    n: usize,
    a: Arc<dyn RadialProfile>,
    inner: f64,
) -> Result<IsotropicMetric> {
    check_dim(n)?;
    check_radius(inner)?;
    let (lo, hi) = sampled_range(a.as_ref(), inner);
    if lo <= -1.0 || hi >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "perturbation must satisfy |a| < 1, sampled range [{lo}, {hi}]"
        )));
    }
    let id = format!("radial(n={n},a={})", a.describe());
    let tau = if a.limit() != 0.0 { 0.0 } else { a.decay_rate() };
    IsotropicMetric::build(n, inner, Arc::new(OnePlus { inner: a }), tau, id)
}

/// `g = δ + C |x - x₀|^{-p}` with a constant symmetric matrix `C`.
///
/// Not spherically symmetric (unless `C ∝ δ` and `x₀ = 0`); the mass for
/// `p = n - 2` is `(n - 2) tr C / (2n)`.
#[derive(Debug, Clone)]
pub struct TensorPerturbation {
    n: usize,
    inner: f64,
    coeff: Vec<f64>,
    center: Vec<f64>,
    power: f64,
    comparability: f64,
}

pub fn tensor_perturbation(
    n: usize,
    coeff: Vec<f64>,
    center: Vec<f64>,
    power: f64,
    inner: f64,
) -> Result<TensorPerturbation> {
    check_dim(n)?;
    check_radius(inner)?;
    if coeff.len() != n * n || center.len() != n {
        return Err(Error::InvalidParameter(
            "coefficient must be n×n and center must have n entries".into(),
        ));
    }
    if linalg::max_asymmetry(n, &coeff) > 0.0 {
        return Err(Error::InvalidParameter("coefficient must be symmetric".into()));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidParameter(format!("power must be positive, got {power}")));
    }
    let gap = inner - util::norm(&center);
    if gap <= 0.0 {
        return Err(Error::InvalidParameter(
            "center must lie strictly inside the inner sphere".into(),
        ));
    }
    // g = I + sC with s ∈ (0, gap^{-p}]; eigenvalues are affine in s
    let ev = linalg::sym_eigenvalues(n, &coeff);
    let s_max = gap.powf(-power);
    let lo = (1.0 + s_max * ev[0]).min(1.0);
    let hi = (1.0 + s_max * ev[n - 1]).max(1.0);
    if lo <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "metric not positive definite near the inner sphere (eigenvalue {lo})"
        )));
    }
    Ok(TensorPerturbation {
        n,
        inner,
        coeff,
        center,
        power,
        comparability: hi.max(1.0 / lo),
    })
}

impl TensorPerturbation {
    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.coeff[i * self.n + i]).sum()
    }
}

impl MetricField for TensorPerturbation {
    fn dim(&self) -> usize {
        self.n
    }
    fn inner_radius(&self) -> f64 {
        self.inner
    }
    fn regularity(&self) -> Regularity {
        Regularity::Analytic
    }
    fn falloff_tau(&self) -> f64 {
        self.power
    }
    fn comparability(&self) -> f64 {
        self.comparability
    }
    fn id(&self) -> String {
        format!(
            "tensor(n={},C={:?},x0={:?},p={})",
            self.n, self.coeff, self.center, self.power
        )
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet> {
        let n = self.n;
        check_domain(x, n, self.inner, f64::INFINITY)?;
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let s = util::norm(&y);
        let p = self.power;
        let phi = s.powf(-p);
        let mut g = linalg::identity(n);
        for (gi, ci) in g.iter_mut().zip(&self.coeff) {
            *gi += ci * phi;
        }
        let mut jet = MetricJet {
            n,
            g,
            dg: Vec::new(),
            ddg: Vec::new(),
        };
        let nn = n * n;
        if order >= 1 {
            let mut dg = vec![0.0; n * nn];
            let c1 = -p * s.powf(-p - 2.0);
            for k in 0..n {
                let dphi = c1 * y[k];
                for m in 0..nn {
                    dg[k * nn + m] = self.coeff[m] * dphi;
                }
            }
            jet.dg = dg;
        }
        if order >= 2 {
            let mut ddg = vec![0.0; nn * nn];
            let c2 = p * (p + 2.0) * s.powf(-p - 4.0);
            let c1 = -p * s.powf(-p - 2.0);
            for k in 0..n {
                for l in 0..n {
                    let delta = if k == l { 1.0 } else { 0.0 };
                    let ddphi = c2 * y[k] * y[l] + c1 * delta;
                    for m in 0..nn {
                        ddg[(k * n + l) * nn + m] = self.coeff[m] * ddphi;
                    }
                }
            }
            jet.ddg = ddg;
        }
        Ok(jet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::profile::ShellProfile;
    use crate::metric::{audit_points, finite_difference_consistency, sample_annulus};

    #[test]
    fn flat_rejects_low_dimension() {
        assert_eq!(flat(2).unwrap_err(), Error::Dimension(2));
        let f = flat(3).unwrap();
        let jet = f.jet(&[5.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(jet.g, linalg::identity(3));
        assert!(jet.dg.iter().chain(&jet.ddg).all(|v| *v == 0.0));
        assert_eq!(f.comparability(), 1.0);
    }

    #[test]
    fn schwarzschild_value_at_two() {
        let s = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let g = s.eval(&[2.0, 0.0, 0.0]).unwrap();
        assert!((g[0] - 2.44140625).abs() < 1e-14);
        assert_eq!(s.falloff_tau(), 1.0);
    }

    #[test]
    fn schwarzschild_rejects_horizon_domain() {
        assert!(schwarzschild_isotropic(3, 4.0, 1.5).is_err());
        assert!(schwarzschild_isotropic(3, -1.0, 2.0).is_err());
    }

    #[test]
    fn zero_mass_is_flat() {
        let s = schwarzschild_isotropic(3, 0.0, 1.0).unwrap();
        let jet = s.jet(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(jet.g, linalg::identity(3));
        assert!(jet.dg.iter().chain(&jet.ddg).all(|v| *v == 0.0));
    }

    #[test]
    fn perturbation_rejects_large_amplitude() {
        let a = Arc::new(PowerLaw::new(0.0, 1.5, 1.0));
        assert!(radial_perturbation(3, a, 1.0).is_err());
        let a = Arc::new(PowerLaw::new(0.0, -0.5, 1.0));
        assert!(radial_perturbation(3, a, 1.0).is_ok());
    }

    #[test]
    fn analytic_families_match_finite_differences() {
        let metrics: Vec<Box<dyn MetricField>> = vec![
            Box::new(schwarzschild_isotropic(3, 1.0, 2.0).unwrap()),
            Box::new(schwarzschild_isotropic(5, 0.7, 2.0).unwrap()),
            Box::new(
                tensor_perturbation(
                    3,
                    vec![0.3, 0.1, 0.0, 0.1, -0.2, 0.05, 0.0, 0.05, 0.4],
                    vec![0.2, -0.1, 0.3],
                    1.0,
                    2.0,
                )
                .unwrap(),
            ),
        ];
        for m in &metrics {
            let pts = sample_annulus(m.dim(), 2.5, 40.0, 50);
            let (e1, e2) = finite_difference_consistency(m.as_ref(), &pts).unwrap();
            assert!(e1 < 1e-7 && e2 < 1e-7, "{}: {e1} {e2}", m.id());
            let audit = audit_points(m.as_ref(), &pts).unwrap();
            assert!(audit.within_comparability, "{}", m.id());
            assert!(audit.max_asymmetry == 0.0);
            assert!(audit.max_d2_asymmetry < 1e-15);
        }
    }

    #[test]
    fn kinked_perturbation_reports_kinks() {
        let a = Arc::new(ShellProfile::new(0.2, 0.1, 1.0));
        let m = radial_perturbation(3, a, 4.0).unwrap();
        assert_eq!(m.regularity(), Regularity::W12Only);
        assert_eq!(m.kink_radii(4.0, 7.0), vec![5.0, 6.0]);
    }
}
