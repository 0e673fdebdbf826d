//! Changes of chart near infinity and the invariance experiments built on
//! them.
//!
//! A diffeomorphism `F` of exterior regions moves a metric to the chart
//! `y = F(x)`: `(F_*g)_ab(y) = g_ij(Φ(y)) ∂_aΦ^i ∂_bΦ^j` with `Φ = F⁻¹`.
//! Second derivatives of the result need `Φ` up to third order, so every
//! [`ChartMap`] carries derivatives to third order and a closed-form inverse
//! map.

use crate::mass::mass_by_method;
use crate::metric::{MetricField, MetricJet, Regularity};
use crate::quadrature::{CutoffFamily, QuadratureScheme};
use crate::report::{MassReport, Method};
use crate::{linalg, util, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::sync::Arc;

/// A smooth diffeomorphism between exterior regions.
///
/// Derivative layouts: `jacobian[i*n + a] = ∂_aΦ^i`,
/// `hessian[(i*n + a)*n + b]`, `third[((i*n + a)*n + b)*n + c]`.
pub trait ChartMap: Send + Sync {
    fn dim(&self) -> usize;
    fn forward(&self, y: &[f64]) -> Vec<f64>;
    fn jacobian(&self, y: &[f64]) -> Vec<f64>;
    fn hessian(&self, y: &[f64]) -> Vec<f64>;
    fn third(&self, y: &[f64]) -> Vec<f64>;
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// The inverse as a map with derivatives.
    fn inverse_map(&self) -> Result<Arc<dyn ChartMap>>;
    /// Smallest `ρ` with `|Φ(y)| >= radius` whenever `|y| >= ρ`.
    fn preimage_radius(&self, radius: f64) -> Result<f64>;
    /// Lower bound on `|Φ(y)|` over `|y| >= ρ`.
    fn image_radius(&self, rho: f64) -> f64;
    /// Bounds on the singular values of the Jacobian over `|y| >= ρ`.
    fn stretch_bounds(&self, rho: f64) -> (f64, f64);
    /// Image of a sphere of old radius `r` as a sphere in the new chart, when
    /// the map preserves spheres about the origin.
    fn sphere_preimage(&self, r: f64) -> Option<f64>;
    fn id(&self) -> String;
}

/// `Φ(y) = Q y + b` with `Q` orthogonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Isometry {
    pub n: usize,
    pub rotation: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Isometry {
    pub fn new(n: usize, rotation: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if rotation.len() != n * n || shift.len() != n {
            return Err(Error::InvalidParameter("isometry has wrong shape".into()));
        }
        let qtq = linalg::matmul(n, &linalg::transpose(n, &rotation), &rotation);
        let id = linalg::identity(n);
        let dev = qtq.iter().zip(&id).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "linear part is not orthogonal (|QᵀQ - I| = {dev:e})"
            )));
        }
        Ok(Isometry { n, rotation, shift })
    }

    /// `count` random isometries: orthogonal factor from the QR decomposition
    /// of a Gaussian matrix, shift uniform in the ball of radius `max_shift`.
    pub fn random(n: usize, count: usize, max_shift: f64, seed: u64) -> Result<Vec<Isometry>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
                let qr = m.qr();
                let (mut q, r) = (qr.q(), qr.r());
                // sign fix so the factor is Haar distributed
                for j in 0..n {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                let rotation: Vec<f64> = (0..n * n).map(|k| q[(k / n, k % n)]).collect();
                let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let len = util::norm(&dir);
                let radius = max_shift * rng.random::<f64>().powf(1.0 / n as f64);
                let shift = dir.iter().map(|v| v / len * radius).collect();
                Isometry::new(n, rotation, shift)
            })
            .collect()
    }
}

impl ChartMap for Isometry {
    fn dim(&self) -> usize {
        self.n
    }
    fn forward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| self.shift[i] + (0..n).map(|a| self.rotation[i * n + a] * y[a]).sum::<f64>())
            .collect()
    }
    fn jacobian(&self, _y: &[f64]) -> Vec<f64> {
        self.rotation.clone()
    }
    fn hessian(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.n.pow(3)]
    }
    fn third(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.n.pow(4)]
    }
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        Ok((0..n)
            .map(|a| (0..n).map(|i| self.rotation[i * n + a] * (x[i] - self.shift[i])).sum())
            .collect())
    }
    fn inverse_map(&self) -> Result<Arc<dyn ChartMap>> {
        let n = self.n;
        let rotation = linalg::transpose(n, &self.rotation);
        let shift = (0..n)
            .map(|a| -(0..n).map(|i| rotation[a * n + i] * self.shift[i]).sum::<f64>())
            .collect();
        Ok(Arc::new(Isometry::new(n, rotation, shift)?))
    }
    fn preimage_radius(&self, radius: f64) -> Result<f64> {
        Ok(radius + util::norm(&self.shift))
    }
    fn image_radius(&self, rho: f64) -> f64 {
        (rho - util::norm(&self.shift)).max(0.0)
    }
    fn stretch_bounds(&self, _rho: f64) -> (f64, f64) {
        (1.0, 1.0)
    }
    fn sphere_preimage(&self, r: f64) -> Option<f64> {
        (util::norm(&self.shift) == 0.0).then_some(r)
    }
    fn id(&self) -> String {
        format!("isometry(|b|={:.6})", util::norm(&self.shift))
    }
}

/// Map `Φ(y) = H(|y|) y` given `H` and its first three radial derivatives.
/// Returns `(J, Hessian, third derivative)` in the [`ChartMap`] layouts.
fn radial_map_derivatives(y: &[f64], h: [f64; 4]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = y.len();
    let rho = util::norm(y);
    let u: Vec<f64> = y.iter().map(|v| v / rho).collect();
    let [h0, h1, h2, h3] = h;
    // Hessian of y ↦ H(|y|) is A u⊗u + B δ, with B' = A / ρ
    let a = h2 - h1 / rho;
    let b = h1 / rho;
    let da = h3 - h2 / rho + h1 / (rho * rho);
    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let g1: Vec<f64> = u.iter().map(|v| h1 * v).collect();
    let g2 = |i: usize, j: usize| a * u[i] * u[j] + b * d(i, j);
    let g3 = |i: usize, j: usize, k: usize| {
        (da - 2.0 * a / rho) * u[i] * u[j] * u[k]
            + a / rho * (d(i, j) * u[k] + d(i, k) * u[j] + d(j, k) * u[i])
    };
    let mut jac = vec![0.0; n * n];
    let mut hes = vec![0.0; n * n * n];
    let mut third = vec![0.0; n.pow(4)];
    for i in 0..n {
        for p in 0..n {
            jac[i * n + p] = h0 * d(i, p) + y[i] * g1[p];
            for q in 0..n {
                hes[(i * n + p) * n + q] = d(i, p) * g1[q] + d(i, q) * g1[p] + y[i] * g2(p, q);
                for r in 0..n {
                    third[((i * n + p) * n + q) * n + r] = d(i, p) * g2(q, r)
                        + d(i, q) * g2(p, r)
                        + d(i, r) * g2(p, q)
                        + y[i] * g3(p, q, r);
                }
            }
        }
    }
    (jac, hes, third)
}

/// The radial almost-identity `F(x) = s(|x|) x/|x|`, `s(ρ) = ρ + c ρ^{1-τ'}`,
/// or its inverse when `inverted`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialAlmostIdentity {
    pub n: usize,
    pub coeff: f64,
    pub tau_prime: f64,
    pub inverted: bool,
}

/// Relative tolerance of the Newton inverse of `s`.
const INVERSE_TOL: f64 = 1e-14;

/// Builds the almost-identity with amplitude `c` and decay `τ'`. Requires
/// `τ' > (n-2)/2`, the decay under which the mass is a chart invariant.
pub fn make_almost_identity(n: usize, c: f64, tau_prime: f64) -> Result<RadialAlmostIdentity> {
    RadialAlmostIdentity::new(n, c, tau_prime)
}

impl RadialAlmostIdentity {
    pub fn new(n: usize, coeff: f64, tau_prime: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::Dimension(n));
        }
        if !(tau_prime > (n as f64 - 2.0) / 2.0) || !tau_prime.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "hypothesis violated: tau_prime = {tau_prime} must exceed (n-2)/2 = {}",
                (n as f64 - 2.0) / 2.0
            )));
        }
        if !coeff.is_finite() {
            return Err(Error::InvalidParameter("coefficient must be finite".into()));
        }
        Ok(RadialAlmostIdentity {
            n,
            coeff,
            tau_prime,
            inverted: false,
        })
    }

    pub fn s(&self, rho: f64) -> f64 {
        rho + self.coeff * rho.powf(1.0 - self.tau_prime)
    }

    pub fn ds(&self, rho: f64) -> f64 {
        1.0 + self.coeff * (1.0 - self.tau_prime) * rho.powf(-self.tau_prime)
    }

    fn dds(&self, rho: f64) -> f64 {
        let t = self.tau_prime;
        -self.coeff * (1.0 - t) * t * rho.powf(-t - 1.0)
    }

    fn ddds(&self, rho: f64) -> f64 {
        let t = self.tau_prime;
        self.coeff * (1.0 - t) * t * (t + 1.0) * rho.powf(-t - 2.0)
    }

    /// Solves `s(ρ) = t` by Newton's method from `ρ = t`.
    pub fn s_inverse(&self, t: f64) -> Result<f64> {
        let mut rho = t;
        for _ in 0..100 {
            let d = self.ds(rho);
            if !(d > 0.0) {
                return Err(Error::Inversion(format!(
                    "s'({rho}) = {d} is not positive; amplitude {} too large",
                    self.coeff
                )));
            }
            let step = (self.s(rho) - t) / d;
            rho -= step;
            if !(rho > 0.0) {
                return Err(Error::Inversion(format!(
                    "iterate left (0, ∞) solving s = {t}; amplitude {} too large",
                    self.coeff
                )));
            }
            if step.abs() <= INVERSE_TOL * rho {
                return Ok(rho);
            }
        }
        Err(Error::Inversion(format!("no convergence solving s(ρ) = {t}")))
    }

    /// Radius of the image of a point at radius `rho`.
    fn radial(&self, rho: f64) -> Result<f64> {
        if self.inverted {
            self.s_inverse(rho)
        } else {
            Ok(self.s(rho))
        }
    }

    /// `H(ρ) = radial(ρ)/ρ` and its derivatives, through `D = radial(ρ) - ρ`
    /// so that no leading terms cancel.
    fn stretch_jet(&self, rho: f64) -> [f64; 4] {
        let (c, tp) = (self.coeff, self.tau_prime);
        let (d0, d1, d2, d3) = if self.inverted {
            // t = s⁻¹(ρ): t - ρ = -c t^{1-τ'}
            let t = self.s_inverse(rho).unwrap_or(f64::NAN);
            let t1 = 1.0 / self.ds(t);
            let t2 = -self.dds(t) * t1.powi(3);
            let t3 = -self.ddds(t) * t1.powi(4) - 3.0 * self.dds(t) * t1 * t1 * t2;
            let k = -c * (1.0 - tp);
            (
                -c * t.powf(1.0 - tp),
                k * t.powf(-tp) * t1,
                k * (-tp * t.powf(-tp - 1.0) * t1 * t1 + t.powf(-tp) * t2),
                k * (tp * (tp + 1.0) * t.powf(-tp - 2.0) * t1.powi(3)
                    - 3.0 * tp * t.powf(-tp - 1.0) * t1 * t2
                    + t.powf(-tp) * t3),
            )
        } else {
            (
                c * rho.powf(1.0 - tp),
                c * (1.0 - tp) * rho.powf(-tp),
                -c * (1.0 - tp) * tp * rho.powf(-tp - 1.0),
                c * (1.0 - tp) * tp * (tp + 1.0) * rho.powf(-tp - 2.0),
            )
        };
        let r2 = rho * rho;
        [
            1.0 + d0 / rho,
            d1 / rho - d0 / r2,
            d2 / rho - 2.0 * d1 / r2 + 2.0 * d0 / (r2 * rho),
            d3 / rho - 3.0 * d2 / r2 + 6.0 * d1 / (r2 * rho) - 6.0 * d0 / (r2 * r2),
        ]
    }

    fn check_monotone(&self, arg: f64) -> Result<()> {
        if self.ds(arg) > 0.0 && self.s(arg) > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "radial map is not monotone: s'({arg}) = {}",
                self.ds(arg)
            )))
        }
    }
}

impl ChartMap for RadialAlmostIdentity {
    fn dim(&self) -> usize {
        self.n
    }
    fn forward(&self, y: &[f64]) -> Vec<f64> {
        let h = self.stretch_jet(util::norm(y))[0];
        y.iter().map(|v| h * v).collect()
    }
    fn jacobian(&self, y: &[f64]) -> Vec<f64> {
        radial_map_derivatives(y, self.stretch_jet(util::norm(y))).0
    }
    fn hessian(&self, y: &[f64]) -> Vec<f64> {
        radial_map_derivatives(y, self.stretch_jet(util::norm(y))).1
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        radial_map_derivatives(y, self.stretch_jet(util::norm(y))).2
    }
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = util::norm(x);
        let rho = if self.inverted {
            self.s(r)
        } else {
            self.s_inverse(r)?
        };
        Ok(x.iter().map(|v| v * rho / r).collect())
    }
    fn inverse_map(&self) -> Result<Arc<dyn ChartMap>> {
        Ok(Arc::new(RadialAlmostIdentity {
            inverted: !self.inverted,
            ..self.clone()
        }))
    }
    fn preimage_radius(&self, radius: f64) -> Result<f64> {
        // s' tends to 1 monotonically, so checking the innermost argument of
        // s suffices
        if self.inverted {
            self.check_monotone(radius)?;
            Ok(self.s(radius))
        } else {
            let rho = self.s_inverse(radius)?;
            self.check_monotone(rho)?;
            Ok(rho)
        }
    }
    fn image_radius(&self, rho: f64) -> f64 {
        self.radial(rho).unwrap_or(0.0)
    }
    fn stretch_bounds(&self, rho: f64) -> (f64, f64) {
        // singular values are the radial derivative and H, both monotone
        // towards 1
        let [h0, h1, _, _] = self.stretch_jet(rho);
        let radial_d = h0 + rho * h1;
        (radial_d.min(h0).min(1.0), radial_d.max(h0).max(1.0))
    }
    fn sphere_preimage(&self, r: f64) -> Option<f64> {
        if self.inverted {
            Some(self.s(r))
        } else {
            self.s_inverse(r).ok()
        }
    }
    fn id(&self) -> String {
        format!(
            "almost_identity(c={},tau'={}){}",
            self.coeff,
            self.tau_prime,
            if self.inverted { "^-1" } else { "" }
        )
    }
}

/// `Φ = outer ∘ inner`.
pub struct Composite {
    pub outer: Arc<dyn ChartMap>,
    pub inner: Arc<dyn ChartMap>,
}

impl Composite {
    pub fn new(outer: Arc<dyn ChartMap>, inner: Arc<dyn ChartMap>) -> Result<Self> {
        if outer.dim() != inner.dim() {
            return Err(Error::InvalidParameter("composed maps differ in dimension".into()));
        }
        Ok(Composite { outer, inner })
    }
}

impl ChartMap for Composite {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn forward(&self, y: &[f64]) -> Vec<f64> {
        self.outer.forward(&self.inner.forward(y))
    }
    fn jacobian(&self, y: &[f64]) -> Vec<f64> {
        let z = self.inner.forward(y);
        linalg::matmul(self.dim(), &self.outer.jacobian(&z), &self.inner.jacobian(y))
    }
    fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let z = self.inner.forward(y);
        let (ja, ha) = (self.outer.jacobian(&z), self.outer.hessian(&z));
        let (jb, hb) = (self.inner.jacobian(y), self.inner.hessian(y));
        let mut h = vec![0.0; n * n * n];
        for i in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += ja[i * n + k] * hb[(k * n + a) * n + b];
                        for l in 0..n {
                            s += ha[(i * n + k) * n + l] * jb[k * n + a] * jb[l * n + b];
                        }
                    }
                    h[(i * n + a) * n + b] = s;
                }
            }
        }
        h
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let z = self.inner.forward(y);
        let (ja, ha, ta) = (
            self.outer.jacobian(&z),
            self.outer.hessian(&z),
            self.outer.third(&z),
        );
        let (jb, hb, tb) = (
            self.inner.jacobian(y),
            self.inner.hessian(y),
            self.inner.third(y),
        );
        let jb_ = |k: usize, a: usize| jb[k * n + a];
        let hb_ = |k: usize, a: usize, b: usize| hb[(k * n + a) * n + b];
        let mut t = vec![0.0; n.pow(4)];
        for i in 0..n {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let mut s = 0.0;
                        for k in 0..n {
                            s += ja[i * n + k] * tb[((k * n + a) * n + b) * n + c];
                            for l in 0..n {
                                let h = ha[(i * n + k) * n + l];
                                s += h
                                    * (hb_(k, a, c) * jb_(l, b)
                                        + jb_(k, a) * hb_(l, b, c)
                                        + hb_(k, a, b) * jb_(l, c));
                                for m in 0..n {
                                    s += ta[((i * n + k) * n + l) * n + m]
                                        * jb_(k, a)
                                        * jb_(l, b)
                                        * jb_(m, c);
                                }
                            }
                        }
                        t[((i * n + a) * n + b) * n + c] = s;
                    }
                }
            }
        }
        t
    }
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.inverse(&self.outer.inverse(x)?)
    }
    fn inverse_map(&self) -> Result<Arc<dyn ChartMap>> {
        Ok(Arc::new(Composite::new(
            self.inner.inverse_map()?,
            self.outer.inverse_map()?,
        )?))
    }
    fn preimage_radius(&self, radius: f64) -> Result<f64> {
        self.inner.preimage_radius(self.outer.preimage_radius(radius)?)
    }
    fn stretch_bounds(&self, rho: f64) -> (f64, f64) {
        let (a0, a1) = self.inner.stretch_bounds(rho);
        let (b0, b1) = self.outer.stretch_bounds(self.inner.image_radius(rho));
        (a0 * b0, a1 * b1)
    }
    fn image_radius(&self, rho: f64) -> f64 {
        self.outer.image_radius(self.inner.image_radius(rho))
    }
    fn sphere_preimage(&self, r: f64) -> Option<f64> {
        self.inner.sphere_preimage(self.outer.sphere_preimage(r)?)
    }
    fn id(&self) -> String {
        format!("{}∘{}", self.outer.id(), self.inner.id())
    }
}

/// The metric `Φ^*g`, on `|y| >= Φ.preimage_radius(R)`.
pub struct PulledBackMetric {
    metric: Arc<dyn MetricField>,
    map: Arc<dyn ChartMap>,
    inner: f64,
    comparability: f64,
}

/// `F_*g`, the metric expressed in the chart `y = F(x)`.
pub fn pushforward_metric(
    metric: Arc<dyn MetricField>,
    diffeo: &dyn ChartMap,
) -> Result<PulledBackMetric> {
    pullback_metric(metric, diffeo.inverse_map()?)
}

pub fn pullback_metric(
    metric: Arc<dyn MetricField>,
    map: Arc<dyn ChartMap>,
) -> Result<PulledBackMetric> {
    if metric.dim() != map.dim() {
        return Err(Error::InvalidParameter(format!(
            "metric dimension {} but map dimension {}",
            metric.dim(),
            map.dim()
        )));
    }
    let inner = map.preimage_radius(metric.inner_radius())?;
    let (lo, hi) = map.stretch_bounds(inner);
    if !(lo > 0.0) {
        return Err(Error::InvalidParameter("map degenerates on the domain".into()));
    }
    let comparability = metric.comparability() * (hi * hi).max(1.0 / (lo * lo));
    Ok(PulledBackMetric {
        metric,
        map,
        inner,
        comparability,
    })
}

impl PulledBackMetric {
    pub fn map(&self) -> &dyn ChartMap {
        self.map.as_ref()
    }
}

/// Applies `J` to index `slot` of a tensor with `rank` indices of size `n`.
fn transform_index(n: usize, rank: usize, slot: usize, t: &[f64], jac: &[f64]) -> Vec<f64> {
    let stride = n.pow((rank - 1 - slot) as u32);
    let mut out = vec![0.0; t.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let a = (idx / stride) % n;
        let base = idx - a * stride;
        *o = (0..n).map(|i| t[base + i * stride] * jac[i * n + a]).sum();
    }
    out
}

impl MetricField for PulledBackMetric {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn inner_radius(&self) -> f64 {
        self.inner
    }
    fn regularity(&self) -> Regularity {
        self.metric.regularity()
    }
    fn falloff_tau(&self) -> f64 {
        self.metric.falloff_tau()
    }
    fn comparability(&self) -> f64 {
        self.comparability
    }
    fn id(&self) -> String {
        format!("{}[{}]", self.map.id(), self.metric.id())
    }
    fn max_order(&self) -> usize {
        self.metric.max_order()
    }
    fn kink_radii(&self, a: f64, b: f64) -> Vec<f64> {
        // only sphere-preserving maps keep kinks on coordinate spheres
        if self.map.sphere_preimage(1.0).is_none() {
            return Vec::new();
        }
        self.metric
            .kink_radii(0.0, f64::INFINITY)
            .into_iter()
            .filter_map(|r| self.map.sphere_preimage(r))
            .filter(|&r| r > a && r < b)
            .collect()
    }

    fn jet(&self, y: &[f64], order: usize) -> Result<MetricJet> {
        let n = self.dim();
        crate::metric::check_domain(y, n, self.inner, f64::INFINITY)?;
        let x = self.map.forward(y);
        let src = self.metric.jet(&x, order)?;
        let jac = self.map.jacobian(y);
        // every tensor index of the source is contracted with J
        let pull = |t: &[f64], rank: usize| {
            (0..rank).fold(t.to_vec(), |acc, slot| transform_index(n, rank, slot, &acc, &jac))
        };
        let g = pull(&src.g, 2);
        if order == 0 {
            return Ok(MetricJet {
                n,
                g,
                dg: Vec::new(),
                ddg: Vec::new(),
            });
        }
        let hes = self.map.hessian(y);
        let h = |i: usize, a: usize, b: usize| hes[(i * n + a) * n + b];
        // ∂_c g̃_ab = (∂_k g_ij) J^k_c J^i_a J^j_b + g_ij (H^i_ac J^j_b + J^i_a H^j_bc)
        let dg1 = pull(&src.dg, 3);
        // gj[i*n + b] = g_ij J^j_b
        let gj = transform_index(n, 2, 1, &src.g, &jac);
        let mut dg = vec![0.0; n * n * n];
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut s = dg1[(c * n + a) * n + b];
                    for i in 0..n {
                        s += h(i, a, c) * gj[i * n + b] + h(i, b, c) * gj[i * n + a];
                    }
                    dg[(c * n + a) * n + b] = s;
                }
            }
        }
        if order == 1 {
            return Ok(MetricJet {
                n,
                g,
                dg,
                ddg: Vec::new(),
            });
        }
        let third = self.map.third(y);
        let t = |i: usize, a: usize, b: usize, c: usize| third[((i * n + a) * n + b) * n + c];
        let ddg1 = pull(&src.ddg, 4);
        // dgj[(k*n + i)*n + b] = ∂_k g_ij J^j_b and its full pullback over k
        let dgj = transform_index(n, 3, 2, &src.dg, &jac);
        let dgjk = transform_index(n, 3, 0, &dgj, &jac);
        // dgjk[(d*n + i)*n + b] = ∂_l g_ij J^l_d J^j_b
        let mut ddg = vec![0.0; n.pow(4)];
        for d in 0..n {
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut s = ddg1[((d * n + c) * n + a) * n + b];
                        for k in 0..n {
                            // ∂_k g_ij H^k_cd J^i_a J^j_b
                            let mut gk = 0.0;
                            for i in 0..n {
                                gk += dgj[(k * n + i) * n + b] * jac[i * n + a];
                            }
                            s += h(k, c, d) * gk;
                        }
                        for i in 0..n {
                            // ∂_k g_ij J^k_c H^i_ad J^j_b and the (a ↔ b) term
                            s += dgjk[(c * n + i) * n + b] * h(i, a, d)
                                + dgjk[(c * n + i) * n + a] * h(i, b, d);
                            // ∂_l g_ij J^l_d (H^i_ac J^j_b + J^i_a H^j_bc)
                            s += dgjk[(d * n + i) * n + b] * h(i, a, c)
                                + dgjk[(d * n + i) * n + a] * h(i, b, c);
                            // g_ij (T^i_acd J^j_b + J^i_a T^j_bcd)
                            s += gj[i * n + b] * t(i, a, c, d) + gj[i * n + a] * t(i, b, c, d);
                            for j in 0..n {
                                // g_ij (H^i_ac H^j_bd + H^i_ad H^j_bc)
                                s += src.g[i * n + j]
                                    * (h(i, a, c) * h(j, b, d) + h(i, a, d) * h(j, b, c));
                            }
                        }
                        ddg[((d * n + c) * n + a) * n + b] = s;
                    }
                }
            }
        }
        Ok(MetricJet { n, g, dg, ddg })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub diffeo_id: String,
    pub original: MassReport,
    pub transformed: MassReport,
    /// Per-scale `transformed - original`.
    pub deltas: Vec<f64>,
    pub limit_delta: f64,
    /// Combined quadrature error of the two limits.
    pub quad_error: f64,
}

/// Computes the mass with `method` before and after pushing the metric
/// forward by `diffeo`, on the same schedule.
pub fn invariance_experiment(
    metric: Arc<dyn MetricField>,
    diffeo: &dyn ChartMap,
    method: Method,
    family: &CutoffFamily,
    scales: &[f64],
    scheme: &QuadratureScheme,
) -> Result<InvarianceReport> {
    let pulled = pushforward_metric(metric.clone(), diffeo)?;
    let original = mass_by_method(method, metric.as_ref(), family, scales, scheme)?;
    let transformed = mass_by_method(method, &pulled, family, scales, scheme)?;
    let deltas = original
        .values
        .iter()
        .zip(&transformed.values)
        .map(|(a, b)| b - a)
        .collect();
    Ok(InvarianceReport {
        diffeo_id: diffeo.id(),
        limit_delta: transformed.limit - original.limit,
        quad_error: original.max_quad_error()
            + transformed.max_quad_error()
            + original.limit_stderr
            + transformed.limit_stderr,
        deltas,
        original,
        transformed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{schwarzschild_isotropic, tensor_perturbation};

    fn fd_check(map: &dyn ChartMap, y: &[f64]) {
        let n = map.dim();
        let h = 1e-5;
        let shift = |k: usize, s: f64| {
            let mut z = y.to_vec();
            z[k] += s;
            z
        };
        let j = map.jacobian(y);
        let hs = map.hessian(y);
        let t = map.third(y);
        for c in 0..n {
            let (p, m) = (shift(c, h), shift(c, -h));
            let (fp, fm) = (map.forward(&p), map.forward(&m));
            let (jp, jm) = (map.jacobian(&p), map.jacobian(&m));
            let (hp, hm) = (map.hessian(&p), map.hessian(&m));
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - j[i * n + c]).abs() < 1e-8);
                for a in 0..n {
                    let fd = (jp[i * n + a] - jm[i * n + a]) / (2.0 * h);
                    assert!((fd - hs[(i * n + a) * n + c]).abs() < 1e-8);
                    for b in 0..n {
                        let k = (i * n + a) * n + b;
                        let fd = (hp[k] - hm[k]) / (2.0 * h);
                        assert!((fd - t[k * n + c]).abs() < 1e-7, "{fd} vs {}", t[k * n + c]);
                    }
                }
            }
        }
    }

    #[test]
    fn radial_map_derivatives() {
        let m = RadialAlmostIdentity::new(3, 0.05, 0.8).unwrap();
        fd_check(&m, &[1.3, -0.7, 2.1]);
        let x = m.forward(&[1.3, -0.7, 2.1]);
        let y = m.inverse(&x).unwrap();
        assert!((y[0] - 1.3).abs() < 1e-13 && (y[2] - 2.1).abs() < 1e-13);
        let inv = m.inverse_map().unwrap();
        fd_check(inv.as_ref(), &[1.3, -0.7, 2.1]);
        let back = inv.forward(&x);
        assert!((back[1] + 0.7).abs() < 1e-13);
    }

    #[test]
    fn radial_profile_value() {
        let m = make_almost_identity(3, 0.1, 0.8).unwrap();
        assert!((m.s(10.0) - 10.15849).abs() < 5e-6);
        let x = m.forward(&[10.0, 0.0, 0.0]);
        assert!((x[0] - m.s(10.0)).abs() < 1e-13);
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let m = make_almost_identity(4, 0.0, 1.5).unwrap();
        let y = [1.0, 2.0, -0.5, 3.0];
        assert_eq!(m.forward(&y), y.to_vec());
        let j = m.jacobian(&y);
        assert_eq!(j, linalg::identity(4));
    }

    #[test]
    fn displacement_gradient_decays_at_tau_prime() {
        let m = make_almost_identity(3, 0.05, 0.8).unwrap();
        let radii: Vec<f64> = (3..10).map(|k| 2f64.powi(k)).collect();
        let mags: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let j = m.jacobian(&[r * 0.6, 0.0, r * 0.8]);
                util::frobenius(&j.iter().zip(linalg::identity(3)).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .collect();
        let (sigma, _, _) = util::fit_power_decay(&radii, &mags);
        assert!((sigma - 0.8).abs() < 0.02, "{sigma}");
    }

    #[test]
    fn composite_derivatives() {
        let iso = Isometry::random(3, 1, 0.5, 7).unwrap().remove(0);
        let rad = RadialAlmostIdentity::new(3, -0.1, 0.9).unwrap();
        let c = Composite::new(Arc::new(iso), Arc::new(rad)).unwrap();
        fd_check(&c, &[2.0, 0.4, -1.1]);
        let x = c.forward(&[2.0, 0.4, -1.1]);
        let y = c.inverse(&x).unwrap();
        assert!((y[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_on_decay_is_enforced() {
        let e = RadialAlmostIdentity::new(3, 0.05, 0.4).unwrap_err();
        assert!(e.to_string().contains("hypothesis violated: tau_prime"));
        assert!(RadialAlmostIdentity::new(5, 0.05, 1.5).is_err());
    }

    #[test]
    fn random_isometries_are_orthogonal_and_reproducible() {
        let a = Isometry::random(4, 3, 2.0, 11).unwrap();
        let b = Isometry::random(4, 3, 2.0, 11).unwrap();
        assert_eq!(a, b);
        for iso in &a {
            assert!(util::norm(&iso.shift) <= 2.0);
        }
    }

    fn jet_fd_check(metric: &dyn MetricField, y: &[f64], tol: f64) {
        let n = metric.dim();
        let jet = metric.jet(y, 2).unwrap();
        let h = 1e-5;
        for k in 0..n {
            let mut p = y.to_vec();
            let mut m = y.to_vec();
            p[k] += h;
            m[k] -= h;
            let (jp, jm) = (metric.jet(&p, 1).unwrap(), metric.jet(&m, 1).unwrap());
            for ij in 0..n * n {
                let fd = (jp.g[ij] - jm.g[ij]) / (2.0 * h);
                assert!((fd - jet.dg[k * n * n + ij]).abs() < tol);
                for l in 0..n {
                    let fd = (jp.dg[l * n * n + ij] - jm.dg[l * n * n + ij]) / (2.0 * h);
                    assert!(
                        (fd - jet.ddg[(k * n + l) * n * n + ij]).abs() < tol,
                        "{fd} vs {}",
                        jet.ddg[(k * n + l) * n * n + ij]
                    );
                }
            }
        }
    }

    #[test]
    fn pulled_back_jet_is_consistent() {
        let base: Arc<dyn MetricField> = Arc::new(
            tensor_perturbation(
                3,
                vec![0.2, 0.05, 0.0, 0.05, -0.1, 0.03, 0.0, 0.03, 0.1],
                vec![0.1, 0.0, -0.2],
                1.0,
                2.0,
            )
            .unwrap(),
        );
        let iso = Isometry::random(3, 1, 0.5, 3).unwrap().remove(0);
        let rad = RadialAlmostIdentity::new(3, 0.05, 0.8).unwrap();
        let map = Composite::new(Arc::new(iso), Arc::new(rad)).unwrap();
        let pushed = pushforward_metric(base.clone(), &map).unwrap();
        jet_fd_check(&pushed, &[3.0, -1.0, 2.0], 1e-7);
        // round trip through the inverse
        let back = pushforward_metric(Arc::new(pushed), map.inverse_map().unwrap().as_ref()).unwrap();
        let x = [4.0, 1.0, -2.5];
        let (a, b) = (back.jet(&x, 2).unwrap(), base.jet(&x, 2).unwrap());
        for (p, q) in a.g.iter().chain(&a.dg).chain(&a.ddg).zip(b.g.iter().chain(&b.dg).chain(&b.ddg)) {
            assert!((p - q).abs() < 1e-10, "{p} vs {q}");
        }
    }

    #[test]
    fn isometry_keeps_flat_metric_flat() {
        let f: Arc<dyn MetricField> = Arc::new(crate::metric::flat(4).unwrap());
        for iso in Isometry::random(4, 3, 2.0, 9).unwrap() {
            let p = pushforward_metric(f.clone(), &iso).unwrap();
            assert!((p.inner_radius() - 1.0 - util::norm(&iso.shift)).abs() < 1e-12);
            let j = p.jet(&[2.0, 3.0, -1.0, 0.5], 2).unwrap();
            let id = linalg::identity(4);
            assert!(j.g.iter().zip(&id).all(|(a, b)| (a - b).abs() < 1e-14));
            assert!(j.dg.iter().chain(&j.ddg).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rotation_preserves_schwarzschild() {
        let base = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let mut iso = Isometry::random(3, 1, 0.0, 5).unwrap().remove(0);
        iso.shift = vec![0.0; 3];
        let pushed = pushforward_metric(Arc::new(base.clone()), &iso).unwrap();
        let y = [2.0, 1.0, -3.0];
        let a = pushed.jet(&y, 2).unwrap();
        let b = base.jet(&y, 2).unwrap();
        for (p, q) in a.g.iter().chain(&a.dg).chain(&a.ddg).zip(b.g.iter().chain(&b.dg).chain(&b.ddg)) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
