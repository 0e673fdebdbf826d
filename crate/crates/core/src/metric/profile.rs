//! Radial profiles `r ↦ a(r)` used as conformal factors and perturbations.

use std::fmt::Debug;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Smooth,
    Kinked,
    Oscillatory,
}

/// Which one-sided limit to take at a kink radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inner,
    Outer,
}

pub trait RadialProfile: Send + Sync + Debug {
    fn value(&self, r: f64) -> f64;
    fn d1(&self, r: f64) -> f64;
    fn d2(&self, r: f64) -> f64;
    fn kind(&self) -> ProfileKind;

    /// Declared rate `σ` with `|a(r) - a(∞)| = O(r^{-σ})`.
    fn decay_rate(&self) -> f64;

    /// Value approached as `r → ∞`.
    fn limit(&self) -> f64 {
        0.0
    }

    /// Radii in the open interval `(a, b)` where `d1` jumps.
    fn kinks(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }

    /// One-sided first derivative; equals [`RadialProfile::d1`] off kinks.
    fn d1_one_sided(&self, r: f64, _side: Side) -> f64 {
        self.d1(r)
    }

    fn describe(&self) -> String;
}

/// `base + amp · r^{-power}`.
#[derive(Debug, Clone)]
pub struct PowerLaw {
    pub base: f64,
    pub amp: f64,
    pub power: f64,
}

impl PowerLaw {
    pub fn new(base: f64, amp: f64, power: f64) -> Self {
        PowerLaw { base, amp, power }
    }
}

impl RadialProfile for PowerLaw {
    fn value(&self, r: f64) -> f64 {
        self.base + self.amp * r.powf(-self.power)
    }
    fn d1(&self, r: f64) -> f64 {
        -self.power * self.amp * r.powf(-self.power - 1.0)
    }
    fn d2(&self, r: f64) -> f64 {
        self.power * (self.power + 1.0) * self.amp * r.powf(-self.power - 2.0)
    }
    fn kind(&self) -> ProfileKind {
        ProfileKind::Smooth
    }
    fn decay_rate(&self) -> f64 {
        if self.amp == 0.0 {
            f64::INFINITY
        } else {
            self.power
        }
    }
    fn limit(&self) -> f64 {
        self.base
    }
    fn describe(&self) -> String {
        format!("{}+{}*r^-{}", self.base, self.amp, self.power)
    }
}

/// `base + amp · r^{-power} · exp(-r/scale)`; not harmonic, so conformal
/// metrics built from it have nonzero scalar curvature.
#[derive(Debug, Clone)]
pub struct DampedPower {
    pub base: f64,
    pub amp: f64,
    pub power: f64,
    pub scale: f64,
}

impl RadialProfile for DampedPower {
    fn value(&self, r: f64) -> f64 {
        self.base + self.amp * r.powf(-self.power) * (-r / self.scale).exp()
    }
    fn d1(&self, r: f64) -> f64 {
        let core = self.amp * r.powf(-self.power) * (-r / self.scale).exp();
        core * (-self.power / r - 1.0 / self.scale)
    }
    fn d2(&self, r: f64) -> f64 {
        let core = self.amp * r.powf(-self.power) * (-r / self.scale).exp();
        let s = -self.power / r - 1.0 / self.scale;
        core * (s * s + self.power / (r * r))
    }
    fn kind(&self) -> ProfileKind {
        ProfileKind::Smooth
    }
    fn decay_rate(&self) -> f64 {
        f64::INFINITY
    }
    fn limit(&self) -> f64 {
        self.base
    }
    fn describe(&self) -> String {
        format!(
            "{}+{}*r^-{}*exp(-r/{})",
            self.base, self.amp, self.power, self.scale
        )
    }
}

/// `amp · r^{-power} · (1 + depth · sin(freq · r))`.
#[derive(Debug, Clone)]
pub struct OscillatingPower {
    pub amp: f64,
    pub power: f64,
    pub depth: f64,
    pub freq: f64,
}

impl RadialProfile for OscillatingPower {
    fn value(&self, r: f64) -> f64 {
        self.amp * r.powf(-self.power) * (1.0 + self.depth * (self.freq * r).sin())
    }
    fn d1(&self, r: f64) -> f64 {
        let p = self.power;
        let w = 1.0 + self.depth * (self.freq * r).sin();
        let dw = self.depth * self.freq * (self.freq * r).cos();
        self.amp * (-p * r.powf(-p - 1.0) * w + r.powf(-p) * dw)
    }
    fn d2(&self, r: f64) -> f64 {
        let p = self.power;
        let w = 1.0 + self.depth * (self.freq * r).sin();
        let dw = self.depth * self.freq * (self.freq * r).cos();
        let ddw = -self.depth * self.freq * self.freq * (self.freq * r).sin();
        self.amp
            * (p * (p + 1.0) * r.powf(-p - 2.0) * w - 2.0 * p * r.powf(-p - 1.0) * dw
                + r.powf(-p) * ddw)
    }
    fn kind(&self) -> ProfileKind {
        ProfileKind::Oscillatory
    }
    fn decay_rate(&self) -> f64 {
        self.power
    }
    fn describe(&self) -> String {
        format!(
            "{}*r^-{}*(1+{}*sin({}r))",
            self.amp, self.power, self.depth, self.freq
        )
    }
}

/// Piecewise-C² profile with Lipschitz matching: `a'(r) = -(mean ± contrast)/r²`
/// with the sign alternating on consecutive shells `[k·width, (k+1)·width)`,
/// normalised so that `a(∞) = 0`.
///
/// In three dimensions the classical flux integrand of `g = (1 + a)δ` on the
/// sphere of radius `r` is `-a'(r) r² / 2 = (mean ± contrast)/2`, which keeps
/// jumping between two values; its shell average is `mean / 2`.
#[derive(Debug, Clone)]
pub struct ShellProfile {
    pub mean: f64,
    pub contrast: f64,
    pub width: f64,
}

impl ShellProfile {
    pub fn new(mean: f64, contrast: f64, width: f64) -> Self {
        assert!(width > 0.0, "shell width must be positive");
        ShellProfile {
            mean,
            contrast,
            width,
        }
    }

    fn shell(&self, r: f64) -> u64 {
        (r / self.width).floor().max(0.0) as u64
    }

    fn sign(k: u64) -> f64 {
        if k.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// `∫_r^∞ s(t) t^{-2} dt` for the alternating unit square wave `s`.
    fn square_wave_tail(&self, r: f64) -> f64 {
        let k = self.shell(r);
        let next = (k + 1) as f64 * self.width;
        let head = Self::sign(k) * (1.0 / r - 1.0 / next);
        head + alternating_reciprocal_tail(k + 1) / self.width
    }

    /// Closed-form average of `-a'(r) r² / 2` over `[a, b]`.
    pub fn flux_average(&self, a: f64, b: f64) -> f64 {
        // ∫ s(t) dt over [a, b]
        let prim = |t: f64| {
            let k = self.shell(t);
            let base = if k.is_multiple_of(2) { 0.0 } else { self.width };
            base + Self::sign(k) * (t - k as f64 * self.width)
        };
        let s_int = prim(b) - prim(a);
        0.5 * (self.mean + self.contrast * s_int / (b - a))
    }
}

/// `Σ_{j>=m} (-1)^j (1/j - 1/(j+1))` for `m >= 1`.
fn alternating_reciprocal_tail(m: u64) -> f64 {
    // Σ_{j>=m} (-1)^j / j = (-1)^m β(m), β(x) = (ψ((x+1)/2) - ψ(x/2)) / 2,
    // and the second sum is the same series shifted by one.
    let beta = |x: f64| {
        0.5 * (statrs::function::gamma::digamma((x + 1.0) / 2.0)
            - statrs::function::gamma::digamma(x / 2.0))
    };
    let m_f = m as f64;
    let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * (2.0 * beta(m_f) - 1.0 / m_f)
}

impl RadialProfile for ShellProfile {
    fn value(&self, r: f64) -> f64 {
        self.mean / r + self.contrast * self.square_wave_tail(r)
    }
    fn d1(&self, r: f64) -> f64 {
        -(self.mean + self.contrast * Self::sign(self.shell(r))) / (r * r)
    }
    fn d2(&self, r: f64) -> f64 {
        2.0 * (self.mean + self.contrast * Self::sign(self.shell(r))) / (r * r * r)
    }
    fn kind(&self) -> ProfileKind {
        ProfileKind::Kinked
    }
    fn decay_rate(&self) -> f64 {
        1.0
    }
    fn kinks(&self, a: f64, b: f64) -> Vec<f64> {
        let first = (a / self.width).floor() as i64 + 1;
        let mut out = Vec::new();
        let mut k = first.max(1);
        loop {
            let t = k as f64 * self.width;
            if t >= b {
                break;
            }
            if t > a {
                out.push(t);
            }
            k += 1;
        }
        out
    }
    fn d1_one_sided(&self, r: f64, side: Side) -> f64 {
        let k = self.shell(r);
        let on_kink = k > 0 && (r - k as f64 * self.width).abs() <= 1e-12 * r;
        let shell = match (side, on_kink) {
            (Side::Inner, true) => k - 1,
            _ => k,
        };
        -(self.mean + self.contrast * Self::sign(shell)) / (r * r)
    }
    fn describe(&self) -> String {
        format!(
            "shells(mean={},contrast={},width={})",
            self.mean, self.contrast, self.width
        )
    }
}

/// `u(r)^exponent` for a positive profile `u`.
#[derive(Debug, Clone)]
pub struct PowerOf {
    pub inner: Arc<dyn RadialProfile>,
    pub exponent: f64,
}

impl RadialProfile for PowerOf {
    fn value(&self, r: f64) -> f64 {
        self.inner.value(r).powf(self.exponent)
    }
    fn d1(&self, r: f64) -> f64 {
        let u = self.inner.value(r);
        self.exponent * u.powf(self.exponent - 1.0) * self.inner.d1(r)
    }
    fn d2(&self, r: f64) -> f64 {
        let p = self.exponent;
        let u = self.inner.value(r);
        let du = self.inner.d1(r);
        p * (p - 1.0) * u.powf(p - 2.0) * du * du + p * u.powf(p - 1.0) * self.inner.d2(r)
    }
    fn kind(&self) -> ProfileKind {
        self.inner.kind()
    }
    fn decay_rate(&self) -> f64 {
        self.inner.decay_rate()
    }
    fn limit(&self) -> f64 {
        self.inner.limit().powf(self.exponent)
    }
    fn kinks(&self, a: f64, b: f64) -> Vec<f64> {
        self.inner.kinks(a, b)
    }
    fn d1_one_sided(&self, r: f64, side: Side) -> f64 {
        let u = self.inner.value(r);
        self.exponent * u.powf(self.exponent - 1.0) * self.inner.d1_one_sided(r, side)
    }
    fn describe(&self) -> String {
        format!("({})^{}", self.inner.describe(), self.exponent)
    }
}

/// `1 + a(r)`.
#[derive(Debug, Clone)]
pub struct OnePlus {
    pub inner: Arc<dyn RadialProfile>,
}

impl RadialProfile for OnePlus {
    fn value(&self, r: f64) -> f64 {
        1.0 + self.inner.value(r)
    }
    fn d1(&self, r: f64) -> f64 {
        self.inner.d1(r)
    }
    fn d2(&self, r: f64) -> f64 {
        self.inner.d2(r)
    }
    fn kind(&self) -> ProfileKind {
        self.inner.kind()
    }
    fn decay_rate(&self) -> f64 {
        self.inner.decay_rate()
    }
    fn limit(&self) -> f64 {
        1.0 + self.inner.limit()
    }
    fn kinks(&self, a: f64, b: f64) -> Vec<f64> {
        self.inner.kinks(a, b)
    }
    fn d1_one_sided(&self, r: f64, side: Side) -> f64 {
        self.inner.d1_one_sided(r, side)
    }
    fn describe(&self) -> String {
        format!("1+({})", self.inner.describe())
    }
}

/// Supremum and infimum of `p` over `[r0, ∞)` by dense logarithmic sampling
/// (including the limit value and the declared kinks).
pub fn sampled_range(p: &dyn RadialProfile, r0: f64) -> (f64, f64) {
    let mut lo = p.limit();
    let mut hi = p.limit();
    let samples = 4000;
    let r1 = r0 * 1e8;
    for i in 0..=samples {
        let r = r0 * (r1 / r0).powf(i as f64 / samples as f64);
        let v = p.value(r);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    for k in p.kinks(r0, r0 * 64.0) {
        let v = p.value(k);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
