//! Radial cutoff families `χ_α`: one inside `r <= α`, zero outside the
//! support annulus, with `sup |χ_α| + sup r |Dχ_α|` bounded independently
//! of `α`.

use crate::{util, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CutoffKind {
    /// `2 - r/α` on `[α, 2α]`.
    Ramp,
    /// Cubic smoothstep on `[α, 2α]`, C¹ at both ends.
    SmoothRamp,
    /// Linear on `[α, λα]`.
    WideRamp { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub kind: CutoffKind,
}

pub fn make_cutoff(kind: CutoffKind) -> Result<CutoffFamily> {
    if let CutoffKind::WideRamp { lambda } = kind {
        if !(lambda > 1.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wide ramp needs λ > 1, got {lambda}"
            )));
        }
    }
    Ok(CutoffFamily { kind })
}

impl CutoffFamily {
    pub fn ramp() -> Self {
        CutoffFamily {
            kind: CutoffKind::Ramp,
        }
    }

    pub fn smooth_ramp() -> Self {
        CutoffFamily {
            kind: CutoffKind::SmoothRamp,
        }
    }

    pub fn wide_ramp(lambda: f64) -> Result<Self> {
        make_cutoff(CutoffKind::WideRamp { lambda })
    }

    pub fn name(&self) -> String {
        match self.kind {
            CutoffKind::Ramp => "ramp".into(),
            CutoffKind::SmoothRamp => "smooth_ramp".into(),
            CutoffKind::WideRamp { lambda } => format!("wide_ramp({lambda})"),
        }
    }

    fn stretch(&self) -> f64 {
        match self.kind {
            CutoffKind::Ramp | CutoffKind::SmoothRamp => 2.0,
            CutoffKind::WideRamp { lambda } => lambda,
        }
    }

    /// Annulus `[α, bα]` outside which `Dχ_α` vanishes.
    pub fn support(&self, alpha: f64) -> (f64, f64) {
        (alpha, self.stretch() * alpha)
    }

    /// `χ_α` as a function of the radius.
    pub fn profile(&self, alpha: f64, r: f64) -> f64 {
        let (a, b) = self.support(alpha);
        if r <= a {
            return 1.0;
        }
        if r >= b {
            return 0.0;
        }
        let t = (r - a) / (b - a);
        match self.kind {
            CutoffKind::Ramp | CutoffKind::WideRamp { .. } => 1.0 - t,
            CutoffKind::SmoothRamp => 1.0 - t * t * (3.0 - 2.0 * t),
        }
    }

    /// `dχ_α/dr`.
    pub fn profile_d1(&self, alpha: f64, r: f64) -> f64 {
        let (a, b) = self.support(alpha);
        if r <= a || r >= b {
            return 0.0;
        }
        let t = (r - a) / (b - a);
        match self.kind {
            CutoffKind::Ramp | CutoffKind::WideRamp { .. } => -1.0 / (b - a),
            CutoffKind::SmoothRamp => -6.0 * t * (1.0 - t) / (b - a),
        }
    }

    pub fn eval(&self, alpha: f64, x: &[f64]) -> f64 {
        self.profile(alpha, util::norm(x))
    }

    pub fn grad(&self, alpha: f64, x: &[f64]) -> Vec<f64> {
        let r = util::norm(x);
        let d = self.profile_d1(alpha, r);
        x.iter().map(|v| d * v / r).collect()
    }

    /// `sup_x |χ_α| + sup_x r |Dχ_α|`, the weighted `W^{1,∞}_0` norm, which
    /// does not depend on `α`.
    pub fn uniform_bound(&self) -> f64 {
        match self.kind {
            // sup r/α over [α, 2α]
            CutoffKind::Ramp => 3.0,
            // max over t of 6 t (1-t)(1+t) is at t = 1/√3
            CutoffKind::SmoothRamp => 1.0 + 4.0 / 3.0_f64.sqrt(),
            CutoffKind::WideRamp { lambda } => 1.0 + lambda / (lambda - 1.0),
        }
    }

    /// `1 - χ_α`: a plateau function vanishing near the inner boundary and
    /// equal to one outside the support annulus.
    pub fn plateau(&self, alpha: f64, r: f64) -> f64 {
        1.0 - self.profile(alpha, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_midpoint() {
        let c = CutoffFamily::ramp();
        let x = [12.0, 0.0, 0.0];
        assert_eq!(c.eval(8.0, &x), 0.5);
        let g = c.grad(8.0, &x);
        assert!((g[0] + 0.125).abs() < 1e-16 && g[1] == 0.0);
    }

    #[test]
    fn plateau_and_exterior() {
        for c in [
            CutoffFamily::ramp(),
            CutoffFamily::smooth_ramp(),
            CutoffFamily::wide_ramp(3.0).unwrap(),
        ] {
            assert_eq!(c.eval(8.0, &[3.0, 4.0, 0.0]), 1.0);
            assert!(c.grad(8.0, &[3.0, 4.0, 0.0]).iter().all(|v| *v == 0.0));
            assert_eq!(c.eval(8.0, &[100.0, 0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn wide_ramp_rejects_small_lambda() {
        assert!(CutoffFamily::wide_ramp(1.0).is_err());
        assert!(CutoffFamily::wide_ramp(0.5).is_err());
    }

    fn sampled_bound(c: &CutoffFamily, alpha: f64) -> f64 {
        let (a, b) = c.support(alpha);
        let mut sup_r_grad: f64 = 0.0;
        for i in 0..=100_000 {
            let r = a + (b - a) * i as f64 / 100_000.0;
            sup_r_grad = sup_r_grad.max(r * c.profile_d1(alpha, r).abs());
        }
        1.0 + sup_r_grad
    }

    #[test]
    fn uniform_bound_matches_sampling() {
        for c in [
            CutoffFamily::ramp(),
            CutoffFamily::smooth_ramp(),
            CutoffFamily::wide_ramp(3.0).unwrap(),
        ] {
            for alpha in [1.0, 8.0, 1000.0] {
                let s = sampled_bound(&c, alpha);
                // interior samples approach the open-interval supremum from below
                assert!(s <= c.uniform_bound() + 1e-12);
                assert!(s > c.uniform_bound() - 1e-4, "{} {s}", c.name());
            }
        }
        assert_eq!(CutoffFamily::ramp().uniform_bound(), 3.0);
    }

    #[test]
    fn derivative_matches_differences() {
        let c = CutoffFamily::smooth_ramp();
        let h = 1e-6;
        for r in [9.0, 11.3, 15.5] {
            let fd = (c.profile(8.0, r + h) - c.profile(8.0, r - h)) / (2.0 * h);
            assert!((fd - c.profile_d1(8.0, r)).abs() < 1e-8);
        }
    }
}
