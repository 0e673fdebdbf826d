//! Per-scale mass sequences with their extrapolated limit.

use crate::quadrature::limit::{extrapolate_limit_with_noise, FitMethod, LimitFit};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Flux of `div e - d tr e` through large spheres.
    AdmSurface,
    /// Bulk integral against the gradient of a cutoff.
    Weak,
    /// Flux of the Einstein tensor contracted with the radial field.
    RicciSurface,
    /// Bulk Einstein-tensor integral against the gradient of a cutoff.
    RicciWeak,
    /// Weak mass recovered from the distributional scalar curvature
    /// identity with a plateau test function.
    CutoffIdentity,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::AdmSurface => "adm_surface",
            Method::Weak => "weak",
            Method::RicciSurface => "ricci_surface",
            Method::RicciWeak => "ricci_weak",
            Method::CutoffIdentity => "cutoff_identity",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "adm_surface" | "adm" | "surface" => Method::AdmSurface,
            "weak" => Method::Weak,
            "ricci_surface" | "ricci" => Method::RicciSurface,
            "ricci_weak" => Method::RicciWeak,
            "cutoff_identity" | "identity" => Method::CutoffIdentity,
            _ => return None,
        })
    }

    pub fn all() -> [Method; 4] {
        [
            Method::AdmSurface,
            Method::Weak,
            Method::RicciSurface,
            Method::RicciWeak,
        ]
    }

    pub fn uses_cutoff(&self) -> bool {
        matches!(
            self,
            Method::Weak | Method::RicciWeak | Method::CutoffIdentity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub method: Method,
    pub dim: usize,
    pub metric_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<String>,
    pub normalization: f64,
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
    pub quad_errors: Vec<f64>,
    pub limit: f64,
    pub limit_stderr: f64,
    pub q: Option<f64>,
    pub fit_c: f64,
    pub fit_method: FitMethod,
    pub flags: Vec<String>,
}

impl MassReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_sequence(
        method: Method,
        dim: usize,
        metric_id: String,
        cutoff: Option<String>,
        normalization: f64,
        scales: Vec<f64>,
        values: Vec<f64>,
        quad_errors: Vec<f64>,
        mut flags: Vec<String>,
    ) -> Result<Self> {
        let fit: LimitFit = extrapolate_limit_with_noise(&scales, &values, &quad_errors)?;
        flags.extend(fit.flags.iter().cloned());
        Ok(MassReport {
            method,
            dim,
            metric_id,
            cutoff,
            normalization,
            scales,
            values,
            quad_errors,
            limit: fit.limit,
            limit_stderr: fit.stderr,
            q: fit.q,
            fit_c: fit.c,
            fit_method: fit.method,
            flags,
        })
    }

    pub fn converged(&self) -> bool {
        self.fit_method != FitMethod::Unconverged
    }

    /// Largest quadrature error over the schedule.
    pub fn max_quad_error(&self) -> f64 {
        self.quad_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per scale.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric_id,scale,value,quad_error\n");
        for ((s, v), e) in self.scales.iter().zip(&self.values).zip(&self.quad_errors) {
            writeln!(
                out,
                "{},\"{}\",{s:.17e},{v:.17e},{e:.17e}",
                self.method.name(),
                self.metric_id.replace('"', "'")
            )
            .expect("write to string");
        }
        out
    }
}
