//! Experiment configuration: TOML file, then environment, then flags.
//!
//! ```toml
//! methods = ["weak", "adm_surface"]   # or ["all"]
//! cutoff = "smooth_ramp"              # ramp | smooth_ramp | wide_ramp
//! lambda = 3.0                        # wide_ramp only
//! schedule = "8:256:x2"               # start:stop:xRATIO, start:stop:+STEP, list, or one value
//!
//! [metric]
//! family = "schwarzschild"            # flat | schwarzschild | conformal | radial_power | shells | tensor | grid
//! n = 3
//! m = 1.0
//!
//! [quadrature]
//! angular_order = 12
//!
//! [tolerances]
//! scalar_decomposition = 1e-8
//!
//! [diffeo]
//! kind = "almost_identity"            # isometry | random_isometry | almost_identity
//! c = 0.05
//! tau_prime = 0.8
//!
//! [norms]
//! k = 1
//! p = "2"                             # or "inf"
//! tau = 0.5
//! ```

use adm_core::metric::MetricSpec;
use adm_core::quadrature::CutoffKind;
use adm_core::report::Method;
use adm_core::weighted::Exponent;
use adm_core::{CutoffFamily, QuadratureScheme};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MIN_SCALES: usize = adm_core::quadrature::limit::MIN_SCALES;

/// Flat metric parameters so file values and flags merge field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub family: Option<String>,
    pub n: Option<usize>,
    pub m: Option<f64>,
    pub amplitude: Option<f64>,
    pub power: Option<f64>,
    pub mean: Option<f64>,
    pub contrast: Option<f64>,
    pub width: Option<f64>,
    pub coeff: Option<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub inner_radius: Option<f64>,
    pub grid: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl MetricParams {
    pub fn overlay(&mut self, other: &MetricParams) {
        overlay!(
            self, other, family, n, m, amplitude, power, mean, contrast, width, coeff, center,
            inner_radius, grid
        );
    }

    pub fn to_spec(&self) -> Result<MetricSpec> {
        let family = self.family.as_deref().unwrap_or("schwarzschild");
        let n = || self.n.ok_or_else(|| anyhow!("metric family {family} needs n"));
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| anyhow!("metric family {family} needs {name}"))
        };
        let inner_radius = self.inner_radius;
        Ok(match family {
            "flat" => MetricSpec::Flat {
                n: n()?,
                inner_radius,
            },
            "schwarzschild" => MetricSpec::Schwarzschild {
                n: n()?,
                m: self.m.unwrap_or(1.0),
                inner_radius,
            },
            "conformal" => MetricSpec::Conformal {
                n: n()?,
                amplitude: need(self.amplitude, "amplitude")?,
                inner_radius,
            },
            "radial_power" => MetricSpec::RadialPower {
                n: n()?,
                amplitude: need(self.amplitude, "amplitude")?,
                power: need(self.power, "power")?,
                inner_radius,
            },
            "shells" => MetricSpec::Shells {
                mean: need(self.mean, "mean")?,
                contrast: need(self.contrast, "contrast")?,
                width: self.width.unwrap_or(1.0),
                inner_radius,
            },
            "tensor" => {
                let n = n()?;
                MetricSpec::Tensor {
                    n,
                    coeff: self
                        .coeff
                        .clone()
                        .ok_or_else(|| anyhow!("metric family tensor needs coeff"))?,
                    center: self.center.clone().unwrap_or_else(|| vec![0.0; n]),
                    power: self.power.unwrap_or(n as f64 - 2.0),
                    inner_radius,
                }
            }
            "grid" => {
                let path = self
                    .grid
                    .clone()
                    .ok_or_else(|| anyhow!("metric family grid needs a grid file"))?;
                if !path.exists() {
                    bail!("grid file {} does not exist", path.display());
                }
                MetricSpec::Grid { path }
            }
            other => bail!("unknown metric family {other:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub inverse_derivative_identity: f64,
    pub scalar_decomposition: f64,
    pub ricci_routes: f64,
    pub conformal_killing: f64,
    pub bianchi: f64,
    pub derivative_consistency: f64,
    pub symmetry: f64,
    pub volume_comparison: f64,
    pub holder_product: f64,
    /// `|Δm|` allowed for isometries, on top of the quadrature error.
    pub isometry_delta: f64,
    /// `|Δm|` allowed for almost-identity maps.
    pub almost_identity_delta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            inverse_derivative_identity: 1e-10,
            scalar_decomposition: 1e-8,
            ricci_routes: 1e-8,
            conformal_killing: 1e-6,
            bianchi: 1e-6,
            derivative_consistency: 1e-5,
            symmetry: 1e-14,
            volume_comparison: 1.0,
            holder_product: 1.0 + 1e-6,
            isometry_delta: 1e-6,
            almost_identity_delta: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffeoParams {
    pub kind: Option<String>,
    pub rotation: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub tau_prime: Option<f64>,
    pub count: Option<usize>,
    pub max_shift: Option<f64>,
}

impl DiffeoParams {
    pub fn overlay(&mut self, other: &DiffeoParams) {
        overlay!(self, other, kind, rotation, shift, c, tau_prime, count, max_shift);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormParams {
    pub k: Option<usize>,
    pub p: Option<String>,
    pub tau: Option<f64>,
    pub r_in: Option<f64>,
    pub r_out: Option<f64>,
    pub sup_samples: Option<usize>,
}

impl NormParams {
    pub fn overlay(&mut self, other: &NormParams) {
        overlay!(self, other, k, p, tau, r_in, r_out, sup_samples);
    }
}

pub fn parse_exponent(s: &str) -> Result<Exponent> {
    let t = s.trim();
    if matches!(t, "inf" | "infinity" | "∞") {
        return Ok(Exponent::Infinity);
    }
    let p: f64 = t.parse().with_context(|| format!("bad exponent {s:?}"))?;
    let e = Exponent::Finite(p);
    e.validate()?;
    Ok(e)
}

/// Everything read from the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub metric: MetricParams,
    pub methods: Option<Vec<String>>,
    pub cutoff: Option<String>,
    pub lambda: Option<f64>,
    pub schedule: Option<String>,
    pub points: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub quadrature: Option<QuadratureScheme>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub diffeo: DiffeoParams,
    #[serde(default)]
    pub norms: NormParams,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative grid paths are relative to the config file
        if let (Some(grid), Some(dir)) = (&cfg.metric.grid, path.parent()) {
            if grid.is_relative() {
                cfg.metric.grid = Some(dir.join(grid));
            }
        }
        Ok(cfg)
    }
}

/// Parses `start:stop:xRATIO`, `start:stop:+STEP`, a comma list, or a single
/// value. Fewer than four scales is an input error.
pub fn parse_schedule(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .with_context(|| format!("bad number {t:?} in schedule {s:?}"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let scales = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b) = (num(start)?, num(stop)?);
            let step = step.trim();
            let mut out = Vec::new();
            if let Some(r) = step.strip_prefix('x') {
                let r = num(r)?;
                if !(r > 1.0) {
                    bail!("schedule ratio must exceed 1, got {r}");
                }
                if !(a > 0.0) {
                    bail!("geometric schedule must start above 0");
                }
                out = adm_core::util::geometric_schedule(a, b, r);
            } else if let Some(d) = step.strip_prefix('+') {
                let d = num(d)?;
                if !(d > 0.0) {
                    bail!("schedule step must be positive, got {d}");
                }
                let mut k = 0.0;
                while a + k * d <= b * (1.0 + 1e-12) {
                    out.push(a + k * d);
                    k += 1.0;
                }
            } else {
                bail!("schedule step {step:?} must look like x2 or +8");
            }
            out
        }
        [single] => single
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(num)
            .collect::<Result<Vec<f64>>>()?,
        _ => bail!("cannot parse schedule {s:?}"),
    };
    if scales.len() < MIN_SCALES {
        bail!(
            "≥{MIN_SCALES} scales required, schedule {s:?} has {}",
            scales.len()
        );
    }
    if scales.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        bail!("schedule {s:?} must be positive");
    }
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        bail!("schedule {s:?} must be strictly increasing");
    }
    Ok(scales)
}

pub fn parse_methods(list: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for item in list.iter().flat_map(|s| s.split(',')) {
        let item = item.trim();
        if item == "all" {
            out.extend(Method::all());
        } else if let Some(m) = Method::parse(item) {
            out.push(m);
        } else {
            bail!("unknown method {item:?}");
        }
    }
    out.dedup();
    if out.is_empty() {
        bail!("at least one method is required");
    }
    Ok(out)
}

pub fn parse_cutoff(name: &str, lambda: Option<f64>) -> Result<CutoffFamily> {
    let kind = match name {
        "ramp" => CutoffKind::Ramp,
        "smooth_ramp" | "smooth" => CutoffKind::SmoothRamp,
        "wide_ramp" | "wide" => CutoffKind::WideRamp {
            lambda: lambda.unwrap_or(3.0),
        },
        other => bail!("unknown cutoff {other:?}"),
    };
    Ok(adm_core::quadrature::cutoff::make_cutoff(kind)?)
}

/// The resolved configuration; its JSON form is what the digest covers.
/// Worker count and output directory are deliberately excluded so reports
/// are identical across them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: String,
    pub metric: MetricSpec,
    pub methods: Vec<Method>,
    pub cutoff: CutoffKind,
    pub schedule: Vec<f64>,
    pub points: usize,
    pub quadrature: QuadratureScheme,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffeo: Option<DiffeoParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormParams>,
}

impl Resolved {
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cutoff_family(&self) -> CutoffFamily {
        CutoffFamily { kind: self.cutoff }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(
            parse_schedule("8:256:x2").unwrap(),
            vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0]
        );
        assert_eq!(parse_schedule("4:16:+4").unwrap(), vec![4.0, 8.0, 12.0, 16.0]);
        assert_eq!(parse_schedule("1,2,3,5").unwrap(), vec![1.0, 2.0, 3.0, 5.0]);
        let e = parse_schedule("8").unwrap_err().to_string();
        assert!(e.contains("≥4 scales required"), "{e}");
        assert!(parse_schedule("1,3,2,5").is_err());
        assert!(parse_schedule("8:256:y2").is_err());
    }

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods(&["all".into()]).unwrap().len(), 4);
        assert_eq!(
            parse_methods(&["weak,ricci_weak".into()]).unwrap(),
            vec![Method::Weak, Method::RicciWeak]
        );
        assert!(parse_methods(&["bogus".into()]).is_err());
    }

    #[test]
    fn overlay_prefers_later_values() {
        let mut a = MetricParams {
            family: Some("schwarzschild".into()),
            n: Some(3),
            m: Some(1.0),
            ..Default::default()
        };
        a.overlay(&MetricParams {
            m: Some(2.0),
            ..Default::default()
        });
        assert_eq!(a.m, Some(2.0));
        assert_eq!(a.n, Some(3));
    }

    #[test]
    fn file_config_parses() {
        let cfg: FileConfig = toml::from_str(
            r#"
            methods = ["all"]
            schedule = "8:64:x2"
            [metric]
            family = "conformal"
            n = 4
            amplitude = 0.2
            [quadrature]
            angular_order = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.quadrature.unwrap().angular_order, 10);
        let spec = cfg.metric.to_spec().unwrap();
        assert_eq!(spec.exact_mass(), Some(0.4));
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }

    #[test]
    fn exponents() {
        assert_eq!(parse_exponent("inf").unwrap(), Exponent::Infinity);
        assert_eq!(parse_exponent("2").unwrap(), Exponent::Finite(2.0));
        assert!(parse_exponent("0.5").is_err());
    }
}
