//! Serializable descriptions of the built-in metric families.

use super::profile::{PowerLaw, ShellProfile};
use super::{
    conformally_flat, flat, lift_grid, radial_perturbation, schwarzschild_isotropic,
    tensor_perturbation, GridMetric, MetricField,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Flat {
        n: usize,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    Schwarzschild {
        n: usize,
        m: f64,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    /// `u = 1 + A r^{2-n}`, `g = u^{4/(n-2)} δ`.
    Conformal {
        n: usize,
        amplitude: f64,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    /// `g = (1 + A r^{-power}) δ`.
    RadialPower {
        n: usize,
        amplitude: f64,
        power: f64,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    /// Three-dimensional kinked shells, see [`ShellProfile`].
    Shells {
        mean: f64,
        contrast: f64,
        width: f64,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    /// `g = δ + C |x - x₀|^{-power}`.
    Tensor {
        n: usize,
        coeff: Vec<f64>,
        center: Vec<f64>,
        power: f64,
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    Grid { path: PathBuf },
}

impl MetricSpec {
    pub fn build(&self) -> Result<Arc<dyn MetricField>> {
        Ok(match self {
            MetricSpec::Flat { n, inner_radius } => {
                let f = flat(*n)?;
                Arc::new(match inner_radius {
                    Some(r) => f.with_inner_radius(*r)?,
                    None => f,
                })
            }
            MetricSpec::Schwarzschild { n, m, inner_radius } => {
                let horizon = (m / 2.0).powf(1.0 / (*n as f64 - 2.0));
                let r = inner_radius.unwrap_or((2.0 * horizon).max(1.0));
                Arc::new(schwarzschild_isotropic(*n, *m, r)?)
            }
            MetricSpec::Conformal {
                n,
                amplitude,
                inner_radius,
            } => {
                let u = Arc::new(PowerLaw::new(1.0, *amplitude, *n as f64 - 2.0));
                Arc::new(conformally_flat(*n, u, inner_radius.unwrap_or(1.0))?)
            }
            MetricSpec::RadialPower {
                n,
                amplitude,
                power,
                inner_radius,
            } => {
                let a = Arc::new(PowerLaw::new(0.0, *amplitude, *power));
                Arc::new(radial_perturbation(*n, a, inner_radius.unwrap_or(1.0))?)
            }
            MetricSpec::Shells {
                mean,
                contrast,
                width,
                inner_radius,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidParameter("shell width must be positive".into()));
                }
                let a = Arc::new(ShellProfile::new(*mean, *contrast, *width));
                Arc::new(radial_perturbation(3, a, inner_radius.unwrap_or(1.0))?)
            }
            MetricSpec::Tensor {
                n,
                coeff,
                center,
                power,
                inner_radius,
            } => Arc::new(tensor_perturbation(
                *n,
                coeff.clone(),
                center.clone(),
                *power,
                inner_radius.unwrap_or(2.0),
            )?),
            MetricSpec::Grid { path } => {
                if !path.exists() {
                    return Err(Error::Io(format!("grid file {} not found", path.display())));
                }
                Arc::new(lift_grid(GridMetric::read_from(path)?)?)
            }
        })
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            MetricSpec::Flat { n, .. }
            | MetricSpec::Schwarzschild { n, .. }
            | MetricSpec::Conformal { n, .. }
            | MetricSpec::RadialPower { n, .. }
            | MetricSpec::Tensor { n, .. } => Some(*n),
            MetricSpec::Shells { .. } => Some(3),
            MetricSpec::Grid { .. } => None,
        }
    }

    /// Closed-form mass where one is known.
    pub fn exact_mass(&self) -> Option<f64> {
        match self {
            MetricSpec::Flat { .. } => Some(0.0),
            MetricSpec::Schwarzschild { m, .. } => Some(*m),
            MetricSpec::Conformal { amplitude, .. } => Some(2.0 * amplitude),
            MetricSpec::RadialPower {
                n,
                amplitude,
                power,
                ..
            } => {
                let p = *n as f64 - 2.0;
                if (*power - p).abs() < 1e-15 {
                    Some(amplitude * p / 2.0)
                } else if *power > p {
                    Some(0.0)
                } else {
                    None
                }
            }
            MetricSpec::Shells { mean, .. } => Some(mean / 2.0),
            MetricSpec::Tensor { n, coeff, power, .. } => {
                let p = *n as f64 - 2.0;
                let tr: f64 = (0..*n).map(|i| coeff[i * n + i]).sum();
                if (*power - p).abs() < 1e-15 {
                    Some(p * tr / (2.0 * *n as f64))
                } else if *power > p {
                    Some(0.0)
                } else {
                    None
                }
            }
            MetricSpec::Grid { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schwarzschild_sample_value() {
        let g = MetricSpec::Schwarzschild {
            n: 3,
            m: 1.0,
            inner_radius: None,
        }
        .build()
        .unwrap();
        assert_eq!(g.eval(&[2.0, 0.0, 0.0]).unwrap()[0], 625.0 / 256.0);
    }

    #[test]
    fn conformal_matches_schwarzschild_with_twice_the_amplitude() {
        let a = MetricSpec::Conformal {
            n: 4,
            amplitude: 0.2,
            inner_radius: None,
        }
        .build()
        .unwrap();
        let b = schwarzschild_isotropic(4, 0.4, 1.0).unwrap();
        let x = [1.5, -2.0, 0.5, 1.0];
        let (ja, jb) = (a.jet(&x, 2).unwrap(), b.jet(&x, 2).unwrap());
        for (p, q) in ja.ddg.iter().zip(&jb.ddg) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_round_trips_through_toml_shaped_json() {
        let s = MetricSpec::Shells {
            mean: 0.2,
            contrast: 0.1,
            width: 1.0,
            inner_radius: Some(4.0),
        };
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"family\":\"shells\""));
        let back: MetricSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.exact_mass(), Some(0.1));
    }

    #[test]
    fn missing_grid_file_is_an_error() {
        let s = MetricSpec::Grid {
            path: "/nonexistent/grid.txt".into(),
        };
        assert!(matches!(s.build(), Err(Error::Io(_))));
    }
}
