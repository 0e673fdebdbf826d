//! Numerical ADM mass of asymptotically Euclidean metrics.
//!
//! The crate works on the exterior chart `{|x| >= R}` of an asymptotically
//! Euclidean end, with the flat metric `δ` as background. It provides
//!
//! - [`metric`]: analytic metric families, low-regularity radial profiles and
//!   sampled grid metrics,
//! - [`curvature`]: pointwise curvature algebra (`e`, `f`, `Γ`, Ricci, scalar
//!   and Einstein tensors together with the first-order decompositions),
//! - [`quadrature`]: sphere and annulus rules, cutoff families and limit
//!   extrapolation,
//! - [`weighted`]: weighted Lebesgue/Sobolev norm estimation,
//! - [`mass`]: the classical, weak and Ricci-type mass functionals,
//! - [`transforms`]: isometries and almost-identity changes of chart.

pub mod curvature;
pub mod linalg;
pub mod mass;
pub mod metric;
pub mod quadrature;
pub mod report;
pub mod transforms;
pub mod util;
pub mod weighted;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be at least 3, got {0}")]
    Dimension(usize),
    #[error("point {point:?} is outside the domain ({reason})")]
    OutsideDomain { point: Vec<f64>, reason: String },
    #[error("metric is not positive definite or is singular at {0:?}")]
    Singular(Vec<f64>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("{needed} derivative order(s) required but the field provides {available}")]
    MissingDerivatives { needed: usize, available: usize },
    #[error("at least {needed} scales required, got {got}")]
    TooFewScales { needed: usize, got: usize },
    #[error("inverse map failed: {0}")]
    Inversion(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub use metric::{MetricField, MetricJet, Regularity};
pub use quadrature::{CutoffFamily, CutoffKind, LimitFit, QuadratureScheme};
pub use report::MassReport;
