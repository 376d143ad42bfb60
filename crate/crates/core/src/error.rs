use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("longitudinal speed {vx} m/s is below the model's singular-speed guard")]
    SingularSpeed { vx: f64 },

    #[error("plant state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("curvature {curvature} 1/m exceeds the bound of {bound} 1/m")]
    CurvatureBoundExceeded { curvature: f64, bound: f64 },

    #[error("invalid road map: {0}")]
    InvalidMap(String),

    #[error("station {s} m is outside [0, {length}] m")]
    OutOfRange { s: f64, length: f64 },

    #[error("iteration did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("closed loop is not Schur stable (spectral radius {spectral_radius})")]
    UnstableClosedLoop { spectral_radius: f64 },

    #[error("matrix is not Schur (spectral radius {spectral_radius})")]
    NotSchur { spectral_radius: f64 },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset too small: {len} samples, need at least {required}")]
    DatasetTooSmall { len: usize, required: usize },

    #[error("feature {index} has zero spread and cannot be standardized")]
    DegenerateFeature { index: usize },

    #[error("misaligned log: {0}")]
    MisalignedLog(String),

    #[error("no samples left after outlier filtering")]
    EmptyAfterFiltering,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty series")]
    Empty,

    #[error("simulation diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("missing asset: {0}")]
    MissingAsset(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
