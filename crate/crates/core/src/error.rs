use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CdError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CdError {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("spec violation in `{field}`: {reason}")]
    Spec {
        field: String,
        reason: String,
        citation: Option<&'static str>,
    },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("truncation too small: {reason} (need dim >= {required_dim})")]
    Truncation { required_dim: usize, reason: String },

    #[error("numeric failure: {reason}")]
    Numeric {
        reason: String,
        condition: Option<f64>,
        diagonal: Option<usize>,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("frame degenerate at w = {w}: smallest singular value {sigma_min:e}")]
    Rank { w: Complex64, sigma_min: f64 },

    #[error("Sylvester system singular; best least-squares residual {residual:e}")]
    Solvability { residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl CdError {
    pub fn param(field: &'static str, reason: impl Into<String>) -> Self {
        CdError::Parameter {
            field,
            reason: reason.into(),
        }
    }

    pub fn numeric(reason: impl Into<String>) -> Self {
        CdError::Numeric {
            reason: reason.into(),
            condition: None,
            diagonal: None,
        }
    }

    pub fn ill_conditioned(reason: impl Into<String>, condition: f64) -> Self {
        CdError::Numeric {
            reason: reason.into(),
            condition: Some(condition),
            diagonal: None,
        }
    }
}
