use cdlab_core::CdError;
use serde_json::{json, Value};
use thiserror::Error;

/// Anything that ends a command with exit status 1.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message}")]
pub struct CliError {
    pub message: String,
    pub field: Option<String>,
    pub citation: Option<String>,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            field: None,
            citation: None,
        }
    }

    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            field: Some(field.into()),
            citation: None,
        }
    }

    /// `{"error": .., "field": .., "citation": ..}`, absent keys omitted.
    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.message });
        if let Some(f) = &self.field {
            v["field"] = json!(f);
        }
        if let Some(c) = &self.citation {
            v["citation"] = json!(c);
        }
        v
    }
}

impl From<CdError> for CliError {
    fn from(e: CdError) -> Self {
        let message = e.to_string();
        match e {
            CdError::Parameter { field, .. } => CliError::field(field, message),
            CdError::Spec { field, citation, .. } => CliError {
                message,
                field: Some(field),
                citation: citation.map(str::to_string),
            },
            CdError::Grid(_) => CliError::field("grid", message),
            _ => CliError::new(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(format!("io error: {e}"))
    }
}
