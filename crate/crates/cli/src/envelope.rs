use converge_core::{Error, ErrorClass, ENGINE_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Version of the response payloads; bumped on any breaking change.
pub const API_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

/// Exactly one of `data` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
    pub engine_version: String,
    pub schema_version: u32,
}

impl ApiEnvelope {
    pub fn ok(data: Value) -> Self {
        ApiEnvelope {
            status: Status::Ok,
            data: Some(data),
            error: None,
            engine_version: ENGINE_VERSION.to_string(),
            schema_version: API_SCHEMA_VERSION,
        }
    }

    pub fn err(code: impl Into<String>, message: impl Into<String>, details: Value) -> Self {
        ApiEnvelope {
            status: Status::Error,
            data: None,
            error: Some(ApiError {
                code: code.into(),
                message: message.into(),
                details,
            }),
            engine_version: ENGINE_VERSION.to_string(),
            schema_version: API_SCHEMA_VERSION,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        let class = match e.class() {
            ErrorClass::Invalid => "invalid",
            ErrorClass::Conflict => "conflict",
            ErrorClass::NotFound => "not_found",
            ErrorClass::Integrity => "integrity",
            ErrorClass::Operational => "operational",
        };
        Self::err(e.code(), e.to_string(), serde_json::json!({ "class": class }))
    }

    /// Structural check applied to every response in the test suite.
    pub fn is_well_formed(&self) -> bool {
        let shape = match self.status {
            Status::Ok => self.data.is_some() && self.error.is_none(),
            Status::Error => self.data.is_none() && self.error.as_ref().is_some_and(|e| !e.code.is_empty()),
        };
        shape && self.schema_version == API_SCHEMA_VERSION && self.engine_version == ENGINE_VERSION
    }
}
