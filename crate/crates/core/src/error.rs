use std::time::Duration;

use thiserror::Error;

/// Errors raised by device drivers, simulators and campaign procedures.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// A value failed a structural check (non-finite coordinate, zero pitch, bad mode).
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric parameter is outside the range the device accepts.
    #[error("{what} = {value} is out of range [{min}, {max}]")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// A stage target lies outside the soft limits. No motion was issued.
    #[error("axis {axis} target {value} mm exceeds travel [0, {max}] mm")]
    Limit { axis: char, value: f64, max: f64 },

    /// The requested operation is not legal in the device's current state.
    #[error("{device}: cannot {op} while {state}")]
    State {
        device: &'static str,
        op: &'static str,
        state: String,
    },

    /// The safety interlock refused the operation.
    #[error("interlock: {0}")]
    Safety(String),

    /// A line from a device could not be parsed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A device did not answer in time, even after one retry.
    #[error("timed out after {timeout:?} waiting for {waiting_for}")]
    Timeout {
        waiting_for: String,
        timeout: Duration,
    },

    /// A device answered with an error or an unexpected response.
    #[error("device {device} reported: {message}")]
    Device {
        device: &'static str,
        message: String,
    },

    /// A success rate was requested for zero attempts.
    #[error("success rate is undefined for zero attempts")]
    UndefinedRate,

    /// A required calibration, campaign or file is missing.
    #[error("not found: {0}")]
    NotFound(String),

    /// Travel was exhausted without finding a surface.
    #[error("surface not found: {0}")]
    SurfaceNotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn device(device: &'static str, msg: impl Into<String>) -> Self {
        Error::Device {
            device,
            message: msg.into(),
        }
    }

    pub(crate) fn range(what: &'static str, value: f64, min: f64, max: f64) -> Self {
        Error::Range {
            what,
            value,
            min,
            max,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
