//! Exit status contract: 0 success, 1 numerical failure (partial output may
//! exist), 2 input or usage error.

use std::fmt;

pub const SUCCESS: u8 = 0;
pub const NUMERICAL_FAILURE: u8 = 1;
pub const INPUT_ERROR: u8 = 2;

/// Bad flags, unreadable or inconsistent inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The computation ran but produced unusable numbers.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return INPUT_ERROR;
        }
        if cause.is::<NumericalFailure>() {
            return NUMERICAL_FAILURE;
        }
        if let Some(e) = cause.downcast_ref::<headfit_core::Error>() {
            return if e.is_input_error() {
                INPUT_ERROR
            } else {
                NUMERICAL_FAILURE
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return INPUT_ERROR;
        }
    }
    NUMERICAL_FAILURE
}
