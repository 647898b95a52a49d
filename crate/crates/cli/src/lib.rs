//! Command implementations behind the `epifilter` binary.
//!
//! The binary is a thin argument parser; everything here is a library so
//! the integration and acceptance suites can drive commands directly.

pub mod commands;
pub mod config;

use std::fmt;

/// Errors carry their exit code: configuration problems exit 2, data
/// problems 3, numerical failures 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<epifilter::filter::FilterError> for CliError {
    fn from(e: epifilter::filter::FilterError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<epifilter::smooth::SmoothError> for CliError {
    fn from(e: epifilter::smooth::SmoothError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<epifilter::simulate::SimError> for CliError {
    fn from(e: epifilter::simulate::SimError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<epifilter::estimate::EstimateError> for CliError {
    fn from(e: epifilter::estimate::EstimateError) -> Self {
        match e {
            epifilter::estimate::EstimateError::InvalidConfig(msg) => CliError::Config(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<epifilter::smc::SmcError> for CliError {
    fn from(e: epifilter::smc::SmcError) -> Self {
        match e {
            epifilter::smc::SmcError::InvalidConfig(msg) => CliError::Config(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<epifilter::io::IoError> for CliError {
    fn from(e: epifilter::io::IoError) -> Self {
        match e {
            epifilter::io::IoError::Filter(inner) => CliError::Numeric(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<epifilter::types::TypeError> for CliError {
    fn from(e: epifilter::types::TypeError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
