use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error kinds surfaced by the engine.
///
/// The CLI maps these onto its exit codes: configuration and usage problems
/// exit 2, numeric faults exit 3, I/O and parse failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced at {site}")]
    NonFinite { site: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("optimization diverged at step {step}: loss {loss:e} exceeded 1e3 x initial {initial:e} for {window} consecutive steps")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Bundle(#[from] BundleError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// True for faults caused by the numbers themselves rather than by inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::Diverged { .. }
        )
    }

    /// Prefix the fault site with the layer or tap that produced it.
    pub fn at(self, site: &str) -> Self {
        match self {
            Error::NonFinite { site: inner } => Error::NonFinite {
                site: format!("{site} ({inner})"),
            },
            other => other,
        }
    }
}

/// Failures while reading or validating a weight bundle.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("bad magic, expected SWGW")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u16),
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("truncated bundle at byte {0}")]
    Truncated(usize),
    #[error("malformed entry at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("duplicate parameter {0}")]
    Duplicate(String),
    #[error("missing parameter {0}")]
    Missing(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected parameter {0} not implied by the architecture")]
    Unexpected(String),
}
