use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("degenerate spectrum at (x={x}, y={y}): total intensity is zero")]
    DegenerateSpectrum { x: usize, y: usize },

    #[error("{count} pixel(s) not covered by any shard, first at {first:?}")]
    Coverage { count: usize, first: Vec<(usize, usize)> },

    #[error("energy window [{lo_ev}, {hi_ev}] eV does not overlap the axis [{axis_lo_ev}, {axis_hi_ev}] eV")]
    Window {
        lo_ev: f64,
        hi_ev: f64,
        axis_lo_ev: f64,
        axis_hi_ev: f64,
    },

    #[error("{what}: dimension mismatch (expected {expected}, found {found})")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined {0}")]
    Undefined(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: {component} loss is {value}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: &'static str,
        value: f64,
    },

    #[error(transparent)]
    Tensor(#[from] ndtensor::TensorError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dimension(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
