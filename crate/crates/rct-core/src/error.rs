use thiserror::Error;

/// Errors produced by the estimation, training, and simulation APIs.
#[derive(Debug, Error)]
pub enum RctError {
    /// A precondition on an argument was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Terminal voltage below OCV: the Rint CV model yields a negative current.
    #[error("negative current: terminal voltage {v_terminal_v} V is below OCV {ocv_v} V")]
    NegativeCurrent { v_terminal_v: f64, ocv_v: f64 },

    /// Resistance cannot be computed from a zero-current measurement.
    #[error("resistance unmeasurable: charging current is zero")]
    UnmeasurableResistance,

    /// Commanded current is not positive; the accuracy sample must be skipped.
    #[error("no command current")]
    NoCommand,

    /// The CV integration hit a SOC where the cut-off voltage cannot drive
    /// a positive charging current.
    #[error("target unreachable: OCV at SOC {soc:.4} is at or above the cut-off voltage")]
    UnreachableTarget { soc: f64 },

    /// Trace extraction found no CV rows to train on.
    #[error("empty training set: traces contain no CV rows")]
    EmptyTrainingSet,

    /// A data file failed to parse; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RctError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        RctError::Domain(msg.into())
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        RctError::Parse {
            path: path.display().to_string(),
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RctError>;
