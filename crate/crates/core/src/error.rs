use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed feeder file at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid network model: {0}")]
    Model(String),

    #[error("duplicate bus name `{0}`")]
    DuplicateBus(String),

    #[error("bus `{0}` declares no phases")]
    EmptyPhaseSet(String),

    #[error("node `{0}` is not declared in the network")]
    UnknownNode(String),

    #[error("unknown regulator `{0}`")]
    UnknownRegulator(String),

    #[error(
        "primitive matrix of `{element}` is {actual}x{actual}, expected {expected}x{expected}"
    )]
    DimensionMismatch {
        element: String,
        expected: usize,
        actual: usize,
    },

    #[error("tap {tap} outside [{min}, {max}]")]
    TapOutOfBounds { tap: f64, min: i32, max: i32 },

    #[error("delta load at bus `{bus}` has collapsed phase-pair voltage on {pair}")]
    SingularDeltaTransform { bus: String, pair: &'static str },

    #[error(
        "power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} p.u.)"
    )]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular {what} matrix{}", condition.map(|c| format!(" (condition estimate {c:.3e})")).unwrap_or_default())]
    SingularSystem {
        what: &'static str,
        condition: Option<f64>,
    },

    #[error("dimension mismatch comparing {what}: {left:?} vs {right:?}")]
    ShapeMismatch {
        what: String,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot write output: {0}")]
    Output(String),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::SingularDeltaTransform { .. }
                | Error::NonConvergence { .. }
                | Error::SingularSystem { .. }
        )
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            1
        } else {
            2
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
