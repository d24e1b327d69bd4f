use thiserror::Error;

pub type Result<T> = std::result::Result<T, BespokeError>;

#[derive(Debug, Error)]
pub enum BespokeError {
    #[error("field is singular at t = {t}")]
    SingularTime { t: f64 },

    #[error("value {value} is outside the domain ({lo}, {hi})")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("time {t} is outside the trajectory span [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("solution diverged at step {step} (norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("adaptive solver exceeded {max_steps} steps at t = {t}")]
    MaxSteps { max_steps: usize, t: f64 },

    #[error("step size underflow (h = {h:e}) at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite loss while probing coordinate {coordinate}")]
    ProbeFailure { coordinate: usize },

    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<BespokeError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BespokeError {
    /// Failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        if let BespokeError::Sample { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            BespokeError::SingularTime { .. }
                | BespokeError::Divergence { .. }
                | BespokeError::MaxSteps { .. }
                | BespokeError::StepUnderflow { .. }
                | BespokeError::DegenerateGrid(_)
                | BespokeError::ProbeFailure { .. }
        )
    }
}

impl From<serde_json::Error> for BespokeError {
    fn from(e: serde_json::Error) -> Self {
        BespokeError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
