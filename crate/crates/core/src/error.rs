use thiserror::Error;

/// Errors raised by the measurement, simulation and ingestion routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QfmError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("non-uniform sampling at line {line}: step {step:e} s vs median {median:e} s")]
    NonUniformSampling { line: usize, step: f64, median: f64 },

    #[error("empty waveform: no samples after the header")]
    EmptyWaveform,

    #[error("waveform too short: {rows} rows, need at least {needed}")]
    TooShort { rows: usize, needed: usize },

    #[error("too few peaks: found {found}, need at least {needed}")]
    TooFewPeaks { found: usize, needed: usize },

    #[error(
        "insufficient record length: threshold {threshold:.6} V not reached; \
         about {missing_duration:.3e} s more record needed"
    )]
    InsufficientRecord {
        threshold: f64,
        missing_duration: f64,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for QfmError {
    fn from(e: std::io::Error) -> Self {
        QfmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QfmError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> QfmError {
    QfmError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
