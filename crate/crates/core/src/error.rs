use thiserror::Error;

use crate::temper::TemperRecord;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("series too short: need at least {required} observations, got {actual}")]
    TooShort { required: usize, actual: usize },
    #[error("prior sampling failed: {0}")]
    PriorSampling(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    /// Every particle weight was zero at time index `t` (0-based).
    #[error("particle filter degenerate at t = {t}: all weights are zero")]
    Degenerate { t: usize },
    #[error("backward simulation degenerate at t = {t}: all backward weights are zero")]
    BackwardDegenerate { t: usize },
    #[error("invalid filter input: {0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("particle cloud degenerate at stage {stage}: every weight is zero")]
    DegenerateCloud { stage: usize, record: Box<TemperRecord> },
    #[error("stage guard exceeded after {stages} stages (a = {temperature})")]
    StageGuard { stages: usize, temperature: f64, record: Box<TemperRecord> },
    #[error("temperature increments collapsed below {floor:e} for {count} consecutive stages at stage {stage}")]
    IncrementCollapse { stage: usize, floor: f64, count: usize, record: Box<TemperRecord> },
    #[error("Markov move failed at stage {stage}: {source}")]
    Move { stage: usize, source: FilterError, record: Box<TemperRecord> },
    #[error("tempering record incomplete: ladder ends at {last}")]
    IncompleteRecord { last: f64 },
}

impl EngineError {
    /// The partial record carried by an aborted run, if any.
    pub fn partial_record(&self) -> Option<&TemperRecord> {
        match self {
            EngineError::DegenerateCloud { record, .. }
            | EngineError::StageGuard { record, .. }
            | EngineError::IncrementCollapse { record, .. }
            | EngineError::Move { record, .. } => Some(record),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("too few rows: need at least {required}, got {actual}")]
    TooShort { required: usize, actual: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
}
