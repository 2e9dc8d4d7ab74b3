use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(ValidationReport),

    #[error("event {event} lists line {line} more than once")]
    DuplicatePair { event: usize, line: usize },

    #[error("event {event} references line index {line}, but only {n_lines} lines exist")]
    LineOutOfRange {
        event: usize,
        line: usize,
        n_lines: usize,
    },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("module `{module}` is not assigned to any stream")]
    UnassignedModule { module: String },

    #[error("unit {unit} assigned to stream {stream}, but the scheme has {n_streams} streams")]
    StreamOutOfRange {
        unit: usize,
        stream: usize,
        n_streams: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("all {0} restarts produced a non-finite loss")]
    AllRestartsFailed(usize),

    #[error("regression needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("regression predictor is constant")]
    ConstantPredictor,

    #[error(
        "measurement {scheme_id}/{stream_id}: time {measured_time} s is below the initialization time {t_initial} s"
    )]
    NegativeCorrectedTime {
        scheme_id: String,
        stream_id: String,
        measured_time: f64,
        t_initial: f64,
    },
}
