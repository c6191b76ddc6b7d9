use std::path::PathBuf;

/// Errors produced by the guidance toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("look angle undefined at target")]
    LookAngleUndefined,

    #[error("step crosses target (r = {range}, speed*dt = {reach})")]
    StepCrossesTarget { range: f64, reach: f64 },

    #[error("degenerate costate: alpha = {0} must be positive")]
    DegenerateCostate(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("unsupported model version {0}")]
    UnsupportedModelVersion(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("target unreachable by t_go: range {range} exceeds speed*t_go = {reach}")]
    TargetUnreachable { range: f64, reach: f64 },

    #[error("no admissible extremal found (best residual {residual:.3e})")]
    NoAdmissibleExtremal { residual: f64 },

    #[error("guidance failed at t = {time:.4} s: {source}")]
    Guidance {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("network guidance selected but no model supplied")]
    MissingModel,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
