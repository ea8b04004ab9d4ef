use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpasError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
    #[error("metric violation: {0}")]
    Metric(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("unsupported variant: {0}")]
    Unsupported(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),
    #[error("premise violated: {0}")]
    Premise(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
}

impl EpasError {
    /// Short machine-readable tag used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            EpasError::Contract(_) => "contract",
            EpasError::DegenerateMetric(_) => "degenerate-metric",
            EpasError::Metric(_) => "metric",
            EpasError::InvalidInstance(_) => "invalid-instance",
            EpasError::Unsupported(_) => "unsupported-variant",
            EpasError::ResourceLimit(_) => "resource-limit",
            EpasError::DegenerateSampling(_) => "degenerate-sampling",
            EpasError::Premise(_) => "premise",
            EpasError::Infeasible(_) => "infeasible",
            EpasError::Schema { .. } => "schema",
        }
    }
}

pub type Result<T> = std::result::Result<T, EpasError>;
