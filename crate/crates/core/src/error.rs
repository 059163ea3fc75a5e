use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("kernel of length {kernel} is longer than the signal ({signal})")]
    KernelTooLong { kernel: usize, signal: usize },

    #[error("pooling window {window} exceeds time extent {time}; output would be empty")]
    EmptyOutput { window: usize, time: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible configuration at module {module}: {detail}")]
    Infeasible { module: usize, detail: String },

    #[error("module {module}: {source}")]
    Module {
        module: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gradient oracle failed at {param}[{index}]: objective is not finite")]
    Oracle { param: String, index: usize },

    #[error("non-finite gradient in parameter {0}")]
    Divergence(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr = {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("ingestion error in {file} (trial {trial}): {detail}", file = .file.display())]
    Ingestion {
        file: PathBuf,
        trial: usize,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("filter design error: {0}")]
    Filter(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("search space degenerate: {0} consecutive infeasible draws")]
    DegenerateSpace(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence(_) | Error::NonFiniteLoss { .. } | Error::Oracle { .. } => true,
            Error::Module { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
