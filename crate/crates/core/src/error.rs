use alloc::string::String;

/// Errors produced by the synthesized-learning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch at {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("stale forward cache: network was modified after the forward pass")]
    StaleCache,

    #[error("training diverged at epoch {epoch} (non-finite loss or parameters)")]
    Diverged { epoch: usize },

    #[error("edge model {edge} diverged at epoch {epoch}")]
    EdgeDiverged { edge: usize, epoch: usize },

    #[error("federated client {client} diverged in round {round}")]
    ClientDiverged { round: usize, client: usize },

    #[error("not enough rows for {what}: required {required}, available {available}")]
    Partition {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("dataset has no usable rows")]
    EmptyDataset,

    #[error("layer selection error: {0}")]
    Selection(String),

    #[error("synthesis error: {0}")]
    Synthesis(String),

    #[error("calibration error: {0}")]
    Calibration(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(context: impl Into<String>, expected: usize, found: usize) -> Error {
    Error::Shape {
        context: context.into(),
        expected,
        found,
    }
}
