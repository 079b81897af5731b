use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sls_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    /// Some comparison arms failed; the partial report was still written.
    #[error("{0} arm(s) failed: {1}")]
    ArmsFailed(usize, String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// 1 for problems with the user's inputs, 2 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        use sls_core::Error as C;
        match self {
            Error::Core(C::Diverged { .. } | C::EdgeDiverged { .. } | C::ClientDiverged { .. } | C::StaleCache) => 2,
            Error::ArmsFailed(..) => 2,
            _ => 1,
        }
    }
}
