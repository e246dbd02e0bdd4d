use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration key is missing, malformed or out of range.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// Input data violates a structural contract (frame order, keypoint arity, box geometry).
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("refusing to overwrite existing {} (pass --force or set HANDFORGE_FORCE=1)", .0.display())]
    WouldOverwrite(PathBuf),

    /// An external model adapter exited unsuccessfully or produced unusable output.
    #[error("adapter `{command}` failed{}: {diagnostics}", exit_code.map(|c| format!(" with exit code {c}")).unwrap_or_default())]
    Adapter {
        command: String,
        exit_code: Option<i32>,
        diagnostics: String,
    },

    #[error("scene is infeasible: {0}")]
    InfeasibleScene(String),

    #[error("PCK is undefined: ground truth has no valid keypoints")]
    UndefinedPck,
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
