use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("filter design error: {0}")]
    Design(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("channel {channel} is degenerate (max == min == {value})")]
    DegenerateChannel { channel: usize, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("batch normalization needs more than one sample per batch in train mode")]
    DegenerateBatch,

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged in {stage} stage at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("R² is undefined: target variance is zero")]
    UndefinedMetric,

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: bad `{field}` ({detail})")]
    CorruptCheckpoint { field: &'static str, detail: String },

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("failed to load {}{}: {detail}", path.display(), line_suffix(*line))]
    Load {
        path: PathBuf,
        /// 1-based line number in the file, when the problem is on one line.
        line: Option<u64>,
        detail: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_suffix(line: Option<u64>) -> String {
    line.map(|l| format!(" line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (CLI exit code 2).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Config(_) | Error::Load { .. } | Error::InsufficientData(_)
        )
    }
}
