use thiserror::Error;

pub type Result<T> = std::result::Result<T, FosrError>;

/// Errors raised by the estimation and testing pipeline.
#[derive(Debug, Error)]
pub enum FosrError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data too sparse: {0}")]
    TooSparse(String),

    #[error("degenerate null distribution: {0}")]
    DegenerateNull(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FosrError>,
    },
}

impl FosrError {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        FosrError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage annotations stripped.
    pub fn root(&self) -> &FosrError {
        match self {
            FosrError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure is attributable to user input rather than a bug
    /// or numerical breakdown.
    pub fn is_user_error(&self) -> bool {
        !matches!(self.root(), FosrError::Numerical(_) | FosrError::Io(_))
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
