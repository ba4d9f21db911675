use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}:{line}: {key}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        key: String,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Core(#[from] ndtslam_core::Error),

    #[error("{failed} of {total} registrations failed (limit {limit:.0}%)")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
}

impl PipelineError {
    /// 1 usage or config, 2 data, 3 numerical failure threshold.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 1,
            Self::Io { .. } | Self::Format { .. } | Self::Data(_) => 2,
            Self::Core(e) => match e {
                ndtslam_core::Error::NumericalDivergence | ndtslam_core::Error::RankDeficientGraph => 3,
                _ => 2,
            },
            Self::TooManyFailures { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
