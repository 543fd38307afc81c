use thiserror::Error;

/// Failures of a CLI command. Each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: vlcd_core::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Run(_) => 1,
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Verify(_) => 4,
            CliError::Stage { .. } => 1,
        }
    }

    pub fn stage(stage: &str) -> impl FnOnce(vlcd_core::Error) -> CliError + '_ {
        move |source| CliError::Stage {
            stage: stage.to_string(),
            source,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<vlcd_core::Error> for CliError {
    fn from(e: vlcd_core::Error) -> Self {
        match e {
            vlcd_core::Error::Io(_) | vlcd_core::Error::Json(_) | vlcd_core::Error::DatasetFormat(_) => {
                CliError::Io(e.to_string())
            }
            vlcd_core::Error::Checkpoint(_) => CliError::Io(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
