// SPDX-License-Identifier: MIT OR Apache-2.0

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source:#}")]
    Stage { stage: &'static str, source: anyhow::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stage { .. } => 3,
        }
    }
}

/// Attach a stage name to a failure.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError>;
}

impl<T, E: Into<anyhow::Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|e| RunError::Stage { stage, source: e.into() })
    }
}
