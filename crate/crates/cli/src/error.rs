use std::path::Path;

use camsynth::analysis::StageError;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    Io { path: String, message: String },
    Config(String),
    /// Input data that cannot be used as declared.
    Input(String),
    Analysis { stage: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn analysis(stage: &str, e: impl std::fmt::Display) -> Self {
        CliError::Analysis { stage: stage.into(), message: e.to_string() }
    }

    /// 1 for analysis failures, 2 for IO and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Analysis { .. } => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Io { path, message } => json!({"error": "io", "path": path, "message": format!("{path}: {message}")}),
            CliError::Config(m) => json!({"error": "config", "message": m}),
            CliError::Input(m) => json!({"error": "input", "message": m}),
            CliError::Analysis { stage, message } => json!({"error": "analysis", "stage": stage, "message": message}),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::Analysis { stage: e.stage.into(), message: e.message }
    }
}
