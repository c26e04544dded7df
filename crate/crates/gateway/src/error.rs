use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline stage an error is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Request,
    Ingest,
    Ontology,
    Screen,
    Vif,
    Standardize,
    Split,
    GridSearch,
    Fit,
    Evaluate,
    Importance,
    Shap,
    Graph,
    Infer,
    Pathways,
    Risk,
    Recommendations,
    Explain,
    Persist,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Request => "request",
            Stage::Ingest => "ingest",
            Stage::Ontology => "ontology",
            Stage::Screen => "screen",
            Stage::Vif => "vif",
            Stage::Standardize => "standardize",
            Stage::Split => "split",
            Stage::GridSearch => "grid_search",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Importance => "importance",
            Stage::Shap => "shap",
            Stage::Graph => "graph",
            Stage::Infer => "infer",
            Stage::Pathways => "pathways",
            Stage::Risk => "risk",
            Stage::Recommendations => "recommendations",
            Stage::Explain => "explain",
            Stage::Persist => "persist",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse class of a stage failure, used to pick HTTP status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Invalid,
    NotFound,
    Forbidden,
    Unavailable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("[{stage}] {message}")]
pub struct StageError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl StageError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        StageError { stage, kind, message: message.into() }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Invalid, message)
    }

    pub fn failed(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Failed, message)
    }
}

/// Tags any displayable error with a stage.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: fmt::Display> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError::failed(stage, e.to_string()))
    }
}
