//! The model-call seam and the deterministic scripted backend.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use async_trait::async_trait;
use image::RgbaImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Diagnostic,
    Reasoning,
    Ocr,
    Fusion,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Diagnostic => "diagnostic",
            Stage::Reasoning => "reasoning",
            Stage::Ocr => "ocr",
            Stage::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no scripted response for key `{0}`")]
    MissingFixture(String),
    #[error("{message} (after {} attempt(s): {})", attempts.len(), attempts.join("; "))]
    Transport { message: String, attempts: Vec<String> },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("malformed response: {0}")]
    Response(String),
}

/// A chat-style model endpoint.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, stage: Stage, sample_id: &str, prompt: &Prompt) -> Result<String, BackendError>;
}

/// Produces OCR markdown for a chart image.
#[async_trait]
pub trait OcrSource: Send + Sync {
    async fn markdown(&self, sample_id: &str, image: &RgbaImage) -> Result<String, BackendError>;
}

/// Replays canned responses keyed by `"<stage>/<sample_id>"`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedBackend {
    responses: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        ScriptedBackend { responses }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let responses = serde_json::from_str(text)
            .map_err(|e| BackendError::Config(format!("scripted fixtures: {e}")))?;
        Ok(ScriptedBackend { responses })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn key(stage: Stage, sample_id: &str) -> String {
        format!("{stage}/{sample_id}")
    }

    pub fn insert(&mut self, stage: Stage, sample_id: &str, response: &str) {
        self.responses.insert(Self::key(stage, sample_id), response.to_string());
    }

    pub fn get(&self, stage: Stage, sample_id: &str) -> Result<&str, BackendError> {
        let key = Self::key(stage, sample_id);
        self.responses
            .get(&key)
            .map(String::as_str)
            .ok_or(BackendError::MissingFixture(key))
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn complete(&self, stage: Stage, sample_id: &str, _prompt: &Prompt) -> Result<String, BackendError> {
        self.get(stage, sample_id).map(str::to_string)
    }
}

#[async_trait]
impl OcrSource for ScriptedBackend {
    async fn markdown(&self, sample_id: &str, _image: &RgbaImage) -> Result<String, BackendError> {
        self.get(Stage::Ocr, sample_id).map(str::to_string)
    }
}
