use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::find_phrase;

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.json");

/// Anomaly id used when a diagnostic report cannot be mapped to the taxonomy.
pub const UNKNOWN_ANOMALY: &str = "unknown";

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate category id `{0}`")]
    DuplicateId(String),
    #[error("category `{0}` has no keywords")]
    EmptyKeywords(String),
    #[error("unknown misleader category `{0}`")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub categories: Vec<Category>,
}

impl Taxonomy {
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let t: Taxonomy = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The shipped taxonomy with the misleader categories named in the literature.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("built-in taxonomy is valid")
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let mut ids = HashSet::new();
        for c in &self.categories {
            if !ids.insert(c.id.as_str()) {
                return Err(TaxonomyError::DuplicateId(c.id.clone()));
            }
            if c.keywords.iter().all(|k| k.trim().is_empty()) {
                return Err(TaxonomyError::EmptyKeywords(c.id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Category, TaxonomyError> {
        self.get(id)
            .ok_or_else(|| TaxonomyError::UnknownCategory(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Category ids whose keywords occur in `text`, in taxonomy order.
    pub fn match_keywords(&self, text: &str) -> Vec<String> {
        self.categories
            .iter()
            .filter(|c| c.keywords.iter().any(|k| find_phrase(text, k).is_some()))
            .map(|c| c.id.clone())
            .collect()
    }

    /// One line per category, used inside prompts.
    pub fn summary(&self) -> String {
        self.categories
            .iter()
            .map(|c| format!("- {} ({}): {}", c.display_name, c.id, c.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}
