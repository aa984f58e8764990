//! Prompt templates and the prompt payload handed to backends.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use image::RgbaImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{id}`: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { id: String, name: String },
    #[error("template `{id}`: unterminated placeholder")]
    Unterminated { id: String },
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
    #[error("template directory {dir}: {message}")]
    Dir { dir: String, message: String },
}

/// An image attached to a prompt, in the order the model should see it.
#[derive(Debug, Clone)]
pub struct Attachment {
    pub label: String,
    pub image: Arc<RgbaImage>,
}

#[derive(Debug, Clone)]
pub struct Prompt {
    pub template_id: String,
    pub text: String,
    pub images: Vec<Attachment>,
}

impl Prompt {
    pub fn image_labels(&self) -> Vec<&str> {
        self.images.iter().map(|a| a.label.as_str()).collect()
    }
}

/// A plain-text template with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: String,
    body: String,
    allowed: &'static [&'static str],
}

const DIAGNOSTIC_VARS: &[&str] = &["image_count", "images", "taxonomy"];
const REASONING_VARS: &[&str] = &["directives", "diagnosis", "question", "options"];
const FUSION_VARS: &[&str] = &[
    "taxonomy",
    "report",
    "trust",
    "ocr",
    "calibration",
    "question",
    "options",
];

impl Template {
    fn new(id: &str, body: &str, allowed: &'static [&'static str]) -> Result<Self, TemplateError> {
        let t = Template {
            id: id.to_string(),
            body: body.to_string(),
            allowed,
        };
        for name in t.placeholders()? {
            if !allowed.contains(&name.as_str()) {
                return Err(TemplateError::UnknownPlaceholder {
                    id: t.id.clone(),
                    name,
                });
            }
        }
        Ok(t)
    }

    fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut names = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                id: self.id.clone(),
            })?;
            names.push(after[..close].trim().to_string());
            rest = &after[close + 2..];
        }
        Ok(names)
    }

    /// Substitutes placeholders in one pass; substituted values are not rescanned.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").expect("validated at construction");
            let name = after[..close].trim();
            debug_assert!(self.allowed.contains(&name));
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map_or("", |(_, v)| *v);
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        out
    }
}

/// The three prompt templates used by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub diagnostic: Template,
    pub reasoning: Template,
    pub fusion: Template,
}

impl Templates {
    pub fn builtin() -> Self {
        Templates {
            diagnostic: Template::new(
                "diagnostic.v1",
                include_str!("../templates/diagnostic.v1.txt"),
                DIAGNOSTIC_VARS,
            )
            .expect("builtin diagnostic template"),
            reasoning: Template::new(
                "reasoning.v1",
                include_str!("../templates/reasoning.v1.txt"),
                REASONING_VARS,
            )
            .expect("builtin reasoning template"),
            fusion: Template::new(
                "fusion.v1",
                include_str!("../templates/fusion.v1.txt"),
                FUSION_VARS,
            )
            .expect("builtin fusion template"),
        }
    }

    /// Loads `diagnostic*.txt`, `reasoning*.txt` and `fusion*.txt` from `dir`.
    /// The template id is the file stem, e.g. `fusion.v2`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let dir_err = |message: String| TemplateError::Dir {
            dir: dir.display().to_string(),
            message,
        };
        let entries = fs::read_dir(dir).map_err(|e| dir_err(e.to_string()))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| dir_err(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                files.push(path);
            }
        }
        files.sort();
        let pick = |stage: &str, vars: &'static [&'static str]| -> Result<Template, TemplateError> {
            let matches: Vec<_> = files
                .iter()
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with(stage))
                })
                .collect();
            let [path] = matches.as_slice() else {
                return Err(dir_err(format!(
                    "expected exactly one {stage}*.txt, found {}",
                    matches.len()
                )));
            };
            let body = fs::read_to_string(path).map_err(|e| TemplateError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or(stage)
                .to_string();
            Template::new(&id, &body, vars)
        };
        Ok(Templates {
            diagnostic: pick("diagnostic", DIAGNOSTIC_VARS)?,
            reasoning: pick("reasoning", REASONING_VARS)?,
            fusion: pick("fusion", FUSION_VARS)?,
        })
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}
