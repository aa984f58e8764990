//! Model clients: an OpenAI-compatible chat-completions client with vision
//! inputs, an HTTP OCR client, and a config-driven factory that also yields
//! the scripted backend.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chartaudit_core::backend::{Backend, BackendError, OcrSource, ScriptedBackend, Stage};
use chartaudit_core::prompt::Prompt;
use image::{ImageFormat, RgbaImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Backend settings. Secrets are never stored here: `api_key_env` names the
/// environment variable that holds the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Extra attempts after the first one.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Scripted responses, `{"<stage>/<sample_id>": "<text>"}`.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// OCR service accepting `{"image_b64"}` and returning `{"markdown"}`.
    #[serde(default)]
    pub ocr_endpoint: Option<String>,
    /// Serve OCR from the scripted fixtures (`ocr/<sample_id>` keys).
    #[serde(default)]
    pub scripted_ocr: bool,
}

fn default_max_tokens() -> u32 {
    2048
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    500
}

impl BackendConfig {
    pub fn scripted(fixtures: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: String::new(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_base_ms: default_backoff(),
            api_key_env: None,
            fixtures: Some(fixtures.into()),
            ocr_endpoint: None,
            scripted_ocr: false,
        }
    }

    pub fn http(endpoint: &str, model: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.to_string()),
            model: model.to_string(),
            fixtures: None,
            ..Self::scripted("")
        }
    }

    /// Reads a JSON config; a relative `fixtures` path resolves against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: BackendConfig = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        if let Some(f) = &mut cfg.fixtures {
            if f.is_relative() {
                *f = path.parent().unwrap_or(Path::new(".")).join(&*f);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0");
        }
        if !self.temperature.is_finite() {
            return bad("temperature must be finite");
        }
        match self.kind {
            BackendKind::Http => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return bad("http backend needs an endpoint");
                }
                if self.model.trim().is_empty() {
                    return bad("http backend needs a model name");
                }
            }
            BackendKind::Scripted => {
                if self.fixtures.is_none() {
                    return bad("scripted backend needs a fixtures file");
                }
            }
        }
        if self.scripted_ocr && self.kind != BackendKind::Scripted {
            return bad("scripted_ocr requires the scripted backend");
        }
        Ok(())
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn backoff(&self) -> Backoff {
        Backoff {
            base_ms: self.backoff_base_ms,
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Model and OCR clients built from one config.
pub struct Clients {
    pub backend: Arc<dyn Backend>,
    pub ocr: Option<Arc<dyn OcrSource>>,
}

pub fn build(cfg: &BackendConfig) -> Result<Clients, BackendError> {
    cfg.validate()?;
    let http_ocr = |cfg: &BackendConfig| -> Result<Option<Arc<dyn OcrSource>>, BackendError> {
        Ok(match &cfg.ocr_endpoint {
            Some(url) => Some(Arc::new(HttpOcr::new(url, cfg)?)),
            None => None,
        })
    };
    match cfg.kind {
        BackendKind::Scripted => {
            let path = cfg.fixtures.as_ref().expect("validated");
            let scripted = Arc::new(ScriptedBackend::load(path)?);
            let ocr: Option<Arc<dyn OcrSource>> = if cfg.scripted_ocr {
                Some(scripted.clone())
            } else {
                http_ocr(cfg)?
            };
            Ok(Clients {
                backend: scripted,
                ocr,
            })
        }
        BackendKind::Http => Ok(Clients {
            backend: Arc::new(HttpBackend::new(cfg)?),
            ocr: http_ocr(cfg)?,
        }),
    }
}

/// Exponential backoff with additive jitter.
///
/// Delay before retry `n` (1-based) is `base * 2^(n-1)` plus a jitter in
/// `[0, base * 2^(n-1) / 2)`, so successive delays never decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base_ms: u64,
}

impl Backoff {
    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let step = self.base_ms.saturating_mul(1u64 << retry.saturating_sub(1).min(20));
        let jitter = if step >= 2 { rng.random_range(0..step / 2) } else { 0 };
        Duration::from_millis(step + jitter)
    }
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

fn encode_png(image: &RgbaImage) -> Result<String, BackendError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| BackendError::Config(format!("cannot encode image: {e}")))?;
    Ok(B64.encode(buf.into_inner()))
}

/// Chat-completions body with the prompt text followed by its images in
/// attachment order.
pub fn request_body(cfg: &BackendConfig, prompt: &Prompt) -> Result<Value, BackendError> {
    let mut content = vec![json!({"type": "text", "text": prompt.text})];
    for a in &prompt.images {
        let url = format!("data:image/png;base64,{}", encode_png(&a.image)?);
        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    Ok(json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": content}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }))
}

fn assistant_text(body: &Value) -> Result<String, String> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "no choices[0].message.content".to_string())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Ok(String::new()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(format!("unexpected content {other}")),
    }
}

async fn post_with_retries(
    client: &reqwest::Client,
    url: &str,
    body: &Value,
    api_key: Option<&str>,
    cfg: &BackendConfig,
) -> Result<Value, BackendError> {
    let backoff = cfg.backoff();
    let mut attempts = Vec::new();
    for attempt in 1..=cfg.retries + 1 {
        if attempt > 1 {
            let delay = backoff.delay(attempt - 1, &mut rand::rng());
            tokio::time::sleep(delay).await;
        }
        let mut req = client.post(url).timeout(cfg.timeout()).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let failure = match req.send().await {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    match resp.json::<Value>().await {
                        Ok(v) => return Ok(v),
                        Err(e) if e.is_timeout() => Failure::Retryable(format!("timeout reading body: {e}")),
                        Err(e) => Failure::Fatal(format!("invalid JSON body: {e}")),
                    }
                } else {
                    let text = resp.text().await.unwrap_or_default();
                    let snippet: String = text.chars().take(200).collect();
                    let msg = format!("HTTP {status}: {snippet}");
                    if status.as_u16() == 429 || status.is_server_error() {
                        Failure::Retryable(msg)
                    } else {
                        Failure::Fatal(msg)
                    }
                }
            }
            Err(e) if e.is_timeout() => Failure::Retryable(format!("timeout: {e}")),
            Err(e) if e.is_connect() || e.is_request() => Failure::Retryable(format!("connection: {e}")),
            Err(e) => Failure::Fatal(e.to_string()),
        };
        match failure {
            Failure::Retryable(m) => attempts.push(format!("attempt {attempt}: {m}")),
            Failure::Fatal(m) => {
                attempts.push(format!("attempt {attempt}: {m}"));
                return Err(BackendError::Transport {
                    message: format!("request to {url} failed"),
                    attempts,
                });
            }
        }
    }
    Err(BackendError::Transport {
        message: format!("request to {url} failed; retries exhausted"),
        attempts,
    })
}

fn client() -> Result<reqwest::Client, BackendError> {
    reqwest::Client::builder()
        .build()
        .map_err(|e| BackendError::Config(format!("http client: {e}")))
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    client: reqwest::Client,
    cfg: BackendConfig,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::Config("http backend needs an endpoint".into()))?;
        Ok(HttpBackend {
            client: client()?,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key: cfg.api_key()?,
            cfg: cfg.clone(),
        })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, _stage: Stage, _sample_id: &str, prompt: &Prompt) -> Result<String, BackendError> {
        let body = request_body(&self.cfg, prompt)?;
        let resp = post_with_retries(&self.client, &self.url, &body, self.api_key.as_deref(), &self.cfg).await?;
        assistant_text(&resp).map_err(BackendError::Response)
    }
}

/// HTTP OCR client: `{"image_b64": ...}` in, `{"markdown": ...}` out.
pub struct HttpOcr {
    client: reqwest::Client,
    cfg: BackendConfig,
    url: String,
    api_key: Option<String>,
}

impl HttpOcr {
    pub fn new(url: &str, cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(HttpOcr {
            client: client()?,
            url: url.to_string(),
            api_key: cfg.api_key()?,
            cfg: cfg.clone(),
        })
    }
}

#[async_trait]
impl OcrSource for HttpOcr {
    async fn markdown(&self, _sample_id: &str, image: &RgbaImage) -> Result<String, BackendError> {
        let body = json!({"image_b64": encode_png(image)?});
        let resp = post_with_retries(&self.client, &self.url, &body, self.api_key.as_deref(), &self.cfg).await?;
        resp.get("markdown")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Response("OCR response has no \"markdown\" string".into()))
    }
}
