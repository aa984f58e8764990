//! Misleading-chart question answering: a diagnostic vision path, an OCR
//! data path and an agentic summarizer, plus the deception-aware reward and
//! the Acc/WM/WO evaluation harness.
//!
//! The reward arithmetic is generic over the float type; the aliases below
//! fix it to `f64` (and `f32` where useful).

pub mod backend;
pub mod config;
pub mod eval;
pub mod numeric;
pub mod ocr;
pub mod pipeline;
pub mod prompt;
pub mod reward;
pub mod roi;
pub mod sample;
pub mod stats;
pub mod taxonomy;
pub mod trace;
pub mod vision;

pub use backend::{Backend, BackendError, OcrSource, ScriptedBackend, Stage};
pub use config::{ConfigError, PipelineConfig};
pub use eval::{EvalResult, Outcome};
pub use ocr::{IntegrityFlag, OcrDocument, Trust};
pub use pipeline::{PipelineContext, PipelineResult, ResultRecord, StageError};
pub use sample::{Answer, AnswerOption, ChartSample, OptionLabel, OracleRow};
pub use taxonomy::Taxonomy;
pub use trace::ReasoningTrace;
pub use vision::DiagnosticReport;

pub type Weights = reward::RewardWeights<f64>;
pub type Shaping = reward::ShapingPolicy<f64>;
pub type Components = reward::Components<f64>;
pub type Breakdown = reward::RewardBreakdown<f64>;
pub type Breakdown32 = reward::RewardBreakdown<f32>;
