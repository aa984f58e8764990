//! Per-sample orchestration: images and crops, vision path, data path,
//! fusion, and a bounded-concurrency batch runner.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, OcrSource, Stage};
use crate::config::{ConfigError, PipelineConfig};
use crate::ocr::{calibrate, parse_ocr_markdown, OcrDocument};
use crate::prompt::Templates;
use crate::roi::{crop, extract_rois, load_detections, Rect, RoiKind};
use crate::sample::{Answer, ChartSample};
use crate::taxonomy::Taxonomy;
use crate::trace::{answer_segment, build_fusion_prompt, extract_answer, extract_answer_from, parse_trace, ReasoningTrace};
use crate::vision::{build_diagnostic_prompt, build_reasoning_prompt, parse_diagnostic_report, DiagnosticReport};

/// Config plus the taxonomy and templates it points at.
#[derive(Debug, Clone, Default)]
pub struct PipelineContext {
    pub config: PipelineConfig,
    pub taxonomy: Taxonomy,
    pub templates: Templates,
}

impl PipelineContext {
    pub fn new(config: PipelineConfig) -> Result<Self, ConfigError> {
        let taxonomy = match &config.taxonomy {
            Some(p) => Taxonomy::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Taxonomy::builtin(),
        };
        let templates = match &config.templates_dir {
            Some(d) => Templates::load_dir(d).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Templates::builtin(),
        };
        Ok(PipelineContext {
            config,
            taxonomy,
            templates,
        })
    }
}

/// A failure attributed to one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

impl StageError {
    pub fn new(stage: impl Into<String>, message: impl Into<String>) -> Self {
        StageError {
            stage: stage.into(),
            message: message.into(),
        }
    }

    fn backend(stage: Stage, e: BackendError) -> Self {
        StageError::new(stage.as_str(), e.to_string())
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

/// The decoded chart and its ROI crops.
#[derive(Debug, Clone)]
pub struct SampleImages {
    pub full: Arc<RgbaImage>,
    pub crops: BTreeMap<RoiKind, Arc<RgbaImage>>,
    pub regions: BTreeMap<RoiKind, Rect>,
}

/// Decodes the chart and builds crops from its detections, if any.
///
/// Relative paths resolve against `base_dir`. A broken detections file is
/// reported as an `roi` error alongside the uncropped image.
pub fn load_sample_images(
    sample: &ChartSample,
    base_dir: &Path,
    config: &PipelineConfig,
) -> Result<(SampleImages, Option<StageError>), StageError> {
    let path = base_dir.join(&sample.image_path);
    let full = image::open(&path)
        .map_err(|e| StageError::new("image", format!("{}: {e}", path.display())))?
        .to_rgba8();
    let mut images = SampleImages {
        full: Arc::new(full),
        crops: BTreeMap::new(),
        regions: BTreeMap::new(),
    };
    let Some(det_path) = &sample.detections_path else {
        return Ok((images, None));
    };
    let regions = load_detections(&base_dir.join(det_path)).and_then(|dets| {
        extract_rois(&dets, images.full.dimensions(), &config.padding, &config.roi_aliases)
    });
    match regions {
        Ok(regions) => {
            for (kind, region) in regions {
                let img = crop(images.full.as_ref(), &region.rect).expect("regions are clamped");
                images.crops.insert(kind, Arc::new(img));
                images.regions.insert(kind, region.rect);
            }
            Ok((images, None))
        }
        Err(e) => Ok((images, Some(StageError::new("roi", e.to_string())))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub diagnostic_ms: Option<u64>,
    pub reasoning_ms: Option<u64>,
    pub ocr_ms: Option<u64>,
    pub fusion_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateIds {
    pub diagnostic: String,
    pub reasoning: String,
    pub fusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub sample_id: String,
    pub templates: TemplateIds,
    pub rois: BTreeMap<RoiKind, Rect>,
    /// Absent when the diagnostic stage failed.
    pub report: Option<DiagnosticReport>,
    /// The reasoning agent's own answer, if that stage ran.
    pub vision_answer: Option<Answer>,
    pub doc: OcrDocument,
    pub trace: ReasoningTrace,
    pub answer: Answer,
    /// Non-fatal failures of individual stages.
    pub stage_errors: Vec<StageError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

struct Clock(Option<Instant>);

impl Clock {
    fn start(enabled: bool) -> Self {
        Clock(enabled.then(Instant::now))
    }

    fn ms(&self) -> Option<u64> {
        self.0.map(|t| t.elapsed().as_millis() as u64)
    }
}

struct VisionRun {
    report: Result<DiagnosticReport, StageError>,
    answer: Option<Result<Answer, StageError>>,
    diagnostic_ms: Option<u64>,
    reasoning_ms: Option<u64>,
}

async fn vision_stages(
    backend: &dyn Backend,
    sample: &ChartSample,
    images: &SampleImages,
    ctx: &PipelineContext,
) -> VisionRun {
    let cfg = &ctx.config;
    let prompt = build_diagnostic_prompt(
        Arc::clone(&images.full),
        &images.crops,
        &ctx.taxonomy,
        &ctx.templates.diagnostic,
    );
    let clock = Clock::start(cfg.record_timings);
    let raw = backend.complete(Stage::Diagnostic, &sample.id, &prompt).await;
    let diagnostic_ms = clock.ms();
    let report = raw
        .map_err(|e| StageError::backend(Stage::Diagnostic, e))
        .and_then(|text| {
            parse_diagnostic_report(&text, &ctx.taxonomy, cfg.parse_mode)
                .map_err(|e| StageError::new("diagnostic", e.to_string()))
        });
    let Ok(rep) = &report else {
        return VisionRun {
            report,
            answer: None,
            diagnostic_ms,
            reasoning_ms: None,
        };
    };
    let prompt = build_reasoning_prompt(
        &sample.question,
        &sample.options,
        rep,
        Arc::clone(&images.full),
        &ctx.templates.reasoning,
    );
    let clock = Clock::start(cfg.record_timings);
    let answer = backend
        .complete(Stage::Reasoning, &sample.id, &prompt)
        .await
        .map(|text| extract_answer_from(answer_segment(&text), &sample.options, &cfg.abstain_phrases))
        .map_err(|e| StageError::backend(Stage::Reasoning, e));
    VisionRun {
        report,
        answer: Some(answer),
        diagnostic_ms,
        reasoning_ms: clock.ms(),
    }
}

/// Diagnostic call then anchored reasoning call.
pub async fn run_vision_path(
    backend: &dyn Backend,
    sample: &ChartSample,
    images: &SampleImages,
    ctx: &PipelineContext,
) -> Result<(DiagnosticReport, Answer), StageError> {
    let run = vision_stages(backend, sample, images, ctx).await;
    let report = run.report?;
    let answer = run.answer.expect("reasoning runs after a report")?;
    Ok((report, answer))
}

/// Runs both paths and the fusion call for one sample.
///
/// Stage failures are recorded and later stages still run; the sample fails
/// only when neither path produced evidence or the fusion call fails.
pub async fn run_pipeline(
    backend: &dyn Backend,
    ocr: Option<&dyn OcrSource>,
    sample: &ChartSample,
    base_dir: &Path,
    ctx: &PipelineContext,
) -> Result<PipelineResult, StageError> {
    let cfg = &ctx.config;
    let mut stage_errors = Vec::new();
    let mut timings = Timings::default();

    let images = match load_sample_images(sample, base_dir, cfg) {
        Ok((images, roi_err)) => {
            stage_errors.extend(roi_err);
            Some(images)
        }
        Err(e) => {
            stage_errors.push(e);
            None
        }
    };

    let (report, vision_answer) = match &images {
        Some(images) => {
            let run = vision_stages(backend, sample, images, ctx).await;
            timings.diagnostic_ms = run.diagnostic_ms;
            timings.reasoning_ms = run.reasoning_ms;
            let report = run.report.map_err(|e| stage_errors.push(e)).ok();
            let answer = run.answer.and_then(|a| a.map_err(|e| stage_errors.push(e)).ok());
            (report, answer)
        }
        None => (None, None),
    };

    let markdown = match (&sample.ocr_markdown, ocr, &images) {
        (Some(md), _, _) => Some(md.clone()),
        (None, Some(source), Some(images)) => {
            let clock = Clock::start(cfg.record_timings);
            let md = source.markdown(&sample.id, &images.full).await;
            timings.ocr_ms = clock.ms();
            md.map_err(|e| stage_errors.push(StageError::backend(Stage::Ocr, e))).ok()
        }
        _ => None,
    };
    let has_data = markdown.is_some();
    let doc = calibrate(
        parse_ocr_markdown(markdown.as_deref().unwrap_or("")),
        report.as_ref(),
        &cfg.data_path,
    );

    if report.is_none() && !has_data {
        let detail = stage_errors
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(StageError::new("evidence", format!("no evidence ({detail})")));
    }

    let empty_report = DiagnosticReport::default();
    let prompt = build_fusion_prompt(
        sample,
        report.as_ref().unwrap_or(&empty_report),
        &doc,
        &ctx.taxonomy,
        &ctx.templates.fusion,
    );
    let clock = Clock::start(cfg.record_timings);
    let text = backend
        .complete(Stage::Fusion, &sample.id, &prompt)
        .await
        .map_err(|e| StageError::backend(Stage::Fusion, e))?;
    timings.fusion_ms = clock.ms();
    let mut trace = parse_trace(&text);
    let answer = extract_answer(&trace, &sample.options, &cfg.abstain_phrases);
    trace.answer = Some(answer);

    Ok(PipelineResult {
        sample_id: sample.id.clone(),
        templates: TemplateIds {
            diagnostic: ctx.templates.diagnostic.id.clone(),
            reasoning: ctx.templates.reasoning.id.clone(),
            fusion: ctx.templates.fusion.id.clone(),
        },
        rois: images.map(|i| i.regions).unwrap_or_default(),
        report,
        vision_answer,
        doc,
        trace,
        answer,
        stage_errors,
        timings: cfg.record_timings.then_some(timings),
    })
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ResultRecord {
    Ok {
        id: String,
        result: Box<PipelineResult>,
    },
    Error {
        id: String,
        stage: String,
        message: String,
    },
}

impl ResultRecord {
    pub fn id(&self) -> &str {
        match self {
            ResultRecord::Ok { id, .. } | ResultRecord::Error { id, .. } => id,
        }
    }

    /// The final answer, or `None` for a failed sample.
    pub fn answer(&self) -> Option<Answer> {
        match self {
            ResultRecord::Ok { result, .. } => Some(result.answer),
            ResultRecord::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, ResultRecord::Error { .. })
    }

    pub fn from_outcome(id: &str, outcome: Result<PipelineResult, StageError>) -> Self {
        match outcome {
            Ok(result) => ResultRecord::Ok {
                id: id.to_string(),
                result: Box::new(result),
            },
            Err(e) => ResultRecord::Error {
                id: id.to_string(),
                stage: e.stage,
                message: e.message,
            },
        }
    }
}

/// Runs every sample with at most `concurrency` in flight; records come
/// back sorted by sample id.
pub async fn run_batch(
    backend: &dyn Backend,
    ocr: Option<&dyn OcrSource>,
    samples: &[ChartSample],
    base_dir: &Path,
    ctx: &PipelineContext,
    concurrency: usize,
) -> Vec<ResultRecord> {
    let mut records: Vec<ResultRecord> = stream::iter(samples)
        .map(|s| async move {
            let outcome = run_pipeline(backend, ocr, s, base_dir, ctx).await;
            ResultRecord::from_outcome(&s.id, outcome)
        })
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    records.sort_by(|a, b| a.id().cmp(b.id()));
    records
}
