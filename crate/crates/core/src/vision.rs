//! Diagnostic vision path: blind-test prompt, report parsing and the anchored
//! reasoning prompt.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use image::RgbaImage;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Attachment, Prompt, Template};
use crate::roi::RoiKind;
use crate::sample::AnswerOption;
use crate::taxonomy::{Taxonomy, UNKNOWN_ANOMALY};

pub const NO_ANOMALY_LINE: &str = "No structural anomalies were reported.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("diagnostic report has neither a DIAGNOSIS nor an ACTION DIRECTIVE section")]
pub struct ReportParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub diagnosis: Vec<String>,
    pub action_directives: Vec<String>,
    pub anomalies: Vec<String>,
    pub roi_notes: BTreeMap<RoiKind, String>,
    pub raw_text: String,
}

impl DiagnosticReport {
    /// Report used when the diagnostic stage produced nothing usable.
    pub fn unparsed(raw_text: &str) -> Self {
        DiagnosticReport {
            raw_text: raw_text.to_string(),
            anomalies: vec![UNKNOWN_ANOMALY.to_string()],
            ..Default::default()
        }
    }

    /// Rendering used inside the fusion prompt.
    pub fn render(&self) -> String {
        let list = |items: &[String]| {
            if items.is_empty() {
                "- (none)".to_string()
            } else {
                items
                    .iter()
                    .map(|s| format!("- {s}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        };
        let anomalies = if self.anomalies.is_empty() {
            "(none)".to_string()
        } else {
            self.anomalies.join(", ")
        };
        format!(
            "Detected anomalies: {anomalies}\nDIAGNOSIS:\n{}\nACTION DIRECTIVE:\n{}",
            list(&self.diagnosis),
            list(&self.action_directives)
        )
    }
}

static HEADER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(diagnosis|action[ \t]+directives?)[ \t]*\**[ \t]*:[ \t]*\**").expect("HEADER_RE")
});

static BULLET_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*•+]|\d{1,2}[.)])\s+").expect("BULLET_RE"));

static ROI_RES: LazyLock<Vec<(RoiKind, Regex)>> = LazyLock::new(|| {
    [
        (RoiKind::Title, r"(?i)\btitle\b"),
        (RoiKind::Legend, r"(?i)\blegend\b"),
        (RoiKind::XAxis, r"(?i)\b(?:x[- ]?axis|horizontal axis)\b"),
        (RoiKind::YAxis, r"(?i)\b(?:y[- ]?axis|vertical axis)\b"),
    ]
    .into_iter()
    .map(|(k, p)| (k, Regex::new(p).expect("ROI regex")))
    .collect()
});

fn section_items(body: &str) -> Vec<String> {
    body.lines()
        .map(|l| {
            let l = l.trim().trim_matches('*').trim();
            BULLET_RE.replace(l, "").trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Splits a diagnostic response into findings and directives and maps the
/// findings onto taxonomy ids.
pub fn parse_diagnostic_report(
    text: &str,
    taxonomy: &Taxonomy,
    mode: ParseMode,
) -> Result<DiagnosticReport, ReportParseError> {
    let headers: Vec<_> = HEADER_RE.captures_iter(text).collect();
    if headers.is_empty() {
        return match mode {
            ParseMode::Strict => Err(ReportParseError),
            ParseMode::Lenient => Ok(DiagnosticReport::unparsed(text)),
        };
    }
    let mut diagnosis = Vec::new();
    let mut directives = Vec::new();
    for (i, cap) in headers.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let end = headers
            .get(i + 1)
            .map_or(text.len(), |next| next.get(0).expect("match").start());
        let items = section_items(&text[whole.end()..end]);
        if cap[1].to_ascii_lowercase().starts_with("diagnosis") {
            diagnosis.extend(items);
        } else {
            directives.extend(items);
        }
    }

    let scanned = diagnosis
        .iter()
        .chain(&directives)
        .cloned()
        .collect::<Vec<_>>()
        .join("\n");
    let anomalies = taxonomy.match_keywords(&scanned);
    if !anomalies.is_empty() && directives.is_empty() {
        for id in &anomalies {
            let name = taxonomy.get(id).map_or(id.as_str(), |c| c.display_name.as_str());
            directives.push(format!(
                "Account for the {} before interpreting the visual trend.",
                name.to_lowercase()
            ));
        }
    }

    let mut roi_notes: BTreeMap<RoiKind, String> = BTreeMap::new();
    for finding in &diagnosis {
        for (kind, re) in ROI_RES.iter() {
            if re.is_match(finding) {
                let note = roi_notes.entry(*kind).or_default();
                if !note.is_empty() {
                    note.push(' ');
                }
                note.push_str(finding);
            }
        }
    }

    Ok(DiagnosticReport {
        diagnosis,
        action_directives: directives,
        anomalies,
        roi_notes,
        raw_text: text.to_string(),
    })
}

/// Builds the blind-test prompt: the chart and its crops only. The question
/// and options are never passed to this function.
pub fn build_diagnostic_prompt(
    full_image: Arc<RgbaImage>,
    crops: &BTreeMap<RoiKind, Arc<RgbaImage>>,
    taxonomy: &Taxonomy,
    template: &Template,
) -> Prompt {
    let mut images = vec![Attachment {
        label: "full".to_string(),
        image: full_image,
    }];
    let mut listing = vec!["1. the full chart image".to_string()];
    for kind in RoiKind::ALL {
        if let Some(img) = crops.get(&kind) {
            images.push(Attachment {
                label: kind.as_str().to_string(),
                image: Arc::clone(img),
            });
            listing.push(format!("{}. an enlarged crop of the {}", images.len(), kind.display()));
        }
    }
    if crops.is_empty() {
        listing.push("(Enlarged crops are unavailable for this chart; inspect the full image closely.)".into());
    }
    let count = images.len().to_string();
    let text = template.render(&[
        ("image_count", &count),
        ("images", &listing.join("\n")),
        ("taxonomy", &taxonomy.summary()),
    ]);
    Prompt {
        template_id: template.id.clone(),
        text,
        images,
    }
}

pub fn format_options(options: &[AnswerOption]) -> String {
    options
        .iter()
        .map(|o| format!("{}. {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the reasoning prompt anchored on the report's action directives,
/// which are placed ahead of the question.
pub fn build_reasoning_prompt(
    question: &str,
    options: &[AnswerOption],
    report: &DiagnosticReport,
    full_image: Arc<RgbaImage>,
    template: &Template,
) -> Prompt {
    let directives = if report.action_directives.is_empty() {
        NO_ANOMALY_LINE.to_string()
    } else {
        report
            .action_directives
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{}. {d}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let diagnosis = if report.diagnosis.is_empty() {
        "(none)".to_string()
    } else {
        report
            .diagnosis
            .iter()
            .map(|d| format!("- {d}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let text = template.render(&[
        ("directives", &directives),
        ("diagnosis", &diagnosis),
        ("question", question),
        ("options", &format_options(options)),
    ]);
    Prompt {
        template_id: template.id.clone(),
        text,
        images: vec![Attachment {
            label: "full".to_string(),
            image: full_image,
        }],
    }
}
