//! Agentic fusion: the D-CoT prompt, the XML-tagged trace and answer
//! extraction.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::numeric::{contains_phrase, find_phrase};
use crate::ocr::{emit_calibration_directives, render_for_prompt, OcrDocument, Trust};
use crate::prompt::{Prompt, Template};
use crate::sample::{Answer, AnswerOption, ChartSample, OptionLabel};
use crate::taxonomy::Taxonomy;
use crate::vision::{format_options, DiagnosticReport};

/// The four output tags, in canonical order.
pub const TAGS: [&str; 4] = [
    "Visual_Heuristic",
    "OCR_Validation",
    "Ambiguity_Resolution",
    "Final_Answer",
];

/// The five D-CoT steps, in canonical order.
pub const DCOT_STEPS: [&str; 5] = [
    "Perception Audit",
    "Numerical Anchoring",
    "Deception Mapping",
    "Sufficiency & Integrity Check",
    "Adversarial Trap Rejection",
];

pub const DEFAULT_ABSTAIN_PHRASE: &str = "cannot be inferred";

// accepted spellings per step; the first entry is canonical
const STEP_ALIASES: [&[&str]; 5] = [
    &["Perception Audit"],
    &["Numerical Anchoring"],
    &["Deception Mapping"],
    &["Sufficiency & Integrity Check", "Sufficiency and Integrity Check"],
    &["Adversarial Trap Rejection"],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcotStep {
    /// 1-based step number.
    pub index: usize,
    pub title: String,
    /// Whether the step's name (not just its number) appeared.
    pub named: bool,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub visual_heuristic: String,
    pub ocr_validation: String,
    pub ambiguity_resolution: String,
    pub final_answer_segment: String,
    pub dcot_steps: Vec<DcotStep>,
    /// Filled by [`extract_answer`]; absent until options are known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    pub raw_text: String,
}

impl ReasoningTrace {
    fn reasoning_bodies(&self) -> [&str; 3] {
        [
            &self.visual_heuristic,
            &self.ocr_validation,
            &self.ambiguity_resolution,
        ]
    }

    pub fn segment(&self, tag_index: usize) -> &str {
        match tag_index {
            0 => &self.visual_heuristic,
            1 => &self.ocr_validation,
            2 => &self.ambiguity_resolution,
            _ => &self.final_answer_segment,
        }
    }
}

fn tag_re(tag: &str, closing: bool) -> Regex {
    let slash = if closing { r"/\s*" } else { "" };
    Regex::new(&format!(r"<\s*{slash}{tag}\s*>")).expect("tag regex")
}

static OPEN_RES: LazyLock<Vec<Regex>> =
    LazyLock::new(|| TAGS.iter().map(|t| tag_re(t, false)).collect());
static CLOSE_RES: LazyLock<Vec<Regex>> =
    LazyLock::new(|| TAGS.iter().map(|t| tag_re(t, true)).collect());
static STEP_NAME_RES: LazyLock<Vec<Vec<Regex>>> = LazyLock::new(|| {
    STEP_ALIASES
        .iter()
        .map(|aliases| {
            aliases
                .iter()
                .map(|a| Regex::new(&format!(r"(?i)\b{}\b", regex::escape(a))).expect("step regex"))
                .collect()
        })
        .collect()
});
static STEP_NUM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bstep\s*([1-5])\b").expect("STEP_NUM_RE"));

fn tag_body(text: &str, i: usize) -> String {
    let Some(open) = OPEN_RES[i].find(text) else {
        return String::new();
    };
    let rest = &text[open.end()..];
    match CLOSE_RES[i].find(rest) {
        Some(close) => rest[..close.start()].trim().to_string(),
        None => String::new(),
    }
}

struct Marker {
    start: usize,
    end: usize,
    index: usize,
    named: bool,
}

fn step_markers(body: &str) -> Vec<Marker> {
    let mut markers = Vec::new();
    for m in STEP_NUM_RE.captures_iter(body) {
        let whole = m.get(0).expect("match");
        markers.push(Marker {
            start: whole.start(),
            end: whole.end(),
            index: m[1].parse().expect("1-5"),
            named: false,
        });
    }
    for (i, res) in STEP_NAME_RES.iter().enumerate() {
        for re in res {
            for m in re.find_iter(body) {
                markers.push(Marker {
                    start: m.start(),
                    end: m.end(),
                    index: i + 1,
                    named: true,
                });
            }
        }
    }
    markers.sort_by_key(|m| (m.start, m.index));
    markers
}

fn clean_step_body(s: &str) -> String {
    s.trim()
        .trim_start_matches([':', '-', '—', '–', ')', '.', '*'])
        .trim()
        .to_string()
}

/// Finds numbered or named D-CoT steps in the three reasoning bodies.
/// Step indices in the result are strictly increasing.
fn detect_steps(bodies: [&str; 3]) -> Vec<DcotStep> {
    let mut steps: Vec<DcotStep> = Vec::new();
    let mut last = 0;
    for body in bodies {
        let markers = step_markers(body);
        let mut accepted: Vec<(usize, usize, usize)> = Vec::new(); // (marker start, body start, steps idx)
        for m in &markers {
            if m.index > last {
                last = m.index;
                steps.push(DcotStep {
                    index: m.index,
                    title: DCOT_STEPS[m.index - 1].to_string(),
                    named: m.named,
                    body: String::new(),
                });
                accepted.push((m.start, m.end, steps.len() - 1));
            } else if m.index == last {
                // "Step 1 - Perception Audit:" names the step it follows directly
                if let Some(prev) = accepted.last_mut() {
                    let gap = body.get(prev.1..m.start).unwrap_or("x");
                    if m.start >= prev.1 && gap.chars().all(|c| !c.is_alphanumeric()) {
                        prev.1 = m.end;
                        steps[prev.2].named |= m.named;
                    }
                }
            }
        }
        for (k, &(_, start, si)) in accepted.iter().enumerate() {
            let end = accepted.get(k + 1).map_or(body.len(), |next| next.0);
            steps[si].body = clean_step_body(&body[start..end.max(start)]);
        }
    }
    steps
}

/// Lenient parse: missing tags give empty fields and never fail.
pub fn parse_trace(text: &str) -> ReasoningTrace {
    let mut trace = ReasoningTrace {
        visual_heuristic: tag_body(text, 0),
        ocr_validation: tag_body(text, 1),
        ambiguity_resolution: tag_body(text, 2),
        final_answer_segment: tag_body(text, 3),
        raw_text: text.to_string(),
        ..Default::default()
    };
    trace.dcot_steps = detect_steps(trace.reasoning_bodies());
    trace
}

/// Canonical four-tag text for a trace.
pub fn render(trace: &ReasoningTrace) -> String {
    TAGS.iter()
        .enumerate()
        .map(|(i, tag)| format!("<{tag}>\n{}\n</{tag}>", trace.segment(i)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// 1 iff each tag opens and closes exactly once and the four sections
/// appear in canonical order without overlapping.
pub fn r_fmt(raw_text: &str) -> u8 {
    let mut cursor = 0;
    for i in 0..TAGS.len() {
        let opens: Vec<_> = OPEN_RES[i].find_iter(raw_text).collect();
        let closes: Vec<_> = CLOSE_RES[i].find_iter(raw_text).collect();
        let ([open], [close]) = (opens.as_slice(), closes.as_slice()) else {
            return 0;
        };
        if open.start() < cursor || close.start() < open.end() {
            return 0;
        }
        cursor = close.end();
    }
    1
}

/// Step-name completeness with an order penalty: `s/5`, halved when the
/// first occurrences are out of canonical order. Searches the three
/// reasoning tags, or the whole text when none of them is present.
pub fn r_logic(trace: &ReasoningTrace) -> f64 {
    let (s, ordered) = step_name_order(trace);
    let base = s as f64 / DCOT_STEPS.len() as f64;
    if ordered {
        base
    } else {
        base * 0.5
    }
}

/// Number of step names found and whether their first occurrences are in order.
pub fn step_name_order(trace: &ReasoningTrace) -> (usize, bool) {
    let joined = trace.reasoning_bodies().join("\n");
    let text = if joined.trim().is_empty() {
        trace.raw_text.as_str()
    } else {
        joined.as_str()
    };
    let firsts: Vec<usize> = STEP_ALIASES
        .iter()
        .filter_map(|aliases| aliases.iter().filter_map(|a| find_phrase(text, a)).min())
        .collect();
    let ordered = firsts.windows(2).all(|w| w[0] < w[1]);
    (firsts.len(), ordered)
}

static FINAL_ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)final\s+answer\s*(?:is)?\s*[:\-=]?\s*\**\s*[(\[]?\s*([A-F])\b").expect("FINAL_ANSWER_RE")
});
static FINAL_ANSWER_MENTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)final\s+answer").expect("FINAL_ANSWER_MENTION_RE"));
static LETTER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([A-F])\b").expect("LETTER_RE"));
static NEXT_WORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s+([a-z][a-z'-]*)").expect("NEXT_WORD_RE"));

const LETTER_LINKS: &[&str] = &["and", "or", "nor", "vs", "versus"];

/// Segment of free text to extract an answer from: everything from the last
/// "Final Answer" mention, else the last non-empty line.
pub fn answer_segment(text: &str) -> &str {
    if let Some(m) = FINAL_ANSWER_MENTION_RE.find_iter(text).last() {
        return &text[m.start()..];
    }
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
}

fn unique(cands: BTreeSet<OptionLabel>) -> Option<Result<OptionLabel, ()>> {
    match cands.len() {
        0 => None,
        1 => Some(Ok(*cands.iter().next().expect("one"))),
        _ => Some(Err(())),
    }
}

/// Extracts the chosen option from an answer segment.
///
/// Abstains when the segment carries an abstention phrase, or when a rule
/// yields two or more distinct labels, or when no rule yields any label.
pub fn extract_answer_from(segment: &str, options: &[AnswerOption], abstain_phrases: &[String]) -> Answer {
    if abstain_phrases.iter().any(|p| contains_phrase(segment, p)) {
        return Answer::Abstain;
    }
    let valid: BTreeSet<OptionLabel> = options.iter().map(|o| o.label).collect();
    let as_label = |s: &str| OptionLabel::parse(s).filter(|l| valid.contains(l));

    let rules: [Box<dyn Fn() -> BTreeSet<OptionLabel>>; 3] = [
        Box::new(|| {
            FINAL_ANSWER_RE
                .captures_iter(segment)
                .filter_map(|c| as_label(&c[1]))
                .collect()
        }),
        Box::new(|| {
            LETTER_RE
                .captures_iter(segment)
                .filter(|c| {
                    let m = c.get(1).expect("group");
                    if m.as_str() != "A" {
                        return true;
                    }
                    // "A" followed by a lowercase word is usually the article
                    match NEXT_WORD_RE.captures(&segment[m.end()..]) {
                        Some(next) => LETTER_LINKS.contains(&&next[1]),
                        None => true,
                    }
                })
                .filter_map(|c| as_label(&c[1]))
                .collect()
        }),
        Box::new(|| {
            options
                .iter()
                .filter(|o| !o.text.trim().is_empty() && contains_phrase(segment, &o.text))
                .map(|o| o.label)
                .collect()
        }),
    ];
    for rule in &rules {
        match unique(rule()) {
            Some(Ok(l)) => return Answer::Option(l),
            Some(Err(())) => return Answer::Abstain,
            None => {}
        }
    }
    Answer::Abstain
}

/// Answer for a fusion trace. Uses the `<Final_Answer>` body, or the tail of
/// the raw text when that tag is missing.
pub fn extract_answer(trace: &ReasoningTrace, options: &[AnswerOption], abstain_phrases: &[String]) -> Answer {
    let segment = if trace.final_answer_segment.trim().is_empty() {
        answer_segment(&trace.raw_text)
    } else {
        trace.final_answer_segment.as_str()
    };
    extract_answer_from(segment, options, abstain_phrases)
}

pub fn default_abstain_phrases() -> Vec<String> {
    vec![DEFAULT_ABSTAIN_PHRASE.to_string()]
}

fn trust_label(trust: Option<Trust>) -> &'static str {
    match trust {
        Some(Trust::High) => "High",
        Some(Trust::Low) => "Low",
        None => "unassessed",
    }
}

/// Builds the fusion prompt from both path outputs. Either may be degenerate;
/// the output schema is always included.
pub fn build_fusion_prompt(
    sample: &ChartSample,
    report: &DiagnosticReport,
    doc: &OcrDocument,
    taxonomy: &Taxonomy,
    template: &Template,
) -> Prompt {
    let directives = if doc.directives.is_empty() {
        emit_calibration_directives(doc.trust, &doc.integrity_flags)
    } else {
        doc.directives.clone()
    };
    let calibration = directives
        .iter()
        .map(|d| format!("- {d}"))
        .collect::<Vec<_>>()
        .join("\n");
    let text = template.render(&[
        ("taxonomy", &taxonomy.summary()),
        ("report", &report.render()),
        ("trust", trust_label(doc.trust)),
        ("ocr", &render_for_prompt(doc)),
        ("calibration", &calibration),
        ("question", &sample.question),
        ("options", &format_options(&sample.options)),
    ]);
    Prompt {
        template_id: template.id.clone(),
        text,
        images: Vec::new(),
    }
}
