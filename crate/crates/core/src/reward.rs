//! Deception-aware reward: grounding, contradiction, logic and format
//! components, asymmetric answer shaping, and the weighted total.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use num_traits::{Float, Num};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{content_tokens, contains_phrase, find_phrase, scan_numbers, NumericToken};
use crate::sample::{Answer, AnswerOption, ChartSample, OptionLabel, OracleRow};
use crate::stats::{spearman, StatsError};
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::trace::{self, extract_answer, parse_trace, ReasoningTrace};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid reward configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<T> {
    pub fact: T,
    pub contra: T,
    pub logic: T,
    pub fmt: T,
}

impl<T: Float> Default for RewardWeights<T> {
    fn default() -> Self {
        let c = |v: f64| T::from(v).expect("weight representable");
        RewardWeights {
            fact: c(0.20),
            contra: c(0.25),
            logic: c(0.20),
            fmt: c(0.10),
        }
    }
}

/// Answer-dependent additive term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingPolicy<T> {
    pub correct: T,
    pub trap: T,
    pub other: T,
    pub abstain: T,
}

impl<T: Float> Default for ShapingPolicy<T> {
    fn default() -> Self {
        ShapingPolicy {
            correct: T::one(),
            trap: T::from(-2.0).expect("representable"),
            other: T::zero(),
            abstain: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Components<T> {
    pub r_fact: T,
    pub r_contra: T,
    pub r_logic: T,
    pub r_fmt: T,
}

/// Weighted sum in a fixed evaluation order, so every caller gets
/// bit-identical totals.
pub fn combine<T: Num + Copy>(c: &Components<T>, w: &RewardWeights<T>, shaping: T) -> T {
    w.fact * c.r_fact + w.contra * c.r_contra + w.logic * c.r_logic + w.fmt * c.r_fmt + shaping
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fact: String,
    pub contra: String,
    pub logic: String,
    pub fmt: String,
    pub shaping: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub r_fact: T,
    pub r_contra: T,
    pub r_logic: T,
    pub r_fmt: T,
    pub shaping: T,
    pub total: T,
    pub weights: RewardWeights<T>,
    pub diagnostics: Diagnostics,
}

impl<T: Float> RewardBreakdown<T> {
    pub fn new(c: Components<T>, weights: RewardWeights<T>, shaping: T, diagnostics: Diagnostics) -> Self {
        RewardBreakdown {
            r_fact: c.r_fact,
            r_contra: c.r_contra,
            r_logic: c.r_logic,
            r_fmt: c.r_fmt,
            shaping,
            total: combine(&c, &weights, shaping),
            weights,
            diagnostics,
        }
    }

    pub fn components(&self) -> Components<T> {
        Components {
            r_fact: self.r_fact,
            r_contra: self.r_contra,
            r_logic: self.r_logic,
            r_fmt: self.r_fmt,
        }
    }

    /// Same breakdown in another float type; the total is recomputed.
    pub fn cast<U: Float>(&self) -> RewardBreakdown<U> {
        let u = |v: T| U::from(v).expect("float cast");
        RewardBreakdown::new(
            Components {
                r_fact: u(self.r_fact),
                r_contra: u(self.r_contra),
                r_logic: u(self.r_logic),
                r_fmt: u(self.r_fmt),
            },
            RewardWeights {
                fact: u(self.weights.fact),
                contra: u(self.weights.contra),
                logic: u(self.weights.logic),
                fmt: u(self.weights.fmt),
            },
            u(self.shaping),
            self.diagnostics.clone(),
        )
    }
}

/// Reward settings carried in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: RewardWeights<f64>,
    pub shaping: ShapingPolicy<f64>,
    /// Overlap threshold for the contradiction component.
    pub overlap_threshold: f64,
    pub group_size: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            weights: RewardWeights::default(),
            shaping: ShapingPolicy::default(),
            overlap_threshold: 0.3,
            group_size: 8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let w = &self.weights;
        let ws = [w.fact, w.contra, w.logic, w.fmt];
        if ws.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RewardError::Config("weights must be finite and >= 0".into()));
        }
        let s = &self.shaping;
        if [s.correct, s.trap, s.other, s.abstain].iter().any(|v| !v.is_finite()) {
            return Err(RewardError::Config("shaping values must be finite".into()));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(RewardError::Config("overlap_threshold must be in (0, 1]".into()));
        }
        if self.group_size < 2 {
            return Err(RewardError::Config("group_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// Numbers in trace text, left to right, under the data-path locale rules.
pub fn extract_numeric_tokens(text: &str) -> Vec<(String, f64)> {
    scan_numbers(text).into_iter().map(|t| (t.raw, t.value)).collect()
}

static SENTENCE_END_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[.!?;\n](?:\s|$)").expect("SENTENCE_END_RE"));

fn sentences(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in SENTENCE_END_RE.find_iter(text) {
        out.push((start, &text[start..m.start() + 1]));
        start = m.end();
    }
    if start < text.len() {
        out.push((start, &text[start..]));
    }
    out
}

fn relative_gap(token: f64, target: f64) -> f64 {
    let scale = target.abs().max(token.abs()).max(f64::MIN_POSITIVE);
    (token - target).abs() / scale
}

/// An aligned (trace number, oracle value) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub category: String,
    pub trace_value: f64,
    pub oracle_value: f64,
}

/// Aligns trace numbers to oracle rows.
///
/// Each oracle row takes the unused number nearest in relative terms among
/// the sentences mentioning its category; numbers inside the category text
/// itself (e.g. a year label) are skipped. When no category is mentioned at
/// all, numbers pair with rows positionally.
pub fn align(text: &str, oracle: &[OracleRow]) -> (Vec<AlignedPair>, bool) {
    let sents = sentences(text);
    let any_category = oracle.iter().any(|r| contains_phrase(text, &r.category));
    if !any_category {
        let tokens = scan_numbers(text);
        let pairs = tokens
            .iter()
            .zip(oracle)
            .map(|(t, r)| AlignedPair {
                category: r.category.clone(),
                trace_value: t.value,
                oracle_value: r.value,
            })
            .collect();
        return (pairs, true);
    }
    let mut used: BTreeSet<usize> = BTreeSet::new(); // absolute token starts
    let mut pairs = Vec::new();
    for row in oracle {
        let mut best: Option<(f64, usize, f64)> = None;
        for &(offset, sentence) in &sents {
            let spans = category_spans(sentence, &row.category);
            if spans.is_empty() {
                continue;
            }
            for tok in scan_numbers(sentence) {
                let abs = offset + tok.start;
                if used.contains(&abs) || overlaps_any(&tok, &spans) {
                    continue;
                }
                let gap = relative_gap(tok.value, row.value);
                if best.is_none_or(|(g, pos, _)| gap < g || (gap == g && abs < pos)) {
                    best = Some((gap, abs, tok.value));
                }
            }
        }
        if let Some((_, pos, value)) = best {
            used.insert(pos);
            pairs.push(AlignedPair {
                category: row.category.clone(),
                trace_value: value,
                oracle_value: row.value,
            });
        }
    }
    (pairs, false)
}

fn category_spans(sentence: &str, category: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut from = 0;
    while from < sentence.len() {
        let Some(pos) = find_phrase(&sentence[from..], category) else {
            break;
        };
        let at = from + pos;
        spans.push((at, at + category.trim().len()));
        from = at + category.trim().len().max(1);
        while from < sentence.len() && !sentence.is_char_boundary(from) {
            from += 1;
        }
    }
    spans
}

fn overlaps_any(tok: &NumericToken, spans: &[(usize, usize)]) -> bool {
    spans.iter().any(|&(s, e)| tok.start < e && s < tok.end())
}

/// Rank agreement between the numbers in `<OCR_Validation>` and the oracle.
pub fn r_fact(trace: &ReasoningTrace, oracle: Option<&[OracleRow]>) -> (f64, String) {
    let Some(oracle) = oracle.filter(|o| !o.is_empty()) else {
        return (0.0, "no oracle".into());
    };
    let (pairs, positional) = align(&trace.ocr_validation, oracle);
    let mode = if positional { "positional" } else { "category" };
    if pairs.len() < 2 {
        return (
            0.0,
            format!("{} aligned pair(s) ({mode} alignment); need at least 2", pairs.len()),
        );
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.trace_value).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.oracle_value).collect();
    let rho = spearman(&xs, &ys).expect("len >= 2, finite");
    (
        rho.max(0.0),
        format!("spearman {rho:.6} over {} pairs ({mode} alignment)", pairs.len()),
    )
}

/// Keyword hit rate gated by overlap with the expert explanation.
pub fn r_contra(
    trace: &ReasoningTrace,
    category: &str,
    explanation: Option<&str>,
    threshold: f64,
    taxonomy: &Taxonomy,
) -> Result<(f64, String), RewardError> {
    let cat = taxonomy.require(category)?;
    let hits = cat
        .keywords
        .iter()
        .filter(|k| {
            contains_phrase(&trace.ambiguity_resolution, k) || contains_phrase(&trace.ocr_validation, k)
        })
        .count();
    let hit = hits as f64 / cat.keywords.len() as f64;
    let overlap = match explanation {
        None => 1.0,
        Some(exp) => {
            let reference = content_tokens(exp);
            if reference.is_empty() {
                1.0
            } else {
                let own = content_tokens(&trace.ambiguity_resolution);
                reference.intersection(&own).count() as f64 / reference.len() as f64
            }
        }
    };
    Ok((contra_value(hit, overlap, threshold), format!(
        "{hits}/{} keywords, overlap {overlap:.4} (threshold {threshold})",
        cat.keywords.len()
    )))
}

/// `hit` when `overlap >= threshold`, else `hit * overlap / threshold`.
pub fn contra_value<T: Num + PartialOrd + Copy>(hit: T, overlap: T, threshold: T) -> T {
    if overlap >= threshold {
        hit
    } else {
        hit * (overlap / threshold)
    }
}

pub use trace::{r_fmt, r_logic};

pub fn shaping<T: Copy>(
    answer: Answer,
    ground_truth: OptionLabel,
    trap: Option<OptionLabel>,
    policy: &ShapingPolicy<T>,
) -> T {
    match answer {
        Answer::Option(l) if l == ground_truth => policy.correct,
        Answer::Option(l) if Some(l) == trap => policy.trap,
        Answer::Abstain => policy.abstain,
        Answer::Option(_) => policy.other,
    }
}

fn shaping_note(answer: Answer, ground_truth: OptionLabel, trap: Option<OptionLabel>) -> String {
    match answer {
        Answer::Option(l) if l == ground_truth => format!("answer {l} is correct"),
        Answer::Option(l) if Some(l) == trap => format!("answer {l} is the trap"),
        Answer::Abstain => "abstained".into(),
        Answer::Option(l) => format!("answer {l} is wrong (not the trap)"),
    }
}

/// Everything needed to score one trace, independent of a full sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardInput {
    pub trace_text: String,
    pub ground_truth: OptionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<OptionLabel>,
    pub misleader: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<OracleRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    /// Option list for answer extraction; defaults to bare labels A–F.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<AnswerOption>>,
}

impl RewardInput {
    pub fn from_sample(trace_text: &str, sample: &ChartSample) -> Self {
        RewardInput {
            trace_text: trace_text.to_string(),
            ground_truth: sample.ground_truth,
            trap: sample.trap,
            misleader: sample.misleader.clone(),
            oracle: sample.oracle_table.clone(),
            explanation: sample.explanation.clone(),
            options: Some(sample.options.clone()),
        }
    }
}

pub fn bare_options() -> Vec<AnswerOption> {
    OptionLabel::ALL
        .iter()
        .map(|&label| AnswerOption {
            label,
            text: String::new(),
        })
        .collect()
}

/// Scores a parsed trace. Uses `trace.answer` when set, otherwise extracts it.
#[allow(clippy::too_many_arguments)]
fn score_parsed(
    trace: &ReasoningTrace,
    ground_truth: OptionLabel,
    trap: Option<OptionLabel>,
    misleader: &str,
    oracle: Option<&[OracleRow]>,
    explanation: Option<&str>,
    options: &[AnswerOption],
    cfg: &RewardConfig,
    abstain_phrases: &[String],
    taxonomy: &Taxonomy,
) -> Result<RewardBreakdown<f64>, RewardError> {
    let (fact, fact_note) = r_fact(trace, oracle);
    let (contra, contra_note) = r_contra(trace, misleader, explanation, cfg.overlap_threshold, taxonomy)?;
    let (steps, ordered) = trace::step_name_order(trace);
    let logic = r_logic(trace);
    let fmt = r_fmt(&trace.raw_text);
    let answer = trace
        .answer
        .unwrap_or_else(|| extract_answer(trace, options, abstain_phrases));
    let shaping_value = shaping(answer, ground_truth, trap, &cfg.shaping);
    let diagnostics = Diagnostics {
        fact: fact_note,
        contra: contra_note,
        logic: format!(
            "{steps}/5 step names{}",
            if ordered { ", in order" } else { ", out of order (halved)" }
        ),
        fmt: if fmt == 1 {
            "all four tags present once, in order".into()
        } else {
            "tag structure violated".into()
        },
        shaping: shaping_note(answer, ground_truth, trap),
    };
    Ok(RewardBreakdown::new(
        Components {
            r_fact: fact,
            r_contra: contra,
            r_logic: logic,
            r_fmt: f64::from(fmt),
        },
        cfg.weights,
        shaping_value,
        diagnostics,
    ))
}

/// Full reward for a trace against its sample.
pub fn total_reward(
    trace: &ReasoningTrace,
    sample: &ChartSample,
    cfg: &RewardConfig,
    abstain_phrases: &[String],
    taxonomy: &Taxonomy,
) -> Result<RewardBreakdown<f64>, RewardError> {
    score_parsed(
        trace,
        sample.ground_truth,
        sample.trap,
        &sample.misleader,
        sample.oracle_table.as_deref(),
        sample.explanation.as_deref(),
        &sample.options,
        cfg,
        abstain_phrases,
        taxonomy,
    )
}

/// Parses and scores raw trace text.
pub fn score(
    input: &RewardInput,
    cfg: &RewardConfig,
    abstain_phrases: &[String],
    taxonomy: &Taxonomy,
) -> Result<RewardBreakdown<f64>, RewardError> {
    let trace = parse_trace(&input.trace_text);
    let fallback;
    let options = match &input.options {
        Some(o) if !o.is_empty() => o.as_slice(),
        _ => {
            fallback = bare_options();
            &fallback
        }
    };
    score_parsed(
        &trace,
        input.ground_truth,
        input.trap,
        &input.misleader,
        input.oracle.as_deref(),
        input.explanation.as_deref(),
        options,
        cfg,
        abstain_phrases,
        taxonomy,
    )
}

pub use crate::stats::group_advantage;
