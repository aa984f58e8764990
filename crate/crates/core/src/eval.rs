//! Outcome classification, Acc/WM/WO aggregation, mixed-benchmark sampling
//! and report rendering.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{Answer, ChartSample, OptionLabel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("cannot aggregate an empty outcome list")]
    Empty,
    #[error("misleading category {0} has {1} sample(s); at least {2} are required")]
    SmallCategory(String, usize, usize),
    #[error("standard pool is empty")]
    EmptyStandardPool,
    #[error("nothing to report")]
    EmptyReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Correct,
    WM,
    WO,
}

/// `None` stands for a sample whose pipeline failed.
pub fn classify_outcome(answer: Option<Answer>, ground_truth: OptionLabel, trap: Option<OptionLabel>) -> Outcome {
    match answer {
        Some(Answer::Option(l)) if l == ground_truth => Outcome::Correct,
        Some(Answer::Option(l)) if Some(l) == trap => Outcome::WM,
        _ => Outcome::WO,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    /// Absent when the pipeline failed for this sample.
    pub answer: Option<Answer>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub n_correct: usize,
    pub n_wm: usize,
    pub n_wo: usize,
    pub n_total: usize,
}

/// Percentages with two decimals, kept as integer hundredths so rendering
/// never re-rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pct(pub u32);

impl Pct {
    /// `100 * count / total` rounded half-up to two decimals.
    pub fn of(count: usize, total: usize) -> Pct {
        assert!(total > 0 && count <= total);
        let (c, n) = (count as u128, total as u128);
        Pct(((20_000 * c + n) / (2 * n)) as u32)
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for Pct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Pct {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Pct {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !(0.0..=100.0).contains(&v) {
            return Err(serde::de::Error::custom(format!("percentage out of range: {v}")));
        }
        Ok(Pct((v * 100.0).round() as u32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Percentages {
    pub acc: Pct,
    pub wm: Pct,
    pub wo: Pct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_sample: Vec<SampleOutcome>,
    pub counts: Counts,
    pub percentages: Percentages,
}

impl EvalResult {
    pub fn from_counts(n_correct: usize, n_wm: usize, n_wo: usize) -> Result<Self, EvalError> {
        let n_total = n_correct + n_wm + n_wo;
        if n_total == 0 {
            return Err(EvalError::Empty);
        }
        Ok(EvalResult {
            per_sample: Vec::new(),
            counts: Counts { n_correct, n_wm, n_wo, n_total },
            percentages: Percentages {
                acc: Pct::of(n_correct, n_total),
                wm: Pct::of(n_wm, n_total),
                wo: Pct::of(n_wo, n_total),
            },
        })
    }
}

/// Counts and percentages; per-sample rows are sorted by id.
pub fn aggregate(mut outcomes: Vec<SampleOutcome>) -> Result<EvalResult, EvalError> {
    outcomes.sort_by(|a, b| a.id.cmp(&b.id));
    let count = |o: Outcome| outcomes.iter().filter(|s| s.outcome == o).count();
    let mut result = EvalResult::from_counts(count(Outcome::Correct), count(Outcome::WM), count(Outcome::WO))?;
    result.per_sample = outcomes;
    Ok(result)
}

/// Quotas for [`sample_mixed_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixedQuota {
    pub per_category: usize,
    pub misleading_total: usize,
    pub standard_total: usize,
}

impl Default for MixedQuota {
    fn default() -> Self {
        MixedQuota {
            per_category: 2,
            misleading_total: 122,
            standard_total: 122,
        }
    }
}

fn sorted_by_id(mut v: Vec<&ChartSample>) -> Vec<&ChartSample> {
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Builds the mixed benchmark: a fixed number per (misleader, chart type)
/// category from the misleading pool, round-robin over (chart type,
/// question type) combos from the standard pool, then one seeded shuffle.
///
/// Categories and combos are visited in sorted order and members are sorted
/// by id first, so the result does not depend on pool input order.
pub fn sample_mixed_benchmark(
    misleading: &[ChartSample],
    standard: &[ChartSample],
    seed: u64,
    quota: MixedQuota,
) -> Result<Vec<ChartSample>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut categories: BTreeMap<(String, String), Vec<&ChartSample>> = BTreeMap::new();
    for s in misleading {
        categories
            .entry((s.misleader.clone(), s.chart_type.clone()))
            .or_default()
            .push(s);
    }
    for ((misleader, chart_type), members) in &categories {
        if members.len() < quota.per_category {
            return Err(EvalError::SmallCategory(
                format!("{misleader}/{chart_type}"),
                members.len(),
                quota.per_category,
            ));
        }
    }
    let mut picked: Vec<ChartSample> = Vec::new();
    for members in categories.into_values() {
        if picked.len() + quota.per_category > quota.misleading_total {
            break;
        }
        let mut members = sorted_by_id(members);
        members.shuffle(&mut rng);
        picked.extend(members.into_iter().take(quota.per_category).cloned());
    }

    let mut combos: BTreeMap<(String, String), Vec<&ChartSample>> = BTreeMap::new();
    for s in standard {
        combos
            .entry((s.chart_type.clone(), s.question_type.clone().unwrap_or_default()))
            .or_default()
            .push(s);
    }
    if combos.is_empty() && quota.standard_total > 0 {
        return Err(EvalError::EmptyStandardPool);
    }
    let mut queues: Vec<std::vec::IntoIter<&ChartSample>> = combos
        .into_values()
        .map(|members| {
            let mut members = sorted_by_id(members);
            members.shuffle(&mut rng);
            members.into_iter()
        })
        .collect();
    let mut taken = 0;
    'rounds: loop {
        let mut progressed = false;
        for q in queues.iter_mut() {
            if taken == quota.standard_total {
                break 'rounds;
            }
            if let Some(s) = q.next() {
                picked.push(s.clone());
                taken += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    picked.shuffle(&mut rng);
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (expected markdown or csv)")),
        }
    }
}

/// One row per configuration, sorted by name.
pub fn render_report(results: &BTreeMap<String, EvalResult>, format: ReportFormat) -> Result<String, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    match format {
        ReportFormat::Markdown => {
            let mut out = String::from("| Config | Acc↑ | WM↓ | WO↓ | N |\n|---|---:|---:|---:|---:|\n");
            for (name, r) in results {
                let p = r.percentages;
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    name.replace('|', "\\|"),
                    p.acc,
                    p.wm,
                    p.wo,
                    r.counts.n_total
                ));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| panic!("writing csv to memory: {e}");
            w.write_record(["name", "acc", "wm", "wo"]).unwrap_or_else(io);
            for (name, r) in results {
                let p = r.percentages;
                w.write_record([name.clone(), p.acc.to_string(), p.wm.to_string(), p.wo.to_string()])
                    .unwrap_or_else(io);
            }
            let bytes = w.into_inner().expect("in-memory writer");
            Ok(String::from_utf8(bytes).expect("utf-8 input"))
        }
    }
}
