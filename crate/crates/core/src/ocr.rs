//! OCR data path: markdown tables to numeric evidence, dual-tier trust,
//! temporal integrity audit and calibration directives.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::numeric::{contains_phrase, parse_number, scan_numbers};
use crate::vision::DiagnosticReport;

pub const LOW_TRUST_DIRECTIVE: &str = "Treat OCR values as approximate; prefer diagnostic deductions.";
pub const HIGH_TRUST_DIRECTIVE: &str = "Treat labeled values as ground truth.";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn first_column(&self) -> impl Iterator<Item = &str> {
        self.rows
            .iter()
            .map(|r| r.first().map_or("", String::as_str))
    }

    /// Every value cell (all columns after the label column) parses as a number.
    pub fn is_complete(&self) -> bool {
        let width = self.headers.len().max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        if self.rows.is_empty() || width < 2 {
            return false;
        }
        self.rows.iter().all(|row| {
            (1..width).all(|c| row.get(c).and_then(|cell| parse_number(cell)).is_some())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEntity {
    pub raw_token: String,
    pub value: f64,
    /// Index into `OcrDocument::tables`; absent for loose text entities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<usize>,
    /// Data-row index for table entities, line index for loose entities.
    pub row: usize,
    /// Column index for table entities, token ordinal within the line otherwise.
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trust {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntegrityFlag {
    ReversedOrder,
    ShuffledOrder,
    IncompletePeriod,
    ExceedsCanvas,
}

impl IntegrityFlag {
    pub fn directive(self) -> &'static str {
        match self {
            IntegrityFlag::ReversedOrder => "Re-sort categories chronologically before comparing.",
            IntegrityFlag::ShuffledOrder => {
                "Categories are out of chronological order; re-sort them before reading any trend."
            }
            IntegrityFlag::IncompletePeriod => {
                "The final period appears incomplete; do not compare it as if it were a full cycle."
            }
            IntegrityFlag::ExceedsCanvas => {
                "Visual elements exceed the canvas; use OCR values only as qualitative indicators."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OcrDocument {
    pub source_markdown: String,
    pub tables: Vec<Table>,
    pub entities: Vec<NumericEntity>,
    /// `None` until [`assign_trust`] runs.
    pub trust: Option<Trust>,
    pub integrity_flags: BTreeSet<IntegrityFlag>,
    pub directives: Vec<String>,
}

impl OcrDocument {
    pub fn is_empty(&self) -> bool {
        self.source_markdown.trim().is_empty()
    }
}

/// Keyword and pattern lists for the data path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPathConfig {
    /// Phrases in the diagnosis that mean plotted elements overflow the canvas.
    pub exceeds_canvas_keywords: Vec<String>,
    /// Markers on the final temporal label that mean the period is partial.
    pub partial_period_patterns: Vec<String>,
    /// Also flag a month label without a year that follows year-level rows.
    pub month_after_years_is_partial: bool,
}

impl Default for DataPathConfig {
    fn default() -> Self {
        DataPathConfig {
            exceeds_canvas_keywords: [
                "exceed the canvas",
                "exceeds the canvas",
                "exceeding the canvas",
                "beyond the canvas",
                "outside the canvas",
                "cut off by the canvas",
                "outside the plot area",
            ]
            .map(String::from)
            .to_vec(),
            partial_period_patterns: ["YTD", "*", "to date", "(partial)"].map(String::from).to_vec(),
            month_after_years_is_partial: true,
        }
    }
}

fn split_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').map(|c| c.trim().to_string()).collect()
}

fn is_separator(cells: &[String]) -> bool {
    !cells.is_empty()
        && cells.iter().all(|c| {
            let c = c.trim();
            !c.is_empty() && c.contains('-') && c.chars().all(|ch| matches!(ch, '-' | ':' | ' '))
        })
}

/// Parses pipe-delimited markdown tables and loose numeric lines.
///
/// Trust, flags and directives are left unset; see [`assign_trust`],
/// [`integrity_audit`] and [`calibrate`].
pub fn parse_ocr_markdown(markdown: &str) -> OcrDocument {
    let mut doc = OcrDocument {
        source_markdown: markdown.to_string(),
        ..Default::default()
    };
    let lines: Vec<&str> = markdown.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.trim_start().starts_with('|') {
            let start = i;
            while i < lines.len() && lines[i].trim_start().starts_with('|') {
                i += 1;
            }
            push_table(&mut doc, &lines[start..i]);
            continue;
        }
        for (ordinal, tok) in scan_numbers(line).into_iter().enumerate() {
            doc.entities.push(NumericEntity {
                raw_token: tok.raw,
                value: tok.value,
                table: None,
                row: i,
                col: ordinal,
                category: None,
                series: None,
            });
        }
        i += 1;
    }
    doc
}

fn push_table(doc: &mut OcrDocument, block: &[&str]) {
    let mut rows: Vec<Vec<String>> = block.iter().map(|l| split_row(l)).collect();
    let headers = rows.remove(0);
    if rows.first().is_some_and(|r| is_separator(r)) {
        rows.remove(0);
    }
    let table_idx = doc.tables.len();
    let label_col = headers.len() > 1;
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if label_col && c == 0 {
                continue;
            }
            let Some(value) = parse_number(cell) else {
                continue;
            };
            doc.entities.push(NumericEntity {
                raw_token: cell.clone(),
                value,
                table: Some(table_idx),
                row: r,
                col: c,
                category: label_col.then(|| row[0].clone()),
                series: headers.get(c).filter(|_| label_col).cloned(),
            });
        }
    }
    doc.tables.push(Table { headers, rows });
}

/// Sets the trust tier: High only for a complete table and no canvas overflow.
pub fn assign_trust(
    mut doc: OcrDocument,
    report: Option<&DiagnosticReport>,
    cfg: &DataPathConfig,
) -> OcrDocument {
    if let Some(report) = report {
        let findings = report.diagnosis.join("\n");
        if cfg
            .exceeds_canvas_keywords
            .iter()
            .any(|k| contains_phrase(&findings, k))
        {
            doc.integrity_flags.insert(IntegrityFlag::ExceedsCanvas);
        }
    }
    let complete = doc.tables.iter().any(Table::is_complete);
    let overflow = doc.integrity_flags.contains(&IntegrityFlag::ExceedsCanvas);
    doc.trust = Some(if complete && !overflow {
        Trust::High
    } else {
        Trust::Low
    });
    doc
}

/// Sortable time key. Month-only labels have no year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimeKey {
    Dated(i32, u32, u32),
    MonthOnly(u32),
}

static ISO_DATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{4})-(\d{1,2})(?:-(\d{1,2}))?$").expect("ISO_DATE_RE"));
static QUARTER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:q([1-4])\s*[-/ ]?\s*(\d{4})|(\d{4})\s*[-/ ]?\s*q([1-4]))$").expect("QUARTER_RE")
});
static YEAR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{4})$").expect("YEAR_RE"));
static MONTH_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^([a-z]+)\.?(?:\s*[-/ ,]?\s*(\d{4}))?$").expect("MONTH_RE")
});

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn month_index(word: &str) -> Option<u32> {
    let w = word.to_ascii_lowercase();
    if w.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| m.starts_with(&w) && (w.len() == 3 || w.len() == m.len() || (w == "sept")))
        .or_else(|| (w == "sept").then_some(8))
        .map(|i| i as u32 + 1)
}

fn strip_partial_markers(label: &str, patterns: &[String]) -> String {
    let mut s = label.to_string();
    for p in patterns {
        if p.chars().all(|c| !c.is_alphanumeric()) {
            s = s.replace(p.as_str(), " ");
        } else {
            let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(p))).expect("escaped");
            s = re.replace_all(&s, " ").into_owned();
        }
    }
    s.trim().trim_matches(|c: char| c == '-' || c == ',').trim().to_string()
}

fn parse_time_label(label: &str) -> Option<TimeKey> {
    let l = label.trim();
    if let Some(c) = YEAR_RE.captures(l) {
        return Some(TimeKey::Dated(c[1].parse().ok()?, 0, 0));
    }
    if let Some(c) = ISO_DATE_RE.captures(l) {
        let m: u32 = c[2].parse().ok()?;
        let d: u32 = c.get(3).map_or(Some(0), |d| d.as_str().parse().ok())?;
        if !(1..=12).contains(&m) || d > 31 {
            return None;
        }
        return Some(TimeKey::Dated(c[1].parse().ok()?, m, d));
    }
    if let Some(c) = QUARTER_RE.captures(l) {
        let (q, y) = match (c.get(1), c.get(2)) {
            (Some(q), Some(y)) => (q.as_str(), y.as_str()),
            _ => (&c[4], &c[3]),
        };
        let q: u32 = q.parse().ok()?;
        return Some(TimeKey::Dated(y.parse().ok()?, q * 3 - 2, 0));
    }
    if let Some(c) = MONTH_RE.captures(l) {
        let m = month_index(&c[1])?;
        return Some(match c.get(2) {
            Some(y) => TimeKey::Dated(y.as_str().parse().ok()?, m, 0),
            None => TimeKey::MonthOnly(m),
        });
    }
    None
}

fn audit_table(table: &Table, cfg: &DataPathConfig) -> BTreeSet<IntegrityFlag> {
    let mut flags = BTreeSet::new();
    let labels: Vec<&str> = table.first_column().collect();
    if labels.len() < 2 {
        return flags;
    }
    let keys: Option<Vec<TimeKey>> = labels
        .iter()
        .map(|l| parse_time_label(&strip_partial_markers(l, &cfg.partial_period_patterns)))
        .collect();
    let Some(mut keys) = keys else {
        return flags;
    };
    let all_month_only = keys.iter().all(|k| matches!(k, TimeKey::MonthOnly(_)));
    let mut trailing_month = false;
    if !all_month_only {
        // a month-only label is only allowed as the final row after dated rows
        if let Some(TimeKey::MonthOnly(_)) = keys.last() {
            keys.pop();
            trailing_month = true;
        }
        if keys.iter().any(|k| matches!(k, TimeKey::MonthOnly(_))) {
            return flags;
        }
    }

    if keys.len() >= 2 {
        let non_decreasing = keys.windows(2).all(|w| w[0] <= w[1]);
        let non_increasing = keys.windows(2).all(|w| w[0] >= w[1]);
        let strictly_decreasing = keys.windows(2).all(|w| w[0] > w[1]);
        if strictly_decreasing {
            flags.insert(IntegrityFlag::ReversedOrder);
        } else if !non_decreasing && !non_increasing {
            flags.insert(IntegrityFlag::ShuffledOrder);
        }
    }

    let last = labels.last().expect("len >= 2");
    let marked = cfg.partial_period_patterns.iter().any(|p| {
        if p.chars().all(|c| !c.is_alphanumeric()) {
            last.contains(p.as_str())
        } else {
            contains_phrase(last, p)
        }
    });
    let year_level = keys.iter().all(|k| matches!(k, TimeKey::Dated(_, 0, 0)));
    if marked || (trailing_month && year_level && cfg.month_after_years_is_partial) {
        flags.insert(IntegrityFlag::IncompletePeriod);
    }
    flags
}

/// Flags reversed, shuffled or incomplete temporal sequences in the first
/// column of each table.
pub fn integrity_audit(mut doc: OcrDocument, cfg: &DataPathConfig) -> OcrDocument {
    for table in &doc.tables {
        let flags = audit_table(table, cfg);
        doc.integrity_flags.extend(flags);
    }
    doc
}

/// Directive strings as a pure function of trust and flags.
pub fn emit_calibration_directives(
    trust: Option<Trust>,
    flags: &BTreeSet<IntegrityFlag>,
) -> Vec<String> {
    let head = match trust {
        Some(Trust::High) => HIGH_TRUST_DIRECTIVE,
        Some(Trust::Low) | None => LOW_TRUST_DIRECTIVE,
    };
    std::iter::once(head)
        .chain(flags.iter().map(|f| f.directive()))
        .map(String::from)
        .collect()
}

/// Runs the whole data path on already-parsed markdown.
pub fn calibrate(
    doc: OcrDocument,
    report: Option<&DiagnosticReport>,
    cfg: &DataPathConfig,
) -> OcrDocument {
    let doc = assign_trust(doc, report, cfg);
    let mut doc = integrity_audit(doc, cfg);
    doc.directives = emit_calibration_directives(doc.trust, &doc.integrity_flags);
    doc
}

/// The OCR section of the fusion prompt.
pub fn render_for_prompt(doc: &OcrDocument) -> String {
    if doc.is_empty() {
        "(no OCR data available)".to_string()
    } else {
        doc.source_markdown.trim().to_string()
    }
}
