//! Benchmark items and the JSONL dataset format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Misleader id used for benign (non-misleading) charts in mixed benchmarks.
pub const STANDARD_MISLEADER: &str = "none";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Line {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("sample `{id}`: field `{field}`: {message}")]
    Invalid {
        id: String,
        field: String,
        message: String,
    },
    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

/// A multiple-choice option label, restricted to `A`..=`F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OptionLabel(char);

impl OptionLabel {
    pub const ALL: [OptionLabel; 6] = [
        OptionLabel('A'),
        OptionLabel('B'),
        OptionLabel('C'),
        OptionLabel('D'),
        OptionLabel('E'),
        OptionLabel('F'),
    ];

    pub fn new(c: char) -> Option<Self> {
        let c = c.to_ascii_uppercase();
        ('A'..='F').contains(&c).then_some(OptionLabel(c))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::new(c),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for OptionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_char(self.0)
    }
}

impl<'de> Deserialize<'de> for OptionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        OptionLabel::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid option label {s:?}, expected A-F")))
    }
}

/// A model's final decision for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Option(OptionLabel),
    Abstain,
}

impl Answer {
    pub fn label(self) -> Option<OptionLabel> {
        match self {
            Answer::Option(l) => Some(l),
            Answer::Abstain => None,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Option(l) => write!(f, "{l}"),
            Answer::Abstain => f.write_str("abstain"),
        }
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("abstain") {
            return Ok(Answer::Abstain);
        }
        OptionLabel::parse(&s)
            .map(Answer::Option)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid answer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: OptionLabel,
    pub text: String,
}

/// One cell of the long-form oracle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub category: String,
    pub series: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    pub question: String,
    pub options: Vec<AnswerOption>,
    #[serde(rename = "answer")]
    pub ground_truth: OptionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<OptionLabel>,
    pub misleader: String,
    pub chart_type: String,
    /// Only used by standard (non-misleading) pools of the mixed benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
    #[serde(rename = "oracle", default, skip_serializing_if = "Option::is_none")]
    pub oracle_table: Option<Vec<OracleRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_markdown: Option<String>,
    #[serde(rename = "detections", default, skip_serializing_if = "Option::is_none")]
    pub detections_path: Option<PathBuf>,
}

impl ChartSample {
    pub fn labels(&self) -> impl Iterator<Item = OptionLabel> + '_ {
        self.options.iter().map(|o| o.label)
    }

    pub fn option_text(&self, label: OptionLabel) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.text.as_str())
    }

    pub fn is_standard(&self) -> bool {
        self.misleader == STANDARD_MISLEADER
    }

    /// Checks every type invariant, reporting the first violated field.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let bad = |field: &str, msg: String| Err((field.to_string(), msg));
        if self.id.trim().is_empty() {
            return bad("id", "must not be empty".into());
        }
        if self.options.is_empty() {
            return bad("options", "must not be empty".into());
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if !seen.insert(o.label) {
                return bad("options", format!("duplicate label {}", o.label));
            }
        }
        if !seen.contains(&self.ground_truth) {
            return bad(
                "answer",
                format!("label {} is not among the options", self.ground_truth),
            );
        }
        if let Some(trap) = self.trap {
            if !seen.contains(&trap) {
                return bad("trap", format!("label {trap} is not among the options"));
            }
            if trap == self.ground_truth {
                return bad(
                    "trap",
                    format!("trap and answer are both {trap}; trap must differ from answer"),
                );
            }
        }
        if let Some(rows) = &self.oracle_table {
            let mut keys = HashSet::new();
            for r in rows {
                if !r.value.is_finite() {
                    return bad(
                        "oracle",
                        format!("non-finite value for ({}, {})", r.category, r.series),
                    );
                }
                if !keys.insert((r.category.as_str(), r.series.as_str())) {
                    return bad(
                        "oracle",
                        format!("duplicate (category, series) = ({}, {})", r.category, r.series),
                    );
                }
            }
        }
        Ok(())
    }
}

/// Parses one JSONL line into a validated sample.
pub fn parse_sample_line(line: &str, line_no: usize) -> Result<ChartSample, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    let sample: ChartSample = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        // missing-field errors carry the field name in the message, not the path
        let field = if path == "." {
            msg.split('`').nth(1).unwrap_or("<root>").to_string()
        } else {
            path
        };
        DatasetError::Line {
            line: line_no,
            field,
            message: msg,
        }
    })?;
    sample
        .validate()
        .map_err(|(field, message)| DatasetError::Line {
            line: line_no,
            field,
            message,
        })?;
    Ok(sample)
}

/// Loads a JSONL dataset; samples are returned in file order.
pub fn load_dataset(path: &Path) -> Result<Vec<ChartSample>, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<ChartSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample_line(&line, line_no)?;
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_dataset<W: Write>(mut out: W, samples: &[ChartSample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads an oracle table from CSV.
///
/// Two layouts are accepted: long form with a `category,series,value` header,
/// or wide form where the first column holds categories and every other column
/// is a series.
pub fn read_oracle_csv(path: &Path) -> Result<Vec<OracleRow>, DatasetError> {
    let csv_err = |message: String| DatasetError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(csv_err("need at least two columns".into()));
    }
    let lower: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let long_form = lower == ["category", "series", "value"];
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let parse = |s: &str| {
            crate::numeric::parse_number(s)
                .ok_or_else(|| csv_err(format!("row {}: non-numeric value {s:?}", i + 2)))
        };
        if long_form {
            rows.push(OracleRow {
                category: record[0].to_string(),
                series: record[1].to_string(),
                value: parse(&record[2])?,
            });
        } else {
            let category = record[0].to_string();
            for (col, header) in headers.iter().enumerate().skip(1) {
                let cell = record.get(col).unwrap_or("");
                if cell.is_empty() {
                    continue;
                }
                rows.push(OracleRow {
                    category: category.clone(),
                    series: header.clone(),
                    value: parse(cell)?,
                });
            }
        }
    }
    Ok(rows)
}
