#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chartaudit_core::sample::{AnswerOption, ChartSample, OptionLabel};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden() -> PathBuf {
    fixtures().join("golden")
}

pub fn chartaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartaudit"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("spawn chartaudit")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs the golden set into `out` and returns the exit code.
pub fn run_golden(out: &Path, concurrency: usize) -> i32 {
    let g = golden();
    let o = chartaudit(&[
        "run",
        "--dataset",
        g.join("dataset.jsonl").to_str().unwrap(),
        "--backend-config",
        g.join("backend.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--concurrency",
        &concurrency.to_string(),
    ]);
    if code(&o) != 0 {
        eprintln!("{}", stderr(&o));
    }
    code(&o)
}

pub fn sample(id: &str, misleader: &str, chart_type: &str, question_type: Option<&str>) -> ChartSample {
    ChartSample {
        id: id.to_string(),
        image_path: format!("{id}.png").into(),
        question: format!("question {id}"),
        options: ["A", "B", "C"]
            .iter()
            .map(|l| AnswerOption {
                label: OptionLabel::parse(l).unwrap(),
                text: format!("{l} for {id}"),
            })
            .collect(),
        ground_truth: OptionLabel::parse("A").unwrap(),
        trap: Some(OptionLabel::parse("B").unwrap()),
        misleader: misleader.to_string(),
        chart_type: chart_type.to_string(),
        question_type: question_type.map(str::to_string),
        oracle_table: None,
        explanation: None,
        ocr_markdown: None,
        detections_path: None,
    }
}
