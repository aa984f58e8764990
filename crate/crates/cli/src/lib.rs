//! `chartaudit` subcommands. Exit codes: 0 success, 1 some samples failed,
//! 2 usage or configuration error.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use chartaudit_backends::{build, BackendConfig};
use chartaudit_core::eval::{aggregate, classify_outcome, render_report, sample_mixed_benchmark, MixedQuota, ReportFormat, SampleOutcome};
use chartaudit_core::pipeline::run_batch;
use chartaudit_core::reward::total_reward;
use chartaudit_core::roi::{crop, extract_rois, load_detections};
use chartaudit_core::sample::{load_dataset, read_dataset, read_oracle_csv, write_dataset};
use chartaudit_core::trace::parse_trace;
use chartaudit_core::{ChartSample, EvalResult, PipelineConfig, PipelineContext, ResultRecord, Taxonomy};
use chartaudit_service::ServiceState;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "chartaudit", version, about = "Deception-aware chart question answering toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline over a dataset
    Run(RunArgs),
    /// Score result files against a dataset (Acc / WM / WO)
    Eval(EvalArgs),
    /// Compute the reward breakdown for one trace
    Score(ScoreArgs),
    /// Draw the mixed misleading + standard benchmark
    MixedSample(MixedArgs),
    /// Write the region-of-interest crops for one chart
    Crop(CropArgs),
    /// Serve the reward over HTTP
    Serve(ServeArgs),
    /// Attach an oracle data table from CSV to one sample
    ImportOracle(ImportOracleArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset JSONL; image paths resolve against its directory
    #[arg(long)]
    pub dataset: PathBuf,
    /// Backend config JSON
    #[arg(long)]
    pub backend_config: PathBuf,
    /// Pipeline config JSON (defaults when omitted)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for results.jsonl and summary.json
    #[arg(long)]
    pub out: PathBuf,
    /// Samples in flight (overrides the config)
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Only run the first N samples in file order
    #[arg(long)]
    pub limit: Option<usize>,
    /// Record per-stage wall-clock timings (results stop being reproducible)
    #[arg(long)]
    pub timings: bool,
    /// Also write each sample's ROI crops under <out>/crops/<id>/
    #[arg(long)]
    pub dump_crops: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results to score, as NAME=PATH or PATH (name = file stem); repeatable
    #[arg(long = "results", required = true)]
    pub results: Vec<String>,
    /// Dataset JSONL with ground truth and trap labels
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for per-config JSON results and the report
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: markdown or csv
    #[arg(long, default_value = "markdown")]
    pub format: String,
    /// Add separate rows for the misleading and standard subsets
    #[arg(long)]
    pub by_subset: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// File holding the reasoning trace text
    #[arg(long)]
    pub trace_file: PathBuf,
    /// Sample JSON, or a dataset JSONL together with --id
    #[arg(long)]
    pub sample: PathBuf,
    /// Sample id when --sample holds several samples
    #[arg(long)]
    pub id: Option<String>,
    /// Pipeline config JSON for reward settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the fact weight
    #[arg(long)]
    pub w_fact: Option<f64>,
    /// Override the contradiction weight
    #[arg(long)]
    pub w_contra: Option<f64>,
    /// Override the logic weight
    #[arg(long)]
    pub w_logic: Option<f64>,
    /// Override the format weight
    #[arg(long)]
    pub w_fmt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MixedArgs {
    /// Misleading pool JSONL
    #[arg(long)]
    pub misleading: PathBuf,
    /// Standard pool JSONL (needs question_type on every sample)
    #[arg(long)]
    pub standard: PathBuf,
    /// Seed for the within-category draws and the final shuffle
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL
    #[arg(long)]
    pub out: PathBuf,
    /// Draws per misleading category
    #[arg(long, default_value_t = 2)]
    pub per_category: usize,
    /// Cap on misleading draws
    #[arg(long, default_value_t = 122)]
    pub misleading_total: usize,
    /// Standard draws
    #[arg(long, default_value_t = 122)]
    pub standard_total: usize,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    /// Chart image
    #[arg(long)]
    pub image: PathBuf,
    /// Detections JSON
    #[arg(long)]
    pub detections: PathBuf,
    /// Directory for <kind>.png crops and regions.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Pipeline config JSON for padding and class aliases
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Pipeline config JSON for reward settings and taxonomy
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment variable holding the bearer token (no auth when unset)
    #[arg(long)]
    pub token_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct ImportOracleArgs {
    /// Dataset JSONL
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sample id to update
    #[arg(long)]
    pub id: String,
    /// Oracle CSV (long category,series,value or wide form)
    #[arg(long)]
    pub csv: PathBuf,
    /// Output JSONL
    #[arg(long)]
    pub out: PathBuf,
}

/// Command failure mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    /// Some samples failed; outputs were still written.
    Samples(usize),
    Usage(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Samples(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

pub async fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(a) => cmd_run(a).await,
        Command::Eval(a) => Ok(cmd_eval(a)?),
        Command::Score(a) => Ok(cmd_score(a)?),
        Command::MixedSample(a) => Ok(cmd_mixed_sample(a)?),
        Command::Crop(a) => Ok(cmd_crop(a)?),
        Command::Serve(a) => Ok(cmd_serve(a).await?),
        Command::ImportOracle(a) => Ok(cmd_import_oracle(a)?),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_taxonomy(cfg: &PipelineConfig) -> anyhow::Result<Taxonomy> {
    match &cfg.taxonomy {
        Some(p) => Taxonomy::load(p).with_context(|| format!("loading taxonomy {}", p.display())),
        None => Ok(Taxonomy::builtin()),
    }
}

fn dataset(path: &Path) -> anyhow::Result<Vec<ChartSample>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct RunSummary {
    total: usize,
    ok: usize,
    errors: usize,
    /// Final answers by label ("abstain" for abstentions).
    answers: BTreeMap<String, usize>,
    failed: Vec<FailedSample>,
}

#[derive(Debug, Serialize)]
struct FailedSample {
    id: String,
    stage: String,
    message: String,
}

fn summarize(records: &[ResultRecord]) -> RunSummary {
    let mut answers = BTreeMap::new();
    let mut failed = Vec::new();
    for r in records {
        match r {
            ResultRecord::Ok { result, .. } => *answers.entry(result.answer.to_string()).or_insert(0) += 1,
            ResultRecord::Error { id, stage, message } => failed.push(FailedSample {
                id: id.clone(),
                stage: stage.clone(),
                message: message.clone(),
            }),
        }
    }
    RunSummary {
        total: records.len(),
        ok: records.len() - failed.len(),
        errors: failed.len(),
        answers,
        failed,
    }
}

fn dump_crops(samples: &[ChartSample], base_dir: &Path, cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    for s in samples {
        let Ok((images, _)) = chartaudit_core::pipeline::load_sample_images(s, base_dir, cfg) else {
            continue;
        };
        if images.crops.is_empty() {
            continue;
        }
        let dir = out.join("crops").join(&s.id);
        fs::create_dir_all(&dir)?;
        for (kind, img) in &images.crops {
            img.save(dir.join(format!("{}.png", kind.as_str())))?;
        }
    }
    Ok(())
}

pub async fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if args.timings {
        cfg.record_timings = true;
    }
    let concurrency = args.concurrency.unwrap_or(cfg.concurrency);
    if concurrency == 0 {
        return Err(anyhow!("--concurrency must be at least 1").into());
    }
    let mut samples = dataset(&args.dataset)?;
    if let Some(n) = args.limit {
        samples.truncate(n);
    }
    let backend_cfg = BackendConfig::load(&args.backend_config)
        .with_context(|| format!("loading backend config {}", args.backend_config.display()))?;
    let clients = build(&backend_cfg).context("building backend")?;
    let ctx = PipelineContext::new(cfg).context("loading taxonomy/templates")?;
    let base_dir = args.dataset.parent().unwrap_or(Path::new(".")).to_path_buf();

    let records = run_batch(
        clients.backend.as_ref(),
        clients.ocr.as_deref(),
        &samples,
        &base_dir,
        &ctx,
        concurrency,
    )
    .await;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_jsonl(&args.out.join("results.jsonl"), &records)?;
    let summary = summarize(&records);
    write_json(&args.out.join("summary.json"), &summary)?;
    if args.dump_crops {
        dump_crops(&samples, &base_dir, &ctx.config, &args.out)?;
    }
    eprintln!("{} samples: {} ok, {} failed", summary.total, summary.ok, summary.errors);
    match summary.errors {
        0 => Ok(()),
        n => Err(Failure::Samples(n)),
    }
}

pub fn read_results(path: &Path) -> anyhow::Result<Vec<ResultRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening results {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad result record", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

fn parse_results_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

/// Joins results to ground truth. Samples without a record count as failures.
pub fn evaluate(records: &[ResultRecord], samples: &[ChartSample]) -> anyhow::Result<Vec<(SampleOutcome, bool)>> {
    if records.is_empty() {
        bail!("results are empty");
    }
    let by_id: BTreeMap<&str, &ChartSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut answers = BTreeMap::new();
    for r in records {
        if !by_id.contains_key(r.id()) {
            bail!("result id {:?} is not in the dataset", r.id());
        }
        if answers.insert(r.id(), r.answer()).is_some() {
            bail!("duplicate result id {:?}", r.id());
        }
    }
    Ok(samples
        .iter()
        .map(|s| {
            let answer = answers.get(s.id.as_str()).copied().flatten();
            let outcome = SampleOutcome {
                id: s.id.clone(),
                answer,
                outcome: classify_outcome(answer, s.ground_truth, s.trap),
            };
            (outcome, s.is_standard())
        })
        .collect())
}

pub fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let format: ReportFormat = args.format.parse().map_err(|e| anyhow!("{e}"))?;
    let samples = dataset(&args.dataset)?;
    let mut results: BTreeMap<String, EvalResult> = BTreeMap::new();
    for arg in &args.results {
        let (name, path) = parse_results_arg(arg);
        let records = read_results(&path)?;
        let joined = evaluate(&records, &samples).with_context(|| format!("evaluating {}", path.display()))?;
        if args.by_subset {
            for (subset, standard) in [("misleading", false), ("standard", true)] {
                let part: Vec<SampleOutcome> = joined.iter().filter(|(_, s)| *s == standard).map(|(o, _)| o.clone()).collect();
                if !part.is_empty() {
                    results.insert(format!("{name}/{subset}"), aggregate(part)?);
                }
            }
        }
        let all = aggregate(joined.into_iter().map(|(o, _)| o).collect())?;
        if results.insert(name.clone(), all).is_some() {
            bail!("duplicate results name {name:?}");
        }
    }
    let report = render_report(&results, format)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        for (name, r) in &results {
            write_json(&out.join(format!("{}.json", name.replace('/', "__"))), r)?;
        }
        let ext = match format {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        };
        fs::write(out.join(format!("report.{ext}")), &report)?;
    }
    std::io::stdout().lock().write_all(report.as_bytes())?;
    Ok(())
}

fn load_one_sample(path: &Path, id: Option<&str>) -> anyhow::Result<ChartSample> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // a pretty-printed single sample is not valid JSONL
    if let Ok(s) = serde_json::from_str::<ChartSample>(&text) {
        s.validate().map_err(|(f, m)| anyhow!("sample field {f}: {m}"))?;
        return Ok(s);
    }
    let samples = read_dataset(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?;
    match (id, samples.len()) {
        (Some(id), _) => samples
            .into_iter()
            .find(|s| s.id == id)
            .ok_or_else(|| anyhow!("sample {id:?} not found in {}", path.display())),
        (None, 1) => Ok(samples.into_iter().next().unwrap()),
        (None, n) => bail!("{} holds {n} samples; pass --id", path.display()),
    }
}

pub fn cmd_score(args: ScoreArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    let taxonomy = load_taxonomy(&cfg)?;
    let w = &mut cfg.reward.weights;
    for (slot, v) in [(&mut w.fact, args.w_fact), (&mut w.contra, args.w_contra), (&mut w.logic, args.w_logic), (&mut w.fmt, args.w_fmt)] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.reward.validate().map_err(|e| anyhow!("{e}"))?;
    let text = fs::read_to_string(&args.trace_file).with_context(|| format!("reading {}", args.trace_file.display()))?;
    let sample = load_one_sample(&args.sample, args.id.as_deref())?;
    let breakdown = total_reward(&parse_trace(&text), &sample, &cfg.reward, &cfg.abstain_phrases, &taxonomy)?;
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&breakdown)?)?;
    Ok(())
}

pub fn cmd_mixed_sample(args: MixedArgs) -> anyhow::Result<()> {
    let misleading = dataset(&args.misleading)?;
    let standard = dataset(&args.standard)?;
    let quota = MixedQuota {
        per_category: args.per_category,
        misleading_total: args.misleading_total,
        standard_total: args.standard_total,
    };
    let picked = sample_mixed_benchmark(&misleading, &standard, args.seed, quota)?;
    let mut out = Vec::new();
    write_dataset(&mut out, &picked)?;
    fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote {} samples", picked.len());
    Ok(())
}

pub fn cmd_crop(args: CropArgs) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let img = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .to_rgba8();
    let dets = load_detections(&args.detections)?;
    let regions = extract_rois(&dets, img.dimensions(), &cfg.padding, &cfg.roi_aliases)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut rects = BTreeMap::new();
    for (kind, region) in &regions {
        let piece = crop(&img, &region.rect)?;
        piece.save(args.out_dir.join(format!("{}.png", kind.as_str())))?;
        rects.insert(*kind, region.rect);
    }
    write_json(&args.out_dir.join("regions.json"), &rects)?;
    eprintln!("wrote {} crops", regions.len());
    Ok(())
}

pub async fn cmd_serve(args: ServeArgs) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let taxonomy = load_taxonomy(&cfg)?;
    let token = match &args.token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    let state = ServiceState::new(cfg, taxonomy).with_token(token);
    eprintln!("listening on {}", args.bind);
    chartaudit_service::serve(args.bind, state).await?;
    Ok(())
}

pub fn cmd_import_oracle(args: ImportOracleArgs) -> anyhow::Result<()> {
    let mut samples = dataset(&args.dataset)?;
    let rows = read_oracle_csv(&args.csv)?;
    let sample = samples
        .iter_mut()
        .find(|s| s.id == args.id)
        .ok_or_else(|| anyhow!("sample {:?} not found", args.id))?;
    let categories: BTreeSet<&str> = rows.iter().map(|r| r.category.as_str()).collect();
    eprintln!("{} rows over {} categories", rows.len(), categories.len());
    sample.oracle_table = Some(rows);
    let mut out = Vec::new();
    write_dataset(&mut out, &samples)?;
    let mut f = fs::File::create(&args.out)?;
    f.write_all(&out)?;
    Ok(())
}
