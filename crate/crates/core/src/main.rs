//! `smartllm` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 backend
//! or network error.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use smartllm::corpus::{load_corpus_dir, ChunkParams, HashedTfEmbedder, RetrievalIndex};
use smartllm::dataset::{
    emit_finetune_config, export_instructions, load_dataset, stratified_split, write_jsonl,
    FinetuneConfig, Split,
};
use smartllm::evaluation::{
    confusion, ingest_baseline, outcomes, per_type_breakdown, render_comparison,
    render_metrics_table, truth_map, EvaluationReport, MethodReport,
};
use smartllm::gateway::{BackendConfig, BackendKind, Gateway, GatewayError};
use smartllm::pipeline::{
    AuditConfig, AuditResult, Auditor, FailureKind, PromptRole, TemplateSet,
    DEFAULT_DETECTOR_PROMPTS, DEFAULT_RETRIEVAL_K,
};
use smartllm::preprocess::{preprocess, SourceUnit};
use smartllm::Label;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BACKEND: u8 = 3;

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_DATA, error: error.into() }
}

fn backend(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_BACKEND, error: error.into() }
}

trait OrData<T> {
    fn or_data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrData<T> for Result<T, E> {
    fn or_data(self) -> Result<T, Failure> {
        self.map_err(data)
    }
}

#[derive(Parser)]
#[command(name = "smartllm", version, about = "Smart-contract vulnerability auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strip comments and normalize whitespace in Solidity sources.
    Preprocess {
        /// A `.sol` file or a directory searched recursively for `.sol` files.
        input: PathBuf,
        /// Output file (for a file input) or directory (for a directory input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or query the reference-documentation index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run the detector/reasoner/verificator workflow over contracts.
    Audit(AuditArgs),
    /// Stratified train/test split of a labeled dataset.
    Split {
        dataset: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write instruction-tuning records and the fine-tuning configuration.
    ExportFinetune(ExportArgs),
    /// Score audit results against ground truth.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        /// Labeled dataset (JSON-lines) holding the ground truth.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "SmartLLM")]
        method_name: String,
        /// Report JSON, usable as `compare --computed`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-contract outcome JSON-lines.
        #[arg(long)]
        outcomes: Option<PathBuf>,
    },
    /// Merge ingested baselines and computed reports into one table.
    Compare {
        #[arg(long = "baseline", num_args = 1..)]
        baselines: Vec<PathBuf>,
        #[arg(long = "computed", num_args = 1..)]
        computed: Vec<PathBuf>,
        /// Machine-readable comparison JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Chunk and embed every `.md`/`.txt` document under a directory.
    Build {
        corpus_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = smartllm::corpus::DEFAULT_WINDOW_WORDS)]
        window: usize,
        #[arg(long, default_value_t = smartllm::corpus::DEFAULT_OVERLAP_WORDS)]
        overlap: usize,
    },
    /// Print the top-k chunks for a query.
    Search {
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short = 'k', long = "k", default_value_t = 5,
              value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
    },
}

#[derive(Args)]
struct AuditArgs {
    /// A `.sol` file, a dataset `.jsonl`, or a directory of `.sol` files.
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the backend kind from the configuration.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    dataset: PathBuf,
    /// Output directory for `instructions.jsonl` and `finetune_config.json`.
    #[arg(long)]
    out: PathBuf,
    /// Restrict the export to the training ids of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<u32>,
}

fn default_detector_prompts() -> usize {
    DEFAULT_DETECTOR_PROMPTS
}
fn default_retrieval_k() -> usize {
    DEFAULT_RETRIEVAL_K
}
fn default_max_tokens() -> u32 {
    smartllm::gateway::DEFAULT_MAX_TOKENS
}

/// Audit configuration file. Relative paths are resolved against the
/// directory containing the file.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct AppConfig {
    backend: BackendConfig,
    #[serde(default = "default_detector_prompts")]
    detector_prompts: usize,
    #[serde(default = "default_retrieval_k")]
    retrieval_k: usize,
    /// Prebuilt index. Either this or `corpus_dir` is required.
    #[serde(default)]
    index_path: Option<PathBuf>,
    /// Documentation directory indexed at startup when no index is given.
    #[serde(default)]
    corpus_dir: Option<PathBuf>,
    #[serde(default)]
    chunk_window_words: Option<usize>,
    #[serde(default)]
    chunk_overlap_words: Option<usize>,
    #[serde(default)]
    templates_dir: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    temperature: f64,
    #[serde(default = "default_max_tokens")]
    max_tokens: u32,
}

impl AppConfig {
    fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: AppConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.index_path);
        resolve(&mut cfg.corpus_dir);
        resolve(&mut cfg.templates_dir);
        resolve(&mut cfg.backend.script_path);
        Ok(cfg)
    }

    /// Paths and numeric bounds are checked before any contract is read.
    fn check(&self) -> anyhow::Result<()> {
        if self.detector_prompts == 0 {
            return Err(anyhow!("detector_prompts must be at least 1"));
        }
        if self.retrieval_k == 0 {
            return Err(anyhow!("retrieval_k must be at least 1"));
        }
        if self.index_path.is_none() && self.corpus_dir.is_none() {
            return Err(anyhow!("config needs index_path or corpus_dir"));
        }
        let paths = [
            ("index_path", &self.index_path),
            ("corpus_dir", &self.corpus_dir),
            ("templates_dir", &self.templates_dir),
        ];
        for (name, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(anyhow!("{name} {} does not exist", p.display()));
                }
            }
        }
        if self.backend.kind == BackendKind::Scripted {
            if let Some(p) = &self.backend.script_path {
                if !p.exists() {
                    return Err(anyhow!("script_path {} does not exist", p.display()));
                }
            }
        }
        self.backend.validate()?;
        Ok(())
    }

    fn chunk_params(&self) -> ChunkParams {
        let d = ChunkParams::default();
        ChunkParams {
            window_words: self.chunk_window_words.unwrap_or(d.window_words),
            overlap_words: self.chunk_overlap_words.unwrap_or(d.overlap_words),
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Preprocess { input, out } => cmd_preprocess(&input, out.as_deref()),
        Command::Index(IndexCommand::Build { corpus_dir, out, window, overlap }) => {
            cmd_index_build(&corpus_dir, &out, ChunkParams { window_words: window, overlap_words: overlap })
        }
        Command::Index(IndexCommand::Search { index, query, k }) => {
            cmd_index_search(&index, &query, k as usize)
        }
        Command::Audit(args) => cmd_audit(&args),
        Command::Split { dataset, seed, ratio, out } => cmd_split(&dataset, seed, ratio, &out),
        Command::ExportFinetune(args) => cmd_export(&args),
        Command::Evaluate { results, truth, method_name, out, outcomes } => {
            cmd_evaluate(&results, &truth, &method_name, out.as_deref(), outcomes.as_deref())
        }
        Command::Compare { baselines, computed, out } => {
            cmd_compare(&baselines, &computed, out.as_deref())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn collect_sol_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "sol") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn relative_id(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .or_data()?;
    }
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .or_data()
}

fn cmd_preprocess(input: &Path, out: Option<&Path>) -> CmdResult {
    let (root, files) = if input.is_dir() {
        (input.to_path_buf(), collect_sol_files(input).or_data()?)
    } else {
        (input.parent().unwrap_or(Path::new("")).to_path_buf(), vec![input.to_path_buf()])
    };
    let mut failures = Vec::new();
    for file in &files {
        let id = relative_id(&root, file);
        let text = match std::fs::read_to_string(file) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{id}: {e}"));
                continue;
            }
        };
        match preprocess(&SourceUnit::new(id.clone(), text)) {
            Ok(n) => {
                match (out, input.is_dir()) {
                    (Some(dir), true) => write_file(&dir.join(&id), &n.text)?,
                    (Some(path), false) => write_file(path, &n.text)?,
                    (None, false) => print!("{}", n.text),
                    (None, true) => {}
                }
                // Keep stdout clean for the normalized text itself.
                let line = format!("{id}: {} tokens", n.token_count);
                if out.is_none() && !input.is_dir() {
                    eprintln!("{line}");
                } else {
                    println!("{line}");
                }
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    if files.is_empty() {
        return Err(data(anyhow!("no .sol files under {}", input.display())));
    }
    println!("processed {} of {} files", files.len() - failures.len(), files.len());
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }
    Err(data(anyhow!("{} file(s) failed preprocessing", failures.len())))
}

fn cmd_index_build(corpus_dir: &Path, out: &Path, params: ChunkParams) -> CmdResult {
    let chunks = load_corpus_dir(corpus_dir, params).or_data()?;
    let index = RetrievalIndex::build(chunks, &HashedTfEmbedder::default()).or_data()?;
    index.save(out).or_data()?;
    println!("indexed {} chunks into {}", index.len(), out.display());
    Ok(())
}

fn cmd_index_search(path: &Path, query: &str, k: usize) -> CmdResult {
    let index = RetrievalIndex::load(path).or_data()?;
    let embedder = HashedTfEmbedder::new(index.dim());
    let hits = index.search(&embedder, query, k).or_data()?;
    for hit in hits {
        let chunk = index.chunk(hit.chunk_id).expect("search returns indexed chunks");
        let section = chunk.section_path.join(" > ");
        println!("{:.6}\t[chunk {}] {} > {}", hit.score, hit.chunk_id, chunk.doc_id, section);
    }
    Ok(())
}

fn load_audit_inputs(input: &Path) -> anyhow::Result<Vec<SourceUnit>> {
    if input.is_dir() {
        let files = collect_sol_files(input)?;
        if files.is_empty() {
            return Err(anyhow!("no .sol files under {}", input.display()));
        }
        return files
            .iter()
            .map(|f| {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                Ok(SourceUnit::new(relative_id(input, f), text))
            })
            .collect();
    }
    if input.extension().is_some_and(|e| e == "jsonl") {
        let (samples, _) = load_dataset(input)?;
        return Ok(samples.iter().map(|s| s.source_unit()).collect());
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let id = input.file_name().map_or_else(|| "contract".into(), |n| n.to_string_lossy().into_owned());
    Ok(vec![SourceUnit::new(id, text)])
}

fn cmd_audit(args: &AuditArgs) -> CmdResult {
    let mut cfg = AppConfig::load(&args.config).or_data()?;
    if let Some(kind) = args.backend {
        cfg.backend.kind = kind;
    }
    cfg.check().or_data()?;

    let templates = match &cfg.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir).or_data()?,
        None => TemplateSet::builtin(),
    };
    let templates = templates.with_detector_count(cfg.detector_prompts).or_data()?;
    let index = match &cfg.index_path {
        Some(p) => RetrievalIndex::load(p).or_data()?,
        None => {
            let dir = cfg.corpus_dir.as_deref().expect("checked");
            let chunks = load_corpus_dir(dir, cfg.chunk_params()).or_data()?;
            RetrievalIndex::build(chunks, &HashedTfEmbedder::default()).or_data()?
        }
    };
    let embedder = Arc::new(HashedTfEmbedder::new(index.dim()));
    let contracts = load_audit_inputs(&args.input).or_data()?;

    let gateway = Gateway::from_config(&cfg.backend).map_err(|e| match e {
        GatewayError::InvalidConfig(_) | GatewayError::Script { .. } => data(e),
        _ => backend(e),
    })?;
    let config = AuditConfig {
        templates,
        retrieval_k: cfg.retrieval_k,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        seed: cfg.seed,
    };
    let auditor = Auditor::new(config, gateway, Arc::new(index), embedder).or_data()?;
    let results = auditor.audit_batch(&contracts, args.parallel as usize);

    let body: String = results.iter().map(|r| r.to_json_line() + "\n").collect();
    write_file(&args.out, &body)?;

    let count = |pred: fn(&AuditResult) -> bool| results.iter().filter(|r| pred(r)).count();
    let y = count(|r| r.is_ok() && r.final_label == Some(Label::Y));
    let n = count(|r| r.is_ok() && r.final_label == Some(Label::N));
    let failed: Vec<&AuditResult> = results.iter().filter(|r| !r.is_ok()).collect();
    println!("audited {} contracts: Y {y}, N {n}, failed {}", results.len(), failed.len());
    for r in &failed {
        eprintln!("warning: {} failed: {}", r.contract_id, r.error.as_deref().unwrap_or("unknown error"));
    }
    if !failed.is_empty()
        && failed.len() == results.len()
        && failed.iter().all(|r| r.failure == Some(FailureKind::Backend))
    {
        return Err(backend(anyhow!("every contract failed on backend errors")));
    }
    Ok(())
}

fn cmd_split(dataset: &Path, seed: u64, ratio: f64, out: &Path) -> CmdResult {
    let (samples, _) = load_dataset(dataset).or_data()?;
    let split = stratified_split(&samples, ratio, seed).or_data()?;
    split.save(out).or_data()?;
    println!(
        "split seed {seed}: train {}, test {} -> {}",
        split.train_ids.len(),
        split.test_ids.len(),
        out.display()
    );
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> CmdResult {
    let (mut samples, _) = load_dataset(&args.dataset).or_data()?;
    if let Some(split_path) = &args.split {
        let split = Split::load(split_path).or_data()?;
        let train: HashSet<&str> = split.train_ids.iter().map(String::as_str).collect();
        let known: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        if let Some(missing) = train.iter().find(|id| !known.contains(*id)) {
            return Err(data(anyhow!("split id `{missing}` is not in the dataset")));
        }
        samples.retain(|s| train.contains(s.id.as_str()));
    }
    let records = export_instructions(&samples, &PromptRole::ALL).or_data()?;

    let mut cfg = FinetuneConfig::default();
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .or_data()?;
    write_jsonl(&args.out.join("instructions.jsonl"), &records).or_data()?;
    emit_finetune_config(&args.out.join("finetune_config.json"), &cfg).or_data()?;
    println!(
        "exported {} records for {} samples to {}",
        records.len(),
        samples.len(),
        args.out.display()
    );
    Ok(())
}

fn load_results(path: &Path) -> anyhow::Result<Vec<AuditResult>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1))
        })
        .collect()
}

fn cmd_evaluate(
    results_path: &Path,
    truth_path: &Path,
    method_name: &str,
    out: Option<&Path>,
    outcomes_out: Option<&Path>,
) -> CmdResult {
    let results = load_results(results_path).or_data()?;
    let (samples, _) = load_dataset(truth_path).or_data()?;
    let truth = truth_map(&samples);
    let summary = confusion(&results, &truth).or_data()?;
    let report = MethodReport::computed(method_name, &summary).or_data()?;
    let per_type = per_type_breakdown(&results, &truth);

    let m = summary.matrix;
    println!("TP {}  TN {}  FP {}  FN {}  (failed excluded: {})", m.tp, m.tn, m.fp, m.fn_, summary.failed_excluded);
    print!("{}", render_metrics_table(&[(method_name, &report.metrics)]));
    for (vt, r) in &per_type {
        println!("recall[{}] = {}/{} ({:.1}%)", vt.name(), r.detected, r.total, r.recall * 100.0);
    }

    if let Some(path) = outcomes_out {
        write_jsonl(path, &outcomes(&results, &truth).or_data()?).or_data()?;
    }
    if let Some(path) = out {
        let full = EvaluationReport { report, per_type_recall: per_type };
        let json = serde_json::to_string_pretty(&full).expect("report serialization is infallible");
        write_file(path, &(json + "\n"))?;
    }
    Ok(())
}

fn cmd_compare(baselines: &[PathBuf], computed: &[PathBuf], out: Option<&Path>) -> CmdResult {
    if baselines.is_empty() && computed.is_empty() {
        return Err(Failure {
            code: EXIT_USAGE,
            error: anyhow!("give at least one --baseline or --computed report"),
        });
    }
    let mut reports = Vec::new();
    for p in baselines {
        reports.push(ingest_baseline(p).or_data()?);
    }
    for p in computed {
        reports.push(MethodReport::load(p).or_data()?);
    }
    let comparison = render_comparison(&reports);
    print!("{}", comparison.to_text());
    if let Some(path) = out {
        write_file(path, &comparison.to_json())?;
    }
    Ok(())
}
