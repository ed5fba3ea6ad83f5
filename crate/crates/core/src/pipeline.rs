//! Stage runners behind the command-line interface.
//!
//! Every stage reads and writes files under the run directory
//! (`<output_dir>/<dataset>-<config hash>`). Per-record failures never abort a
//! stage; they are collected into a failure report and turn the exit code to 1.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{convert, NativeFormat};
use crate::backends::http::{HttpCompletion, HttpEncoder, HttpScorer};
use crate::backends::mock::{GoldScorer, OverlapScorer, ScriptedCompletion, SyntheticCompletion};
use crate::backends::BackendError;
use crate::batch::map_bounded;
use crate::config::{CompletionSection, ConfigError, EmbeddingSection, RunConfig, ScorerSection, SelectionMode};
use crate::dataset::{load_dataset, render_question_text, write_dataset, DatasetError, Label, QuestionRecord};
use crate::eval::{
    accuracy, annotate_facts, dev_test_gap, gold_labels, quality_stats, read_labels, AnnotationItem, EvalError,
    EvalReport, Graded, QualityTable, SessionSummary,
};
use crate::generation::{generate_batch, BatchOptions, CompletionBackend, FactCache, FactCandidate, GenerationError, RecordFailure};
use crate::inference::{predict, InferenceError, ScorerBackend};
use crate::prompt::{default_template, PromptError, PromptTemplate};
use crate::selection::{select_best, selection_mode_passthrough, CachedEncoder, DualEncoder, HashingEncoder};
use crate::zero_shot::{answer_zero_shot, ZeroShotRow};

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const FACTS: &str = "facts.jsonl";
pub const GENERATE_FAILURES: &str = "generate_failures.json";
pub const CACHE_LOG: &str = "cache_log.jsonl";
pub const SELECTION: &str = "selection.jsonl";
pub const SELECT_FAILURES: &str = "select_failures.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const PREDICT_PROGRESS: &str = "predict_progress.json";
pub const PREDICT_FAILURES: &str = "predict_failures.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const LABELS: &str = "labels.jsonl";
pub const QUALITY: &str = "quality.txt";
pub const ZERO_SHOT: &str = "zero_shot.jsonl";
pub const ZERO_SHOT_FAILURES: &str = "zero_shot_failures.json";

/// Records between two progress-marker writes during prediction.
pub const PROGRESS_EVERY: usize = 50;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("backend unavailable: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line_no}: {reason}")]
    Malformed { path: String, line_no: usize, reason: String },
    #[error("{0}")]
    Precondition(String),
}

impl PipelineError {
    /// 2 for problems with the configuration or inputs, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Dataset(_)
            | PipelineError::Prompt(_)
            | PipelineError::Malformed { .. }
            | PipelineError::Precondition(_) => 2,
            PipelineError::Generation(GenerationError::InvalidConfig(_) | GenerationError::EmptyBatch) => 2,
            PipelineError::Eval(EvalError::MissingGold(_) | EvalError::DuplicatePrediction(_) | EvalError::EmptyInput) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Outcome of a batch stage.
#[derive(Debug, Default)]
pub struct StageReport {
    pub processed: usize,
    pub failures: Vec<RecordFailure>,
    pub outputs: Vec<PathBuf>,
    /// Set when the stage stopped before reaching the end of the dataset.
    pub aborted: bool,
}

impl StageReport {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() && !self.aborted {
            0
        } else {
            1
        }
    }
}

/// A loaded configuration with its dataset, template and run directory.
pub struct RunContext {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pub records: Vec<QuestionRecord>,
    pub template: PromptTemplate,
}

impl RunContext {
    /// Validates the config, loads inputs, creates the run directory and
    /// writes the canonical config snapshot into it.
    pub fn prepare(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let descriptor = config.dataset.descriptor()?;
        let records = load_dataset(&config.dataset.path, &descriptor)?;
        if records.is_empty() {
            return Err(PipelineError::Precondition(format!("dataset {} is empty", config.dataset.path.display())));
        }
        let template = match &config.template_dir {
            Some(dir) => PromptTemplate::load_dir(dir)?,
            None => default_template(),
        };
        let run_dir = config.run_dir();
        fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
        let snapshot = run_dir.join(CONFIG_SNAPSHOT);
        fs::write(&snapshot, config.canonical_json()).map_err(io_err(&snapshot))?;
        log::info!("run directory {}", run_dir.display());
        Ok(RunContext { config, run_dir, records, template })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Malformed {
                path: path.display().to_string(),
                line_no: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Replaces `path` atomically with one JSON line per item.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(path)(e.into()))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| io_err(path)(e.into()))?;
    out.push(b'\n');
    write_atomic(path, &out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

fn input_or(ctx: &RunContext, explicit: Option<&Path>, default: &str, producer: &str) -> Result<PathBuf, PipelineError> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(default));
    if !path.exists() {
        return Err(PipelineError::Precondition(format!(
            "{} not found; run `{producer}` with this config first or pass --input",
            path.display()
        )));
    }
    Ok(path)
}

pub fn build_completion(config: &RunConfig) -> Result<Box<dyn CompletionBackend>, PipelineError> {
    Ok(match &config.completion {
        CompletionSection::Synthetic { seed } => Box::new(SyntheticCompletion::new(*seed)),
        CompletionSection::Scripted { path, model_id } => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let map: HashMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| PipelineError::Malformed {
                path: path.display().to_string(),
                line_no: e.line(),
                reason: e.to_string(),
            })?;
            Box::new(ScriptedCompletion::keyed(model_id, map))
        }
        CompletionSection::Http { settings, model_id, max_tokens } => {
            Box::new(HttpCompletion::new(settings, model_id, *max_tokens))
        }
    })
}

/// Embeddings are memoized for the lifetime of the returned encoder.
pub fn build_encoder(config: &RunConfig) -> Result<Box<dyn DualEncoder>, PipelineError> {
    Ok(match &config.embedding {
        EmbeddingSection::Hashing { dimension, seed } => Box::new(CachedEncoder::new(HashingEncoder::new(*dimension, *seed))),
        EmbeddingSection::Http { settings } => Box::new(CachedEncoder::new(HttpEncoder::connect(settings)?)),
    })
}

pub fn build_scorer(config: &RunConfig, records: &[QuestionRecord]) -> Box<dyn ScorerBackend> {
    match &config.scorer {
        ScorerSection::Overlap => Box::new(OverlapScorer),
        ScorerSection::Gold => Box::new(GoldScorer::from_records(records)),
        ScorerSection::Http { settings } => Box::new(HttpScorer::new(settings)),
    }
}

/// Samples facts for every record. Writes `facts.jsonl` (successful records,
/// dataset order) and `generate_failures.json`.
pub fn cmd_generate(ctx: &RunContext, backend: &dyn CompletionBackend) -> Result<StageReport, PipelineError> {
    let cfg = &ctx.config;
    let cache_dir = cfg.cache_dir();
    let cache = FactCache::open(&cache_dir, Some(&ctx.path(CACHE_LOG))).map_err(io_err(&cache_dir))?;
    let options = BatchOptions { max_in_flight: cfg.max_in_flight, retry: cfg.retry.policy() };
    let batch = generate_batch(&ctx.records, &ctx.template, &cfg.sampling.resolve(), backend, &cache, &options)?;
    log::info!(
        "generated facts for {} records ({} from cache), {} failed",
        batch.facts.len(),
        batch.cache_hits,
        batch.failures.len()
    );

    let facts: Vec<&FactCandidate> = batch.facts.values().flatten().collect();
    let facts_path = ctx.path(FACTS);
    write_jsonl(&facts_path, &facts)?;
    let failures_path = ctx.path(GENERATE_FAILURES);
    write_json(&failures_path, &batch.failures)?;
    Ok(StageReport {
        processed: ctx.records.len(),
        failures: batch.failures,
        outputs: vec![facts_path, failures_path],
        aborted: false,
    })
}

pub fn read_facts(path: &Path) -> Result<IndexMap<String, Vec<FactCandidate>>, PipelineError> {
    let mut grouped: IndexMap<String, Vec<FactCandidate>> = IndexMap::new();
    for c in read_jsonl::<FactCandidate>(path)? {
        grouped.entry(c.question_id.clone()).or_default().push(c);
    }
    Ok(grouped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub question_id: String,
    pub mode: SelectionMode,
    pub chosen_index: usize,
    pub fact: FactCandidate,
    /// Per-candidate dot products in sample order; absent in passthrough mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

/// Picks one fact per record according to the configured selection mode.
/// `encoder` is only consulted in `dpr` mode.
pub fn cmd_select(
    ctx: &RunContext,
    encoder: Option<&dyn DualEncoder>,
    facts_path: Option<&Path>,
) -> Result<StageReport, PipelineError> {
    let mode = ctx.config.selection_mode;
    let encoder = match (mode, encoder) {
        (SelectionMode::Dpr, None) => {
            return Err(PipelineError::Precondition("dpr selection needs an encoder".into()));
        }
        (_, e) => e,
    };
    let facts = read_facts(&input_or(ctx, facts_path, FACTS, "ufo generate")?)?;
    let workers = match encoder {
        Some(e) if !e.concurrency_safe() => 1,
        _ => ctx.config.max_in_flight,
    };

    let select_one = |record: &QuestionRecord| -> Result<SelectionRow, String> {
        let candidates = facts.get(&record.id).ok_or_else(|| "no generated facts".to_string())?;
        match (mode, encoder) {
            (SelectionMode::Dpr, Some(encoder)) => {
                let s = select_best(&render_question_text(record), candidates, encoder).map_err(|e| e.to_string())?;
                Ok(SelectionRow {
                    question_id: record.id.clone(),
                    mode,
                    chosen_index: s.best.candidate.sample_index,
                    fact: s.best.candidate,
                    scores: Some(s.all.iter().map(|f| f.score).collect()),
                })
            }
            _ => {
                let fact = selection_mode_passthrough(candidates).map_err(|e| e.to_string())?;
                Ok(SelectionRow { question_id: record.id.clone(), mode, chosen_index: fact.sample_index, fact, scores: None })
            }
        }
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (record, outcome) in ctx.records.iter().zip(map_bounded(&ctx.records, workers, select_one)) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(error) => failures.push(RecordFailure { question_id: record.id.clone(), error }),
        }
    }
    log::info!("selected facts for {} records, {} failed", rows.len(), failures.len());
    let out = ctx.path(SELECTION);
    write_jsonl(&out, &rows)?;
    let failures_path = ctx.path(SELECT_FAILURES);
    write_json(&failures_path, &failures)?;
    Ok(StageReport { processed: ctx.records.len(), failures, outputs: vec![out, failures_path], aborted: false })
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub question_id: String,
    pub predicted: Label,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_sample_index: Option<usize>,
}

impl Graded for PredictionLine {
    fn question_id(&self) -> &str {
        &self.question_id
    }

    fn predicted_label(&self) -> Option<Label> {
        Some(self.predicted)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictProgress {
    /// Records with a prediction on disk.
    pub completed: usize,
    pub total: usize,
    pub finished: bool,
}

pub fn read_progress(path: &Path) -> Option<PredictProgress> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// Scores every record's selected fact.
///
/// Rows are appended and flushed as they are produced; records that already
/// have a row are skipped, so a rerun resumes where a previous one stopped. A
/// scorer failure stops the stage immediately and leaves the progress marker
/// behind. A completed run rewrites the rows in dataset order.
pub fn cmd_predict(
    ctx: &RunContext,
    scorer: &dyn ScorerBackend,
    selection_path: Option<&Path>,
) -> Result<StageReport, PipelineError> {
    let selection: HashMap<String, FactCandidate> = read_jsonl::<SelectionRow>(&input_or(ctx, selection_path, SELECTION, "ufo select")?)?
        .into_iter()
        .map(|r| (r.question_id, r.fact))
        .collect();
    let out = ctx.path(PREDICTIONS);
    let progress_path = ctx.path(PREDICT_PROGRESS);
    let total = ctx.records.len();

    let known: HashSet<&str> = ctx.records.iter().map(|r| r.id.as_str()).collect();
    let mut existing: Vec<PredictionLine> = if out.exists() { read_jsonl(&out)? } else { Vec::new() };
    existing.retain(|p| known.contains(p.question_id.as_str()));
    let mut done: HashSet<String> = existing.iter().map(|p| p.question_id.clone()).collect();
    if !done.is_empty() {
        log::info!("resuming: {} of {total} records already predicted", done.len());
    }
    write_jsonl(&out, &existing)?;

    let mut file = OpenOptions::new().append(true).open(&out).map_err(io_err(&out))?;
    let mut failures = Vec::new();
    let mut aborted = false;
    let mut since_marker = 0;
    for record in &ctx.records {
        if done.contains(&record.id) {
            continue;
        }
        let Some(fact) = selection.get(&record.id) else {
            failures.push(RecordFailure { question_id: record.id.clone(), error: "no selected fact".into() });
            continue;
        };
        match predict(record, fact, scorer) {
            Ok(p) => {
                let line = PredictionLine {
                    question_id: p.question_id,
                    predicted: p.predicted,
                    probabilities: p.probabilities,
                    fact_sample_index: p.fact_used.map(|f| f.sample_index),
                };
                let mut bytes = serde_json::to_vec(&line).map_err(|e| io_err(&out)(e.into()))?;
                bytes.push(b'\n');
                file.write_all(&bytes).and_then(|_| file.flush()).map_err(io_err(&out))?;
                done.insert(record.id.clone());
                since_marker += 1;
                if since_marker == PROGRESS_EVERY {
                    since_marker = 0;
                    write_json(&progress_path, &PredictProgress { completed: done.len(), total, finished: false })?;
                }
            }
            Err(InferenceError::Backend(e)) => {
                log::error!("scorer failed on {}: {e}; stopping", record.id);
                failures.push(RecordFailure { question_id: record.id.clone(), error: e.to_string() });
                aborted = true;
                break;
            }
            Err(e) => failures.push(RecordFailure { question_id: record.id.clone(), error: e.to_string() }),
        }
    }
    drop(file);

    let finished = !aborted && failures.is_empty();
    if !aborted {
        let order: HashMap<&str, usize> = ctx.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let mut rows: Vec<PredictionLine> = read_jsonl(&out)?;
        rows.sort_by_key(|r| order[r.question_id.as_str()]);
        write_jsonl(&out, &rows)?;
    }
    write_json(&progress_path, &PredictProgress { completed: done.len(), total, finished })?;
    let failures_path = ctx.path(PREDICT_FAILURES);
    write_json(&failures_path, &failures)?;
    log::info!("{} of {total} records predicted, {} failed", done.len(), failures.len());
    Ok(StageReport { processed: done.len(), failures, outputs: vec![out, progress_path, failures_path], aborted })
}

/// Accuracy of `predictions.jsonl` against the dataset's gold labels. With
/// `test_accuracy` (percent) the dev-test gap is included.
pub fn cmd_eval(
    ctx: &RunContext,
    predictions_path: Option<&Path>,
    test_accuracy: Option<f64>,
) -> Result<EvalReport, PipelineError> {
    let golds = gold_labels(&ctx.records);
    if golds.is_empty() {
        return Err(PipelineError::Precondition(format!("dataset {} has no gold labels", ctx.config.dataset.name)));
    }
    if let Some(t) = test_accuracy {
        if !(0.0..=100.0).contains(&t) {
            return Err(PipelineError::Precondition(format!("test accuracy {t} is not a percentage")));
        }
    }
    let predictions: Vec<PredictionLine> = read_jsonl(&input_or(ctx, predictions_path, PREDICTIONS, "ufo predict")?)?;
    let mut report = accuracy(&ctx.config.dataset.name, &predictions, &golds)?;
    report.gap = test_accuracy.map(|t| dev_test_gap(report.accuracy_percent(), t));
    write_outputs(ctx, &report, REPORT_TXT, REPORT_JSON)?;
    Ok(report)
}

fn write_outputs(ctx: &RunContext, report: &EvalReport, txt: &str, json: &str) -> Result<(), PipelineError> {
    let txt = ctx.path(txt);
    fs::write(&txt, report.render_text()).map_err(io_err(&txt))?;
    write_json(&ctx.path(json), report)
}

fn annotation_items(ctx: &RunContext, selection_path: Option<&Path>) -> Result<Vec<AnnotationItem>, PipelineError> {
    let rows: Vec<SelectionRow> = read_jsonl(&input_or(ctx, selection_path, SELECTION, "ufo select")?)?;
    let by_id: HashMap<&str, &QuestionRecord> = ctx.records.iter().map(|r| (r.id.as_str(), r)).collect();
    Ok(rows
        .into_iter()
        .filter_map(|row| {
            let record = by_id.get(row.question_id.as_str())?;
            Some(AnnotationItem {
                question_id: row.question_id,
                dataset: ctx.config.dataset.name.clone(),
                question: render_question_text(record),
                fact: row.fact.text,
            })
        })
        .collect())
}

/// Interactive review of the selected facts; labels go to `labels.jsonl`.
pub fn cmd_annotate<R: BufRead, W: Write>(
    ctx: &RunContext,
    selection_path: Option<&Path>,
    annotator: &str,
    input: R,
    output: W,
) -> Result<SessionSummary, PipelineError> {
    let items = annotation_items(ctx, selection_path)?;
    Ok(annotate_facts(&items, &ctx.path(LABELS), annotator, input, output)?)
}

/// Quality table over one or more label files; also written to `quality.txt`
/// in the run directory.
pub fn cmd_quality_stats(ctx: &RunContext, extra_labels: &[PathBuf]) -> Result<QualityTable, PipelineError> {
    let mut pairs = Vec::new();
    let mut files = vec![ctx.path(LABELS)];
    files.extend(extra_labels.iter().cloned());
    for f in &files {
        pairs.extend(read_labels(f)?.into_iter().map(|r| (r.dataset, r.label)));
    }
    let table = quality_stats(&pairs)?;
    let out = ctx.path(QUALITY);
    fs::write(&out, table.render()).map_err(io_err(&out))?;
    Ok(table)
}

/// Converts a native dataset dump to canonical JSONL. Returns the record count.
pub fn cmd_adapt(format: NativeFormat, input: &Path, labels: Option<&Path>, output: &Path) -> Result<usize, PipelineError> {
    let text = fs::read_to_string(input).map_err(io_err(input))?;
    let labels = labels.map(|p| fs::read_to_string(p).map_err(io_err(p))).transpose()?;
    let records = convert(format, &text, labels.as_deref())?;
    write_dataset(output, &records)?;
    Ok(records.len())
}

/// Zero-shot baseline: asks the completion backend directly and parses the
/// answer. Writes `zero_shot.jsonl` and, when gold labels exist, a report.
pub fn cmd_zero_shot(
    ctx: &RunContext,
    backend: &dyn CompletionBackend,
) -> Result<(StageReport, Option<EvalReport>), PipelineError> {
    if ctx.records.iter().any(|r| r.style.is_binary()) {
        return Err(PipelineError::Precondition("zero-shot answering needs multiple-choice records".into()));
    }
    let outcomes = map_bounded(&ctx.records, ctx.config.max_in_flight, |r| answer_zero_shot(r, backend));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (record, outcome) in ctx.records.iter().zip(outcomes) {
        match outcome {
            Ok(parsed) => rows.push(ZeroShotRow::new(&record.id, parsed)),
            Err(e) => failures.push(RecordFailure { question_id: record.id.clone(), error: e.to_string() }),
        }
    }
    let out = ctx.path(ZERO_SHOT);
    write_jsonl(&out, &rows)?;
    let failures_path = ctx.path(ZERO_SHOT_FAILURES);
    write_json(&failures_path, &failures)?;

    let golds = gold_labels(&ctx.records);
    let report = if golds.is_empty() || rows.is_empty() {
        None
    } else {
        let report = accuracy(&ctx.config.dataset.name, &rows, &golds)?;
        write_outputs(ctx, &report, "zero_shot_report.txt", "zero_shot_report.json")?;
        Some(report)
    };
    Ok((StageReport { processed: ctx.records.len(), failures, outputs: vec![out, failures_path], aborted: false }, report))
}
