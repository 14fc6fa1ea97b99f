//! Config-driven experiments: single runs, the six-strategy ablation and
//! backbone sweeps, with one persisted [`RunRecord`] per launched run.
//!
//! Output layout under `output_dir`:
//! `tag_cache.jsonl`, `data/<strategy>/{train,dev,test}.jsonl`,
//! `<run_id>/record.json`, `<run_id>/checkpoint/`, `<run_id>/test_predictions.jsonl`,
//! and `table.{csv,md,txt}` for grid runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_split, write_examples, AugmentedExample, BuildOptions, StrategyId};
use crate::corpus::{
    import_files, make_synthetic_corpus, Corpus, FieldMap, ImportOptions, SourceFormat, Split, DEFAULT_NO_RELATION,
};
use crate::eval::{evaluate, ComparisonTable, MetricsReport, TableFormat};
use crate::model::external::{run_external, ExternalTrainerConfig, TrainJob};
use crate::model::{predict, train, Checkpoint, EncoderSpec, ModelError, Prediction, TrainConfig, PRIMARY_BACKBONE};
use crate::tagging::{tag_corpus, Annotator, TagAnnotation, TaggerSpec};

/// Row name for the primary backbone trained on `TrNP` inputs.
pub const PROPOSED_ROW: &str = "Proposed Model";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Where instances come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// One or more files, typically one per split.
    Files {
        paths: Vec<PathBuf>,
        #[serde(default = "default_format")]
        format: SourceFormat,
        /// YAML/JSON field map overriding the format's field names.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field_map: Option<PathBuf>,
        #[serde(default = "default_no_relation")]
        no_relation_label: String,
    },
    Synthetic {
        instances: usize,
        relations: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
}

fn default_format() -> SourceFormat {
    SourceFormat::Refind
}

fn default_no_relation() -> String {
    DEFAULT_NO_RELATION.to_string()
}

fn default_seed() -> u64 {
    42
}

fn default_seeds() -> Vec<u64> {
    vec![42]
}

fn default_strategies() -> Vec<StrategyId> {
    StrategyId::ALL.to_vec()
}

fn default_backbones() -> Vec<EncoderSpec> {
    vec![EncoderSpec::new(PRIMARY_BACKBONE)]
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus, String> {
        match self {
            CorpusSource::Synthetic { instances, relations, seed } => {
                make_synthetic_corpus(*instances, *relations, *seed).map_err(|e| e.to_string())
            }
            CorpusSource::Files { paths, format, field_map, no_relation_label } => {
                if paths.is_empty() {
                    return Err("no corpus files listed".into());
                }
                if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
                    return Err(format!("corpus file {} does not exist", missing.display()));
                }
                let field_map = field_map.as_deref().map(FieldMap::load).transpose().map_err(|e| e.to_string())?;
                let options = ImportOptions {
                    format: *format,
                    field_map,
                    no_relation_label: no_relation_label.clone(),
                    ..ImportOptions::default()
                };
                let outcome = import_files(paths, &options).map_err(|e| e.to_string())?;
                if !outcome.report.errors.is_empty() {
                    warn!(
                        "{} of {} records rejected during import",
                        outcome.report.errors.len(),
                        outcome.report.records_read
                    );
                }
                Ok(outcome.corpus)
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let CorpusSource::Files { paths, field_map, .. } = self {
            for p in paths.iter_mut().chain(field_map.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// A full experiment: every (strategy, backbone, seed) cell is one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    #[serde(default)]
    pub tagger: TaggerSpec,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyId>,
    #[serde(default = "default_backbones")]
    pub backbones: Vec<EncoderSpec>,
    /// Unset fields take the published recipe. The seed is overridden per run.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/tag_cache.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_cache: Option<PathBuf>,
    /// Run cells on worker threads; each run still owns its directory.
    #[serde(default)]
    pub parallel: bool,
    /// Add a row for the primary backbone on `TrNP` inputs to backbone sweeps.
    #[serde(default)]
    pub include_proposed: bool,
    /// Trainer for backbones that cannot be trained in-process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_trainer: Option<ExternalTrainerConfig>,
}

impl ExperimentConfig {
    /// Reads a YAML config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: Self = serde_yaml::from_str(&text).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.corpus.resolve_paths(base);
        for p in [Some(&mut cfg.output_dir), cfg.tag_cache.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::InvalidConfig(m));
        if self.strategies.is_empty() || self.backbones.is_empty() || self.seeds.is_empty() {
            return bad("strategies, backbones and seeds must all be nonempty".into());
        }
        for spec in &self.backbones {
            spec.validate().map_err(|e| RunnerError::InvalidConfig(e.to_string()))?;
        }
        self.train.validate().map_err(|e| RunnerError::InvalidConfig(e.to_string()))?;
        let mut names: Vec<&str> = self.backbones.iter().map(EncoderSpec::display_name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("backbone display names must be unique; set `name` to tell duplicates apart".into());
        }
        Ok(())
    }

    fn tag_cache_path(&self) -> PathBuf {
        self.tag_cache.clone().unwrap_or_else(|| self.output_dir.join("tag_cache.jsonl"))
    }

    fn spec_for(&self, strategy: StrategyId, encoder: &EncoderSpec, seed: u64) -> RunSpec {
        RunSpec {
            corpus: self.corpus.clone(),
            tagger: self.tagger.clone(),
            strategy,
            encoder: encoder.clone(),
            train: TrainConfig { seed, ..self.train.clone() },
            external_trainer: self.external_trainer.clone(),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub corpus: CorpusSource,
    pub tagger: TaggerSpec,
    pub strategy: StrategyId,
    pub encoder: EncoderSpec,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_trainer: Option<ExternalTrainerConfig>,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        let backbone: String = self
            .encoder
            .display_name()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        format!("{}__{}__seed{}", self.strategy, backbone, self.train.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFingerprint {
    pub finrel_version: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub cpu_model: Option<String>,
    pub tagger_config_hash: Option<String>,
}

impl EnvironmentFingerprint {
    pub fn capture(tagger_config_hash: Option<String>) -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo").ok().and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        });
        Self {
            finrel_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            tagger_config_hash,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: RunSpec,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub wall_clock_secs: f64,
    pub environment: EnvironmentFingerprint,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn scores(&self) -> Option<(f64, f64)> {
        self.test_metrics.as_ref().filter(|_| self.is_completed()).map(|m| (m.micro_f1, m.macro_f1))
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    fn persist(&self, out_root: &Path) -> Result<PathBuf, RunnerError> {
        let dir = out_root.join(&self.run_id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join("record.json");
        fs::write(&path, serde_json::to_string_pretty(self).expect("record serializes"))
            .map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// A stage failure inside a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl StageError {
    pub fn new(stage: &'static str, message: impl ToString) -> Self {
        Self { stage, message: message.to_string() }
    }
}

/// Metrics a successful run produces.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub train: Option<MetricsReport>,
    pub dev: MetricsReport,
    pub test: MetricsReport,
    pub best_epoch: Option<usize>,
}

/// Augmented splits for one strategy.
#[derive(Clone, Debug)]
pub struct AugmentedSplits {
    pub train: Vec<AugmentedExample>,
    pub dev: Vec<AugmentedExample>,
    pub test: Vec<AugmentedExample>,
}

/// Corpus and tags shared by every run of an experiment.
pub struct Prepared {
    pub corpus: Corpus,
    pub annotations: BTreeMap<String, TagAnnotation>,
    pub tagger_invocations: usize,
    pub tagger_config_hash: String,
}

fn prepare(corpus: &CorpusSource, tagger: &TaggerSpec, cache: Option<&Path>) -> Result<Prepared, StageError> {
    let corpus = corpus.load().map_err(|e| StageError::new("ingest", e))?;
    let mut annotator = Annotator::from_spec(tagger).map_err(|e| StageError::new("tag", e))?;
    if let Some(parent) = cache.and_then(Path::parent) {
        fs::create_dir_all(parent).map_err(|e| StageError::new("tag", e))?;
    }
    let outcome = tag_corpus(&corpus, &mut annotator, cache).map_err(|e| StageError::new("tag", e))?;
    info!("tagged {} instances ({} tagger calls, cache {:?})", corpus.len(), outcome.tagger_invocations, outcome.cache);
    Ok(Prepared {
        corpus,
        annotations: outcome.annotations,
        tagger_invocations: outcome.tagger_invocations,
        tagger_config_hash: annotator.config_hash().to_string(),
    })
}

fn augment_all(
    prepared: &Prepared,
    strategy: StrategyId,
    mark_entities: bool,
    data_dir: Option<&Path>,
) -> Result<AugmentedSplits, StageError> {
    let options = BuildOptions { mark_entities };
    let build = |split| {
        augment_split(&prepared.corpus, split, &prepared.annotations, strategy, options)
            .map_err(|e| StageError::new("augment", e))
    };
    let splits = AugmentedSplits { train: build(Split::Train)?, dev: build(Split::Dev)?, test: build(Split::Test)? };
    if let Some(dir) = data_dir {
        let dir = dir.join(if mark_entities { format!("{strategy}-marked") } else { strategy.to_string() });
        fs::create_dir_all(&dir).map_err(|e| StageError::new("augment", e))?;
        for (name, examples) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
            write_examples(&dir.join(format!("{name}.jsonl")), examples).map_err(|e| StageError::new("augment", e))?;
        }
    }
    Ok(splits)
}

fn score(
    examples: &[AugmentedExample],
    preds: &[Prediction],
    prepared: &Prepared,
    spec: &RunSpec,
    split: &str,
) -> Result<MetricsReport, StageError> {
    let by_id: BTreeMap<&str, usize> = preds.iter().map(|p| (p.instance_id.as_str(), p.label_index)).collect();
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for ex in examples {
        let p = by_id
            .get(ex.instance_id.as_str())
            .ok_or_else(|| StageError::new("predict", format!("no {split} prediction for {}", ex.instance_id)))?;
        gold.push(ex.label_index);
        pred.push(*p);
    }
    evaluate(&gold, &pred, &prepared.corpus.vocabulary, &spec.train.label_filter)
        .map_err(|e| StageError::new("eval", e))
}

/// Trains, predicts and scores one cell from already augmented data.
pub fn execute_cell(
    prepared: &Prepared,
    data: &AugmentedSplits,
    spec: &RunSpec,
    run_dir: &Path,
) -> Result<CellOutcome, StageError> {
    let info = spec.encoder.validate().map_err(|e| StageError::new("train", e))?;
    fs::create_dir_all(run_dir).map_err(|e| StageError::new("train", e))?;
    if !info.in_process {
        return execute_external(prepared, data, spec, run_dir);
    }
    let labels = &prepared.corpus.vocabulary;
    let checkpoint: Checkpoint =
        train(&data.train, &data.dev, &spec.encoder, &spec.train, labels).map_err(|e| StageError::new("train", e))?;
    checkpoint.save(&run_dir.join("checkpoint")).map_err(|e| StageError::new("train", e))?;
    let run_predict =
        |examples: &[AugmentedExample]| predict(&checkpoint, examples).map_err(|e| StageError::new("predict", e));
    let train_preds = run_predict(&data.train)?;
    let dev_preds = run_predict(&data.dev)?;
    let test_preds = run_predict(&data.test)?;
    write_predictions(&run_dir.join("test_predictions.jsonl"), &data.test, &test_preds, prepared)?;
    Ok(CellOutcome {
        train: Some(score(&data.train, &train_preds, prepared, spec, "train")?),
        dev: score(&data.dev, &dev_preds, prepared, spec, "dev")?,
        test: score(&data.test, &test_preds, prepared, spec, "test")?,
        best_epoch: Some(checkpoint.best_epoch),
    })
}

fn execute_external(
    prepared: &Prepared,
    data: &AugmentedSplits,
    spec: &RunSpec,
    run_dir: &Path,
) -> Result<CellOutcome, StageError> {
    let Some(trainer) = &spec.external_trainer else {
        return Err(StageError::new("train", ModelError::BackboneNotTrainable(spec.encoder.backbone_id.clone())));
    };
    let data_dir = run_dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| StageError::new("train", e))?;
    let mut paths = Vec::new();
    for (name, examples) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        let path = data_dir.join(format!("{name}.jsonl"));
        write_examples(&path, examples).map_err(|e| StageError::new("train", e))?;
        paths.push(path);
    }
    let job = TrainJob {
        encoder: spec.encoder.clone(),
        train_config: spec.train.clone(),
        strategy: spec.strategy,
        labels: prepared.corpus.vocabulary.clone(),
        train_path: paths[0].clone(),
        dev_path: paths[1].clone(),
        test_path: paths[2].clone(),
        out_dir: run_dir.join("external"),
    };
    let outcome = run_external(trainer, &job).map_err(|e| StageError::new("train", e))?;
    write_predictions(&run_dir.join("test_predictions.jsonl"), &data.test, &outcome.test, prepared)?;
    Ok(CellOutcome {
        train: None,
        dev: score(&data.dev, &outcome.dev, prepared, spec, "dev")?,
        test: score(&data.test, &outcome.test, prepared, spec, "test")?,
        best_epoch: None,
    })
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    instance_id: &'a str,
    gold_label: &'a str,
    pred_label: &'a str,
    scores: &'a [f64],
}

fn write_predictions(
    path: &Path,
    examples: &[AugmentedExample],
    preds: &[Prediction],
    prepared: &Prepared,
) -> Result<(), StageError> {
    let vocab = &prepared.corpus.vocabulary;
    let gold: BTreeMap<&str, usize> = examples.iter().map(|e| (e.instance_id.as_str(), e.label_index)).collect();
    let mut out = String::new();
    for p in preds {
        let row = PredictionRow {
            instance_id: &p.instance_id,
            gold_label: gold.get(p.instance_id.as_str()).and_then(|&g| vocab.label(g)).unwrap_or(""),
            pred_label: vocab.label(p.label_index).unwrap_or(""),
            scores: &p.scores,
        };
        out.push_str(&serde_json::to_string(&row).expect("prediction serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| StageError::new("predict", e))
}

fn finish_record(
    spec: &RunSpec,
    result: Result<CellOutcome, StageError>,
    started: Instant,
    tagger_hash: Option<String>,
    out_root: &Path,
) -> RunRecord {
    let environment = EnvironmentFingerprint::capture(tagger_hash);
    let mut record = RunRecord {
        run_id: spec.run_id(),
        config: spec.clone(),
        status: RunStatus::Completed,
        train_metrics: None,
        dev_metrics: None,
        test_metrics: None,
        best_epoch: None,
        wall_clock_secs: 0.0,
        environment,
    };
    match result {
        Ok(out) => {
            record.train_metrics = out.train;
            record.dev_metrics = Some(out.dev);
            record.test_metrics = Some(out.test);
            record.best_epoch = out.best_epoch;
        }
        Err(e) => {
            warn!("run {} failed at {}: {}", record.run_id, e.stage, e.message);
            record.status = RunStatus::Failed { stage: e.stage.to_string(), error: e.message };
        }
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Err(e) = record.persist(out_root) {
        // The record is still returned so the caller sees the outcome.
        warn!("could not persist run record: {e}");
    }
    record
}

/// Runs tag → augment → train → predict → eval for one spec and persists its
/// record under `out_root/<run_id>/`. Failures are captured in the record.
pub fn run_single(spec: &RunSpec, out_root: &Path) -> RunRecord {
    let started = Instant::now();
    let cache = out_root.join("tag_cache.jsonl");
    let result = prepare(&spec.corpus, &spec.tagger, Some(&cache));
    let (result, hash) = match result {
        Ok(prepared) => {
            let hash = prepared.tagger_config_hash.clone();
            let result =
                augment_all(&prepared, spec.strategy, spec.encoder.mark_entities, Some(&out_root.join("data")))
                    .and_then(|data| execute_cell(&prepared, &data, spec, &out_root.join(spec.run_id())));
            (result, Some(hash))
        }
        Err(e) => (Err(e), None),
    };
    finish_record(spec, result, started, hash, out_root)
}

/// Which dimension a grid run compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Ablation,
    BackboneSweep,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    pub table: ComparisonTable,
    /// Tagger calls made for the whole grid; equals the corpus size on a cold cache.
    pub tagger_invocations: usize,
    pub corpus_size: usize,
}

impl GridOutcome {
    pub fn all_completed(&self) -> bool {
        self.records.iter().all(RunRecord::is_completed)
    }
}

/// Runs every cell of a grid with a caller-supplied cell executor.
pub type CellExecutor<'a> =
    dyn Fn(&Prepared, &AugmentedSplits, &RunSpec, &Path) -> Result<CellOutcome, StageError> + Sync + 'a;

/// Six-strategy ablation on one backbone (table rows are strategies).
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<GridOutcome, RunnerError> {
    run_ablation_with(cfg, &execute_cell)
}

pub fn run_ablation_with(cfg: &ExperimentConfig, exec: &CellExecutor<'_>) -> Result<GridOutcome, RunnerError> {
    cfg.validate()?;
    let mut listed = cfg.strategies.clone();
    listed.sort_by_key(|s| s.as_str());
    listed.dedup();
    if listed.len() != StrategyId::ALL.len() {
        return Err(RunnerError::InvalidConfig("an ablation needs all six strategies".into()));
    }
    if cfg.backbones.len() != 1 {
        return Err(RunnerError::InvalidConfig("an ablation runs on exactly one backbone".into()));
    }
    run_grid(cfg, GridKind::Ablation, exec)
}

/// One strategy across many backbones (table rows are backbones).
pub fn run_backbone_sweep(cfg: &ExperimentConfig) -> Result<GridOutcome, RunnerError> {
    run_backbone_sweep_with(cfg, &execute_cell)
}

pub fn run_backbone_sweep_with(cfg: &ExperimentConfig, exec: &CellExecutor<'_>) -> Result<GridOutcome, RunnerError> {
    cfg.validate()?;
    if cfg.strategies.len() != 1 {
        return Err(RunnerError::InvalidConfig("a backbone sweep uses exactly one strategy".into()));
    }
    run_grid(cfg, GridKind::BackboneSweep, exec)
}

struct Cell {
    row: String,
    spec: RunSpec,
}

fn grid_cells(cfg: &ExperimentConfig, kind: GridKind) -> Vec<Cell> {
    let mut cells = Vec::new();
    let mut push_row = |row: String, strategy: StrategyId, encoder: &EncoderSpec| {
        for &seed in &cfg.seeds {
            let spec = cfg.spec_for(strategy, encoder, seed);
            if !cells.iter().any(|c: &Cell| c.row == row && c.spec == spec) {
                cells.push(Cell { row: row.clone(), spec });
            }
        }
    };
    match kind {
        GridKind::Ablation => {
            for &strategy in &cfg.strategies {
                push_row(strategy.to_string(), strategy, &cfg.backbones[0]);
            }
        }
        GridKind::BackboneSweep => {
            let strategy = cfg.strategies[0];
            for encoder in &cfg.backbones {
                push_row(encoder.display_name().to_string(), strategy, encoder);
            }
            if cfg.include_proposed {
                let primary = cfg
                    .backbones
                    .iter()
                    .find(|b| b.backbone_id == PRIMARY_BACKBONE)
                    .cloned()
                    .unwrap_or_else(|| EncoderSpec::new(PRIMARY_BACKBONE));
                push_row(PROPOSED_ROW.to_string(), StrategyId::TrNP, &primary);
            }
        }
    }
    cells
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { (values[mid - 1] + values[mid]) / 2.0 })
}

/// Per row, the median test micro- and macro-F1 over completed seeds; rows
/// with no completed run are gaps.
pub fn median_table(row_header: &str, rows: &[(String, Vec<&RunRecord>)]) -> ComparisonTable {
    let rows = rows
        .iter()
        .map(|(name, records)| {
            let (mut micro, mut macro_): (Vec<f64>, Vec<f64>) = records.iter().filter_map(|r| r.scores()).unzip();
            (name.clone(), median(&mut micro).zip(median(&mut macro_)))
        })
        .collect();
    ComparisonTable::new(row_header, rows)
}

fn run_grid(cfg: &ExperimentConfig, kind: GridKind, exec: &CellExecutor<'_>) -> Result<GridOutcome, RunnerError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let cells = grid_cells(cfg, kind);
    let started = Instant::now();
    let cache = cfg.tag_cache_path();
    let prepared = match prepare(&cfg.corpus, &cfg.tagger, Some(&cache)) {
        Ok(p) => p,
        Err(e) => {
            // Every launched run still leaves a record.
            let records: Vec<RunRecord> =
                cells.iter().map(|c| finish_record(&c.spec, Err(e.clone()), started, None, out)).collect();
            return finish_grid(cfg, kind, &cells, records, 0, 0);
        }
    };

    let mut data: BTreeMap<(StrategyId, bool), Result<AugmentedSplits, StageError>> = BTreeMap::new();
    for cell in &cells {
        let key = (cell.spec.strategy, cell.spec.encoder.mark_entities);
        data.entry(key).or_insert_with(|| augment_all(&prepared, key.0, key.1, Some(&out.join("data"))));
    }

    let run_cell = |cell: &Cell| {
        let started = Instant::now();
        info!("run {}", cell.spec.run_id());
        let result = match &data[&(cell.spec.strategy, cell.spec.encoder.mark_entities)] {
            Ok(splits) => exec(&prepared, splits, &cell.spec, &out.join(cell.spec.run_id())),
            Err(e) => Err(e.clone()),
        };
        finish_record(&cell.spec, result, started, Some(prepared.tagger_config_hash.clone()), out)
    };
    let records = if cfg.parallel { run_parallel(&cells, &run_cell) } else { cells.iter().map(run_cell).collect() };
    finish_grid(cfg, kind, &cells, records, prepared.tagger_invocations, prepared.corpus.len())
}

fn run_parallel(cells: &[Cell], run_cell: &(dyn Fn(&Cell) -> RunRecord + Sync)) -> Vec<RunRecord> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<RunRecord>> = vec![None; cells.len()];
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let record = run_cell(&cells[i]);
                results.lock().expect("no worker panicked")[i] = Some(record);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every cell ran")).collect()
}

fn finish_grid(
    cfg: &ExperimentConfig,
    kind: GridKind,
    cells: &[Cell],
    records: Vec<RunRecord>,
    tagger_invocations: usize,
    corpus_size: usize,
) -> Result<GridOutcome, RunnerError> {
    let mut rows: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for (cell, record) in cells.iter().zip(&records) {
        match rows.iter_mut().find(|(name, _)| *name == cell.row) {
            Some((_, group)) => group.push(record),
            None => rows.push((cell.row.clone(), vec![record])),
        }
    }
    let header = match kind {
        GridKind::Ablation => "Component",
        GridKind::BackboneSweep => "Model",
    };
    let table = median_table(header, &rows);
    for (ext, format) in [("csv", TableFormat::Csv), ("md", TableFormat::Md), ("txt", TableFormat::Txt)] {
        let path = cfg.output_dir.join(format!("table.{ext}"));
        fs::write(&path, table.render(format)).map_err(|e| io_err(&path, e))?;
    }
    Ok(GridOutcome { records, table, tagger_invocations, corpus_size })
}

/// Consolidated results from a directory of run records.
#[derive(Clone, Debug)]
pub struct CollectOutcome {
    pub records: Vec<RunRecord>,
    /// Record files that could not be read.
    pub skipped: Vec<PathBuf>,
    pub csv: String,
}

pub const COLLECT_HEADER: &str = "run_id,strategy,backbone,seed,micro_f1,macro_f1,status,failed_stage";

/// One CSV row per `<dir>/<run_id>/record.json`, sorted by run id.
pub fn collect_records(dir: &Path) -> Result<CollectOutcome, RunnerError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .map(|entry| entry.path().join("record.json"))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        match RunRecord::load(&path) {
            Ok(r) => records.push(r),
            Err(e) => {
                warn!("skipping unreadable record: {e}");
                skipped.push(path);
            }
        }
    }
    let mut csv = format!("{COLLECT_HEADER}\n");
    for r in &records {
        let (micro, macro_) =
            r.scores().map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let (status, stage) = match &r.status {
            RunStatus::Completed => ("completed", ""),
            RunStatus::Failed { stage, .. } => ("failed", stage.as_str()),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{micro},{macro_},{status},{stage}",
            r.run_id,
            r.config.strategy,
            r.config.encoder.display_name(),
            r.config.train.seed
        );
    }
    Ok(CollectOutcome { records, skipped, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> ExperimentConfig {
        serde_yaml::from_str(&format!(
            "corpus: {{kind: synthetic, instances: 60, relations: 3}}\nbackbones: [{{backbone_id: tiny_scratch}}]\noutput_dir: {}\n",
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn yaml_defaults_follow_the_recipe() {
        let cfg = config(Path::new("/tmp/x"));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.seeds, vec![42]);
        assert_eq!(cfg.strategies, StrategyId::ALL.to_vec());
        assert_eq!(cfg.tagger, TaggerSpec::rule_reference());
        cfg.validate().unwrap();
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.yaml");
        fs::write(&path, "corpus: {kind: files, paths: [data/train.json]}\noutput_dir: out\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        match cfg.corpus {
            CorpusSource::Files { paths, format, .. } => {
                assert_eq!(paths, vec![dir.path().join("data/train.json")]);
                assert_eq!(format, SourceFormat::Refind);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = config(Path::new("/tmp/x"));
        cfg.backbones.push(EncoderSpec::tiny_scratch());
        assert!(cfg.validate().is_err());
        cfg.backbones = vec![EncoderSpec::new("no-such-model")];
        assert!(cfg.validate().is_err());
        cfg.backbones = vec![EncoderSpec::tiny_scratch()];
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_ids_are_filesystem_safe() {
        let cfg = config(Path::new("/tmp/x"));
        let mut enc = EncoderSpec::tiny_scratch();
        enc.name = Some("my model/v2".into());
        assert_eq!(cfg.spec_for(StrategyId::TrNP, &enc, 7).run_id(), "TrNP__my_model_v2__seed7");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [0.3, 0.1, 0.2]), Some(0.2));
        assert_eq!(median(&mut [0.4, 0.1, 0.2, 0.3]), Some(0.25));
    }

    #[test]
    fn proposed_row_uses_primary_backbone_and_trnp() {
        let mut cfg = config(Path::new("/tmp/x"));
        cfg.strategies = vec![StrategyId::T];
        cfg.include_proposed = true;
        let cells = grid_cells(&cfg, GridKind::BackboneSweep);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].row, PROPOSED_ROW);
        assert_eq!(cells[1].spec.strategy, StrategyId::TrNP);
        assert_eq!(cells[1].spec.encoder.backbone_id, PRIMARY_BACKBONE);
    }

    #[test]
    fn missing_corpus_fails_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = RunSpec {
            corpus: CorpusSource::Files {
                paths: vec![dir.path().join("absent.json")],
                format: SourceFormat::Refind,
                field_map: None,
                no_relation_label: DEFAULT_NO_RELATION.into(),
            },
            tagger: TaggerSpec::rule_reference(),
            strategy: StrategyId::T,
            encoder: EncoderSpec::tiny_scratch(),
            train: TrainConfig::desk_scale(),
            external_trainer: None,
        };
        let record = run_single(&spec, dir.path());
        assert!(matches!(&record.status, RunStatus::Failed { stage, .. } if stage == "ingest"));
        assert!(record.test_metrics.is_none());
        assert!(dir.path().join(record.run_id).join("record.json").is_file());
    }

    #[test]
    fn collect_on_empty_dir_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = collect_records(dir.path()).unwrap();
        assert_eq!(out.csv, format!("{COLLECT_HEADER}\n"));
        assert!(out.records.is_empty());
    }
}
