use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use finrel_core::augment::{augment_split, read_examples, write_examples, AugmentedExample, BuildOptions, StrategyId};
use finrel_core::corpus::{
    import_files, make_synthetic_corpus, Corpus, FieldMap, ImportOptions, LabelVocabulary, SourceFormat, Split,
    DEFAULT_NO_RELATION,
};
use finrel_core::eval::{evaluate, report_table, LabelFilter, MetricsReport, TableFormat};
use finrel_core::model::{predict, train, Checkpoint, EncoderSpec, TrainConfig};
use finrel_core::runner::{
    collect_records, run_ablation, run_backbone_sweep, ExperimentConfig, GridOutcome, RunStatus,
};
use finrel_core::tagging::cache::load_annotations;
use finrel_core::tagging::{tag_corpus, Annotator, ExternalConfig, TagAnnotation, TaggerSpec};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Tag-augmented financial relation classification toolkit.
#[derive(Parser)]
#[command(name = "finrel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import and validate source records into the canonical JSONL format.
    Ingest(IngestArgs),
    /// Write a synthetic corpus in the canonical format.
    Synth(SynthArgs),
    /// Tag a canonical corpus; the cache file is the tag output.
    Tag(TagArgs),
    /// Build strategy inputs from a corpus and its tags.
    Augment(AugmentArgs),
    /// Fine-tune an in-process backbone and write a checkpoint.
    Train(TrainArgs),
    /// Predict labels for augmented examples with a checkpoint.
    Predict(PredictArgs),
    /// Score prediction files and print a comparison table.
    Eval(EvalArgs),
    /// Six-strategy ablation from an experiment config.
    Ablate(GridArgs),
    /// Backbone sweep under one strategy from an experiment config.
    Sweep(GridArgs),
    /// Consolidate run records under a directory into CSV.
    Collect(CollectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Refind,
    Canonical,
}

impl From<Format> for SourceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Refind => SourceFormat::Refind,
            Format::Canonical => SourceFormat::Canonical,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Source files; the split is taken from each record or inferred from the file name.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "refind")]
    format: Format,
    #[arg(long)]
    field_map: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSONL report of rejected records.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_NO_RELATION)]
    no_relation_label: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaggerChoice {
    Rule,
    External,
}

#[derive(Args)]
struct TagArgs {
    /// Canonical corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "rule")]
    tagger: TaggerChoice,
    /// Tag cache to reuse or write.
    #[arg(long)]
    cache: PathBuf,
    /// Adapter program for the external tagger.
    #[arg(long, required_if_eq("tagger", "external"))]
    adapter_cmd: Option<String>,
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    adapter_args: Vec<String>,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long)]
    pos_lexicon: Option<PathBuf>,
    /// Force entity-span tokens to their gold entity types.
    #[arg(long)]
    gold_overlay: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Tag cache written by `tag`.
    #[arg(long)]
    tags: PathBuf,
    /// One of t, tn, tp, tnp, trn, trnp.
    #[arg(long)]
    strategy: StrategyId,
    /// Restrict to one split; all instances otherwise.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    mark_entities: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Augmented training examples.
    #[arg(long)]
    data: PathBuf,
    /// Augmented dev examples.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value = "tiny_scratch")]
    backbone: String,
    /// YAML training config; unset fields take the published recipe.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Label vocabulary; defaults to the sidecar written next to `--data`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    max_length: usize,
    /// Keep bracketed tags as ordinary words instead of atomic tokens.
    #[arg(long)]
    no_tag_tokens: bool,
    /// The examples carry entity markers.
    #[arg(long)]
    mark_entities: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Md,
    Txt,
}

impl From<OutputFormat> for TableFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => TableFormat::Csv,
            OutputFormat::Md => TableFormat::Md,
            OutputFormat::Txt => TableFormat::Txt,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction files (`instance_id`, `gold_label`, `pred_label` per line); one table row each.
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    /// Label vocabulary; observed labels plus the null label otherwise.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// all, exclude_no_relation, or labels:a,b
    #[arg(long, default_value = "all")]
    filter: LabelFilter,
    #[arg(long, value_enum, default_value = "txt")]
    format: OutputFormat,
    /// Write full metric reports as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "txt")]
    format: OutputFormat,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Tag(a) => tag(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => grid(a, run_ablation),
        Command::Sweep(a) => grid(a, run_backbone_sweep),
        Command::Collect(a) => collect(a),
    }
    .map(|failed| if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let outcome = import_files(&[path], &ImportOptions::canonical())
        .with_context(|| format!("loading corpus {}", path.display()))?;
    if !outcome.report.errors.is_empty() {
        bail!("{} has {} invalid records; re-run ingest", path.display(), outcome.report.errors.len());
    }
    Ok(outcome.corpus)
}

fn ingest(a: IngestArgs) -> Result<bool> {
    let field_map = a.field_map.as_deref().map(FieldMap::load).transpose()?;
    let options = ImportOptions {
        format: a.format.into(),
        field_map,
        no_relation_label: a.no_relation_label,
        ..ImportOptions::default()
    };
    let outcome = import_files(&a.input, &options)?;
    outcome.corpus.write_canonical(&a.out)?;
    if let Some(path) = &a.errors {
        outcome.report.write_jsonl(path)?;
    }
    let [train, dev, test] = outcome.corpus.split_sizes();
    println!(
        "read {} records, accepted {} (train {train}, dev {dev}, test {test}), rejected {}; {} relations",
        outcome.report.records_read,
        outcome.report.records_accepted,
        outcome.report.errors.len(),
        outcome.corpus.vocabulary.len()
    );
    Ok(false)
}

fn synth(a: SynthArgs) -> Result<bool> {
    let corpus = make_synthetic_corpus(a.instances, a.relations, a.seed)?;
    corpus.write_canonical(&a.out)?;
    let [train, dev, test] = corpus.split_sizes();
    println!("wrote {} instances (train {train}, dev {dev}, test {test}) to {}", corpus.len(), a.out.display());
    Ok(false)
}

fn tagger_spec(a: &TagArgs) -> Result<TaggerSpec> {
    let mut spec = match a.tagger {
        TaggerChoice::Rule => {
            let mut config = serde_json::Map::new();
            if let Some(p) = &a.gazetteer {
                config.insert("gazetteer".into(), json!(p));
            }
            if let Some(p) = &a.pos_lexicon {
                config.insert("pos_lexicon".into(), json!(p));
            }
            TaggerSpec {
                config: if config.is_empty() { Value::Null } else { Value::Object(config) },
                ..TaggerSpec::rule_reference()
            }
        }
        TaggerChoice::External => {
            let command = a.adapter_cmd.clone().context("--adapter-cmd is required for the external tagger")?;
            TaggerSpec::external(&ExternalConfig { name: "external".into(), command, args: a.adapter_args.clone() })
        }
    };
    if a.gold_overlay {
        let mut map = match spec.config {
            Value::Object(map) => map,
            _ => serde_json::Map::new(),
        };
        map.insert("gold_overlay".into(), Value::Bool(true));
        spec.config = Value::Object(map);
    }
    Ok(spec)
}

fn tag(a: TagArgs) -> Result<bool> {
    let corpus = load_corpus(&a.corpus)?;
    let mut annotator = Annotator::from_spec(&tagger_spec(&a)?)?;
    let outcome = tag_corpus(&corpus, &mut annotator, Some(&a.cache))?;
    println!(
        "{} instances tagged ({} tagger calls, cache {:?}) -> {}",
        outcome.annotations.len(),
        outcome.tagger_invocations,
        outcome.cache,
        a.cache.display()
    );
    Ok(false)
}

/// Label vocabulary written next to an augmented file.
fn labels_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".labels.json");
    path.with_file_name(name)
}

fn read_labels(path: &Path) -> Result<LabelVocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading labels {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing labels {}", path.display()))
}

fn augment(a: AugmentArgs) -> Result<bool> {
    let corpus = load_corpus(&a.corpus)?;
    let tags: BTreeMap<String, TagAnnotation> = load_annotations(&a.tags)?;
    let options = BuildOptions { mark_entities: a.mark_entities };
    let splits: Vec<Split> = a.split.map_or_else(|| Split::ALL.to_vec(), |s| vec![s]);
    let mut examples = Vec::new();
    for split in splits {
        examples.extend(augment_split(&corpus, split, &tags, a.strategy, options)?);
    }
    write_examples(&a.out, &examples)?;
    let sidecar = labels_sidecar(&a.out);
    fs::write(&sidecar, serde_json::to_string_pretty(&corpus.vocabulary)?)?;
    println!("wrote {} {} examples to {}", examples.len(), a.strategy, a.out.display());
    Ok(false)
}

fn train_cmd(a: TrainArgs) -> Result<bool> {
    let cfg: TrainConfig = match &a.config {
        Some(path) => {
            serde_yaml::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    let labels = read_labels(&a.labels.clone().unwrap_or_else(|| labels_sidecar(&a.data)))?;
    let train_examples = read_examples(&a.data)?;
    let dev_examples = read_examples(&a.dev)?;
    let spec = EncoderSpec {
        max_length: a.max_length,
        add_tag_tokens: !a.no_tag_tokens,
        mark_entities: a.mark_entities,
        ..EncoderSpec::new(a.backbone)
    };
    let checkpoint = train(&train_examples, &dev_examples, &spec, &cfg, &labels)?;
    checkpoint.save(&a.out)?;
    println!(
        "best epoch {} of {}: dev micro-F1 {:.4}, macro-F1 {:.4}; checkpoint in {}",
        checkpoint.best_epoch,
        checkpoint.history.len(),
        checkpoint.dev_metrics.micro_f1,
        checkpoint.dev_metrics.macro_f1,
        a.out.display()
    );
    Ok(false)
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    instance_id: String,
    gold_label: String,
    pred_label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    scores: Vec<f64>,
}

fn predict_cmd(a: PredictArgs) -> Result<bool> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let examples: Vec<AugmentedExample> = read_examples(&a.data)?;
    let preds = predict(&checkpoint, &examples)?;
    let label = |i: usize| checkpoint.labels.label(i).unwrap_or_default().to_string();
    let mut out = String::new();
    for (ex, p) in examples.iter().zip(&preds) {
        let line = PredictionLine {
            instance_id: p.instance_id.clone(),
            gold_label: label(ex.label_index),
            pred_label: label(p.label_index),
            scores: p.scores.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(&a.out, out)?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(false)
}

fn read_prediction_lines(path: &Path) -> Result<Vec<PredictionLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn eval(a: EvalArgs) -> Result<bool> {
    let files: Vec<(String, Vec<PredictionLine>)> = a
        .predictions
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            read_prediction_lines(p).map(|lines| (name, lines))
        })
        .collect::<Result<_>>()?;
    let vocab = match &a.labels {
        Some(path) => read_labels(path)?,
        None => LabelVocabulary::from_observed(
            files
                .iter()
                .flat_map(|(_, lines)| lines.iter().flat_map(|l| [l.gold_label.as_str(), l.pred_label.as_str()])),
            DEFAULT_NO_RELATION,
        ),
    };
    let mut runs: Vec<(String, MetricsReport)> = Vec::new();
    for (name, lines) in files {
        let index = |label: &str| vocab.index_of(label).with_context(|| format!("{name}: unknown label \"{label}\""));
        let gold = lines.iter().map(|l| index(&l.gold_label)).collect::<Result<Vec<_>>>()?;
        let pred = lines.iter().map(|l| index(&l.pred_label)).collect::<Result<Vec<_>>>()?;
        runs.push((name, evaluate(&gold, &pred, &vocab, &a.filter)?));
    }
    print!("{}", report_table(&runs)?.render(a.format.into()));
    if let Some(first) = runs.first() {
        info!("labels: {}", first.1.label_filter);
    }
    if let Some(path) = &a.report {
        let reports: BTreeMap<&str, &MetricsReport> = runs.iter().map(|(n, r)| (n.as_str(), r)).collect();
        fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(false)
}

fn grid(
    a: GridArgs,
    launch: fn(&ExperimentConfig) -> Result<GridOutcome, finrel_core::runner::RunnerError>,
) -> Result<bool> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let outcome = launch(&cfg)?;
    print!("{}", outcome.table.render(a.format.into()));
    for record in &outcome.records {
        if let RunStatus::Failed { stage, error } = &record.status {
            eprintln!("run {} failed at {stage}: {error}", record.run_id);
        }
    }
    println!("records under {}", cfg.output_dir.display());
    Ok(!outcome.all_completed())
}

fn collect(a: CollectArgs) -> Result<bool> {
    let outcome = collect_records(&a.dir)?;
    match &a.out {
        Some(path) => fs::write(path, &outcome.csv)?,
        None => print!("{}", outcome.csv),
    }
    Ok(outcome.records.iter().any(|r| !r.is_completed()))
}
