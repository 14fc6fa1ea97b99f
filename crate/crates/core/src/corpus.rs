//! Relation-extraction instances, label vocabularies, importers and the
//! synthetic desk-scale corpus generator.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::tagging::lexicon::Gazetteer;

pub const DEFAULT_NO_RELATION: &str = "no_relation";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("zero valid records in {0}")]
    NoValidRecords(String),
    #[error("unknown relation label \"{0}\" is not in the fixed label vocabulary")]
    UnknownLabel(String),
    #[error("invalid label vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid synthetic corpus request: {0}")]
    InvalidRequest(String),
    #[error("invalid split name \"{0}\" (expected train, dev or test)")]
    InvalidSplit(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(CorpusError::InvalidSplit(s.to_string())),
        }
    }
}

/// Half-open token range `[start, end)` with the entity type it carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Self { start, end, entity_type: entity_type.into() }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub e1: EntitySpan,
    pub e2: EntitySpan,
    pub relation: String,
    pub split: Split,
}

/// Ordered relation labels with a designated null class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    no_relation_label: String,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, no_relation_label: impl Into<String>) -> Result<Self, CorpusError> {
        let no_relation_label = no_relation_label.into();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(CorpusError::InvalidVocabulary(format!("duplicate label \"{label}\"")));
            }
        }
        if !index.contains_key(&no_relation_label) {
            return Err(CorpusError::InvalidVocabulary(format!(
                "null label \"{no_relation_label}\" is not among the labels"
            )));
        }
        Ok(Self { labels, no_relation_label, index })
    }

    /// Sorted observed labels; the null label is added when no record used it.
    pub fn from_observed<'a>(observed: impl IntoIterator<Item = &'a str>, no_relation_label: &str) -> Self {
        let mut set: BTreeSet<String> = observed.into_iter().map(str::to_string).collect();
        set.insert(no_relation_label.to_string());
        Self::new(set.into_iter().collect(), no_relation_label).expect("sorted set has unique labels")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn no_relation_label(&self) -> &str {
        &self.no_relation_label
    }

    pub fn no_relation_index(&self) -> usize {
        self.index[&self.no_relation_label]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }
}

impl Serialize for LabelVocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            labels: &'a [String],
            no_relation_label: &'a str,
        }
        Repr { labels: &self.labels, no_relation_label: &self.no_relation_label }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            labels: Vec<String>,
            no_relation_label: String,
        }
        let repr = Repr::deserialize(deserializer)?;
        LabelVocabulary::new(repr.labels, repr.no_relation_label).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub instances: Vec<RelationInstance>,
    pub vocabulary: LabelVocabulary,
    pub entity_types: BTreeSet<String>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn split(&self, name: Split) -> Vec<&RelationInstance> {
        split(self, name)
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for inst in &self.instances {
            sizes[inst.split as usize] += 1;
        }
        sizes
    }

    /// Writes the canonical one-record-per-line format.
    pub fn write_canonical(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        for inst in &self.instances {
            let line = serde_json::to_string(&CanonicalRecord::from(inst)).expect("record serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Instances tagged with `name`, in corpus order.
pub fn split(corpus: &Corpus, name: Split) -> Vec<&RelationInstance> {
    corpus.instances.iter().filter(|inst| inst.split == name).collect()
}

/// Flat on-disk record of the canonical JSONL format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub e1_start: usize,
    pub e1_end: usize,
    pub e1_type: String,
    pub e2_start: usize,
    pub e2_end: usize,
    pub e2_type: String,
    pub relation: String,
    pub split: Split,
}

impl From<&RelationInstance> for CanonicalRecord {
    fn from(inst: &RelationInstance) -> Self {
        Self {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            e1_start: inst.e1.start,
            e1_end: inst.e1.end,
            e1_type: inst.e1.entity_type.clone(),
            e2_start: inst.e2.start,
            e2_end: inst.e2.end,
            e2_type: inst.e2.entity_type.clone(),
            relation: inst.relation.clone(),
            split: inst.split,
        }
    }
}

impl From<CanonicalRecord> for RelationInstance {
    fn from(r: CanonicalRecord) -> Self {
        Self {
            id: r.id,
            tokens: r.tokens,
            e1: EntitySpan::new(r.e1_start, r.e1_end, r.e1_type),
            e2: EntitySpan::new(r.e2_start, r.e2_end, r.e2_type),
            relation: r.relation,
            split: r.split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingField { field: String },
    MalformedField { field: String, message: String },
    EmptyTokens,
    EmptyToken { index: usize },
    SpanOutOfRange { entity: String, start: usize, end: usize, num_tokens: usize },
    IdenticalSpans,
    UnknownRelation { label: String },
    UnknownEntityType { entity: String, entity_type: String },
    MalformedRecord { message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingField { field } => write!(f, "missing required field \"{field}\""),
            Violation::MalformedField { field, message } => write!(f, "field \"{field}\": {message}"),
            Violation::EmptyTokens => f.write_str("token list is empty"),
            Violation::EmptyToken { index } => write!(f, "token {index} is an empty string"),
            Violation::SpanOutOfRange { entity, start, end, num_tokens } => {
                write!(f, "{entity} span [{start}, {end}) is not within [0, {num_tokens})")
            }
            Violation::IdenticalSpans => f.write_str("identical entity spans"),
            Violation::UnknownRelation { label } => write!(f, "unknown relation label \"{label}\""),
            Violation::UnknownEntityType { entity, entity_type } => {
                write!(f, "{entity} has unregistered entity type \"{entity_type}\"")
            }
            Violation::MalformedRecord { message } => write!(f, "malformed record: {message}"),
        }
    }
}

/// Every violated instance invariant; empty iff the instance is well-formed.
///
/// Entity types are only checked when a registered set is supplied.
pub fn validate_instance(
    inst: &RelationInstance,
    vocab: &LabelVocabulary,
    entity_types: Option<&BTreeSet<String>>,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n = inst.tokens.len();
    if n == 0 {
        violations.push(Violation::EmptyTokens);
    }
    for (index, token) in inst.tokens.iter().enumerate() {
        if token.is_empty() {
            violations.push(Violation::EmptyToken { index });
        }
    }
    for (name, span) in [("e1", &inst.e1), ("e2", &inst.e2)] {
        if span.start >= span.end || span.end > n {
            violations.push(Violation::SpanOutOfRange {
                entity: name.to_string(),
                start: span.start,
                end: span.end,
                num_tokens: n,
            });
        }
        if let Some(types) = entity_types {
            if !types.contains(&span.entity_type) {
                violations.push(Violation::UnknownEntityType {
                    entity: name.to_string(),
                    entity_type: span.entity_type.clone(),
                });
            }
        }
    }
    if (inst.e1.start, inst.e1.end) == (inst.e2.start, inst.e2.end) {
        violations.push(Violation::IdenticalSpans);
    }
    if !vocab.contains(&inst.relation) {
        violations.push(Violation::UnknownRelation { label: inst.relation.clone() });
    }
    violations
}

/// One rejected input record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based position of the record in its source file.
    pub record: usize,
    pub id: Option<String>,
    pub source: String,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records_read: usize,
    pub records_accepted: usize,
    pub errors: Vec<RecordError>,
}

impl ValidationReport {
    pub fn rejected_ids(&self) -> Vec<&str> {
        self.errors.iter().filter_map(|e| e.id.as_deref()).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        for error in &self.errors {
            writeln!(out, "{}", serde_json::to_string(error).expect("error serializes")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    /// The flat canonical JSONL format written by [`Corpus::write_canonical`].
    Canonical,
    /// REFinD-style records; field names resolved through a [`FieldMap`].
    Refind,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(SourceFormat::Canonical),
            "refind" => Ok(SourceFormat::Refind),
            other => Err(format!("unknown corpus format \"{other}\" (expected refind or canonical)")),
        }
    }
}

/// Source field names for each canonical field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub tokens: String,
    pub e1_start: String,
    pub e1_end: String,
    pub e1_type: String,
    pub e2_start: String,
    pub e2_end: String,
    pub e2_type: String,
    pub relation: String,
    pub split: String,
    /// Source end offsets point at the last entity token rather than one past it.
    pub end_inclusive: bool,
}

impl FieldMap {
    pub fn canonical() -> Self {
        Self {
            id: "id".into(),
            tokens: "tokens".into(),
            e1_start: "e1_start".into(),
            e1_end: "e1_end".into(),
            e1_type: "e1_type".into(),
            e2_start: "e2_start".into(),
            e2_end: "e2_end".into(),
            e2_type: "e2_type".into(),
            relation: "relation".into(),
            split: "split".into(),
            end_inclusive: false,
        }
    }

    /// REFinD release field names (TACRED-derived: `token`, inclusive ends).
    pub fn refind() -> Self {
        Self { tokens: "token".into(), end_inclusive: true, ..Self::canonical() }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text =
            fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        serde_yaml::from_str(&text)
            .map_err(|e| CorpusError::Parse { path: path.display().to_string(), message: e.to_string() })
    }
}

impl Default for FieldMap {
    fn default() -> Self {
        Self::refind()
    }
}

#[derive(Clone, Debug)]
pub struct ImportOptions {
    pub format: SourceFormat,
    /// Overrides the format's default field names.
    pub field_map: Option<FieldMap>,
    /// Fixed label list; any other label is a hard failure.
    pub fixed_labels: Option<Vec<String>>,
    pub no_relation_label: String,
    /// Registered entity types; observed types are used when absent.
    pub entity_types: Option<BTreeSet<String>>,
    /// Split for records without a split field. Inferred from the file name when unset.
    pub default_split: Option<Split>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            format: SourceFormat::Refind,
            field_map: None,
            fixed_labels: None,
            no_relation_label: DEFAULT_NO_RELATION.to_string(),
            entity_types: None,
            default_split: None,
        }
    }
}

impl ImportOptions {
    pub fn canonical() -> Self {
        Self { format: SourceFormat::Canonical, ..Self::default() }
    }

    fn resolved_field_map(&self) -> FieldMap {
        self.field_map.clone().unwrap_or_else(|| match self.format {
            SourceFormat::Canonical => FieldMap::canonical(),
            SourceFormat::Refind => FieldMap::refind(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ImportOutcome {
    pub corpus: Corpus,
    pub report: ValidationReport,
}

/// Imports a single file. See [`import_files`].
pub fn import_refind(path: &Path, options: &ImportOptions) -> Result<ImportOutcome, CorpusError> {
    import_files(&[path], options)
}

/// Imports one or more files (typically one per split) into a validated corpus.
///
/// Files may hold a JSON array of records or one record per line. Invalid records
/// are collected in the report; the import only fails when nothing survives or a
/// fixed vocabulary meets an unknown label.
pub fn import_files<P: AsRef<Path>>(paths: &[P], options: &ImportOptions) -> Result<ImportOutcome, CorpusError> {
    let field_map = options.resolved_field_map();
    let mut report = ValidationReport::default();
    let mut candidates = Vec::new();

    for path in paths {
        let path = path.as_ref();
        let source = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Io { path: source.clone(), source: e })?;
        let default_split = options.default_split.or_else(|| infer_split_from_name(path));
        for (position, parsed) in parse_records(&text, &source)?.into_iter().enumerate() {
            report.records_read += 1;
            let record = position + 1;
            let value = match parsed {
                Ok(value) => value,
                Err(message) => {
                    report.errors.push(RecordError {
                        record,
                        id: None,
                        source: source.clone(),
                        violations: vec![Violation::MalformedRecord { message }],
                    });
                    continue;
                }
            };
            match record_to_instance(&value, &field_map, default_split) {
                Ok(inst) => candidates.push((record, source.clone(), inst)),
                Err((id, violations)) => {
                    report.errors.push(RecordError { record, id, source: source.clone(), violations })
                }
            }
        }
    }

    let vocabulary = match &options.fixed_labels {
        Some(labels) => {
            let vocab = LabelVocabulary::new(labels.clone(), options.no_relation_label.clone())?;
            if let Some((_, _, inst)) = candidates.iter().find(|(_, _, inst)| !vocab.contains(&inst.relation)) {
                return Err(CorpusError::UnknownLabel(inst.relation.clone()));
            }
            vocab
        }
        None => LabelVocabulary::from_observed(
            candidates.iter().map(|(_, _, inst)| inst.relation.as_str()),
            &options.no_relation_label,
        ),
    };

    let mut instances = Vec::with_capacity(candidates.len());
    for (record, source, inst) in candidates {
        let violations = validate_instance(&inst, &vocabulary, options.entity_types.as_ref());
        if violations.is_empty() {
            instances.push(inst);
        } else {
            report.errors.push(RecordError { record, id: Some(inst.id.clone()), source, violations });
        }
    }
    report.errors.sort_by(|a, b| (&a.source, a.record).cmp(&(&b.source, b.record)));
    report.records_accepted = instances.len();

    if instances.is_empty() {
        let names: Vec<String> = paths.iter().map(|p| p.as_ref().display().to_string()).collect();
        return Err(CorpusError::NoValidRecords(names.join(", ")));
    }

    let entity_types = options.entity_types.clone().unwrap_or_else(|| {
        instances.iter().flat_map(|inst| [inst.e1.entity_type.clone(), inst.e2.entity_type.clone()]).collect()
    });

    Ok(ImportOutcome { corpus: Corpus { instances, vocabulary, entity_types }, report })
}

fn infer_split_from_name(path: &Path) -> Option<Split> {
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    ["train", "dev", "test"].iter().find(|name| stem.contains(*name)).and_then(|name| name.parse().ok())
}

type ParsedRecord = Result<Value, String>;

fn parse_records(text: &str, source: &str) -> Result<Vec<ParsedRecord>, CorpusError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(trimmed)
            .map_err(|e| CorpusError::Parse { path: source.to_string(), message: e.to_string() })?;
        return Ok(values.into_iter().map(Ok).collect());
    }
    Ok(text
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str::<Value>(line).map_err(|e| e.to_string()))
        .collect())
}

fn record_to_instance(
    value: &Value,
    map: &FieldMap,
    default_split: Option<Split>,
) -> Result<RelationInstance, (Option<String>, Vec<Violation>)> {
    let Some(obj) = value.as_object() else {
        return Err((None, vec![Violation::MalformedRecord { message: "record is not an object".into() }]));
    };
    let mut violations = Vec::new();
    let id = field_string(obj, &map.id, &mut violations);
    let tokens = field_tokens(obj, &map.tokens, &mut violations);
    let e1_start = field_index(obj, &map.e1_start, &mut violations);
    let e1_end = field_index(obj, &map.e1_end, &mut violations);
    let e1_type = field_string(obj, &map.e1_type, &mut violations);
    let e2_start = field_index(obj, &map.e2_start, &mut violations);
    let e2_end = field_index(obj, &map.e2_end, &mut violations);
    let e2_type = field_string(obj, &map.e2_type, &mut violations);
    let relation = field_string(obj, &map.relation, &mut violations);
    let split = match obj.get(&map.split) {
        Some(Value::String(s)) => match s.parse::<Split>() {
            Ok(split) => Some(split),
            Err(e) => {
                violations.push(Violation::MalformedField { field: map.split.clone(), message: e.to_string() });
                None
            }
        },
        Some(_) => {
            violations
                .push(Violation::MalformedField { field: map.split.clone(), message: "expected a string".into() });
            None
        }
        None => {
            if default_split.is_none() {
                violations.push(Violation::MissingField { field: map.split.clone() });
            }
            default_split
        }
    };

    match (id.clone(), tokens, e1_start, e1_end, e1_type, e2_start, e2_end, e2_type, relation, split) {
        (
            Some(id),
            Some(tokens),
            Some(s1),
            Some(x1),
            Some(t1),
            Some(s2),
            Some(x2),
            Some(t2),
            Some(relation),
            Some(split),
        ) if violations.is_empty() => {
            let adjust = usize::from(map.end_inclusive);
            Ok(RelationInstance {
                id,
                tokens,
                e1: EntitySpan::new(s1, x1 + adjust, t1),
                e2: EntitySpan::new(s2, x2 + adjust, t2),
                relation,
                split,
            })
        }
        _ => Err((id, violations)),
    }
}

fn field_string(obj: &Map<String, Value>, field: &str, violations: &mut Vec<Violation>) -> Option<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => {
            violations.push(Violation::MalformedField { field: field.into(), message: "expected a string".into() });
            None
        }
        None => {
            violations.push(Violation::MissingField { field: field.into() });
            None
        }
    }
}

fn field_index(obj: &Map<String, Value>, field: &str, violations: &mut Vec<Violation>) -> Option<usize> {
    match obj.get(field) {
        Some(v) => match v.as_u64() {
            Some(n) => Some(n as usize),
            None => {
                violations.push(Violation::MalformedField {
                    field: field.into(),
                    message: "expected a non-negative integer".into(),
                });
                None
            }
        },
        None => {
            violations.push(Violation::MissingField { field: field.into() });
            None
        }
    }
}

fn field_tokens(obj: &Map<String, Value>, field: &str, violations: &mut Vec<Violation>) -> Option<Vec<String>> {
    match obj.get(field) {
        Some(Value::Array(items)) => {
            let tokens: Option<Vec<String>> = items.iter().map(|v| v.as_str().map(str::to_string)).collect();
            if tokens.is_none() {
                violations.push(Violation::MalformedField {
                    field: field.into(),
                    message: "expected a list of strings".into(),
                });
            }
            tokens
        }
        Some(_) => {
            violations.push(Violation::MalformedField { field: field.into(), message: "expected a list".into() });
            None
        }
        None => {
            violations.push(Violation::MissingField { field: field.into() });
            None
        }
    }
}

// Synthetic corpus -----------------------------------------------------------

struct RelationTemplate {
    label: &'static str,
    e1_type: &'static str,
    e2_type: &'static str,
    triggers: &'static [&'static str],
}

// Relations that share trigger phrases differ only in their argument types, so a
// learner that cannot see entity types has to memorise entity names instead.
const TEMPLATES: &[RelationTemplate] = &[
    RelationTemplate {
        label: "no_relation",
        e1_type: "*",
        e2_type: "*",
        triggers: &["was mentioned alongside", "and", "appeared next to"],
    },
    RelationTemplate {
        label: "pers:org:employee_of",
        e1_type: "PERSON",
        e2_type: "ORG",
        triggers: &["joined", "is part of", "was acquired by"],
    },
    RelationTemplate {
        label: "org:org:acquired_by",
        e1_type: "ORG",
        e2_type: "ORG",
        triggers: &["joined", "is part of", "was acquired by"],
    },
    RelationTemplate {
        label: "org:gpe:operations_in",
        e1_type: "ORG",
        e2_type: "GPE",
        triggers: &["operates in", "expanded into", "is based in"],
    },
    RelationTemplate {
        label: "pers:gpe:resides_in",
        e1_type: "PERSON",
        e2_type: "GPE",
        triggers: &["operates in", "expanded into", "is based in"],
    },
    RelationTemplate {
        label: "org:money:revenue_of",
        e1_type: "ORG",
        e2_type: "MONEY",
        triggers: &["reported", "posted", "announced"],
    },
    RelationTemplate {
        label: "org:date:formed_on",
        e1_type: "ORG",
        e2_type: "DATE",
        triggers: &["reported", "posted", "announced"],
    },
    RelationTemplate {
        label: "pers:money:compensation",
        e1_type: "PERSON",
        e2_type: "MONEY",
        triggers: &["received", "was awarded", "earned"],
    },
    RelationTemplate {
        label: "pers:date:appointed_on",
        e1_type: "PERSON",
        e2_type: "DATE",
        triggers: &["received", "was awarded", "earned"],
    },
];

const PREFIXES: &[&str] = &["", "", "In the annual filing ,", "According to the report ,", "Last quarter ,"];
const SUFFIXES: &[&str] = &[".", ".", ", the company said .", "according to the filing ."];
const RANDOM_TYPES: &[&str] = &["ORG", "PERSON", "GPE"];

pub fn max_synthetic_relations() -> usize {
    TEMPLATES.len()
}

/// Deterministic desk-scale corpus with planted relation cues.
///
/// Labels are balanced round-robin then shuffled; splits are 70/15/15 by position.
pub fn make_synthetic_corpus(num_instances: usize, num_relations: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if num_relations < 2 {
        return Err(CorpusError::InvalidRequest(format!("num_relations must be at least 2, got {num_relations}")));
    }
    if num_instances < num_relations {
        return Err(CorpusError::InvalidRequest(format!(
            "num_instances ({num_instances}) must be at least num_relations ({num_relations})"
        )));
    }
    if num_relations > TEMPLATES.len() {
        return Err(CorpusError::InvalidRequest(format!(
            "at most {} synthetic relations are available, got {num_relations}",
            TEMPLATES.len()
        )));
    }

    let gazetteer = Gazetteer::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = &TEMPLATES[..num_relations];

    let mut label_order: Vec<usize> = (0..num_instances).map(|i| i % num_relations).collect();
    label_order.shuffle(&mut rng);

    let n_train = num_instances * 70 / 100;
    let n_dev = num_instances * 15 / 100;

    let mut instances = Vec::with_capacity(num_instances);
    for (i, &rel) in label_order.iter().enumerate() {
        let template = &templates[rel];
        let (t1, t2) = if template.e1_type == "*" {
            (*RANDOM_TYPES.choose(&mut rng).unwrap(), *RANDOM_TYPES.choose(&mut rng).unwrap())
        } else {
            (template.e1_type, template.e2_type)
        };
        let e1_words = synthetic_mention(&gazetteer, t1, &mut rng);
        let mut e2_words = synthetic_mention(&gazetteer, t2, &mut rng);
        while e2_words == e1_words {
            e2_words = synthetic_mention(&gazetteer, t2, &mut rng);
        }
        let prefix = PREFIXES.choose(&mut rng).unwrap();
        let trigger = template.triggers.choose(&mut rng).unwrap();
        let suffix = SUFFIXES.choose(&mut rng).unwrap();

        let mut tokens: Vec<String> = prefix.split_whitespace().map(str::to_string).collect();
        let e1_start = tokens.len();
        tokens.extend(e1_words);
        let e1 = EntitySpan::new(e1_start, tokens.len(), t1);
        tokens.extend(trigger.split_whitespace().map(str::to_string));
        let e2_start = tokens.len();
        tokens.extend(e2_words);
        let e2 = EntitySpan::new(e2_start, tokens.len(), t2);
        tokens.extend(suffix.split_whitespace().map(str::to_string));

        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        instances.push(RelationInstance {
            id: format!("syn-{i:06}"),
            tokens,
            e1,
            e2,
            relation: template.label.to_string(),
            split,
        });
    }

    let vocabulary =
        LabelVocabulary::new(templates.iter().map(|t| t.label.to_string()).collect(), DEFAULT_NO_RELATION)?;
    let entity_types =
        instances.iter().flat_map(|inst| [inst.e1.entity_type.clone(), inst.e2.entity_type.clone()]).collect();
    Ok(Corpus { instances, vocabulary, entity_types })
}

fn synthetic_mention(gazetteer: &Gazetteer, entity_type: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    match entity_type {
        "MONEY" => {
            let amount = rng.gen_range(1..=999);
            let frac = rng.gen_range(0..10);
            let scale = ["million", "billion"][rng.gen_range(0..2)];
            vec![format!("${amount}.{frac}"), scale.to_string()]
        }
        "DATE" => {
            const MONTHS: [&str; 12] = [
                "January",
                "February",
                "March",
                "April",
                "May",
                "June",
                "July",
                "August",
                "September",
                "October",
                "November",
                "December",
            ];
            vec![MONTHS[rng.gen_range(0..12)].to_string(), rng.gen_range(1990..=2023).to_string()]
        }
        other => {
            let names = gazetteer.entries_of(other);
            names[rng.gen_range(0..names.len())].clone()
        }
    }
}
