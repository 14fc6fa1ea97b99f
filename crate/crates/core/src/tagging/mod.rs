//! Per-token NER and POS annotation behind a pluggable tagger contract.

pub mod align;
pub mod cache;
pub mod external;
pub mod lexicon;
pub mod rule;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, RelationInstance};

pub use align::{align_tags, layout_tokens, CharSpan, TaggedSpan};
pub use cache::CacheStatus;
pub use external::{ExternalConfig, ExternalTagger};
pub use lexicon::{Gazetteer, PosLexicon};
pub use rule::RuleTagger;

/// Marks tokens outside any entity.
pub const NULL_NER_TAG: &str = "O";
/// POS tag for tokens an external tagger left uncovered.
pub const UNCOVERED_POS_TAG: &str = "X";

pub const ONTONOTES_NER_TAGS: [&str; 18] = [
    "PERSON",
    "NORP",
    "FAC",
    "ORG",
    "GPE",
    "LOC",
    "PRODUCT",
    "EVENT",
    "WORK_OF_ART",
    "LAW",
    "LANGUAGE",
    "DATE",
    "TIME",
    "PERCENT",
    "MONEY",
    "QUANTITY",
    "ORDINAL",
    "CARDINAL",
];

pub const UNIVERSAL_POS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X",
];

#[derive(Debug, Error)]
pub enum TagError {
    #[error("tagger adapter \"{adapter}\" is unavailable: {reason}")]
    AdapterUnavailable { adapter: String, reason: String },
    #[error("tagger adapter error: {0}")]
    Adapter(String),
    #[error("tokenizations cover different text: {source_text:?} vs {tagger_text:?}")]
    TextMismatch { source_text: String, tagger_text: String },
    #[error("instance {instance_id}: {message}")]
    Alignment { instance_id: String, message: String },
    #[error("instance {instance_id}: tag \"{tag}\" is not in the {kind} inventory")]
    UnknownTag { instance_id: String, kind: &'static str, tag: String },
    #[error("instance {instance_id}: {source}")]
    Instance {
        instance_id: String,
        #[source]
        source: Box<TagError>,
    },
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("invalid tagger spec: {0}")]
    InvalidSpec(String),
    #[error("tag cache {path}: {message}")]
    Cache { path: String, message: String },
}

/// NER and POS tags aligned one-to-one with an instance's tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagAnnotation {
    pub instance_id: String,
    pub ner_tags: Vec<String>,
    pub pos_tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagInventory {
    pub ner_tags: BTreeSet<String>,
    pub pos_tags: BTreeSet<String>,
}

impl Default for TagInventory {
    fn default() -> Self {
        Self {
            ner_tags: ONTONOTES_NER_TAGS.iter().map(|s| s.to_string()).collect(),
            pos_tags: UNIVERSAL_POS_TAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TagInventory {
    pub fn null_ner_tag(&self) -> &'static str {
        NULL_NER_TAG
    }

    pub fn is_valid_ner(&self, tag: &str) -> bool {
        tag == NULL_NER_TAG || self.ner_tags.contains(tag)
    }

    pub fn is_valid_pos(&self, tag: &str) -> bool {
        self.pos_tags.contains(tag)
    }
}

/// Raw tagger output for one token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTags {
    pub ner: Vec<String>,
    pub pos: Vec<String>,
}

/// A source of per-token tags. Implementations need not be reentrant.
pub trait Tagger {
    fn name(&self) -> &str;
    /// Identifies the tagger's data and settings; part of the cache key.
    fn fingerprint(&self) -> String;
    fn tag_tokens(&mut self, tokens: &[String]) -> Result<RawTags, TagError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerKind {
    RuleReference,
    ExternalAdapter,
}

/// Tagger choice plus its settings.
///
/// `config` for `rule_reference` accepts `gazetteer` and `pos_lexicon` paths; for
/// `external_adapter` it is an [`ExternalConfig`]. Either kind accepts
/// `gold_overlay: true`, which forces entity-span tokens to their gold types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerSpec {
    pub kind: TaggerKind,
    #[serde(default)]
    pub config: Value,
}

impl Default for TaggerSpec {
    fn default() -> Self {
        Self::rule_reference()
    }
}

#[derive(Debug, Default, Deserialize)]
struct RuleConfig {
    gazetteer: Option<PathBuf>,
    pos_lexicon: Option<PathBuf>,
}

impl TaggerSpec {
    pub fn rule_reference() -> Self {
        Self { kind: TaggerKind::RuleReference, config: Value::Null }
    }

    pub fn external(config: &ExternalConfig) -> Self {
        Self { kind: TaggerKind::ExternalAdapter, config: serde_json::to_value(config).expect("config serializes") }
    }

    pub fn gold_overlay(&self) -> bool {
        self.config.get("gold_overlay").and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn build(&self) -> Result<Box<dyn Tagger + Send>, TagError> {
        let config = strip_overlay(&self.config);
        match self.kind {
            TaggerKind::RuleReference => {
                let cfg: RuleConfig = if config.is_null() {
                    RuleConfig::default()
                } else {
                    serde_json::from_value(config).map_err(|e| TagError::InvalidSpec(e.to_string()))?
                };
                let gazetteer = match cfg.gazetteer {
                    Some(path) => Gazetteer::load(&path)?,
                    None => Gazetteer::builtin(),
                };
                let pos = match cfg.pos_lexicon {
                    Some(path) => PosLexicon::load(&path)?,
                    None => PosLexicon::builtin(),
                };
                Ok(Box::new(RuleTagger::new(gazetteer, pos)))
            }
            TaggerKind::ExternalAdapter => {
                let cfg: ExternalConfig =
                    serde_json::from_value(config).map_err(|e| TagError::InvalidSpec(e.to_string()))?;
                Ok(Box::new(ExternalTagger::new(cfg)))
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TaggerKind::RuleReference => "rule_reference",
            TaggerKind::ExternalAdapter => "external_adapter",
        }
    }
}

fn strip_overlay(config: &Value) -> Value {
    match config {
        Value::Object(map) => {
            let mut map = map.clone();
            map.remove("gold_overlay");
            if map.is_empty() {
                Value::Null
            } else {
                Value::Object(map)
            }
        }
        other => other.clone(),
    }
}

/// Wraps a tagger with inventory checks, the optional gold overlay and an
/// invocation counter.
pub struct Annotator {
    tagger: Box<dyn Tagger + Send>,
    inventory: TagInventory,
    gold_overlay: bool,
    kind: String,
    config_hash: String,
    invocations: usize,
}

impl Annotator {
    pub fn from_spec(spec: &TaggerSpec) -> Result<Self, TagError> {
        Ok(Self::new(spec.build()?, spec.kind_name(), &spec.config, spec.gold_overlay(), TagInventory::default()))
    }

    pub fn new(
        tagger: Box<dyn Tagger + Send>,
        kind: &str,
        config: &Value,
        gold_overlay: bool,
        inventory: TagInventory,
    ) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(kind.as_bytes());
        hasher.update(serde_json::to_vec(config).expect("config serializes"));
        hasher.update(tagger.fingerprint().as_bytes());
        hasher.update(serde_json::to_vec(&inventory).expect("inventory serializes"));
        hasher.update([u8::from(gold_overlay)]);
        let config_hash = hex::encode(hasher.finalize());
        Self { tagger, inventory, gold_overlay, kind: kind.to_string(), config_hash, invocations: 0 }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Number of sentences sent to the underlying tagger so far.
    pub fn invocations(&self) -> usize {
        self.invocations
    }

    pub fn inventory(&self) -> &TagInventory {
        &self.inventory
    }

    pub fn annotate(&mut self, inst: &RelationInstance) -> Result<TagAnnotation, TagError> {
        self.invocations += 1;
        let raw = self.tagger.tag_tokens(&inst.tokens).map_err(|e| match e {
            e @ TagError::AdapterUnavailable { .. } => e,
            other => TagError::Instance { instance_id: inst.id.clone(), source: Box::new(other) },
        })?;
        let n = inst.tokens.len();
        if raw.ner.len() != n || raw.pos.len() != n {
            return Err(TagError::Alignment {
                instance_id: inst.id.clone(),
                message: format!("expected {n} tags, tagger returned {} NER and {} POS", raw.ner.len(), raw.pos.len()),
            });
        }
        let mut ner_tags = raw.ner;
        if self.gold_overlay {
            for span in [&inst.e1, &inst.e2] {
                for tag in &mut ner_tags[span.start.min(n)..span.end.min(n)] {
                    *tag = span.entity_type.clone();
                }
            }
        }
        if let Some(tag) = ner_tags.iter().find(|t| !self.inventory.is_valid_ner(t)) {
            return Err(TagError::UnknownTag { instance_id: inst.id.clone(), kind: "NER", tag: tag.clone() });
        }
        if let Some(tag) = raw.pos.iter().find(|t| !self.inventory.is_valid_pos(t)) {
            return Err(TagError::UnknownTag { instance_id: inst.id.clone(), kind: "POS", tag: tag.clone() });
        }
        Ok(TagAnnotation { instance_id: inst.id.clone(), ner_tags, pos_tags: raw.pos })
    }
}

/// Tags one instance with a freshly built tagger.
pub fn tag_instance(inst: &RelationInstance, spec: &TaggerSpec) -> Result<TagAnnotation, TagError> {
    Annotator::from_spec(spec)?.annotate(inst)
}

#[derive(Clone, Debug)]
pub struct TagCorpusOutcome {
    /// Keyed and ordered by instance id.
    pub annotations: BTreeMap<String, TagAnnotation>,
    pub tagger_invocations: usize,
    pub cache: CacheStatus,
}

/// Tags every instance, reusing `cache_path` when it holds a complete cache
/// written by the same tagger configuration.
pub fn tag_corpus(
    corpus: &Corpus,
    annotator: &mut Annotator,
    cache_path: Option<&Path>,
) -> Result<TagCorpusOutcome, TagError> {
    let mut status = CacheStatus::Disabled;
    if let Some(path) = cache_path {
        match cache::read_cache(path, annotator.kind(), annotator.config_hash()) {
            Ok(Some(cached)) => {
                if covers(&cached, corpus) {
                    return Ok(TagCorpusOutcome {
                        annotations: cached,
                        tagger_invocations: 0,
                        cache: CacheStatus::Hit,
                    });
                }
                log::warn!("tag cache {} does not cover the corpus; retagging", path.display());
                status = CacheStatus::Incomplete;
            }
            Ok(None) => status = CacheStatus::Missing,
            Err(cache::CacheReadError::Stale) => {
                log::warn!("tag cache {} was written by a different tagger configuration; ignoring it", path.display());
                status = CacheStatus::Stale;
            }
            Err(cache::CacheReadError::Corrupt(message)) => {
                log::warn!("tag cache {} is corrupt ({message}); ignoring it", path.display());
                status = CacheStatus::Corrupt;
            }
        }
    }

    let before = annotator.invocations();
    let mut annotations = BTreeMap::new();
    for inst in &corpus.instances {
        annotations.insert(inst.id.clone(), annotator.annotate(inst)?);
    }
    if let Some(path) = cache_path {
        cache::write_cache(path, annotator.kind(), annotator.config_hash(), &annotations)?;
    }
    Ok(TagCorpusOutcome { annotations, tagger_invocations: annotator.invocations() - before, cache: status })
}

fn covers(cached: &BTreeMap<String, TagAnnotation>, corpus: &Corpus) -> bool {
    corpus.instances.iter().all(|inst| {
        cached
            .get(&inst.id)
            .is_some_and(|ann| ann.ner_tags.len() == inst.tokens.len() && ann.pos_tags.len() == inst.tokens.len())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, EntitySpan, Split};

    fn instance(tokens: &[&str]) -> RelationInstance {
        RelationInstance {
            id: "t1".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            e1: EntitySpan::new(0, 1, "ORG"),
            e2: EntitySpan::new(2, 3, "ORG"),
            relation: "no_relation".into(),
            split: Split::Train,
        }
    }

    #[test]
    fn tag_instance_with_rule_spec() {
        let ann =
            tag_instance(&instance(&["Google", "acquired", "Fitbit", "."]), &TaggerSpec::rule_reference()).unwrap();
        assert_eq!(ann.ner_tags, ["ORG", "O", "ORG", "O"]);
        assert_eq!(ann.pos_tags, ["PROPN", "VERB", "PROPN", "PUNCT"]);
    }

    #[test]
    fn output_lengths_match_long_sentence() {
        let words: Vec<String> = (0..50).map(|i| format!("word{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let ann = tag_instance(&instance(&refs), &TaggerSpec::rule_reference()).unwrap();
        assert_eq!(ann.ner_tags.len(), 50);
        assert_eq!(ann.pos_tags.len(), 50);
    }

    #[test]
    fn gold_overlay_forces_span_types() {
        let spec = TaggerSpec { kind: TaggerKind::RuleReference, config: serde_json::json!({"gold_overlay": true}) };
        let mut inst = instance(&["Zyx", "bought", "Qwv", "."]);
        inst.e1 = EntitySpan::new(0, 1, "ORG");
        inst.e2 = EntitySpan::new(2, 3, "PERSON");
        let ann = tag_instance(&inst, &spec).unwrap();
        assert_eq!(ann.ner_tags, ["ORG", "O", "PERSON", "O"]);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        struct Bad;
        impl Tagger for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn fingerprint(&self) -> String {
                String::new()
            }
            fn tag_tokens(&mut self, tokens: &[String]) -> Result<RawTags, TagError> {
                Ok(RawTags { ner: vec!["COMPANY".into(); tokens.len()], pos: vec!["NOUN".into(); tokens.len()] })
            }
        }
        let mut annotator = Annotator::new(Box::new(Bad), "bad", &Value::Null, false, TagInventory::default());
        let err = annotator.annotate(&instance(&["a", "b", "c"])).unwrap_err();
        assert!(err.to_string().contains("COMPANY"), "{err}");
    }

    #[test]
    fn short_output_is_an_alignment_failure() {
        struct Short;
        impl Tagger for Short {
            fn name(&self) -> &str {
                "short"
            }
            fn fingerprint(&self) -> String {
                String::new()
            }
            fn tag_tokens(&mut self, _: &[String]) -> Result<RawTags, TagError> {
                Ok(RawTags { ner: vec!["O".into()], pos: vec!["X".into()] })
            }
        }
        let mut annotator = Annotator::new(Box::new(Short), "short", &Value::Null, false, TagInventory::default());
        let err = annotator.annotate(&instance(&["a", "b", "c"])).unwrap_err();
        assert!(matches!(err, TagError::Alignment { ref instance_id, .. } if instance_id == "t1"));
    }

    #[test]
    fn missing_external_command_names_the_adapter() {
        let spec = TaggerSpec::external(&ExternalConfig {
            name: "spacy-bridge".into(),
            command: "/nonexistent/tagger-binary".into(),
            args: vec![],
        });
        let err = tag_instance(&instance(&["a", "b", "c"]), &spec).unwrap_err();
        assert!(matches!(err, TagError::AdapterUnavailable { ref adapter, .. } if adapter == "spacy-bridge"));
    }

    #[test]
    fn tag_corpus_counts_invocations() {
        let corpus = make_synthetic_corpus(200, 4, 42).unwrap();
        let mut annotator = Annotator::from_spec(&TaggerSpec::rule_reference()).unwrap();
        let out = tag_corpus(&corpus, &mut annotator, None).unwrap();
        assert_eq!(out.annotations.len(), 200);
        assert_eq!(out.tagger_invocations, 200);
        assert_eq!(out.cache, CacheStatus::Disabled);
    }

    #[test]
    fn inventories_have_expected_sizes() {
        let inv = TagInventory::default();
        assert_eq!(inv.ner_tags.len(), 18);
        assert_eq!(inv.pos_tags.len(), 17);
        assert!(!inv.ner_tags.contains(NULL_NER_TAG));
        assert!(inv.is_valid_ner("O"));
    }
}
