//! The six input-construction strategies.
//!
//! | strategy | segments                          |
//! |----------|-----------------------------------|
//! | `T`      | text                              |
//! | `TN`     | text, NER                         |
//! | `TP`     | text, POS                         |
//! | `TNP`    | text, NER, POS                    |
//! | `TrN`    | text with entity tokens replaced  |
//! | `TrNP`   | replaced text, POS                |
//!
//! Tag segments carry bracketed tag types (`[ORG]`, `[VERB]`, and `[O]` for
//! non-entities), never surface strings. Segment boundaries stay abstract; the
//! encoder inserts its own separators.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LabelVocabulary, RelationInstance, Split};
use crate::tagging::{TagAnnotation, NULL_NER_TAG};

pub const E1_OPEN: &str = "[E1]";
pub const E1_CLOSE: &str = "[/E1]";
pub const E2_OPEN: &str = "[E2]";
pub const E2_CLOSE: &str = "[/E2]";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("token/tag length mismatch: {tokens} tokens, {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("instance {instance_id}: annotation belongs to {annotation_id}")]
    WrongAnnotation { instance_id: String, annotation_id: String },
    #[error("instance {instance_id}: relation \"{relation}\" is not in the label vocabulary")]
    UnknownRelation { instance_id: String, relation: String },
    #[error("missing tag annotations for {} instance(s): {}", .0.len(), .0.join(", "))]
    MissingAnnotations(Vec<String>),
    #[error("unknown strategy \"{0}\" (expected one of t, tn, tp, tnp, trn, trnp)")]
    UnknownStrategy(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    T,
    TN,
    TP,
    TNP,
    TrN,
    TrNP,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] =
        [StrategyId::T, StrategyId::TN, StrategyId::TP, StrategyId::TNP, StrategyId::TrN, StrategyId::TrNP];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::T => "T",
            StrategyId::TN => "TN",
            StrategyId::TP => "TP",
            StrategyId::TNP => "TNP",
            StrategyId::TrN => "TrN",
            StrategyId::TrNP => "TrNP",
        }
    }

    pub fn segment_count(self) -> usize {
        match self {
            StrategyId::T | StrategyId::TrN => 1,
            StrategyId::TN | StrategyId::TP | StrategyId::TrNP => 2,
            StrategyId::TNP => 3,
        }
    }

    pub fn replaces_entities(self) -> bool {
        matches!(self, StrategyId::TrN | StrategyId::TrNP)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| AugmentError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub instance_id: String,
    pub strategy: StrategyId,
    pub segments: Vec<Vec<String>>,
    pub label_index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Wrap the two entity spans in `[E1] .. [/E1]` and `[E2] .. [/E2]`.
    pub mark_entities: bool,
}

pub fn bracketed(tag: &str) -> String {
    format!("[{tag}]")
}

/// Replaces every token whose NER tag is not `O` with its bracketed tag.
pub fn build_trn(tokens: &[String], ner_tags: &[String]) -> Result<Vec<String>, AugmentError> {
    if tokens.len() != ner_tags.len() {
        return Err(AugmentError::LengthMismatch { tokens: tokens.len(), tags: ner_tags.len() });
    }
    Ok(tokens
        .iter()
        .zip(ner_tags)
        .map(|(token, tag)| if tag == NULL_NER_TAG { token.clone() } else { bracketed(tag) })
        .collect())
}

pub fn build_sequence(
    inst: &RelationInstance,
    ann: &TagAnnotation,
    strategy: StrategyId,
    vocab: &LabelVocabulary,
) -> Result<AugmentedExample, AugmentError> {
    build_sequence_with(inst, ann, strategy, vocab, BuildOptions::default())
}

pub fn build_sequence_with(
    inst: &RelationInstance,
    ann: &TagAnnotation,
    strategy: StrategyId,
    vocab: &LabelVocabulary,
    options: BuildOptions,
) -> Result<AugmentedExample, AugmentError> {
    if ann.instance_id != inst.id {
        return Err(AugmentError::WrongAnnotation {
            instance_id: inst.id.clone(),
            annotation_id: ann.instance_id.clone(),
        });
    }
    for tags in [&ann.ner_tags, &ann.pos_tags] {
        if tags.len() != inst.tokens.len() {
            return Err(AugmentError::LengthMismatch { tokens: inst.tokens.len(), tags: tags.len() });
        }
    }
    let label_index = vocab.index_of(&inst.relation).ok_or_else(|| AugmentError::UnknownRelation {
        instance_id: inst.id.clone(),
        relation: inst.relation.clone(),
    })?;

    let ner: Vec<String> = ann.ner_tags.iter().map(|t| bracketed(t)).collect();
    let pos: Vec<String> = ann.pos_tags.iter().map(|t| bracketed(t)).collect();
    let (tokens, ner, pos, raw_ner) = if options.mark_entities {
        (
            mark(inst, &inst.tokens),
            mark(inst, &ner),
            mark(inst, &pos),
            mark(inst, &ann.ner_tags)
                .into_iter()
                .map(|t| if is_marker(&t) { NULL_NER_TAG.to_string() } else { t })
                .collect(),
        )
    } else {
        (inst.tokens.clone(), ner, pos, ann.ner_tags.clone())
    };

    let segments = match strategy {
        StrategyId::T => vec![tokens],
        StrategyId::TN => vec![tokens, ner],
        StrategyId::TP => vec![tokens, pos],
        StrategyId::TNP => vec![tokens, ner, pos],
        StrategyId::TrN => vec![build_trn(&tokens, &raw_ner)?],
        StrategyId::TrNP => vec![build_trn(&tokens, &raw_ner)?, pos],
    };
    Ok(AugmentedExample { instance_id: inst.id.clone(), strategy, segments, label_index })
}

fn is_marker(token: &str) -> bool {
    [E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE].contains(&token)
}

// Markers are inserted into every aligned sequence so tag segments keep the
// text segment's length.
fn mark(inst: &RelationInstance, seq: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(seq.len() + 4);
    for (i, item) in seq.iter().enumerate() {
        if i == inst.e1.start {
            out.push(E1_OPEN.to_string());
        }
        if i == inst.e2.start {
            out.push(E2_OPEN.to_string());
        }
        out.push(item.clone());
        if i + 1 == inst.e2.end {
            out.push(E2_CLOSE.to_string());
        }
        if i + 1 == inst.e1.end {
            out.push(E1_CLOSE.to_string());
        }
    }
    out
}

/// One example per instance, in corpus order.
pub fn augment_corpus(
    corpus: &Corpus,
    annotations: &BTreeMap<String, TagAnnotation>,
    strategy: StrategyId,
) -> Result<Vec<AugmentedExample>, AugmentError> {
    augment_instances(corpus.instances.iter(), &corpus.vocabulary, annotations, strategy, BuildOptions::default())
}

/// Like [`augment_corpus`] but restricted to one split.
pub fn augment_split(
    corpus: &Corpus,
    split: Split,
    annotations: &BTreeMap<String, TagAnnotation>,
    strategy: StrategyId,
    options: BuildOptions,
) -> Result<Vec<AugmentedExample>, AugmentError> {
    augment_instances(
        corpus.instances.iter().filter(|inst| inst.split == split),
        &corpus.vocabulary,
        annotations,
        strategy,
        options,
    )
}

pub fn augment_instances<'a>(
    instances: impl Iterator<Item = &'a RelationInstance> + Clone,
    vocab: &LabelVocabulary,
    annotations: &BTreeMap<String, TagAnnotation>,
    strategy: StrategyId,
    options: BuildOptions,
) -> Result<Vec<AugmentedExample>, AugmentError> {
    let missing: Vec<String> =
        instances.clone().filter(|inst| !annotations.contains_key(&inst.id)).map(|inst| inst.id.clone()).collect();
    if !missing.is_empty() {
        return Err(AugmentError::MissingAnnotations(missing));
    }
    instances.map(|inst| build_sequence_with(inst, &annotations[&inst.id], strategy, vocab, options)).collect()
}

pub fn write_examples(path: &Path, examples: &[AugmentedExample]) -> Result<(), AugmentError> {
    let err = |e: std::io::Error| AugmentError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut out = BufWriter::new(fs::File::create(path).map_err(err)?);
    for ex in examples {
        writeln!(out, "{}", serde_json::to_string(ex).expect("example serializes")).map_err(err)?;
    }
    out.flush().map_err(err)
}

pub fn read_examples(path: &Path) -> Result<Vec<AugmentedExample>, AugmentError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AugmentError::Io { path: path.display().to_string(), message: e.to_string() })?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| AugmentError::Io {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, Split};

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn fitbit() -> (RelationInstance, TagAnnotation, LabelVocabulary) {
        let inst = RelationInstance {
            id: "fitbit".into(),
            tokens: strings(&["Google", "acquired", "Fitbit", "."]),
            e1: EntitySpan::new(2, 3, "ORG"),
            e2: EntitySpan::new(0, 1, "ORG"),
            relation: "org:org:acquired_by".into(),
            split: Split::Test,
        };
        let ann = TagAnnotation {
            instance_id: "fitbit".into(),
            ner_tags: strings(&["ORG", "O", "ORG", "O"]),
            pos_tags: strings(&["PROPN", "VERB", "PROPN", "PUNCT"]),
        };
        let vocab = LabelVocabulary::new(strings(&["no_relation", "org:org:acquired_by"]), "no_relation").unwrap();
        (inst, ann, vocab)
    }

    #[test]
    fn trn_replaces_entity_tokens() {
        let out = build_trn(&strings(&["Google", "acquired", "Fitbit", "."]), &strings(&["ORG", "O", "ORG", "O"]));
        assert_eq!(out.unwrap(), ["[ORG]", "acquired", "[ORG]", "."]);
    }

    #[test]
    fn trn_keeps_consecutive_tags() {
        let out = build_trn(&strings(&["Apple", "Inc", "rose"]), &strings(&["ORG", "ORG", "O"])).unwrap();
        assert_eq!(out, ["[ORG]", "[ORG]", "rose"]);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn trn_all_o_is_identity() {
        let tokens = strings(&["a", "b", "c"]);
        assert_eq!(build_trn(&tokens, &strings(&["O", "O", "O"])).unwrap(), tokens);
    }

    #[test]
    fn trn_length_mismatch_fails() {
        assert!(matches!(
            build_trn(&strings(&["a", "b"]), &strings(&["O"])),
            Err(AugmentError::LengthMismatch { tokens: 2, tags: 1 })
        ));
    }

    #[test]
    fn t_is_passthrough() {
        let (inst, ann, vocab) = fitbit();
        let ex = build_sequence(&inst, &ann, StrategyId::T, &vocab).unwrap();
        assert_eq!(ex.segments, vec![inst.tokens.clone()]);
        assert_eq!(ex.label_index, 1);
    }

    #[test]
    fn trnp_on_fitbit() {
        let (inst, ann, vocab) = fitbit();
        let ex = build_sequence(&inst, &ann, StrategyId::TrNP, &vocab).unwrap();
        assert_eq!(
            ex.segments,
            vec![strings(&["[ORG]", "acquired", "[ORG]", "."]), strings(&["[PROPN]", "[VERB]", "[PROPN]", "[PUNCT]"]),]
        );
        assert!(ex.segments.iter().all(|s| s.len() == 4));
    }

    #[test]
    fn tnp_has_three_segments_with_o_tags() {
        let (mut inst, mut ann, vocab) = fitbit();
        inst.tokens.truncate(3);
        ann.ner_tags.truncate(3);
        ann.pos_tags.truncate(3);
        let ex = build_sequence(&inst, &ann, StrategyId::TNP, &vocab).unwrap();
        assert_eq!(ex.segments.len(), 3);
        assert_eq!(ex.segments[0], inst.tokens);
        assert_eq!(ex.segments[1], ["[ORG]", "[O]", "[ORG]"]);
        assert_eq!(ex.segments[2], ["[PROPN]", "[VERB]", "[PROPN]"]);
    }

    #[test]
    fn unknown_relation_fails() {
        let (mut inst, ann, vocab) = fitbit();
        inst.relation = "bogus".into();
        assert!(matches!(
            build_sequence(&inst, &ann, StrategyId::T, &vocab),
            Err(AugmentError::UnknownRelation { .. })
        ));
    }

    #[test]
    fn entity_markers_keep_segments_aligned() {
        let (inst, ann, vocab) = fitbit();
        let opts = BuildOptions { mark_entities: true };
        let ex = build_sequence_with(&inst, &ann, StrategyId::TrNP, &vocab, opts).unwrap();
        assert_eq!(ex.segments[0], ["[E2]", "[ORG]", "[/E2]", "acquired", "[E1]", "[ORG]", "[/E1]", "."]);
        assert_eq!(ex.segments[1].len(), 8);
        assert_eq!(ex.segments[1][0], "[E2]");
    }

    #[test]
    fn strategy_names_parse_case_insensitively() {
        assert_eq!("trnp".parse::<StrategyId>().unwrap(), StrategyId::TrNP);
        assert_eq!("TN".parse::<StrategyId>().unwrap(), StrategyId::TN);
        assert!("trnpx".parse::<StrategyId>().is_err());
        let json = serde_json::to_string(&StrategyId::TrN).unwrap();
        assert_eq!(json, "\"TrN\"");
    }

    #[test]
    fn missing_annotation_lists_ids() {
        let (inst, ann, vocab) = fitbit();
        let mut other = inst.clone();
        other.id = "orphan-7".into();
        let corpus =
            Corpus { instances: vec![inst, other], vocabulary: vocab, entity_types: ["ORG".to_string()].into() };
        let anns = BTreeMap::from([(ann.instance_id.clone(), ann)]);
        let err = augment_corpus(&corpus, &anns, StrategyId::TrNP).unwrap_err();
        assert!(err.to_string().contains("orphan-7"), "{err}");
    }
}
