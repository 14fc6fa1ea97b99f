//! Word-level tokenizer for the tiny encoder, special-token registration and
//! multi-segment encoding with longest-first truncation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::{EncoderSpec, ModelError, SeparatorStyle};
use crate::augment::{bracketed, AugmentedExample, E1_CLOSE, E1_OPEN, E2_CLOSE, E2_OPEN};
use crate::tagging::{TagInventory, NULL_NER_TAG};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Encoder-ready input for one example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Every bracketed tag the augmenter can emit: NER types, `[O]`, POS tags and
/// entity markers.
pub fn tag_token_registry(inventory: &TagInventory) -> BTreeSet<String> {
    inventory
        .ner_tags
        .iter()
        .chain(&inventory.pos_tags)
        .map(|t| bracketed(t))
        .chain([bracketed(NULL_NER_TAG)])
        .chain([E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE].map(str::to_string))
        .collect()
}

/// Case-sensitive word vocabulary. Words are split into alphanumeric runs and
/// single punctuation characters unless registered as atomic tokens.
#[derive(Debug, Serialize, Deserialize)]
pub struct TinyTokenizer {
    vocab: Vec<String>,
    atomic: BTreeSet<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    warned_split_tag: AtomicBool,
}

impl Clone for TinyTokenizer {
    fn clone(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            atomic: self.atomic.clone(),
            index: self.index.clone(),
            warned_split_tag: AtomicBool::new(self.warned_split_tag.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TinyTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.atomic == other.atomic
    }
}

impl TinyTokenizer {
    /// Special tokens followed by every word piece seen in `examples`, most
    /// frequent first (ties by string), capped at `max_size` entries overall.
    /// Words in `reserved` are left out; they are registered separately.
    pub fn build(examples: &[AugmentedExample], reserved: &BTreeSet<String>, max_size: usize) -> Self {
        let mut tok = Self::from_vocab(vec![PAD.into(), UNK.into(), CLS.into(), SEP.into()], BTreeSet::new());
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for ex in examples {
            for word in ex.segments.iter().flatten().filter(|w| !reserved.contains(*w)) {
                for piece in tok.pieces(word) {
                    *counts.entry(piece).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (piece, _) in ranked.into_iter().take(max_size.saturating_sub(tok.vocab.len())) {
            tok.push(piece);
        }
        tok
    }

    fn from_vocab(vocab: Vec<String>, atomic: BTreeSet<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { vocab, atomic, index, warned_split_tag: AtomicBool::new(false) }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    fn push(&mut self, word: String) -> u32 {
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.index.insert(word.clone(), id);
        self.vocab.push(word);
        id
    }

    /// Registers atomic tokens, returning how many new ids were appended.
    pub fn register_atomic(&mut self, tokens: impl IntoIterator<Item = String>) -> usize {
        let before = self.vocab.len();
        for token in tokens {
            self.atomic.insert(token.clone());
            self.push(token);
        }
        self.vocab.len() - before
    }

    pub fn atomic_tokens(&self) -> &BTreeSet<String> {
        &self.atomic
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self, word: &str) -> Vec<String> {
        if self.atomic.contains(word) {
            return vec![word.to_string()];
        }
        let mut pieces = Vec::new();
        let mut run = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                run.push(c);
            } else {
                if !run.is_empty() {
                    pieces.push(std::mem::take(&mut run));
                }
                pieces.push(c.to_string());
            }
        }
        if !run.is_empty() {
            pieces.push(run);
        }
        pieces
    }

    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let pieces = self.pieces(word);
        if pieces.len() > 1
            && word.starts_with('[')
            && word.ends_with(']')
            && !self.warned_split_tag.swap(true, Ordering::Relaxed)
        {
            log::warn!("tag token {word} is not registered and was split into {} pieces", pieces.len());
        }
        let unk = self.index[UNK];
        pieces.iter().map(|p| self.index.get(p).copied().unwrap_or(unk)).collect()
    }

    pub fn special_id(&self, token: &str) -> u32 {
        self.index[token]
    }
}

/// Trims the currently longest segment from its tail until the total fits
/// `budget`. Ties trim the earliest of the longest segments.
pub fn truncate_longest_first(segments: &mut [Vec<u32>], budget: usize) {
    let mut total: usize = segments.iter().map(Vec::len).sum();
    while total > budget {
        let longest = segments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("at least one segment");
        segments[longest].pop();
        total -= 1;
    }
}

/// Encodes `ex` as `[CLS] s1 [SEP] s2 [SEP] ...`, truncating to `spec.max_length`.
pub fn encode_example(
    ex: &AugmentedExample,
    tokenizer: &TinyTokenizer,
    spec: &EncoderSpec,
) -> Result<EncodedInput, ModelError> {
    if ex.segments.is_empty() {
        return Err(ModelError::NoSegments(ex.instance_id.clone()));
    }
    if let Some(segment) = ex.segments.iter().position(Vec::is_empty) {
        return Err(ModelError::EmptySegment { instance_id: ex.instance_id.clone(), segment });
    }
    let mut segments: Vec<Vec<u32>> =
        ex.segments.iter().map(|seg| seg.iter().flat_map(|w| tokenizer.encode_word(w)).collect()).collect();
    let specials = SeparatorStyle::Bert.special_token_count(segments.len());
    if spec.max_length < specials + segments.len() {
        return Err(ModelError::InvalidSpec(format!(
            "max_length {} cannot hold {} segments",
            spec.max_length,
            segments.len()
        )));
    }
    truncate_longest_first(&mut segments, spec.max_length - specials);

    let cls = tokenizer.special_id(CLS);
    let sep = tokenizer.special_id(SEP);
    let mut ids = vec![cls];
    let mut segment_ids = vec![0u8];
    for (s, seg) in segments.iter().enumerate() {
        ids.extend(seg);
        ids.push(sep);
        segment_ids.extend(std::iter::repeat_n(s as u8, seg.len() + 1));
    }
    let attention_mask = vec![1; ids.len()];
    Ok(EncodedInput { ids, segment_ids, attention_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::StrategyId;

    fn example(segments: Vec<Vec<&str>>, strategy: StrategyId) -> AugmentedExample {
        AugmentedExample {
            instance_id: "e".into(),
            strategy,
            segments: segments.into_iter().map(|s| s.into_iter().map(str::to_string).collect()).collect(),
            label_index: 0,
        }
    }

    fn tokenizer_for(exs: &[AugmentedExample], tags: bool) -> TinyTokenizer {
        let registry = tag_token_registry(&TagInventory::default());
        let reserved = if tags { registry.clone() } else { BTreeSet::new() };
        let mut tok = TinyTokenizer::build(exs, &reserved, 10_000);
        if tags {
            tok.register_atomic(registry);
        }
        tok
    }

    #[test]
    fn single_segment_has_no_pair_structure() {
        let ex = example(vec![vec!["Google", "acquired", "Fitbit"]], StrategyId::T);
        let tok = tokenizer_for(std::slice::from_ref(&ex), false);
        let enc = encode_example(&ex, &tok, &EncoderSpec::tiny_scratch()).unwrap();
        assert_eq!(enc.ids.len(), 5);
        assert_eq!(enc.ids[0], tok.special_id(CLS));
        assert_eq!(*enc.ids.last().unwrap(), tok.special_id(SEP));
        assert!(enc.segment_ids.iter().all(|&s| s == 0));
        assert_eq!(enc.attention_mask, vec![1; 5]);
    }

    #[test]
    fn registered_tag_is_one_id() {
        let ex = example(vec![vec!["[ORG]", "acquired"]], StrategyId::TrN);
        let tok = tokenizer_for(std::slice::from_ref(&ex), true);
        assert_eq!(tok.encode_word("[ORG]").len(), 1);
        let plain = tokenizer_for(std::slice::from_ref(&ex), false);
        assert_eq!(plain.encode_word("[ORG]").len(), 3);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let ex = example(vec![vec!["alpha"]], StrategyId::T);
        let tok = tokenizer_for(std::slice::from_ref(&ex), false);
        assert_eq!(tok.encode_word("omega"), vec![tok.special_id(UNK)]);
    }

    #[test]
    fn longest_first_truncation() {
        let text: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        let pos: Vec<String> = (0..200).map(|_| "[NOUN]".to_string()).collect();
        let ex = AugmentedExample {
            instance_id: "long".into(),
            strategy: StrategyId::TrNP,
            segments: vec![text, pos],
            label_index: 0,
        };
        let tok = tokenizer_for(std::slice::from_ref(&ex), true);
        let spec = EncoderSpec { max_length: 256, ..EncoderSpec::tiny_scratch() };
        let enc = encode_example(&ex, &tok, &spec).unwrap();
        assert_eq!(enc.len(), 256);
        let second = enc.segment_ids.iter().filter(|&&s| s == 1).count() - 1;
        let first = enc.segment_ids.iter().filter(|&&s| s == 0).count() - 2;
        // 253 content slots split as evenly as longest-first allows
        assert_eq!(first + second, 253);
        assert_eq!((first, second), (126, 127));
    }

    #[test]
    fn truncation_tie_trims_earliest() {
        let mut segs = vec![vec![1, 2, 3], vec![4, 5, 6]];
        truncate_longest_first(&mut segs, 5);
        assert_eq!(segs, vec![vec![1, 2], vec![4, 5, 6]]);
    }

    #[test]
    fn empty_segment_fails() {
        let ex = example(vec![vec!["a"], vec![]], StrategyId::TP);
        let tok = tokenizer_for(std::slice::from_ref(&ex), false);
        assert!(matches!(
            encode_example(&ex, &tok, &EncoderSpec::tiny_scratch()),
            Err(ModelError::EmptySegment { segment: 1, .. })
        ));
    }

    #[test]
    fn segment_ids_follow_segments() {
        let ex = example(vec![vec!["a"], vec!["[O]"], vec!["[NOUN]"]], StrategyId::TNP);
        let tok = tokenizer_for(std::slice::from_ref(&ex), true);
        let enc = encode_example(&ex, &tok, &EncoderSpec::tiny_scratch()).unwrap();
        assert_eq!(enc.segment_ids, vec![0, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn build_is_deterministic_and_serializable() {
        let ex = example(vec![vec!["b", "a", "b", "U.S."]], StrategyId::T);
        let tok = tokenizer_for(std::slice::from_ref(&ex), false);
        assert_eq!(tok.token(4), Some("."));
        let json = serde_json::to_string(&tok).unwrap();
        let mut back: TinyTokenizer = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, tok);
        assert_eq!(back.encode_word("U.S."), tok.encode_word("U.S."));
    }
}
