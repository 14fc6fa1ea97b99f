//! Gazetteer and closed-class word lists backing the rule tagger.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TagError;

const BUILTIN_GAZETTEER: &str = include_str!("../../data/gazetteer.tsv");
const BUILTIN_POS_LEXICON: &str = include_str!("../../data/pos_lexicon.tsv");

/// Multi-token entity names keyed by entity type.
#[derive(Clone, Debug)]
pub struct Gazetteer {
    by_surface: HashMap<String, String>,
    by_type: BTreeMap<String, Vec<Vec<String>>>,
    max_tokens: usize,
    digest: String,
}

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GAZETTEER).expect("builtin gazetteer parses")
    }

    pub fn load(path: &Path) -> Result<Self, TagError> {
        let text = fs::read_to_string(path).map_err(|e| TagError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Tab-separated `TYPE<TAB>surface tokens`; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, TagError> {
        let mut by_surface = HashMap::new();
        let mut by_type: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
        let mut max_tokens = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((entity_type, surface)) = line.split_once('\t') else {
                return Err(TagError::Lexicon(format!("gazetteer line {}: expected TYPE<TAB>name", lineno + 1)));
            };
            let tokens: Vec<String> = surface.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(TagError::Lexicon(format!("gazetteer line {}: empty name", lineno + 1)));
            }
            max_tokens = max_tokens.max(tokens.len());
            by_surface.insert(tokens.join(" "), entity_type.to_string());
            by_type.entry(entity_type.to_string()).or_default().push(tokens);
        }
        Ok(Self { by_surface, by_type, max_tokens, digest: hex::encode(Sha256::digest(text.as_bytes())) })
    }

    pub fn entries_of(&self, entity_type: &str) -> &[Vec<String>] {
        self.by_type.get(entity_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.by_type.keys().map(String::as_str)
    }

    /// Longest entry starting at `start`, as (token count, entity type).
    pub fn longest_match(&self, tokens: &[String], start: usize) -> Option<(usize, &str)> {
        let available = tokens.len().saturating_sub(start).min(self.max_tokens);
        (1..=available).rev().find_map(|len| {
            let key = tokens[start..start + len].join(" ");
            self.by_surface.get(&key).map(|ty| (len, ty.as_str()))
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

/// Lowercased closed-class words mapped to universal POS tags.
#[derive(Clone, Debug)]
pub struct PosLexicon {
    words: HashMap<String, String>,
    digest: String,
}

impl PosLexicon {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_POS_LEXICON).expect("builtin POS lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self, TagError> {
        let text = fs::read_to_string(path).map_err(|e| TagError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TagError> {
        let mut words = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((word, tag)) = line.split_once('\t') else {
                return Err(TagError::Lexicon(format!("POS lexicon line {}: expected word<TAB>TAG", lineno + 1)));
            };
            words.insert(word.to_lowercase(), tag.to_string());
        }
        Ok(Self { words, digest: hex::encode(Sha256::digest(text.as_bytes())) })
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.words.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}
