//! Deterministic reference tagger: gazetteer and pattern rules for NER,
//! closed-class lookups and suffix rules for POS.

use super::lexicon::{Gazetteer, PosLexicon};
use super::{RawTags, TagError, Tagger, NULL_NER_TAG};

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];
const SCALE_WORDS: [&str; 3] = ["thousand", "million", "billion"];

pub struct RuleTagger {
    gazetteer: Gazetteer,
    pos_lexicon: PosLexicon,
}

impl RuleTagger {
    pub fn new(gazetteer: Gazetteer, pos_lexicon: PosLexicon) -> Self {
        Self { gazetteer, pos_lexicon }
    }

    pub fn builtin() -> Self {
        Self::new(Gazetteer::builtin(), PosLexicon::builtin())
    }

    pub fn ner_tags(&self, tokens: &[String]) -> Vec<String> {
        let mut tags = vec![NULL_NER_TAG.to_string(); tokens.len()];
        let mut i = 0;
        while i < tokens.len() {
            if let Some((len, entity_type)) = self.gazetteer.longest_match(tokens, i) {
                tags[i..i + len].iter_mut().for_each(|t| *t = entity_type.to_string());
                i += len;
                continue;
            }
            let token = tokens[i].as_str();
            let (tag, len) = if is_money(token) {
                (Some("MONEY"), 1 + usize::from(tokens.get(i + 1).is_some_and(|t| is_scale(t))))
            } else if is_percent(token) {
                (Some("PERCENT"), 1)
            } else if MONTHS.contains(&token.to_lowercase().as_str()) {
                let mut len = 1;
                while tokens.get(i + len).is_some_and(|t| is_number(t) || t == ",") {
                    len += 1;
                }
                // a trailing comma is punctuation, not part of the date
                while len > 1 && tokens[i + len - 1] == "," {
                    len -= 1;
                }
                (Some("DATE"), len)
            } else if is_year(token) {
                (Some("DATE"), 1)
            } else if is_number(token) {
                (Some("CARDINAL"), 1)
            } else {
                (None, 1)
            };
            if let Some(tag) = tag {
                tags[i..i + len].iter_mut().for_each(|t| *t = tag.to_string());
            }
            i += len;
        }
        tags
    }

    pub fn pos_tag(&self, token: &str, ner_tag: &str) -> String {
        let tag = if token.chars().all(|c| !c.is_alphanumeric()) {
            if token == "$" || token == "%" {
                "SYM"
            } else {
                "PUNCT"
            }
        } else if token.starts_with('$') || token.chars().any(|c| c.is_ascii_digit()) {
            "NUM"
        } else if ner_tag != NULL_NER_TAG && starts_uppercase(token) {
            "PROPN"
        } else if let Some(tag) = self.pos_lexicon.get(token) {
            tag
        } else if starts_uppercase(token) {
            "PROPN"
        } else {
            suffix_pos(&token.to_lowercase())
        };
        tag.to_string()
    }
}

impl Tagger for RuleTagger {
    fn name(&self) -> &str {
        "rule_reference"
    }

    fn fingerprint(&self) -> String {
        format!("gazetteer:{};pos:{}", self.gazetteer.digest(), self.pos_lexicon.digest())
    }

    fn tag_tokens(&mut self, tokens: &[String]) -> Result<RawTags, TagError> {
        let ner = self.ner_tags(tokens);
        let pos = tokens.iter().zip(&ner).map(|(tok, tag)| self.pos_tag(tok, tag)).collect();
        Ok(RawTags { ner, pos })
    }
}

fn suffix_pos(lower: &str) -> &'static str {
    const RULES: &[(&str, &str)] = &[
        ("ing", "VERB"),
        ("ed", "VERB"),
        ("ize", "VERB"),
        ("ly", "ADV"),
        ("ous", "ADJ"),
        ("ful", "ADJ"),
        ("ive", "ADJ"),
        ("able", "ADJ"),
        ("ible", "ADJ"),
        ("ical", "ADJ"),
    ];
    RULES
        .iter()
        .find(|(suffix, _)| lower.len() > suffix.len() + 1 && lower.ends_with(suffix))
        .map(|(_, tag)| *tag)
        .unwrap_or("NOUN")
}

fn starts_uppercase(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

fn is_number(token: &str) -> bool {
    let digits = token.replace([',', '.'], "");
    !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && token.chars().next().unwrap().is_ascii_digit()
}

fn is_money(token: &str) -> bool {
    token.strip_prefix('$').is_some_and(is_number)
}

fn is_percent(token: &str) -> bool {
    token.strip_suffix('%').is_some_and(is_number)
}

fn is_year(token: &str) -> bool {
    token.len() == 4 && token.parse::<u32>().is_ok_and(|y| (1900..=2099).contains(&y))
}

fn is_scale(token: &str) -> bool {
    SCALE_WORDS.contains(&token.to_lowercase().as_str())
}
