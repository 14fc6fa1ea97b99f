//! Projects tags from a foreign tokenization back onto corpus tokens.

use serde::{Deserialize, Serialize};

use super::TagError;

/// Character range `[start, end)`, counted in Unicode scalar values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

/// Joins tokens with single spaces and records each token's character span.
pub fn layout_tokens(tokens: &[String]) -> (String, Vec<CharSpan>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(tokens.len());
    let mut offset = 0;
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            offset += 1;
        }
        let len = token.chars().count();
        spans.push(CharSpan { start: offset, end: offset + len });
        text.push_str(token);
        offset += len;
    }
    (text, spans)
}

/// Assigns one tag per source token.
///
/// A source token takes the tag of the tagger span covering its first character;
/// when several spans cover it the longest wins (earliest start on ties). Tokens
/// whose first character no span covers get `null_tag`, and spans carrying
/// `null_tag` are ignored.
pub fn align_tags(
    source_text: &str,
    source_tokens: &[CharSpan],
    tagger_text: &str,
    tagger_spans: &[TaggedSpan],
    null_tag: &str,
) -> Result<Vec<String>, TagError> {
    if source_text != tagger_text {
        return Err(TagError::TextMismatch {
            source_text: source_text.to_string(),
            tagger_text: tagger_text.to_string(),
        });
    }
    let text_len = source_text.chars().count();
    if let Some(bad) = tagger_spans.iter().find(|s| s.start >= s.end || s.end > text_len) {
        return Err(TagError::Adapter(format!(
            "tagger span [{}, {}) is outside the {text_len}-character text",
            bad.start, bad.end
        )));
    }

    let tags = source_tokens
        .iter()
        .map(|token| {
            tagger_spans
                .iter()
                .filter(|span| span.tag != null_tag && span.start <= token.start && token.start < span.end)
                .min_by_key(|span| (std::cmp::Reverse(span.end - span.start), span.start))
                .map_or_else(|| null_tag.to_string(), |span| span.tag.clone())
        })
        .collect();
    Ok(tags)
}
