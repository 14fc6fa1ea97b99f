//! Line-delimited JSON bridge to an out-of-process tagger.
//!
//! For each sentence the adapter writes one request line to the child's stdin:
//!
//! ```json
//! {"text": "Google acquired Fitbit ."}
//! ```
//!
//! and reads one response line from its stdout:
//!
//! ```json
//! {"text": "Google acquired Fitbit .",
//!  "tokens": [{"start": 0, "end": 6, "tag": "PROPN"}, ...],
//!  "entities": [{"start": 0, "end": 6, "tag": "ORG"}, ...]}
//! ```
//!
//! Offsets count characters. `text` may be omitted, in which case the request
//! text is assumed. Tags are projected onto corpus tokens with [`align_tags`].

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::align::{align_tags, layout_tokens, TaggedSpan};
use super::{RawTags, TagError, Tagger, NULL_NER_TAG, UNCOVERED_POS_TAG};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Adapter name used in diagnostics and the cache header.
    #[serde(default = "default_adapter_name")]
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

fn default_adapter_name() -> String {
    "external".to_string()
}

#[derive(Serialize)]
struct Request<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct Response {
    text: Option<String>,
    #[serde(default)]
    tokens: Vec<TaggedSpan>,
    #[serde(default)]
    entities: Vec<TaggedSpan>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalTagger {
    config: ExternalConfig,
    session: Option<Session>,
}

impl ExternalTagger {
    pub fn new(config: ExternalConfig) -> Self {
        Self { config, session: None }
    }

    fn unavailable(&self, reason: impl Into<String>) -> TagError {
        TagError::AdapterUnavailable { adapter: self.config.name.clone(), reason: reason.into() }
    }

    fn session(&mut self) -> Result<&mut Session, TagError> {
        if self.session.is_none() {
            let mut child = Command::new(&self.config.command)
                .args(&self.config.args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| self.unavailable(format!("cannot start `{}`: {e}", self.config.command)))?;
            let stdin = child.stdin.take().expect("stdin is piped");
            let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
            self.session = Some(Session { child, stdin, stdout });
        }
        Ok(self.session.as_mut().expect("session was just created"))
    }

    fn roundtrip(&mut self, text: &str) -> Result<Response, TagError> {
        let request = serde_json::to_string(&Request { text }).expect("request serializes");
        let name = self.config.name.clone();
        let session = self.session()?;
        let io = |e: std::io::Error| TagError::AdapterUnavailable { adapter: name.clone(), reason: e.to_string() };
        writeln!(session.stdin, "{request}").map_err(io)?;
        session.stdin.flush().map_err(io)?;
        let mut line = String::new();
        if session.stdout.read_line(&mut line).map_err(io)? == 0 {
            self.session = None;
            return Err(self.unavailable("tagger process closed its output"));
        }
        serde_json::from_str(&line).map_err(|e| TagError::Adapter(format!("{name}: bad response: {e}")))
    }
}

impl Tagger for ExternalTagger {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config.command.as_bytes());
        for arg in &self.config.args {
            hasher.update([0]);
            hasher.update(arg.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn tag_tokens(&mut self, tokens: &[String]) -> Result<RawTags, TagError> {
        let (text, spans) = layout_tokens(tokens);
        let response = self.roundtrip(&text)?;
        let tagger_text = response.text.as_deref().unwrap_or(&text);
        let ner = align_tags(&text, &spans, tagger_text, &response.entities, NULL_NER_TAG)?;
        let pos = align_tags(&text, &spans, tagger_text, &response.tokens, UNCOVERED_POS_TAG)?;
        Ok(RawTags { ner, pos })
    }
}

impl Drop for ExternalTagger {
    fn drop(&mut self) {
        if let Some(Session { mut child, stdin, .. }) = self.session.take() {
            drop(stdin);
            let _ = child.wait();
        }
    }
}
