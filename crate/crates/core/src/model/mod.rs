//! Encoder backbones, input encoding, fine-tuning with early stopping and
//! dev-based model selection, checkpoints and inference.

pub mod checkpoint;
pub mod external;
pub mod optim;
pub mod tiny;
pub mod tokenizer;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::StrategyId;
use crate::eval::{EvalError, LabelFilter};

pub use checkpoint::{predict, Checkpoint, Prediction};
pub use tiny::{TinyConfig, TinyEncoder};
pub use tokenizer::{encode_example, EncodedInput, TinyTokenizer};
pub use train::{fit, train, EarlyStopping, EpochRecord, EpochTrainer, FitOutcome, Observation};

/// Backbone the method is built on; the "proposed model" rows use it with `TrNP`.
pub const PRIMARY_BACKBONE: &str = "roberta-base";
/// Small from-scratch encoder trainable in-process on CPU.
pub const TINY_SCRATCH: &str = "tiny_scratch";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown backbone \"{0}\"")]
    UnknownBackbone(String),
    #[error("backbone \"{0}\" cannot be trained in-process; configure an external trainer")]
    BackboneNotTrainable(String),
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("example {instance_id}: segment {segment} is empty")]
    EmptySegment { instance_id: String, segment: usize },
    #[error("example {0} has no segments")]
    NoSegments(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("label index {index} is outside the {num_labels}-label space (example {instance_id})")]
    LabelOutOfRange { instance_id: String, index: usize, num_labels: usize },
    #[error("examples mix strategies {first} and {second}")]
    MixedStrategies { first: StrategyId, second: StrategyId },
    #[error("checkpoint was trained on strategy {checkpoint} but examples use {examples}")]
    StrategyMismatch { checkpoint: StrategyId, examples: StrategyId },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("external trainer: {0}")]
    External(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorStyle {
    /// `[CLS] a [SEP] b [SEP]`
    Bert,
    /// `<s> a </s></s> b </s>`
    Roberta,
}

impl SeparatorStyle {
    pub fn special_token_count(self, segments: usize) -> usize {
        match self {
            SeparatorStyle::Bert => 1 + segments,
            SeparatorStyle::Roberta => 2 * segments,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub separators: SeparatorStyle,
    pub in_process: bool,
}

pub const BACKBONES: &[BackboneInfo] = &[
    BackboneInfo {
        id: PRIMARY_BACKBONE,
        description: "RoBERTa base (primary backbone)",
        separators: SeparatorStyle::Roberta,
        in_process: false,
    },
    BackboneInfo {
        id: "spanbert-base-cased",
        description: "span-oriented BERT",
        separators: SeparatorStyle::Bert,
        in_process: false,
    },
    BackboneInfo {
        id: "finbert",
        description: "finance-domain BERT",
        separators: SeparatorStyle::Bert,
        in_process: false,
    },
    BackboneInfo {
        id: "bert-base-uncased",
        description: "base bidirectional encoder",
        separators: SeparatorStyle::Bert,
        in_process: false,
    },
    BackboneInfo {
        id: "xlm-roberta-base",
        description: "multilingual RoBERTa",
        separators: SeparatorStyle::Roberta,
        in_process: false,
    },
    BackboneInfo {
        id: "distilbert-base-uncased",
        description: "distilled BERT",
        separators: SeparatorStyle::Bert,
        in_process: false,
    },
    BackboneInfo {
        id: "albert-base-v2",
        description: "parameter-shared BERT",
        separators: SeparatorStyle::Bert,
        in_process: false,
    },
    BackboneInfo {
        id: TINY_SCRATCH,
        description: "2-layer 4-head 64-dim encoder trained from scratch",
        separators: SeparatorStyle::Bert,
        in_process: true,
    },
];

pub fn backbone(id: &str) -> Result<&'static BackboneInfo, ModelError> {
    BACKBONES.iter().find(|b| b.id == id).ok_or_else(|| ModelError::UnknownBackbone(id.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backbone_id: String,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    /// Register bracketed tags as atomic tokens with fresh embeddings.
    #[serde(default = "default_true")]
    pub add_tag_tokens: bool,
    /// Wrap the two entity spans in marker tokens before building segments.
    #[serde(default)]
    pub mark_entities: bool,
    /// Display name used in run ids and tables; defaults to the backbone id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn default_max_length() -> usize {
    128
}

fn default_true() -> bool {
    true
}

impl EncoderSpec {
    pub fn new(backbone_id: impl Into<String>) -> Self {
        Self {
            backbone_id: backbone_id.into(),
            max_length: default_max_length(),
            add_tag_tokens: true,
            mark_entities: false,
            name: None,
        }
    }

    pub fn tiny_scratch() -> Self {
        Self::new(TINY_SCRATCH)
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.backbone_id)
    }

    pub fn validate(&self) -> Result<&'static BackboneInfo, ModelError> {
        let info = backbone(&self.backbone_id)?;
        if self.max_length < 16 {
            return Err(ModelError::InvalidSpec(format!("max_length must be at least 16, got {}", self.max_length)));
        }
        Ok(info)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    MicroF1,
    MacroF1,
}

impl SelectionMetric {
    pub fn value(self, report: &crate::eval::MetricsReport) -> f64 {
        match self {
            SelectionMetric::MicroF1 => report.micro_f1,
            SelectionMetric::MacroF1 => report.macro_f1,
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::MicroF1 => "micro_f1",
            SelectionMetric::MacroF1 => "macro_f1",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "micro_f1" | "micro" => Ok(SelectionMetric::MicroF1),
            "macro_f1" | "macro" => Ok(SelectionMetric::MacroF1),
            other => Err(format!("unknown selection metric \"{other}\"")),
        }
    }
}

/// Fine-tuning hyperparameters. `Default` is the published recipe:
/// AdamW at 2e-5, weight decay 0.1, dropout 0.1, batch 32, 5 epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving dev evaluations tolerated before stopping.
    pub early_stop_patience: usize,
    pub selection_metric: SelectionMetric,
    pub seed: u64,
    /// Labels averaged over when scoring dev and test.
    pub label_filter: LabelFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.1,
            dropout: 0.1,
            batch_size: 32,
            max_epochs: 5,
            early_stop_patience: 2,
            selection_metric: SelectionMetric::MicroF1,
            seed: 42,
            label_filter: LabelFilter::All,
        }
    }
}

impl TrainConfig {
    /// The recipe rescaled for the from-scratch tiny encoder on a few hundred
    /// examples: a larger step size, smaller batches and a longer epoch budget.
    /// Decay, dropout and the selection rule are unchanged.
    pub fn desk_scale() -> Self {
        Self { learning_rate: 2e-3, batch_size: 8, max_epochs: 20, early_stop_patience: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, max_epochs and early_stop_patience must be positive".into());
        }
        Ok(())
    }
}
