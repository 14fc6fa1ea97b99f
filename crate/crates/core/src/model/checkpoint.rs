//! Trained-model checkpoints on disk and inference.
//!
//! Directory layout: `config.json` (encoder spec, training config, strategy,
//! labels, encoder shape), `metrics.json` (best and per-epoch dev reports),
//! `weights.bin` (little-endian f64 parameters), `tag_tokens.json` (atomic
//! tag tokens) and `vocab.json` (tokenizer).

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tiny::{softmax, TinyConfig, TinyEncoder};
use super::tokenizer::{encode_example, TinyTokenizer};
use super::train::EpochRecord;
use super::{EncoderSpec, ModelError, TrainConfig};
use crate::augment::{AugmentedExample, StrategyId};
use crate::corpus::LabelVocabulary;
use crate::eval::MetricsReport;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: EncoderSpec,
    pub config: TrainConfig,
    pub strategy: StrategyId,
    pub labels: LabelVocabulary,
    pub tokenizer: TinyTokenizer,
    pub encoder: TinyEncoder,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Dev report of the selected epoch.
    pub dev_metrics: MetricsReport,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    backbone_id: String,
    strategy: StrategyId,
    seed: u64,
    encoder_spec: EncoderSpec,
    train_config: TrainConfig,
    encoder: TinyConfig,
    labels: LabelVocabulary,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    best_epoch: usize,
    stopped_early: bool,
    dev_metrics: MetricsReport,
    history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub label_index: usize,
    /// Class probabilities, summing to 1.
    pub scores: Vec<f64>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let err = |e: &dyn std::fmt::Display| ModelError::Checkpoint {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| err(&e))?;
        let write_json = |name: &str, json: String| fs::write(dir.join(name), json).map_err(|e| err(&e));
        write_json(
            "config.json",
            pretty(&ConfigFile {
                backbone_id: self.spec.backbone_id.clone(),
                strategy: self.strategy,
                seed: self.config.seed,
                encoder_spec: self.spec.clone(),
                train_config: self.config.clone(),
                encoder: self.encoder.config().clone(),
                labels: self.labels.clone(),
            }),
        )?;
        write_json(
            "metrics.json",
            pretty(&MetricsFile {
                best_epoch: self.best_epoch,
                stopped_early: self.stopped_early,
                dev_metrics: self.dev_metrics.clone(),
                history: self.history.clone(),
            }),
        )?;
        write_json("tag_tokens.json", pretty(self.tokenizer.atomic_tokens()))?;
        write_json("vocab.json", pretty(&self.tokenizer))?;
        let file = fs::File::create(dir.join("weights.bin")).map_err(|e| err(&e))?;
        self.encoder.write_weights(BufWriter::new(file)).map_err(|e| err(&e))
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let err = |what: &str, e: &dyn std::fmt::Display| ModelError::Checkpoint {
            path: dir.display().to_string(),
            message: format!("{what}: {e}"),
        };
        let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| err(name, &e));
        let config: ConfigFile = serde_json::from_str(&read("config.json")?).map_err(|e| err("config.json", &e))?;
        let metrics: MetricsFile = serde_json::from_str(&read("metrics.json")?).map_err(|e| err("metrics.json", &e))?;
        let mut tokenizer: TinyTokenizer =
            serde_json::from_str(&read("vocab.json")?).map_err(|e| err("vocab.json", &e))?;
        tokenizer.reindex();
        let tag_tokens: Vec<String> =
            serde_json::from_str(&read("tag_tokens.json")?).map_err(|e| err("tag_tokens.json", &e))?;
        if !tag_tokens.iter().eq(tokenizer.atomic_tokens()) {
            return Err(err("tag_tokens.json", &"does not match the tokenizer's atomic tokens"));
        }
        if config.encoder.vocab_size != tokenizer.vocab_size() {
            return Err(err("vocab.json", &"vocabulary size does not match the encoder"));
        }
        let mut encoder = TinyEncoder::new(config.encoder, &mut ChaCha8Rng::seed_from_u64(0));
        let file = fs::File::open(dir.join("weights.bin")).map_err(|e| err("weights.bin", &e))?;
        encoder.read_weights(BufReader::new(file)).map_err(|e| err("weights.bin", &e))?;
        Ok(Self {
            spec: config.encoder_spec,
            config: config.train_config,
            strategy: config.strategy,
            labels: config.labels,
            tokenizer,
            encoder,
            best_epoch: metrics.best_epoch,
            stopped_early: metrics.stopped_early,
            dev_metrics: metrics.dev_metrics,
            history: metrics.history,
        })
    }
}

/// One prediction per example, in order.
pub fn predict(checkpoint: &Checkpoint, examples: &[AugmentedExample]) -> Result<Vec<Prediction>, ModelError> {
    if let Some(ex) = examples.iter().find(|ex| ex.strategy != checkpoint.strategy) {
        return Err(ModelError::StrategyMismatch { checkpoint: checkpoint.strategy, examples: ex.strategy });
    }
    examples
        .iter()
        .map(|ex| {
            let input = encode_example(ex, &checkpoint.tokenizer, &checkpoint.spec)?;
            let scores = softmax(&checkpoint.encoder.logits(&input));
            Ok(Prediction { instance_id: ex.instance_id.clone(), label_index: argmax(&scores), scores })
        })
        .collect()
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("checkpoint metadata serializes")
}
