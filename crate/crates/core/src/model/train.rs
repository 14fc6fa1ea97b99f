//! Epoch loop with per-epoch dev evaluation, patience-based early stopping and
//! best-on-dev selection, plus the in-process trainer for `tiny_scratch`.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{argmax, Checkpoint};
use super::optim::AdamW;
use super::tiny::{DropoutState, TinyConfig, TinyEncoder};
use super::tokenizer::{encode_example, tag_token_registry, EncodedInput, TinyTokenizer};
use super::{EncoderSpec, ModelError, TrainConfig};
use crate::augment::{AugmentedExample, StrategyId};
use crate::corpus::LabelVocabulary;
use crate::eval::{evaluate, MetricsReport};
use crate::tagging::TagInventory;

/// Upper bound on the word vocabulary built from the training split.
pub const MAX_VOCAB: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub should_stop: bool,
}

/// Stops after `patience` consecutive evaluations that fail to strictly
/// improve on the best value so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    bad_evals: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, bad_evals: 0 }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> Observation {
        let improved = self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
        }
        Observation { improved, should_stop: self.bad_evals >= self.patience }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub selection_value: f64,
    pub dev_metrics: MetricsReport,
}

/// The pieces of a training procedure that [`fit`] drives.
pub trait EpochTrainer {
    type Snapshot;

    /// Runs one pass over the training data and returns its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ModelError>;
    fn evaluate_dev(&mut self) -> Result<MetricsReport, ModelError>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Clone, Debug)]
pub struct FitOutcome<S> {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was kept.
    pub best_epoch: usize,
    pub best: S,
    pub best_dev_metrics: MetricsReport,
    pub stopped_early: bool,
}

pub fn fit<T: EpochTrainer>(trainer: &mut T, cfg: &TrainConfig) -> Result<FitOutcome<T::Snapshot>, ModelError> {
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut history = Vec::new();
    let mut best: Option<(usize, T::Snapshot, MetricsReport)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.train_epoch(epoch)?;
        let report = trainer.evaluate_dev()?;
        let value = cfg.selection_metric.value(&report);
        let obs = stopper.observe(value);
        debug!("epoch {epoch}: loss {train_loss:.4}, dev {} {value:.4}", cfg.selection_metric);
        if obs.improved {
            best = Some((epoch, trainer.snapshot(), report.clone()));
        }
        history.push(EpochRecord { epoch, train_loss, selection_value: value, dev_metrics: report });
        if obs.should_stop && epoch < cfg.max_epochs {
            stopped_early = true;
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best, best_dev_metrics) = best.expect("max_epochs is positive");
    Ok(FitOutcome { history, best_epoch, best, best_dev_metrics, stopped_early })
}

fn common_strategy(examples: &[&AugmentedExample]) -> Result<StrategyId, ModelError> {
    let first = examples[0].strategy;
    match examples.iter().find(|ex| ex.strategy != first) {
        Some(other) => Err(ModelError::MixedStrategies { first, second: other.strategy }),
        None => Ok(first),
    }
}

fn encode_all(
    examples: &[AugmentedExample],
    tokenizer: &TinyTokenizer,
    spec: &EncoderSpec,
    num_labels: usize,
) -> Result<Vec<(EncodedInput, usize)>, ModelError> {
    examples
        .iter()
        .map(|ex| {
            if ex.label_index >= num_labels {
                return Err(ModelError::LabelOutOfRange {
                    instance_id: ex.instance_id.clone(),
                    index: ex.label_index,
                    num_labels,
                });
            }
            Ok((encode_example(ex, tokenizer, spec)?, ex.label_index))
        })
        .collect()
}

/// In-process trainer for the tiny encoder.
pub struct TinyTrainer {
    encoder: TinyEncoder,
    optimizer: AdamW,
    train: Vec<(EncodedInput, usize)>,
    dev: Vec<(EncodedInput, usize)>,
    labels: LabelVocabulary,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
}

impl TinyTrainer {
    pub fn new(
        encoder: TinyEncoder,
        train: Vec<(EncodedInput, usize)>,
        dev: Vec<(EncodedInput, usize)>,
        labels: LabelVocabulary,
        cfg: TrainConfig,
    ) -> Self {
        Self {
            encoder,
            optimizer: AdamW::new(cfg.learning_rate, cfg.weight_decay),
            train,
            dev,
            labels,
            // Offset so shuffling does not replay the initialisation stream.
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_da7a),
            cfg,
        }
    }

    pub fn encoder(&self) -> &TinyEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut TinyEncoder {
        &mut self.encoder
    }
}

impl EpochTrainer for TinyTrainer {
    type Snapshot = TinyEncoder;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ModelError> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<(&EncodedInput, usize)> =
                chunk.iter().map(|&i| (&self.train[i].0, self.train[i].1)).collect();
            self.encoder.zero_grad();
            let dropout = Some(DropoutState { rate: self.cfg.dropout, rng: &mut self.rng });
            let loss = self.encoder.loss_and_backward(&batch, dropout);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step: step + 1, loss });
            }
            self.optimizer.step(self.encoder.params_mut());
            total += loss * chunk.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn evaluate_dev(&mut self) -> Result<MetricsReport, ModelError> {
        let gold: Vec<usize> = self.dev.iter().map(|(_, l)| *l).collect();
        let pred: Vec<usize> = self.dev.iter().map(|(input, _)| argmax(&self.encoder.logits(input))).collect();
        Ok(evaluate(&gold, &pred, &self.labels, &self.cfg.label_filter)?)
    }

    fn snapshot(&self) -> TinyEncoder {
        self.encoder.clone()
    }
}

/// Fine-tunes `spec`'s backbone on `train_examples`, selecting the epoch with
/// the best dev score. Only in-process backbones are trainable here.
pub fn train(
    train_examples: &[AugmentedExample],
    dev_examples: &[AugmentedExample],
    spec: &EncoderSpec,
    cfg: &TrainConfig,
    labels: &LabelVocabulary,
) -> Result<Checkpoint, ModelError> {
    cfg.validate()?;
    let info = spec.validate()?;
    if !info.in_process {
        return Err(ModelError::BackboneNotTrainable(spec.backbone_id.clone()));
    }
    if train_examples.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev_examples.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let all: Vec<&AugmentedExample> = train_examples.iter().chain(dev_examples).collect();
    let strategy = common_strategy(&all)?;

    let registry = tag_token_registry(&TagInventory::default());
    let reserved = if spec.add_tag_tokens { registry.clone() } else { Default::default() };
    let mut tokenizer = TinyTokenizer::build(train_examples, &reserved, MAX_VOCAB);
    let base_vocab = tokenizer.vocab_size();
    if spec.add_tag_tokens {
        tokenizer.register_atomic(registry);
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tiny = TinyConfig::standard(base_vocab, spec.max_length, labels.len());
    let mut encoder = TinyEncoder::new(tiny, &mut init_rng);
    encoder.resize_token_embeddings(tokenizer.vocab_size());

    let train_inputs = encode_all(train_examples, &tokenizer, spec, labels.len())?;
    let dev_inputs = encode_all(dev_examples, &tokenizer, spec, labels.len())?;
    info!(
        "training {} on {} examples ({strategy}), vocab {}, {} parameters",
        spec.display_name(),
        train_inputs.len(),
        tokenizer.vocab_size(),
        encoder.num_parameters()
    );
    let mut trainer = TinyTrainer::new(encoder, train_inputs, dev_inputs, labels.clone(), cfg.clone());
    let outcome = fit(&mut trainer, cfg)?;
    Ok(Checkpoint {
        spec: spec.clone(),
        config: cfg.clone(),
        strategy,
        labels: labels.clone(),
        tokenizer,
        encoder: outcome.best,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        dev_metrics: outcome.best_dev_metrics,
        history: outcome.history,
    })
}
