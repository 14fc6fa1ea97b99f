//! Relation classification over financial text with entity-type and
//! part-of-speech augmented inputs.
//!
//! The pipeline runs ingest ([`corpus`]) → tag ([`tagging`]) → build strategy
//! inputs ([`augment`]) → train and predict ([`model`]) → score ([`eval`]);
//! [`runner`] drives it from experiment configs.

pub mod augment;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod runner;
pub mod tagging;

pub use augment::{build_sequence, build_trn, AugmentError, AugmentedExample, StrategyId};
pub use corpus::{make_synthetic_corpus, Corpus, CorpusError, EntitySpan, LabelVocabulary, RelationInstance, Split};
pub use eval::{brute_force_oracle, macro_f1, micro_f1, ConfusionMatrix, EvalError, LabelFilter, MetricsReport};
pub use model::{predict, train, Checkpoint, EncoderSpec, ModelError, TrainConfig};
pub use runner::{run_ablation, run_backbone_sweep, run_single, ExperimentConfig, RunRecord, RunStatus};
pub use tagging::{TagAnnotation, TagError, TaggerSpec};
