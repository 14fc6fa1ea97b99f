//! Hands full-size backbones to an out-of-process trainer.
//!
//! The runner writes augmented splits as JSONL plus a `job.json`, then runs
//! `command [args..] <job.json>`. The trainer fine-tunes with the given
//! recipe and writes `dev_predictions.jsonl` and `test_predictions.jsonl`
//! into `out_dir`, one `{"instance_id", "label_index", "scores"?}` per line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::checkpoint::Prediction;
use super::{EncoderSpec, ModelError, TrainConfig};
use crate::augment::StrategyId;
use crate::corpus::LabelVocabulary;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalTrainerConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainJob {
    pub encoder: EncoderSpec,
    pub train_config: TrainConfig,
    pub strategy: StrategyId,
    pub labels: LabelVocabulary,
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub test_path: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct ExternalOutcome {
    pub dev: Vec<Prediction>,
    pub test: Vec<Prediction>,
}

#[derive(Deserialize)]
struct PredictionLine {
    instance_id: String,
    label_index: usize,
    #[serde(default)]
    scores: Vec<f64>,
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>, ModelError> {
    let text =
        fs::read_to_string(path).map_err(|e| ModelError::External(format!("reading {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let p: PredictionLine = serde_json::from_str(line)
                .map_err(|e| ModelError::External(format!("{} line {}: {e}", path.display(), i + 1)))?;
            Ok(Prediction { instance_id: p.instance_id, label_index: p.label_index, scores: p.scores })
        })
        .collect()
}

pub fn run_external(trainer: &ExternalTrainerConfig, job: &TrainJob) -> Result<ExternalOutcome, ModelError> {
    fs::create_dir_all(&job.out_dir).map_err(|e| ModelError::External(e.to_string()))?;
    let job_path = job.out_dir.join("job.json");
    fs::write(&job_path, serde_json::to_string_pretty(job).expect("job serializes"))
        .map_err(|e| ModelError::External(e.to_string()))?;
    let status = Command::new(&trainer.command)
        .args(&trainer.args)
        .arg(&job_path)
        .status()
        .map_err(|e| ModelError::External(format!("cannot launch \"{}\": {e}", trainer.command)))?;
    if !status.success() {
        return Err(ModelError::External(format!("\"{}\" exited with {status}", trainer.command)));
    }
    Ok(ExternalOutcome {
        dev: read_predictions(&job.out_dir.join("dev_predictions.jsonl"))?,
        test: read_predictions(&job.out_dir.join("test_predictions.jsonl"))?,
    })
}
