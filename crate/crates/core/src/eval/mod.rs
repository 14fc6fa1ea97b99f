//! Micro/macro F1, per-class diagnostics and confusion matrices.
//!
//! Precision or recall with a zero denominator is 0, so macro-F1 stays defined
//! when a class is never predicted. Every report records which labels it
//! averaged over.

pub mod oracle;
pub mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelVocabulary;

pub use oracle::brute_force_oracle;
pub use table::{report_table, ComparisonTable, TableFormat, TableRow};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold and predicted label lists differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no examples to evaluate")]
    Empty,
    #[error("the label filter includes no labels")]
    EmptyInclude,
    #[error("label index {index} is outside the {num_labels}-label vocabulary")]
    LabelOutOfRange { index: usize, num_labels: usize },
    #[error("unknown label \"{0}\" in label filter")]
    UnknownLabel(String),
    #[error("nothing to tabulate")]
    EmptyTable,
}

/// Which labels take part in micro/macro averaging.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFilter {
    #[default]
    All,
    ExcludeNoRelation,
    Labels(Vec<String>),
}

impl LabelFilter {
    pub fn resolve(&self, vocab: &LabelVocabulary) -> Result<Vec<usize>, EvalError> {
        let included: Vec<usize> = match self {
            LabelFilter::All => (0..vocab.len()).collect(),
            LabelFilter::ExcludeNoRelation => {
                let null = vocab.no_relation_index();
                (0..vocab.len()).filter(|&i| i != null).collect()
            }
            LabelFilter::Labels(labels) => {
                let mut idx = labels
                    .iter()
                    .map(|l| vocab.index_of(l).ok_or_else(|| EvalError::UnknownLabel(l.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                idx.sort_unstable();
                idx.dedup();
                idx
            }
        };
        if included.is_empty() {
            return Err(EvalError::EmptyInclude);
        }
        Ok(included)
    }

    pub fn describe(&self, vocab: &LabelVocabulary) -> String {
        match self {
            LabelFilter::All => format!("all {} labels", vocab.len()),
            LabelFilter::ExcludeNoRelation => {
                format!("{} labels excluding {}", vocab.len() - 1, vocab.no_relation_label())
            }
            LabelFilter::Labels(labels) => format!("labels: {}", labels.join(", ")),
        }
    }
}

impl fmt::Display for LabelFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelFilter::All => f.write_str("all"),
            LabelFilter::ExcludeNoRelation => f.write_str("exclude_no_relation"),
            LabelFilter::Labels(labels) => write!(f, "labels:{}", labels.join(",")),
        }
    }
}

impl FromStr for LabelFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(LabelFilter::All),
            "exclude_no_relation" | "exclude-no-relation" => Ok(LabelFilter::ExcludeNoRelation),
            other => match other.strip_prefix("labels:") {
                Some(list) => Ok(LabelFilter::Labels(list.split(',').map(str::to_string).collect())),
                None => Err(format!("unknown label filter \"{other}\"")),
            },
        }
    }
}

/// Square count matrix; rows are gold labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(num_labels: usize) -> Self {
        Self { counts: vec![vec![0; num_labels]; num_labels] }
    }

    pub fn from_pairs(gold: &[usize], pred: &[usize], num_labels: usize) -> Self {
        let mut m = Self::new(num_labels);
        for (&g, &p) in gold.iter().zip(pred) {
            m.counts[g][p] += 1;
        }
        m
    }

    /// Builds from raw rows; every row must have as many entries as there are rows.
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Option<Self> {
        let n = counts.len();
        counts.iter().all(|row| row.len() == n).then_some(Self { counts })
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold][pred]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, label: usize) -> usize {
        self.counts[label][label]
    }

    pub fn false_positives(&self, label: usize) -> usize {
        self.predicted(label) - self.true_positives(label)
    }

    pub fn false_negatives(&self, label: usize) -> usize {
        self.support(label) - self.true_positives(label)
    }

    pub fn support(&self, label: usize) -> usize {
        self.counts[label].iter().sum()
    }

    pub fn predicted(&self, label: usize) -> usize {
        self.counts.iter().map(|row| row[label]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Indexed by label index, covering the whole vocabulary.
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub num_examples: usize,
    pub label_filter: String,
    pub included_labels: Vec<usize>,
}

impl MetricsReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_inputs(gold: &[usize], pred: &[usize], include: &[usize]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    if include.is_empty() {
        return Err(EvalError::EmptyInclude);
    }
    Ok(())
}

fn label_space(gold: &[usize], pred: &[usize], include: &[usize]) -> usize {
    gold.iter().chain(pred).chain(include).copied().max().map_or(0, |m| m + 1)
}

/// F1 from TP/FP/FN pooled over the included labels.
pub fn micro_f1(gold: &[usize], pred: &[usize], include: &[usize]) -> Result<f64, EvalError> {
    check_inputs(gold, pred, include)?;
    let confusion = ConfusionMatrix::from_pairs(gold, pred, label_space(gold, pred, include));
    Ok(micro_from_confusion(&confusion, include))
}

/// Unweighted mean of per-class F1 over the included labels.
pub fn macro_f1(gold: &[usize], pred: &[usize], include: &[usize]) -> Result<f64, EvalError> {
    check_inputs(gold, pred, include)?;
    let confusion = ConfusionMatrix::from_pairs(gold, pred, label_space(gold, pred, include));
    Ok(macro_from_confusion(&confusion, include))
}

fn micro_from_confusion(confusion: &ConfusionMatrix, include: &[usize]) -> f64 {
    let (tp, fp, fn_) = include.iter().fold((0, 0, 0), |(tp, fp, fn_), &c| {
        (tp + confusion.true_positives(c), fp + confusion.false_positives(c), fn_ + confusion.false_negatives(c))
    });
    f1_from_counts(tp, fp, fn_)
}

fn class_f1(confusion: &ConfusionMatrix, c: usize) -> f64 {
    f1_from_counts(confusion.true_positives(c), confusion.false_positives(c), confusion.false_negatives(c))
}

fn macro_from_confusion(confusion: &ConfusionMatrix, include: &[usize]) -> f64 {
    include.iter().map(|&c| class_f1(confusion, c)).sum::<f64>() / include.len() as f64
}

/// Full report over label indices of `vocab`.
pub fn evaluate(
    gold: &[usize],
    pred: &[usize],
    vocab: &LabelVocabulary,
    filter: &LabelFilter,
) -> Result<MetricsReport, EvalError> {
    let include = filter.resolve(vocab)?;
    check_inputs(gold, pred, &include)?;
    let num_labels = vocab.len();
    if let Some(&index) = gold.iter().chain(pred).find(|&&i| i >= num_labels) {
        return Err(EvalError::LabelOutOfRange { index, num_labels });
    }
    let confusion = ConfusionMatrix::from_pairs(gold, pred, num_labels);
    let per_class = (0..num_labels)
        .map(|c| {
            let tp = confusion.true_positives(c);
            ClassMetrics {
                label: vocab.labels()[c].clone(),
                precision: ratio(tp, confusion.predicted(c)),
                recall: ratio(tp, confusion.support(c)),
                f1: class_f1(&confusion, c),
                support: confusion.support(c),
            }
        })
        .collect();
    Ok(MetricsReport {
        micro_f1: micro_from_confusion(&confusion, &include),
        macro_f1: macro_from_confusion(&confusion, &include),
        per_class,
        num_examples: gold.len(),
        label_filter: filter.describe(vocab),
        included_labels: include,
        confusion,
    })
}

/// Micro-F1 of always predicting the most frequent gold label.
pub fn majority_baseline_micro_f1(gold: &[usize], num_labels: usize) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; num_labels.max(gold.iter().max().unwrap() + 1)];
    for &g in gold {
        counts[g] += 1;
    }
    *counts.iter().max().unwrap() as f64 / gold.len() as f64
}
