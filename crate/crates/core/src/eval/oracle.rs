//! Independent reference for the metrics in this module: plain counting loops
//! over the raw label lists, sharing no arithmetic with the main path.

use crate::corpus::LabelVocabulary;

use super::{ClassMetrics, ConfusionMatrix, EvalError, LabelFilter, MetricsReport};

pub const ORACLE_MAX_EXAMPLES: usize = 10_000;

pub fn brute_force_oracle(
    gold: &[usize],
    pred: &[usize],
    vocab: &LabelVocabulary,
    filter: &LabelFilter,
) -> Result<MetricsReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    assert!(gold.len() <= ORACLE_MAX_EXAMPLES, "the oracle is meant for small inputs");
    let k = vocab.len();
    let mut include = Vec::new();
    for label in 0..k {
        let keep = match filter {
            LabelFilter::All => true,
            LabelFilter::ExcludeNoRelation => vocab.labels()[label] != vocab.no_relation_label(),
            LabelFilter::Labels(names) => names.iter().any(|n| *n == vocab.labels()[label]),
        };
        if keep {
            include.push(label);
        }
    }
    if let LabelFilter::Labels(names) = filter {
        if let Some(unknown) = names.iter().find(|n| !vocab.labels().contains(n)) {
            return Err(EvalError::UnknownLabel(unknown.clone()));
        }
    }
    if include.is_empty() {
        return Err(EvalError::EmptyInclude);
    }
    for &label in gold.iter().chain(pred) {
        if label >= k {
            return Err(EvalError::LabelOutOfRange { index: label, num_labels: k });
        }
    }

    let mut counts = vec![vec![0usize; k]; k];
    for (r, row) in counts.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            for i in 0..gold.len() {
                if gold[i] == r && pred[i] == c {
                    *cell += 1;
                }
            }
        }
    }

    let mut per_class = Vec::with_capacity(k);
    for label in 0..k {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        let mut support = 0usize;
        for i in 0..gold.len() {
            if gold[i] == label {
                support += 1;
            }
            if gold[i] == label && pred[i] == label {
                tp += 1;
            } else if pred[i] == label {
                fp += 1;
            } else if gold[i] == label {
                fn_ += 1;
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if tp > 0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.push(ClassMetrics { label: vocab.labels()[label].clone(), precision, recall, f1, support });
    }

    let mut macro_sum = 0.0;
    for &label in &include {
        macro_sum += per_class[label].f1;
    }
    let macro_f1 = macro_sum / include.len() as f64;

    let mut pooled_tp = 0usize;
    let mut pooled_fp = 0usize;
    let mut pooled_fn = 0usize;
    for i in 0..gold.len() {
        let gold_in = include.contains(&gold[i]);
        let pred_in = include.contains(&pred[i]);
        if gold[i] == pred[i] {
            if gold_in {
                pooled_tp += 1;
            }
        } else {
            if pred_in {
                pooled_fp += 1;
            }
            if gold_in {
                pooled_fn += 1;
            }
        }
    }
    let micro_p = if pooled_tp + pooled_fp > 0 { pooled_tp as f64 / (pooled_tp + pooled_fp) as f64 } else { 0.0 };
    let micro_r = if pooled_tp + pooled_fn > 0 { pooled_tp as f64 / (pooled_tp + pooled_fn) as f64 } else { 0.0 };
    let micro_f1 = if pooled_tp > 0 { 2.0 * micro_p * micro_r / (micro_p + micro_r) } else { 0.0 };

    Ok(MetricsReport {
        micro_f1,
        macro_f1,
        per_class,
        confusion: ConfusionMatrix::from_counts(counts).expect("square"),
        num_examples: gold.len(),
        label_filter: filter.describe(vocab),
        included_labels: include,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_correct_example() {
        let vocab = LabelVocabulary::new(vec!["x".into(), "y".into()], "x").unwrap();
        let report = brute_force_oracle(&[1], &[1], &vocab, &LabelFilter::Labels(vec!["y".into()])).unwrap();
        assert_eq!(report.micro_f1, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        let y = report.class("y").unwrap();
        assert_eq!((y.precision, y.recall, y.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_include_fails() {
        let vocab = LabelVocabulary::new(vec!["x".into()], "x").unwrap();
        assert_eq!(
            brute_force_oracle(&[0], &[0], &vocab, &LabelFilter::ExcludeNoRelation).unwrap_err(),
            EvalError::EmptyInclude
        );
        assert_eq!(
            brute_force_oracle(&[0], &[0], &vocab, &LabelFilter::Labels(vec![])).unwrap_err(),
            EvalError::EmptyInclude
        );
    }

    #[test]
    fn hand_fixture() {
        let vocab = LabelVocabulary::new(vec!["a".into(), "b".into()], "a").unwrap();
        let report = brute_force_oracle(&[0, 0, 1, 1], &[0, 1, 1, 1], &vocab, &LabelFilter::All).unwrap();
        assert!((report.micro_f1 - 0.75).abs() < 1e-12);
        assert!((report.macro_f1 - 0.733_333_333_333_333_3).abs() < 1e-12);
    }
}
