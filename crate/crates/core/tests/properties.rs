mod common;

use std::collections::BTreeSet;

use common::{check_augmentation, check_oracle, filters, fixture, label_vocab, predictions};
use finrel_core::corpus::{make_synthetic_corpus, CanonicalRecord, RelationInstance, Split};
use finrel_core::eval::{evaluate, LabelFilter};
use finrel_core::tagging::{tag_instance, TaggerSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn augmentation_invariants(fx in fixture()) {
        if let Err(e) = check_augmentation(&fx) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn metrics_match_the_oracle((gold, pred) in predictions(22, 200), filter in filters()) {
        if let Err(e) = check_oracle(&gold, &pred, &label_vocab(22), &filter) {
            prop_assert!(false, "{}", e);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn joint_shuffles_leave_metrics_unchanged((gold, pred) in predictions(22, 120), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let vocab = label_vocab(22);
        let base = evaluate(&gold, &pred, &vocab, &LabelFilter::All).unwrap();
        let mut pairs: Vec<(usize, usize)> = gold.iter().copied().zip(pred.iter().copied()).collect();
        pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (g, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let shuffled = evaluate(&g, &p, &vocab, &LabelFilter::All).unwrap();
        prop_assert_eq!(base.micro_f1, shuffled.micro_f1);
        prop_assert_eq!(base.macro_f1, shuffled.macro_f1);
        prop_assert_eq!(base.per_class, shuffled.per_class);
        prop_assert_eq!(base.confusion, shuffled.confusion);
    }

    #[test]
    fn micro_with_all_labels_is_accuracy((gold, pred) in predictions(22, 200)) {
        let report = evaluate(&gold, &pred, &label_vocab(22), &LabelFilter::All).unwrap();
        let accuracy = gold.iter().zip(&pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64;
        prop_assert!((report.micro_f1 - accuracy).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval((gold, pred) in predictions(5, 50), filter in filters()) {
        let vocab = label_vocab(22);
        let report = evaluate(&gold, &pred, &vocab, &filter).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.micro_f1));
        prop_assert!((0.0..=1.0).contains(&report.macro_f1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_splits_partition_the_corpus(n in 10usize..300, r in 2usize..=9, seed in any::<u64>()) {
        let corpus = make_synthetic_corpus(n, r, seed).unwrap();
        prop_assert_eq!(corpus.len(), n);
        let sizes = corpus.split_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let ids: BTreeSet<&str> = corpus.instances.iter().map(|i| i.id.as_str()).collect();
        prop_assert_eq!(ids.len(), n);
        let mut seen = BTreeSet::new();
        for split in Split::ALL {
            for inst in corpus.split(split) {
                prop_assert!(seen.insert(inst.id.clone()), "{} in two splits", inst.id);
            }
        }
        prop_assert_eq!(corpus.vocabulary.len(), r);
    }

    #[test]
    fn canonical_records_round_trip(n in 10usize..80, seed in any::<u64>()) {
        let corpus = make_synthetic_corpus(n, 4, seed).unwrap();
        for inst in &corpus.instances {
            let record = CanonicalRecord::from(inst);
            let json = serde_json::to_string(&record).unwrap();
            let back: CanonicalRecord = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&RelationInstance::from(back), inst);
        }
    }

    #[test]
    fn tags_align_one_to_one_with_tokens(n in 10usize..60, seed in any::<u64>()) {
        let corpus = make_synthetic_corpus(n, 9, seed).unwrap();
        for inst in &corpus.instances {
            let ann = tag_instance(inst, &TaggerSpec::rule_reference()).unwrap();
            prop_assert_eq!(ann.ner_tags.len(), inst.tokens.len());
            prop_assert_eq!(ann.pos_tags.len(), inst.tokens.len());
        }
    }
}
