#![allow(dead_code)]

use finrel_core::augment::{build_sequence, build_trn, StrategyId};
use finrel_core::corpus::{EntitySpan, LabelVocabulary, RelationInstance, Split};
use finrel_core::eval::{brute_force_oracle, evaluate, macro_f1, micro_f1, LabelFilter};
use finrel_core::tagging::{TagAnnotation, NULL_NER_TAG, ONTONOTES_NER_TAGS, UNIVERSAL_POS_TAGS};
use proptest::prelude::*;

pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Fixture {
    pub inst: RelationInstance,
    pub ann: TagAnnotation,
}

pub fn relation_vocab() -> LabelVocabulary {
    LabelVocabulary::new(vec!["no_relation".into(), "org:org:acquired_by".into()], "no_relation").unwrap()
}

fn span(n: usize) -> impl Strategy<Value = (usize, usize)> {
    (0..n).prop_flat_map(move |start| (Just(start), start + 1..=n))
}

/// Random sentences with arbitrary NER/POS tags and two distinct entity spans.
pub fn fixture() -> impl Strategy<Value = Fixture> {
    (2usize..24).prop_flat_map(|n| {
        let token = prop_oneof!["[a-z]{1,8}", "[A-Z][a-z]{0,7}", "[0-9]{1,4}", Just(",".to_string())];
        let ner = prop_oneof![
            3 => Just(NULL_NER_TAG.to_string()),
            2 => proptest::sample::select(ONTONOTES_NER_TAGS.to_vec()).prop_map(str::to_string),
        ];
        let pos = proptest::sample::select(UNIVERSAL_POS_TAGS.to_vec()).prop_map(str::to_string);
        (
            proptest::collection::vec(token, n),
            proptest::collection::vec(ner, n),
            proptest::collection::vec(pos, n),
            span(n),
            span(n),
            any::<bool>(),
        )
            .prop_filter("entity spans must differ", |(_, _, _, a, b, _)| a != b)
            .prop_map(|(tokens, ner_tags, pos_tags, (s1, e1), (s2, e2), related)| Fixture {
                inst: RelationInstance {
                    id: "fx".into(),
                    tokens,
                    e1: EntitySpan::new(s1, e1, "ORG"),
                    e2: EntitySpan::new(s2, e2, "ORG"),
                    relation: if related { "org:org:acquired_by" } else { "no_relation" }.into(),
                    split: Split::Train,
                },
                ann: TagAnnotation { instance_id: "fx".into(), ner_tags, pos_tags },
            })
    })
}

fn is_bracketed(s: &str) -> bool {
    s.len() > 2 && s.starts_with('[') && s.ends_with(']')
}

/// Checks every augmentation invariant on one fixture.
pub fn check_augmentation(fx: &Fixture) -> Result<(), String> {
    let vocab = relation_vocab();
    let tokens = &fx.inst.tokens;
    let ner = &fx.ann.ner_tags;

    let trn = build_trn(tokens, ner).map_err(|e| e.to_string())?;
    if trn.len() != tokens.len() {
        return Err(format!("TrN length {} != {}", trn.len(), tokens.len()));
    }
    for ((orig, replaced), tag) in tokens.iter().zip(&trn).zip(ner) {
        let changed = orig != replaced;
        if changed != (tag != NULL_NER_TAG) {
            return Err(format!("token {orig:?} tagged {tag} became {replaced:?}"));
        }
        if changed && *replaced != format!("[{tag}]") {
            return Err(format!("token {orig:?} replaced by {replaced:?}, expected [{tag}]"));
        }
    }

    let null = vec![NULL_NER_TAG.to_string(); tokens.len()];
    if build_trn(tokens, &null).map_err(|e| e.to_string())? != *tokens {
        return Err("TrN under an all-O tagger differs from T".into());
    }

    let brk = |tags: &[String]| tags.iter().map(|t| format!("[{t}]")).collect::<Vec<_>>();
    let (n_seg, p_seg) = (brk(ner), brk(&fx.ann.pos_tags));
    for strategy in StrategyId::ALL {
        let ex = build_sequence(&fx.inst, &fx.ann, strategy, &vocab).map_err(|e| e.to_string())?;
        let expected: Vec<Vec<String>> = match strategy {
            StrategyId::T => vec![tokens.clone()],
            StrategyId::TN => vec![tokens.clone(), n_seg.clone()],
            StrategyId::TP => vec![tokens.clone(), p_seg.clone()],
            StrategyId::TNP => vec![tokens.clone(), n_seg.clone(), p_seg.clone()],
            StrategyId::TrN => vec![trn.clone()],
            StrategyId::TrNP => vec![trn.clone(), p_seg.clone()],
        };
        if ex.segments != expected {
            return Err(format!("{strategy}: unexpected segments {:?}", ex.segments));
        }
        if ex.segments.len() != strategy.segment_count() {
            return Err(format!("{strategy}: segment_count disagrees"));
        }
        for seg in &ex.segments[1..] {
            if let Some(leak) = seg.iter().find(|item| !is_bracketed(item)) {
                return Err(format!("{strategy}: surface string {leak:?} in a tag segment"));
            }
            if seg.len() != tokens.len() {
                return Err(format!("{strategy}: tag segment length {} != {}", seg.len(), tokens.len()));
            }
        }
        let null_ann = TagAnnotation { ner_tags: null.clone(), ..fx.ann.clone() };
        if strategy == StrategyId::TrN {
            let collapsed = build_sequence(&fx.inst, &null_ann, strategy, &vocab).map_err(|e| e.to_string())?;
            let plain = build_sequence(&fx.inst, &null_ann, StrategyId::T, &vocab).map_err(|e| e.to_string())?;
            if collapsed.segments != plain.segments {
                return Err("TrN example under an all-O tagger differs from T".into());
            }
        }
    }
    Ok(())
}

pub fn label_vocab(k: usize) -> LabelVocabulary {
    let mut labels: Vec<String> = (1..k).map(|i| format!("rel_{i:02}")).collect();
    labels.insert(0, "no_relation".into());
    LabelVocabulary::new(labels, "no_relation").unwrap()
}

/// `(gold, pred)` over `k` labels, 1..=max_len examples.
pub fn predictions(k: usize, max_len: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max_len).prop_flat_map(move |n| (proptest::collection::vec(0..k, n), proptest::collection::vec(0..k, n)))
}

pub fn filters() -> impl Strategy<Value = LabelFilter> {
    prop_oneof![
        Just(LabelFilter::All),
        Just(LabelFilter::ExcludeNoRelation),
        proptest::collection::btree_set(0usize..22, 1..6).prop_map(|set| LabelFilter::Labels(
            set.into_iter().map(|i| label_vocab(22).labels()[i].clone()).collect()
        )),
    ]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOLERANCE
}

/// Main metrics path against the brute-force oracle, plus confusion-derived recomputation.
pub fn check_oracle(
    gold: &[usize],
    pred: &[usize],
    vocab: &LabelVocabulary,
    filter: &LabelFilter,
) -> Result<(), String> {
    let main = evaluate(gold, pred, vocab, filter).map_err(|e| e.to_string())?;
    let oracle = brute_force_oracle(gold, pred, vocab, filter).map_err(|e| e.to_string())?;
    if !close(main.micro_f1, oracle.micro_f1) || !close(main.macro_f1, oracle.macro_f1) {
        return Err(format!(
            "micro {} vs {}, macro {} vs {}",
            main.micro_f1, oracle.micro_f1, main.macro_f1, oracle.macro_f1
        ));
    }
    if main.included_labels != oracle.included_labels {
        return Err("included label sets differ".into());
    }
    let micro = micro_f1(gold, pred, &main.included_labels).map_err(|e| e.to_string())?;
    let macro_ = macro_f1(gold, pred, &main.included_labels).map_err(|e| e.to_string())?;
    if !close(micro, oracle.micro_f1) || !close(macro_, oracle.macro_f1) {
        return Err("standalone micro/macro disagree with the oracle".into());
    }
    if main.confusion != oracle.confusion {
        return Err("confusion matrices differ".into());
    }
    for (label, (m, o)) in main.per_class.iter().zip(&oracle.per_class).enumerate() {
        if m.support != o.support
            || !close(m.precision, o.precision)
            || !close(m.recall, o.recall)
            || !close(m.f1, o.f1)
        {
            return Err(format!("class {}: {m:?} vs {o:?}", m.label));
        }
        let rows = main.confusion.rows();
        let tp = rows[label][label];
        let predicted: usize = rows.iter().map(|r| r[label]).sum();
        let support: usize = rows[label].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let r = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if m.precision != p || m.recall != r || m.f1 != f || m.support != support {
            return Err(format!("class {}: confusion recomputation differs", m.label));
        }
    }
    let mean: f64 =
        main.included_labels.iter().map(|&c| main.per_class[c].f1).sum::<f64>() / main.included_labels.len() as f64;
    if (mean - main.macro_f1).abs() > 1e-12 {
        return Err("macro is not the mean of included per-class F1".into());
    }
    if main.per_class.iter().map(|c| c.support).sum::<usize>() != gold.len() || main.confusion.total() != gold.len() {
        return Err("supports or confusion total do not match the example count".into());
    }
    Ok(())
}
