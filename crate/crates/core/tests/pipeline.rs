use std::fs;
use std::path::Path;

use finrel_core::augment::{augment_split, BuildOptions, StrategyId};
use finrel_core::corpus::{make_synthetic_corpus, Corpus, Split};
use finrel_core::model::external::ExternalTrainerConfig;
use finrel_core::model::train::{fit, TinyTrainer};
use finrel_core::model::{
    encode_example, predict, train, Checkpoint, EncoderSpec, ModelError, TinyConfig, TinyEncoder, TrainConfig,
};
use finrel_core::runner::{
    collect_records, execute_cell, run_ablation_with, run_backbone_sweep, run_single, AugmentedSplits, CorpusSource,
    ExperimentConfig, Prepared, RunSpec, RunStatus, StageError, COLLECT_HEADER,
};
use finrel_core::tagging::{tag_corpus, Annotator, TagAnnotation, TaggerSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn quick() -> TrainConfig {
    TrainConfig { max_epochs: 3, ..TrainConfig::desk_scale() }
}

fn tagged(n: usize) -> (Corpus, BTreeMap<String, TagAnnotation>) {
    let corpus = make_synthetic_corpus(n, 4, 7).unwrap();
    let mut annotator = Annotator::from_spec(&TaggerSpec::rule_reference()).unwrap();
    let tags = tag_corpus(&corpus, &mut annotator, None).unwrap().annotations;
    (corpus, tags)
}

fn config(out: &Path, strategies: &[StrategyId], backbones: Vec<EncoderSpec>) -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusSource::Synthetic { instances: 80, relations: 4, seed: 7 },
        tagger: TaggerSpec::rule_reference(),
        strategies: strategies.to_vec(),
        backbones,
        train: quick(),
        seeds: vec![1],
        output_dir: out.to_path_buf(),
        tag_cache: None,
        parallel: false,
        include_proposed: false,
        external_trainer: None,
    }
}

#[test]
fn checkpoints_round_trip_and_predict_identically() {
    let (corpus, tags) = tagged(80);
    let split = |s| augment_split(&corpus, s, &tags, StrategyId::TrNP, BuildOptions::default()).unwrap();
    let (tr, dv, te) = (split(Split::Train), split(Split::Dev), split(Split::Test));
    let ck = train(&tr, &dv, &EncoderSpec::tiny_scratch(), &quick(), &corpus.vocabulary).unwrap();
    let max = ck.history.iter().map(|e| e.selection_value).fold(f64::MIN, f64::max);
    assert_eq!(ck.dev_metrics.micro_f1, max);

    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    for file in ["config.json", "metrics.json", "weights.bin", "tag_tokens.json", "vocab.json"] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }
    let loaded = Checkpoint::load(dir.path()).unwrap();
    let a = predict(&ck, &te).unwrap();
    let b = predict(&loaded, &te).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), te.len());
    for p in &a {
        assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p.scores.len(), corpus.vocabulary.len());
    }

    // Every bracketed tag is a single id after registration.
    let input = encode_example(&te[0], &loaded.tokenizer, &loaded.spec).unwrap();
    let words: usize = te[0].segments.iter().map(Vec::len).sum();
    assert_eq!(input.len(), words + 3);

    let t = augment_split(&corpus, Split::Test, &tags, StrategyId::T, BuildOptions::default()).unwrap();
    let err = predict(&ck, &t).unwrap_err().to_string();
    assert!(err.contains("TrNP") && err.contains('T'), "{err}");
}

#[test]
fn training_preconditions() {
    let (corpus, tags) = tagged(60);
    let split = |st, s| augment_split(&corpus, s, &tags, st, BuildOptions::default()).unwrap();
    let tr = split(StrategyId::T, Split::Train);
    let dv = split(StrategyId::T, Split::Dev);
    let spec = EncoderSpec::tiny_scratch();
    assert!(matches!(train(&tr, &[], &spec, &quick(), &corpus.vocabulary), Err(ModelError::EmptySplit("dev"))));
    let mixed = split(StrategyId::TN, Split::Dev);
    assert!(matches!(train(&tr, &mixed, &spec, &quick(), &corpus.vocabulary), Err(ModelError::MixedStrategies { .. })));
    let roberta = EncoderSpec::new("roberta-base");
    assert!(matches!(
        train(&tr, &dv, &roberta, &quick(), &corpus.vocabulary),
        Err(ModelError::BackboneNotTrainable(_))
    ));
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic() {
    let (corpus, tags) = tagged(60);
    let examples = augment_split(&corpus, Split::Train, &tags, StrategyId::T, BuildOptions::default()).unwrap();
    let ck = train(&examples, &examples, &EncoderSpec::tiny_scratch(), &quick(), &corpus.vocabulary).unwrap();
    let inputs: Vec<_> =
        examples.iter().map(|ex| (encode_example(ex, &ck.tokenizer, &ck.spec).unwrap(), ex.label_index)).collect();
    let mut encoder = TinyEncoder::new(ck.encoder.config().clone(), &mut ChaCha8Rng::seed_from_u64(0));
    encoder.head_mut().0.value[[0, 0]] = f64::NAN;
    let mut trainer = TinyTrainer::new(encoder, inputs.clone(), inputs, corpus.vocabulary.clone(), quick());
    match fit(&mut trainer, &quick()) {
        Err(ModelError::NonFiniteLoss { epoch, step, .. }) => assert_eq!((epoch, step), (1, 1)),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn tag_embeddings_start_at_the_mean() {
    let mut enc = TinyEncoder::new(TinyConfig::standard(10, 32, 3), &mut ChaCha8Rng::seed_from_u64(5));
    let before: Vec<f64> = enc.params()[0].value.mean_axis(ndarray::Axis(0)).unwrap().to_vec();
    enc.resize_token_embeddings(12);
    let table = &enc.params()[0].value;
    for row in 10..12 {
        let got: Vec<f64> = table.row(row).to_vec();
        assert_eq!(got, before);
    }
}

#[test]
fn ablation_isolates_failures_and_collects_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &StrategyId::ALL, vec![EncoderSpec::tiny_scratch()]);
    let exec = |p: &Prepared, d: &AugmentedSplits, spec: &RunSpec, run_dir: &Path| {
        if spec.strategy == StrategyId::TNP {
            return Err(StageError::new("train", "injected failure"));
        }
        execute_cell(p, d, spec, run_dir)
    };
    let out = run_ablation_with(&cfg, &exec).unwrap();
    assert_eq!(out.records.len(), 6);
    assert_eq!(out.records.iter().filter(|r| r.is_completed()).count(), 5);
    assert_eq!(out.tagger_invocations, out.corpus_size);
    let failed = out.records.iter().find(|r| !r.is_completed()).unwrap();
    assert_eq!(failed.config.strategy, StrategyId::TNP);
    assert!(
        matches!(&failed.status, RunStatus::Failed { stage, error } if stage == "train" && error.contains("injected"))
    );
    let gap = out.table.rows.iter().find(|r| r.name == "TNP").unwrap();
    assert!(gap.scores.is_none());
    assert_eq!(out.table.rows.len(), 6);
    assert!(dir.path().join("table.md").is_file());

    let collected = collect_records(dir.path()).unwrap();
    let lines: Vec<&str> = collected.csv.lines().collect();
    assert_eq!(lines[0], COLLECT_HEADER);
    assert_eq!(lines.len(), 7);
    let failed_line = lines.iter().find(|l| l.starts_with("TNP__")).unwrap();
    assert!(failed_line.ends_with(",,,failed,train"), "{failed_line}");

    // A junk record is skipped, not fatal.
    fs::create_dir_all(dir.path().join("junk")).unwrap();
    fs::write(dir.path().join("junk/record.json"), "{").unwrap();
    let collected = collect_records(dir.path()).unwrap();
    assert_eq!(collected.records.len(), 6);
    assert_eq!(collected.skipped.len(), 1);

    // Second ablation over the same output reuses the tag cache.
    let again = run_ablation_with(&cfg, &exec).unwrap();
    assert_eq!(again.tagger_invocations, 0);
}

#[test]
fn sweeps_isolate_backbones() {
    let dir = tempfile::tempdir().unwrap();
    let named = EncoderSpec { name: Some("tiny-b".into()), ..EncoderSpec::tiny_scratch() };
    let cfg =
        config(dir.path(), &[StrategyId::T], vec![EncoderSpec::tiny_scratch(), named, EncoderSpec::new("finbert")]);
    let out = run_backbone_sweep(&cfg).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.table.rows.len(), 3);
    assert!(out.records[0].is_completed() && out.records[1].is_completed());
    assert!(matches!(&out.records[2].status, RunStatus::Failed { stage, .. } if stage == "train"));
    // Same backbone and seed under two names gives the same numbers.
    assert_eq!(out.records[0].test_metrics, out.records[1].test_metrics);
}

#[test]
fn snapshot_replay_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[StrategyId::TrN], vec![EncoderSpec::tiny_scratch()]);
    let first = run_backbone_sweep(&cfg).unwrap().records.remove(0);
    assert!(first.is_completed());
    let replay_dir = tempfile::tempdir().unwrap();
    let replay = run_single(&first.config, replay_dir.path());
    assert_eq!(replay.test_metrics, first.test_metrics);
    assert_eq!(replay.dev_metrics, first.dev_metrics);
}

#[test]
fn external_trainer_protocol() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("trainer.py");
    fs::write(
        &script,
        r#"import json, sys, os
job = json.load(open(sys.argv[1]))
for split in ("dev", "test"):
    with open(os.path.join(job["out_dir"], split + "_predictions.jsonl"), "w") as out:
        for line in open(job[split + "_path"]):
            ex = json.loads(line)
            out.write(json.dumps({"instance_id": ex["instance_id"], "label_index": ex["label_index"]}) + "\n")
"#,
    )
    .unwrap();
    let mut cfg = config(&dir.path().join("out"), &[StrategyId::TrNP], vec![EncoderSpec::new("roberta-base")]);
    cfg.external_trainer =
        Some(ExternalTrainerConfig { command: "python3".into(), args: vec![script.display().to_string()] });
    let out = run_backbone_sweep(&cfg).unwrap();
    let record = &out.records[0];
    assert!(record.is_completed(), "{:?}", record.status);
    assert_eq!(record.test_metrics.as_ref().unwrap().micro_f1, 1.0);
}
