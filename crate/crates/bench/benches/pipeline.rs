use std::collections::{BTreeMap, BTreeSet};
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use finrel_core::augment::{augment_corpus, AugmentedExample};
use finrel_core::eval::{evaluate, LabelFilter};
use finrel_core::model::{encode_example, EncodedInput, EncoderSpec, TinyConfig, TinyEncoder, TinyTokenizer};
use finrel_core::tagging::{tag_corpus, Annotator, TagAnnotation, TaggerSpec};
use finrel_core::{make_synthetic_corpus, Corpus, LabelVocabulary, StrategyId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tagged(n: usize) -> (Corpus, BTreeMap<String, TagAnnotation>) {
    let corpus = make_synthetic_corpus(n, 5, 7).unwrap();
    let mut annotator = Annotator::from_spec(&TaggerSpec::rule_reference()).unwrap();
    let annotations = tag_corpus(&corpus, &mut annotator, None).unwrap().annotations;
    (corpus, annotations)
}

fn bench_tagging(c: &mut Criterion) {
    let corpus = make_synthetic_corpus(200, 5, 7).unwrap();
    let mut group = c.benchmark_group("tagging");
    group.throughput(Throughput::Elements(corpus.len() as u64));
    group.bench_function("rule_tagger_200", |b| {
        b.iter(|| {
            let mut annotator = Annotator::from_spec(&TaggerSpec::rule_reference()).unwrap();
            black_box(tag_corpus(&corpus, &mut annotator, None).unwrap())
        })
    });
    group.finish();
}

fn bench_augment(c: &mut Criterion) {
    let (corpus, annotations) = tagged(500);
    let mut group = c.benchmark_group("augment");
    group.throughput(Throughput::Elements(corpus.len() as u64));
    for strategy in StrategyId::ALL {
        group.bench_function(strategy.as_str(), |b| {
            b.iter(|| black_box(augment_corpus(&corpus, &annotations, strategy).unwrap()))
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let labels = std::iter::once("no_relation".to_string()).chain((1..22).map(|i| format!("rel_{i}"))).collect();
    let vocab = LabelVocabulary::new(labels, "no_relation").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab.len())).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab.len())).collect();
    let mut group = c.benchmark_group("metrics");
    group.throughput(Throughput::Elements(n as u64));
    for (name, filter) in [("all", LabelFilter::All), ("exclude_no_relation", LabelFilter::ExcludeNoRelation)] {
        group.bench_function(name, |b| b.iter(|| black_box(evaluate(&gold, &pred, &vocab, &filter).unwrap())));
    }
    group.finish();
}

fn encoded(examples: &[AugmentedExample]) -> (TinyTokenizer, Vec<EncodedInput>) {
    let tokenizer = TinyTokenizer::build(examples, &BTreeSet::new(), 20_000);
    let spec = EncoderSpec::tiny_scratch();
    let inputs = examples.iter().map(|ex| encode_example(ex, &tokenizer, &spec).unwrap()).collect();
    (tokenizer, inputs)
}

fn bench_encoder(c: &mut Criterion) {
    let (corpus, annotations) = tagged(64);
    let examples = augment_corpus(&corpus, &annotations, StrategyId::TrNP).unwrap();
    let (tokenizer, inputs) = encoded(&examples);
    let config = TinyConfig::standard(tokenizer.vocab_size(), 128, corpus.vocabulary.len());
    let encoder = TinyEncoder::new(config, &mut ChaCha8Rng::seed_from_u64(42));
    let batch: Vec<(&EncodedInput, usize)> =
        inputs.iter().zip(&examples).take(8).map(|(input, ex)| (input, ex.label_index)).collect();

    let mut group = c.benchmark_group("tiny_encoder");
    group.bench_function("forward", |b| b.iter(|| black_box(encoder.logits(&inputs[0]))));
    group.throughput(Throughput::Elements(batch.len() as u64));
    group.bench_function("forward_backward_batch8", |b| {
        b.iter_batched_ref(
            || encoder.clone(),
            |enc| {
                enc.zero_grad();
                black_box(enc.loss_and_backward(&batch, None))
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_tagging, bench_augment, bench_metrics, bench_encoder);
criterion_main!(benches);
