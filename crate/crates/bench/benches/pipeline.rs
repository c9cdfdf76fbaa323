use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use scvd_core::corpus::{stratified_split, synthetic, ClassCounts, SplitRatios};
use scvd_core::evaluation::compute_metrics;
use scvd_core::model::{build_recurrent_classifier, EncodedDataset, ModelConfig, Network, RecurrentConfig, RecurrentNet};
use scvd_core::preprocess::{lex_contract, Vocab};
use scvd_core::VulnerabilityLabel;

fn preprocessing(c: &mut Criterion) {
    let corpus = synthetic::generate(ClassCounts([25, 25, 25, 25]), 1);
    let sources: Vec<&str> = corpus.contracts().iter().map(|c| c.source.as_str()).collect();
    c.bench_function("lex_100_contracts", |b| {
        b.iter(|| {
            for s in &sources {
                black_box(lex_contract(s, "bench"));
            }
        })
    });
    let seqs: Vec<_> = sources.iter().map(|s| lex_contract(s, "bench").0).collect();
    c.bench_function("vocab_build_100", |b| b.iter(|| Vocab::build(black_box(&seqs), 50_000, 2)));
}

fn splitting(c: &mut Criterion) {
    let corpus = synthetic::reference_sized(3);
    c.bench_function("stratified_split_reference", |b| {
        b.iter(|| stratified_split(black_box(&corpus), SplitRatios::default(), 42).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y_true: Vec<_> = (0..10_000).map(|_| VulnerabilityLabel::ALL[rng.gen_range(0..4)]).collect();
    let y_pred: Vec<_> = y_true.iter().map(|t| if rng.gen_bool(0.8) { *t } else { VulnerabilityLabel::ALL[rng.gen_range(0..4)] }).collect();
    c.bench_function("metrics_10k", |b| b.iter(|| compute_metrics(black_box(&y_true), black_box(&y_pred)).unwrap()));
}

fn recurrent(c: &mut Criterion) {
    let cfg = RecurrentConfig::default();
    let net = RecurrentNet::<f32>::init(&cfg, 5000, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tokens: Vec<u32> = (0..cfg.max_len).map(|_| rng.gen_range(2..5000)).collect();
    c.bench_function("recurrent_forward_512", |b| b.iter(|| net.probabilities(black_box(&tokens))));
    c.bench_function("recurrent_forward_backward_512", |b| {
        b.iter_batched(
            || net.zeros_like(),
            |mut grad| net.loss_and_grad(black_box(&tokens), 2, 1.0, None, &mut grad),
            BatchSize::LargeInput,
        )
    });

    let corpus = synthetic::generate(ClassCounts([16, 16, 16, 16]), 4);
    let seqs: Vec<_> = corpus.contracts().iter().map(|c| lex_contract(&c.source, "").0).collect();
    let clf = build_recurrent_classifier(&ModelConfig::recurrent(cfg, 1), Vocab::build(&seqs, 50_000, 1)).unwrap();
    let data = EncodedDataset::from_corpus(&clf, &corpus);
    c.bench_function("predict_proba_64", |b| b.iter(|| clf.predict_proba(black_box(&data.inputs)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = preprocessing, splitting, metrics, recurrent
}
criterion_main!(benches);
