use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gog::corpus::{generate_toy_corpus, ToyConfig};
use gog::model::{round_loss, DecoderMode};
use gog::parallel;
use gog::tensor::Tape;
use gog::train::{evaluate_rounds, Trainer, TrainConfig};

fn trainer() -> Trainer {
    let toy = generate_toy_corpus(&ToyConfig {
        n_dialogs: 4,
        seed: 5,
        ..ToyConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        hidden: 32,
        word_dim: 32,
        heads: 2,
        decoder_mode: DecoderMode::Multi,
        max_epochs: 1,
        eval_every: 0,
        ..TrainConfig::default()
    };
    Trainer::new(cfg, &toy.dialogs, &[]).unwrap()
}

fn loss_and_grad(c: &mut Criterion) {
    let t = trainer();
    let rounds = &t.train[..];
    let work = |r: &_| {
        let mut tape = Tape::new();
        let l = round_loss(&mut tape, &t.store, &t.model, DecoderMode::Multi, r, None).unwrap();
        tape.backward(l.total).unwrap();
    };
    let mut g = c.benchmark_group("round_loss_backward");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("map", rounds.len()), |b| b.iter(|| parallel::map(rounds, work)));
    g.bench_function(BenchmarkId::new("map_seq", rounds.len()), |b| b.iter(|| parallel::map_seq(rounds, work)));
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let t = trainer();
    let rounds = &t.train[..];
    let mut g = c.benchmark_group("evaluate_rounds");
    g.sample_size(10);
    g.bench_function("default_build", |b| {
        b.iter(|| evaluate_rounds(&t.model, &t.store, DecoderMode::Multi, rounds).unwrap())
    });
    g.finish();
}

criterion_group!(benches, loss_and_grad, evaluation);
criterion_main!(benches);
