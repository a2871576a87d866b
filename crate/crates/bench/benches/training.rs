use criterion::{criterion_group, criterion_main, Criterion};
use lmmd_align::nets::{EncoderParams, EncoderSpec};
use lmmd_align::synth::{default_benchmark, generate_balanced};
use lmmd_align::trainer::{train_da, LabeledDomain, TrainConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn encoder(c: &mut Criterion) {
    let enc = EncoderParams::init(&EncoderSpec::default(), 0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_simple_fn((128, enc.input_dim()), || StandardNormal.sample(&mut r));
    let grad = Array2::from_elem((128, enc.output_dim()), 0.01);
    c.bench_function("encoder_forward_128", |b| b.iter(|| enc.forward(x.view()).unwrap().0));
    c.bench_function("encoder_forward_backward_128", |b| {
        b.iter(|| {
            let (_, cache) = enc.forward(x.view()).unwrap();
            enc.backward(&cache, grad.view()).unwrap()
        })
    });
}

fn short_adaptation(c: &mut Criterion) {
    let specs = default_benchmark(0);
    let src = LabeledDomain::from_samples(&generate_balanced(&specs[0], 300, 1).unwrap()).unwrap();
    let tgt = LabeledDomain::from_samples(&generate_balanced(&specs[4], 300, 2).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::da(0) };
    let (enc, head) = cfg.init_models(8, 2).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("train_da_2_epochs", |b| {
        b.iter(|| {
            train_da(&cfg, std::slice::from_ref(&src), &tgt.unlabeled().stripped(), enc.clone(), head.clone())
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, encoder, short_adaptation);
criterion_main!(benches);
