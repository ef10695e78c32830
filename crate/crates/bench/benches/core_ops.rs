use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use outreg::math::{self, LogitVector, ProbVector};
use outreg::mlp::{self, Architecture};
use outreg::regularizers::{self, RegularizerSpec};
use outreg::trainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, batch: usize, k: usize) -> (Array2<f64>, Vec<usize>) {
    let flat: Vec<f64> = (0..batch * k).map(|_| rng.random_range(-4.0..4.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();
    (Array2::from_shape_vec((batch, k), flat).unwrap(), labels)
}

fn bench_math(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = LogitVector::new((0..10).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
    let p = math::softmax(&z);

    c.bench_function("softmax k=10", |b| b.iter(|| math::softmax(black_box(&z))));
    c.bench_function("entropy_grad_logits k=10", |b| {
        b.iter(|| math::entropy_grad_logits(black_box(&z)))
    });
    c.bench_function("kl_to_uniform k=10", |b| {
        b.iter(|| math::kl_to_uniform(black_box(&p)))
    });
}

fn bench_losses(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (logits, labels) = random_batch(&mut rng, 64, 10);
    let prior = ProbVector::uniform(10).unwrap();

    c.bench_function("nll_loss 64x10", |b| {
        b.iter(|| regularizers::nll_loss(black_box(logits.view()), black_box(&labels)))
    });
    c.bench_function("confidence_penalty_loss 64x10", |b| {
        b.iter(|| {
            regularizers::confidence_penalty_loss(
                black_box(logits.view()),
                black_box(&labels),
                1.0,
            )
        })
    });
    c.bench_function("smoothed_ce_loss 64x10", |b| {
        b.iter(|| {
            regularizers::smoothed_ce_loss(
                black_box(logits.view()),
                black_box(&labels),
                0.1,
                black_box(&prior),
            )
        })
    });
}

fn bench_network(c: &mut Criterion) {
    let arch = Architecture::new(784, vec![1024, 1024], 10).unwrap();
    let params = mlp::init_params(&arch, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Array2::zeros((64, 784));
    for v in x.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    let labels: Vec<usize> = (0..64).map(|_| rng.random_range(0..10)).collect();
    let spec = RegularizerSpec::confidence_penalty(1.0);

    let mut group = c.benchmark_group("mlp 784-1024-1024-10");
    group.sample_size(20);
    group.bench_function("forward_eval batch=64", |b| {
        b.iter(|| mlp::forward_eval(black_box(&params), black_box(x.view())))
    });
    group.bench_function("train_step batch=64", |b| {
        b.iter(|| {
            let (logits, trace) = mlp::forward_train(&params, x.view(), None).unwrap();
            let loss = regularizers::evaluate(&spec, logits.view(), &labels, 0).unwrap();
            let grads = mlp::backward(&trace, &params, loss.grad_logits.view()).unwrap();
            black_box(trainer::global_grad_norm(&grads))
        })
    });
    group.finish();
}

criterion_group!(benches, bench_math, bench_losses, bench_network);
criterion_main!(benches);
