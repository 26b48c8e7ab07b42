use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mnd_core::classifier::Classifier;
use mnd_core::losses::{self, AttackMode, LossWeights, NonTargetedForm};
use mnd_core::tape::Tape;
use mnd_core::{Padding, Tensor};

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Tensor::rand_uniform(vec![16, 16, 16], 0.0, 1.0, &mut rng);
    let kernel = Tensor::rand_uniform(vec![32, 16, 3, 3], -0.2, 0.2, &mut rng);
    c.bench_function("conv2d_16x16x16_to_32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.constant(black_box(&img));
            let k = tape.constant(&kernel);
            tape.conv2d(x, k, None, 1, Padding::Replicate).unwrap()
        })
    });
}

fn bench_sobel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Tensor::rand_uniform(vec![3, 32, 32], 0.0, 1.0, &mut rng);
    c.bench_function("sobel_3x32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.constant(black_box(&img));
            losses::sobel(&mut tape, x).unwrap()
        })
    });
}

fn bench_ssim(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Tensor::rand_uniform(vec![3, 32, 32], 0.0, 1.0, &mut rng);
    let b_img = Tensor::rand_uniform(vec![3, 32, 32], 0.0, 1.0, &mut rng);
    c.bench_function("ssim_3x32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let av = tape.constant(black_box(&a));
            let bv = tape.constant(&b_img);
            losses::ssim(&mut tape, av, bv).unwrap()
        })
    });
}

fn bench_attack_iteration(c: &mut Criterion) {
    let classifier = Classifier::build_small_cnn([3, 32, 32], 10, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::rand_uniform(vec![3, 32, 32], 0.0, 1.0, &mut rng);
    let (objective, _, _) = losses::resolve_objective(
        &classifier,
        &x,
        Some(0),
        AttackMode::NonTargeted,
        &LossWeights::default(),
        NonTargetedForm::ProbPlusLogit,
        false,
    )
    .unwrap();
    c.bench_function("mnd_iteration_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let zv = tape.input(black_box(&x), true);
            let out = losses::total_loss(&mut tape, zv, &x, &classifier, &objective).unwrap();
            tape.backward(out.loss).unwrap();
            tape.grad(zv).unwrap()[0]
        })
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_sobel,
    bench_ssim,
    bench_attack_iteration
);
criterion_main!(benches);
