use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varigen_bench::{codebook, image, latents, points, scores};
use varigen_core::detector::{auroc, build_bank, k_center_greedy, score_image, ToyBackbone};
use varigen_core::quality::ssim;
use varigen_core::vq::nn::{Conv2d, Tensor3};
use varigen_core::vq::{quantize, Generator, GeneratorConfig};

fn vq(c: &mut Criterion) {
    let z = latents(64, 16, 1);
    let book = codebook(64, 16, 2);
    c.bench_function("quantize 8x8 grid, K=64", |b| b.iter(|| quantize(black_box(&z), &book).unwrap()));

    let g = Generator::new(GeneratorConfig::default()).unwrap();
    let img = image(64, 3);
    c.bench_function("encode 64px", |b| b.iter(|| g.encode(black_box(&img)).unwrap()));
    let q = g.encode_quantized(&img).unwrap();
    c.bench_function("decode 64px", |b| b.iter(|| g.decode(black_box(&q)).unwrap()));
}

fn conv(c: &mut Criterion) {
    let layer = Conv2d::new(16, 32, 3, 2, 1, &mut ChaCha8Rng::seed_from_u64(4));
    let mut input = Tensor3::zeros(16, 32, 32);
    input.data = points(16 * 32 * 32, 1, 5);
    c.bench_function("conv3x3 16->32 stride 2 on 32px", |b| b.iter(|| layer.forward(black_box(&input))));
}

fn detector(c: &mut Criterion) {
    let (s, l) = scores(10_000, 6);
    c.bench_function("auroc n=10000", |b| b.iter(|| auroc(black_box(&s), &l).unwrap()));

    let p = points(2_000, 12, 7);
    c.bench_function("k-center 200 of 2000 (d=12)", |b| {
        b.iter(|| k_center_greedy(black_box(&p), 12, 200, &mut ChaCha8Rng::seed_from_u64(8)))
    });

    let bb = ToyBackbone::default();
    let train: Vec<_> = (0..5).map(|i| image(64, 10 + i)).collect();
    let bank = build_bank(&train, &[], 0.1, &bb, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let test = image(64, 20);
    c.bench_function("score 64px image", |b| b.iter(|| score_image(black_box(&test), &bank, &bb).unwrap()));
}

fn quality(c: &mut Criterion) {
    let (a, b2) = (image(64, 30), image(64, 31));
    c.bench_function("ssim 64px", |b| b.iter(|| ssim(black_box(&a), &b2).unwrap()));
}

criterion_group!(benches, vq, conv, detector, quality);
criterion_main!(benches);
