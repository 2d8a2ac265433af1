//! Benchmarks for the stages that dominate experiment wall time: the CNN
//! forward pass, dense SIFT extraction, codebook fitting and encoding,
//! and the SVM solver.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use texbench_core::codebook::{gmm_fit_em, kmeans_fit};
use texbench_core::dataset::{generate_synthetic, ImagePatch, SyntheticSpec};
use texbench_core::encode::{encode_bovw, encode_fisher, encode_vlad};
use texbench_core::net::{forward, ops, parse_arch, seeded_weights, Tensor};
use texbench_core::rng::SplitMix64;
use texbench_core::sift::{extract_dense_sift, DenseSamplingSpec};
use texbench_core::svm::{train_binary, SvmTrainConfig};

fn random_vecs(rng: &mut SplitMix64, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.next_f32()).collect())
        .collect()
}

fn texture_patch(seed: u64, size: u32) -> ImagePatch {
    let spec = SyntheticSpec {
        size_range: [size, size],
        ..SyntheticSpec::with_defaults(2, 1, seed)
    };
    generate_synthetic(&spec).unwrap().patches()[0].clone()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let input = Tensor::new(
        vec![8, 16, 16],
        (0..8 * 16 * 16).map(|_| rng.next_f32() - 0.5).collect(),
    )
    .unwrap();
    let kernel = Tensor::new(
        vec![16, 8, 3, 3],
        (0..16 * 8 * 9).map(|_| rng.next_f32() - 0.5).collect(),
    )
    .unwrap();
    let bias = vec![0.1f32; 16];
    c.bench_function("conv2d 8x16x16 -> 16 filters 3x3", |b| {
        b.iter(|| ops::conv2d(black_box(&input), &kernel, &bias, 1, 1, 1).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let text = std::fs::read_to_string(
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../arch/smallnet.arch"),
    )
    .unwrap();
    let graph = parse_arch(&text, "smallnet").unwrap();
    let weights = seeded_weights(&graph, 3);
    let mut rng = SplitMix64::new(2);
    let input = Tensor::new(
        vec![3, 64, 64],
        (0..3 * 64 * 64).map(|_| rng.next_f32() * 2.0 - 1.0).collect(),
    )
    .unwrap();
    c.bench_function("smallnet forward 64x64", |b| {
        b.iter(|| forward(black_box(&graph), &weights, &input).unwrap())
    });
}

fn bench_sift(c: &mut Criterion) {
    let patch = texture_patch(5, 300);
    let spec = DenseSamplingSpec {
        step: 20,
        patch_sizes: vec![24],
        boundary_margin: 16,
    };
    c.bench_function("dense sift 300px patch", |b| {
        b.iter(|| extract_dense_sift(black_box(&patch), &spec))
    });
}

fn bench_codebooks(c: &mut Criterion) {
    let mut rng = SplitMix64::new(7);
    let descs = random_vecs(&mut rng, 1500, 128);
    c.bench_function("kmeans 1500x128 k=64 (10 iters)", |b| {
        b.iter(|| kmeans_fit(black_box(&descs), 64, 1, 10, 1e-3).unwrap())
    });
    c.bench_function("gmm em 1500x128 k=16 (10 iters)", |b| {
        b.iter(|| gmm_fit_em(black_box(&descs), 16, 1, 10, 1e-4, 1e-4).unwrap())
    });
}

fn bench_encoders(c: &mut Criterion) {
    let mut rng = SplitMix64::new(9);
    let descs = random_vecs(&mut rng, 300, 128);
    let train = random_vecs(&mut rng, 1000, 128);
    let book = kmeans_fit(&train, 64, 2, 10, 1e-3).unwrap();
    let gmm = gmm_fit_em(&train, 16, 2, 10, 1e-4, 1e-4).unwrap();
    c.bench_function("bovw encode 300 descriptors k=64", |b| {
        b.iter(|| encode_bovw(&book, black_box(&descs)).unwrap())
    });
    c.bench_function("vlad encode 300 descriptors k=64", |b| {
        b.iter(|| encode_vlad(&book, black_box(&descs)).unwrap())
    });
    c.bench_function("fisher encode 300 descriptors k=16", |b| {
        b.iter(|| encode_fisher(&gmm, black_box(&descs)).unwrap())
    });
}

fn bench_svm(c: &mut Criterion) {
    let mut rng = SplitMix64::new(11);
    let n = 80;
    let dim = 4096;
    let features: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let offset = if i % 2 == 0 { 0.2 } else { -0.2 };
            (0..dim).map(|_| rng.next_f32() - 0.5 + offset).collect()
        })
        .collect();
    let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    let config = SvmTrainConfig {
        c: 1.0,
        tolerance: 0.1,
        max_iter: 200,
        seed: 0,
    };
    c.bench_function("svm train 80x4096", |b| {
        b.iter_batched(
            || (features.clone(), labels.clone()),
            |(f, l)| train_binary(black_box(&f), &l, &config).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(
    benches,
    bench_conv,
    bench_forward,
    bench_sift,
    bench_codebooks,
    bench_encoders,
    bench_svm
);
criterion_main!(benches);
