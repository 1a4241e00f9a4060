use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uda_core::evaluation::ConfusionMatrix;
use uda_core::kernels::{gemm, im2col, ConvGeom, Mat};
use uda_core::networks::resize_bilinear;
use uda_core::translation_trainer::{TranslationConfig, TranslationTrainer};
use uda_core::{DepthStats, DepthTile, DomainRole, DomainSpec, ImageTile, LabelTile, NetworkConfig, SampleTriple, Tensor};

fn random(n: usize, seed: u64) -> Vec<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn bench_kernels(c: &mut Criterion) {
    // First encoder stage at 256^2 with eight channels.
    let g = ConvGeom::ceil_mode(8, 256, 256, 4, 2, 1, 1);
    let img = random(8 * 256 * 256, 1);
    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
    c.bench_function("im2col 8x256x256 k4 s2", |b| b.iter(|| im2col(black_box(&img), &g, &mut cols)));

    let w = random(16 * g.col_rows(), 2);
    im2col(&img, &g, &mut cols);
    let mut out = vec![0.0; 16 * g.col_cols()];
    c.bench_function("sgemm 16x128 * 128x16384", |b| {
        b.iter(|| {
            gemm(
                Mat::new(black_box(&w), 16, g.col_rows()),
                Mat::new(black_box(&cols), g.col_rows(), g.col_cols()),
                &mut out,
                0.0,
            )
        })
    });

    let x = Tensor::from_vec([1, 3, 448, 448], random(3 * 448 * 448, 3));
    c.bench_function("bilinear 448^2 -> 256^2", |b| b.iter(|| resize_bilinear(black_box(&x), 256, 256)));

    let mut r = ChaCha8Rng::seed_from_u64(4);
    let gt = LabelTile::new(256, 256, (0..256 * 256).map(|_| r.random_range(0..6u8)).collect()).unwrap();
    let pred = LabelTile::new(256, 256, (0..256 * 256).map(|_| r.random_range(0..6u8)).collect()).unwrap();
    c.bench_function("confusion matrix 256^2", |b| {
        b.iter(|| {
            let mut cm = ConfusionMatrix::new(6);
            cm.accumulate(black_box(&pred), black_box(&gt)).unwrap();
            cm
        })
    });
}

fn tiles(name: &str, role: DomainRole, hw: usize, n: usize) -> Vec<SampleTriple> {
    let d = Arc::new(DomainSpec {
        name: name.into(),
        role,
        tile_height: hw,
        tile_width: hw,
        ground_resolution: 5.0,
        class_count: 6,
        depth_stats: DepthStats { min: 0.0, max: 1.0 },
    });
    (0..n)
        .map(|i| SampleTriple {
            tile_id: format!("{name}{i}"),
            domain: Arc::clone(&d),
            image: ImageTile::new(hw, hw, random(hw * hw * 3, 10 + i as u64)).unwrap(),
            label: (role == DomainRole::Source).then(|| LabelTile::new(hw, hw, vec![1; hw * hw]).unwrap()),
            depth: Some(DepthTile::new(hw, hw, vec![0.5; hw * hw]).unwrap()),
            origin: None,
        })
        .collect()
}

fn bench_translation_step(c: &mut Criterion) {
    let source = tiles("s", DomainRole::Source, 112, 4);
    let target = tiles("t", DomainRole::Target, 64, 4);
    let cfg = TranslationConfig {
        steps: u64::MAX,
        network: NetworkConfig::narrowed(8),
        ..TranslationConfig::default()
    };
    let mut tr = TranslationTrainer::new(cfg, &source, &target).unwrap();
    let mut group = c.benchmark_group("translation");
    group.sample_size(10);
    group.bench_function("step 112^2 -> 64^2, widths / 8", |b| b.iter(|| tr.step().unwrap()));
    group.finish();
}

criterion_group!(benches, bench_kernels, bench_translation_step);
criterion_main!(benches);
