//! Benchmarks comparing the data-parallel evaluation paths against the
//! sequential fallback. `Parallelism::Auto` uses rayon (the `parallel`
//! feature, on by default, honoring FRAMEFUSE_THREADS);
//! `Parallelism::Sequential` is the plain-iterator reference the
//! results must match bit-for-bit.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framefuse::calculator::{Calculator, CalculatorConfig, GateSpec};
use framefuse::data::{synth_dataset, SynthConfig};
use framefuse::exec::Parallelism;
use framefuse::gates::InitMode;
use framefuse::retrieval::{rank_metrics, similarity_matrix, SimilarityMatrix};
use framefuse::tensor::Matrix;

const MODES: [(&str, Parallelism); 2] = [
    ("parallel", Parallelism::Auto),
    ("sequential", Parallelism::Sequential),
];

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn bench_similarity_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity_matrix");
    for size in [128usize, 512] {
        let texts = random_matrix(size, 512, 1);
        let videos = random_matrix(size, 512, 2);
        for (label, mode) in MODES {
            group.bench_with_input(
                BenchmarkId::new(label, size),
                &(texts.clone(), videos.clone()),
                |b, (t, v)| {
                    b.iter(|| {
                        let s = similarity_matrix(black_box(t), black_box(v), true, mode).unwrap();
                        black_box(s.scores.get(0, 0))
                    })
                },
            );
        }
    }
    group.finish();
}

fn bench_rank_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_metrics");
    for size in [256usize, 1024] {
        let scores = SimilarityMatrix {
            scores: random_matrix(size, size, 3),
        };
        let gt: Vec<usize> = (0..size).collect();
        for (label, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(label, size), &scores, |b, s| {
                b.iter(|| black_box(rank_metrics(black_box(s), &gt, mode).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_calculator_eval(c: &mut Criterion) {
    let dataset = synth_dataset(&SynthConfig {
        pairs: 64,
        dim: 32,
        frames_min: 8,
        frames_max: 16,
        separation: 2.0,
        noise: 0.4,
        irrelevant_frac: 0.25,
        seed: 11,
    })
    .unwrap();
    let texts = dataset.caption_matrix().unwrap();
    let items = dataset.padded_frames(12).unwrap();

    let hybrid = Calculator::init(
        &CalculatorConfig::ExcitationAndAggregation {
            excitation: GateSpec::squeeze(4),
            aggregation: GateSpec::squeeze(4),
        },
        12,
        32,
        InitMode::ScaledUniform { seed: 12 },
    )
    .unwrap();

    let mut group = c.benchmark_group("hybrid_similarity_64x64");
    for (label, mode) in MODES {
        group.bench_function(label, |b| {
            b.iter(|| {
                black_box(
                    hybrid
                        .similarity(black_box(&texts), black_box(&items), true, mode)
                        .unwrap(),
                )
            })
        });
    }
    group.finish();

    let tight = Calculator::init(
        &CalculatorConfig::Tight {
            layers: 1,
            heads: 4,
            pre_excitation: Some(GateSpec::squeeze(4)),
        },
        12,
        32,
        InitMode::ScaledUniform { seed: 13 },
    )
    .unwrap();
    // Tight cross-encodes every pair; keep the grid small.
    let small_texts = Matrix::new(8, 32, texts.data()[..8 * 32].to_vec()).unwrap();
    let small_items = &items[..8];

    let mut group = c.benchmark_group("tight_similarity_8x8");
    group.sample_size(20);
    for (label, mode) in MODES {
        group.bench_function(label, |b| {
            b.iter(|| {
                black_box(
                    tight
                        .similarity(black_box(&small_texts), black_box(small_items), true, mode)
                        .unwrap(),
                )
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_similarity_matrix,
    bench_rank_metrics,
    bench_calculator_eval
);
criterion_main!(benches);
