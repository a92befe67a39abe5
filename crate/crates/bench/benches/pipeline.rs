use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fovea_core::prototypes::RepositoryMetadata;
use fovea_core::toyenc::encode_with_attention;
use fovea_core::tsa::{alignment_gradients, random_matrix, AlignmentState};
use fovea_core::{accumulate_from_support, EnhancementConfig, Enhancer, SuiteConfig};

fn attention_distance(c: &mut Criterion) {
    let suite = SuiteConfig::default();
    let episode = suite.generate(0).unwrap();
    let encoder = suite.encoder().unwrap();
    let (_, dump) = encode_with_attention(episode.query[0].map(0).unwrap(), &encoder).unwrap();
    let mut group = c.benchmark_group("attention_distance");
    group.bench_function("layer_16x16", |b| b.iter(|| black_box(&dump[0]).mean_attention_distance()));
    group.bench_function("encode_16x16", |b| {
        b.iter(|| encode_with_attention(black_box(episode.query[0].map(0).unwrap()), &encoder).unwrap())
    });
    group.finish();
}

fn enhancement(c: &mut Criterion) {
    let suite = SuiteConfig::default();
    let episode = suite.generate(0).unwrap();
    let repo = accumulate_from_support(&episode.support, RepositoryMetadata { seed: 0, shots: 5 }).unwrap();
    let enhancer = Enhancer::new(&repo, EnhancementConfig::default()).unwrap();
    let map = episode.query[0].map(0).unwrap();
    c.bench_function("enhance_map_16x16x16", |b| b.iter(|| enhancer.enhance_map(black_box(map)).unwrap()));
}

fn contrastive(c: &mut Criterion) {
    let mut group = c.benchmark_group("alignment_gradients");
    for n in [8usize, 32] {
        let visual = random_matrix(n, 16, 1);
        let text = random_matrix(n, 64, 2);
        let state = AlignmentState::init(16, 64, 32, 0.1, 1000.0, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| alignment_gradients(black_box(&visual), black_box(&text), &state).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, attention_distance, enhancement, contrastive);
criterion_main!(benches);
