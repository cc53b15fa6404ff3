//! Compares the default (rayon-parallel when the `parallel` feature is on)
//! entry points against their sequential reference siblings on the hot
//! paths: batch loss, batch gradients, and matching evaluation. The two
//! paths return bit-identical results; these benches measure what the
//! parallelism buys.
//!
//! Run with `cargo bench -p voiceface-core`, or
//! `cargo bench -p voiceface-core --no-default-features` to see the
//! sequential core without rayon in the build at all.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use voiceface_core::embedder::{init_embedder, Activation, ModalityPair};
use voiceface_core::evaluation::{
    evaluate_matching, evaluate_matching_seq, MatchingOptions,
};
use voiceface_core::metric::MetricSpaceConfig;
use voiceface_core::sampling::{Sampler, SamplerConfig};
use voiceface_core::synthetic::{generate, GeneratorConfig};
use voiceface_core::training::{
    loss_gradients, loss_gradients_seq, triplet_loss, triplet_loss_seq, Reduction,
};

fn desk_scale_setup() -> (voiceface_core::dataset::Dataset, ModalityPair) {
    let dataset = generate(&GeneratorConfig {
        num_identities: 64,
        voices_per_identity: 8,
        faces_per_identity: 10,
        latent_dim: 16,
        voice_dim: 64,
        face_dim: 64,
        noise_sigma: 0.3,
        seed: 99,
        ..GeneratorConfig::default()
    })
    .expect("generator config is valid");
    let pair = ModalityPair {
        space: MetricSpaceConfig {
            dim: 128,
            scale: 128.0,
        },
        voice: init_embedder(64, &[256], 128, Activation::Rectifier, true, 100).unwrap(),
        face: init_embedder(64, &[256], 128, Activation::Rectifier, false, 101).unwrap(),
    };
    (dataset, pair)
}

fn bench_batch_loss(c: &mut Criterion) {
    let (dataset, pair) = desk_scale_setup();
    let mut sampler = Sampler::new(SamplerConfig {
        seed: 7,
        ..SamplerConfig::default()
    })
    .unwrap();
    let batch = sampler.sample_batch(&dataset).unwrap();

    let mut group = c.benchmark_group("batch_loss");
    group.sample_size(30);
    group.bench_function("parallel", |b| {
        b.iter(|| triplet_loss(black_box(&batch), &pair, 1.0, Reduction::Sum).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| triplet_loss_seq(black_box(&batch), &pair, 1.0, Reduction::Sum).unwrap())
    });
    group.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let (dataset, pair) = desk_scale_setup();
    let mut sampler = Sampler::new(SamplerConfig {
        seed: 8,
        ..SamplerConfig::default()
    })
    .unwrap();
    let batch = sampler.sample_batch(&dataset).unwrap();

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(30);
    group.bench_function("parallel", |b| {
        b.iter(|| loss_gradients(black_box(&batch), &pair, 1.0, Reduction::Sum).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| loss_gradients_seq(black_box(&batch), &pair, 1.0, Reduction::Sum).unwrap())
    });
    group.finish();
}

fn bench_matching(c: &mut Criterion) {
    let (dataset, pair) = desk_scale_setup();
    let opts = MatchingOptions {
        num_instances: 1_000,
        seed: 9,
        ..MatchingOptions::default()
    };

    let mut group = c.benchmark_group("matching_evaluation");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| evaluate_matching(black_box(&dataset), &pair, &opts).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| evaluate_matching_seq(black_box(&dataset), &pair, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_batch_loss, bench_batch_gradients, bench_matching);
criterion_main!(benches);
