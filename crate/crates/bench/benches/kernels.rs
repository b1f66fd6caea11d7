use std::hint::black_box;

use avfuse::annotation::{s_r, CrossCheckSet};
use avfuse::attention::{sa_block, BlockParams, Window};
use avfuse::features::{mfcc, MfccConfig};
use avfuse::model::{AvModel, ModelConfig};
use avfuse::{ParamStore, Tape};
use avfuse_bench::{annotation_records, model_input, noise_track, random_tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let (a, b) = (random_tensor(&[n, n], 1), random_tensor(&[n, n], 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::<f32>::new();
                let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
                black_box(tape.matmul(x, y).unwrap());
            })
        });
    }
    g.finish();
}

fn attention_block(c: &mut Criterion) {
    let mut ps = ParamStore::<f32>::new();
    let p = BlockParams::new(&mut ps, "b", 32, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut g = c.benchmark_group("sa_block");
    for s in [4, 16, 64] {
        let x = random_tensor(&[s, 32], 3);
        g.bench_with_input(BenchmarkId::new("forward_backward", s), &s, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::with_params(&ps);
                let xv = tape.constant(x.clone());
                let y = sa_block(&mut tape, xv, Window::band(1), &p).unwrap();
                let l = tape.sum_all(y).unwrap();
                black_box(tape.backward(l).unwrap());
            })
        });
    }
    g.finish();
}

fn mfcc_extraction(c: &mut Criterion) {
    let cfg = MfccConfig::default();
    let track = noise_track(44_100, 4);
    c.bench_function("mfcc_1s_44k", |b| b.iter(|| black_box(mfcc(&track, &cfg).unwrap())));
}

fn model_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let (model, ps) = AvModel::build::<f32>(&cfg).unwrap();
    let input = model_input(&cfg, 5);
    c.bench_function("model_forward_clip", |b| {
        b.iter(|| {
            let mut tape = Tape::with_params(&ps);
            black_box(model.forward_batch(&mut tape, std::slice::from_ref(&input)).unwrap());
        })
    });
}

fn consistency(c: &mut Criterion) {
    let records = annotation_records(100, 6);
    c.bench_function("s_r_900_records", |b| {
        b.iter(|| {
            let cc = CrossCheckSet::from_records(&records).unwrap();
            black_box(s_r(&cc).unwrap())
        })
    });
}

criterion_group!(benches, matmul, attention_block, mfcc_extraction, model_forward, consistency);
criterion_main!(benches);
