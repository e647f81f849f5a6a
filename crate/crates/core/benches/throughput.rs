//! Throughput of the rayon backend against a single-thread pool.
//!
//! Build with `--no-default-features` to measure the plain sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;
use vocspec::dataset::{build_corpus, CorpusRecipe};
use vocspec::discriminator::{train_fold, DiscriminatorArch, DiscriminatorModel};
use vocspec::train::TrainConfig;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out = vec![("1-thread".to_string(), ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if all > 1 {
        out.push((format!("{all}-threads"), ThreadPoolBuilder::new().num_threads(all).build().unwrap()));
    }
    out
}

fn predict(c: &mut Criterion) {
    let corpus = build_corpus(&CorpusRecipe::balanced(20, 1)).unwrap();
    let spectra: Vec<_> = corpus.spectra().iter().collect();
    let model = DiscriminatorModel::new(DiscriminatorArch::standard(), 1).unwrap();
    let mut group = c.benchmark_group("predict_batch_200");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| model.predict_batch(&spectra).unwrap()))
        });
    }
    group.finish();
}

fn train_epoch(c: &mut Criterion) {
    let corpus = build_corpus(&CorpusRecipe::balanced(20, 1)).unwrap();
    let arch = DiscriminatorArch::standard();
    let config = TrainConfig { epochs: 1, patience: 1, seed: 1, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_one_epoch");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| train_fold(&corpus, 0, &arch, &config, None).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, predict, train_epoch);
criterion_main!(benches);
