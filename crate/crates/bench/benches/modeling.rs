use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqctx::cluster::kmeans_cluster;
use seqctx::hscm::{build_hcb_transition, train_hcb_binnings, EmissionMode, SoftHscm};
use seqctx::{build_merge_tree, collect_stats, ContextSpec, Sequences, Symbol};

/// Reads from a random-walk source over `m` symbols, loosely shaped like quality strings.
fn walk_reads(m: usize, reads: usize, len: usize, seed: u64) -> Sequences {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let reads = (0..reads)
        .map(|_| {
            let mut x = g.gen_range(0..m) as i64;
            (0..len)
                .map(|_| {
                    x = (x + g.gen_range(-2..=2)).clamp(0, m as i64 - 1);
                    x as Symbol
                })
                .collect()
        })
        .collect();
    Sequences::new(m, reads)
}

fn stats(c: &mut Criterion) {
    let data = walk_reads(41, 2000, 100, 1);
    let mut group = c.benchmark_group("collect_stats");
    group.throughput(Throughput::Elements(data.total_len() as u64));
    for order in [0, 1, 2] {
        group.bench_with_input(BenchmarkId::from_parameter(order), &order, |b, &k| {
            b.iter(|| collect_stats(&data, &ContextSpec::Order(k)).unwrap())
        });
    }
    group.finish();
}

fn merge_tree(c: &mut Criterion) {
    let data = walk_reads(41, 2000, 100, 2);
    let mut group = c.benchmark_group("merge_tree");
    group.sample_size(10);
    for order in [1, 2] {
        let s = collect_stats(&data, &ContextSpec::Order(order)).unwrap();
        group.bench_with_input(BenchmarkId::new("contexts", s.context_count()), &s, |b, s| b.iter(|| build_merge_tree(s).unwrap()));
    }
    group.finish();
}

fn kmeans(c: &mut Criterion) {
    let data = walk_reads(41, 1000, 100, 3);
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    for k in [2, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| kmeans_cluster(&data, &ContextSpec::Order(1), k, 10, 0).unwrap())
        });
    }
    group.finish();
}

fn hcb(c: &mut Criterion) {
    let data = walk_reads(4, 2000, 100, 4);
    let mut group = c.benchmark_group("hcb");
    group.sample_size(10);
    group.bench_function("train_16_16_16", |b| b.iter(|| train_hcb_binnings(&data, &[16, 16, 16]).unwrap()));
    let (chain, _) = train_hcb_binnings(&data, &[16, 16, 16]).unwrap();
    group.bench_function("transition_16_16_16", |b| b.iter(|| build_hcb_transition(&chain, &data).unwrap()));
    group.finish();
}

fn soft(c: &mut Criterion) {
    let data = walk_reads(4, 200, 100, 5);
    let model = SoftHscm::init(8, 4, EmissionMode::Bayes, 0, 0.5).unwrap();
    c.bench_function("soft_gradient_s8", |b| b.iter(|| model.gradient(&data)));
}

criterion_group!(benches, stats, merge_tree, kmeans, hcb, soft);
criterion_main!(benches);
