//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Criterion 11 needs the ERR174310 FASTQ; point `SEQCTX_ERR174310` at it to enable.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqctx::adaptive::{
    default_eta_grid, eta_for_rate, half_life, AdaptiveCdf, AdaptiveCoder, AdaptiveParams,
};
use seqctx::binner::merge_delta;
use seqctx::binner::nested::NestedScheme;
use seqctx::cluster::{header_cost, kmeans_cluster};
use seqctx::container::{
    compress_bytes, decompress_bytes, ClusterPlan, CompressionPlan, FieldPlan, ModelPlan, SelectorCoding, StreamPlans,
};
use seqctx::hscm::{build_hcb_transition, gradient_check, train_hcb_binnings, EmissionMode, SoftHscm};
use seqctx::rans::{self, normalize_weights, PRECISION};
use seqctx::seqio::{parse_fastq, ParseOptions};
use seqctx::{
    build_merge_tree, collect_stats, empirical_bpv, rate, ContextModel, ContextSpec, ContextStats, CutCriterion,
    Field, MergeTree, Sequences, Symbol,
};

/// Measured once with the brute-force partition oracle on the fixed suite below.
const FROZEN_EQUALITY_RATE: f64 = 227.0 / 239.0;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    ensure(start.elapsed() < limit, || format!("took {:.1?}, limit {limit:?}", start.elapsed()))
}

// ---------------------------------------------------------------- criterion 1

fn fuzz_plans(quality_max: u16, seed: u64) -> Vec<CompressionPlan> {
    let sep = |name: &str, model: ModelPlan| CompressionPlan {
        name: name.into(),
        streams: StreamPlans::Separate {
            bases: FieldPlan::new(model.clone()),
            qualities: Some(FieldPlan::new(model)),
        },
    };
    let clustered = |name: &str, model: ModelPlan, k: usize, selector: SelectorCoding| {
        let mut c = ClusterPlan::new(k);
        c.selector = selector;
        c.seed = seed;
        CompressionPlan {
            name: name.into(),
            streams: StreamPlans::Separate {
                bases: FieldPlan::clustered(model.clone(), c),
                qualities: Some(FieldPlan::clustered(model, c)),
            },
        }
    };
    let packed = |name: &str, model: ModelPlan| CompressionPlan {
        name: name.into(),
        streams: StreamPlans::Packed {
            max_score: quality_max,
            plan: FieldPlan::new(model),
        },
    };
    let adaptive = ModelPlan::Adaptive {
        order: 1,
        rate: 4,
        update_period: 16,
    };
    let mut plans = vec![
        sep("order0", ModelPlan::Order(0)),
        sep("order2", ModelPlan::Order(2)),
        sep(
            "binned",
            ModelPlan::Binned {
                order: 1,
                cut: CutCriterion::MaxPenalty(0.01),
            },
        ),
        sep(
            "nested-sym",
            ModelPlan::Nested {
                scheme: NestedScheme::Symmetric,
                target_order: 4,
                budgets: vec![16, 32],
            },
        ),
        sep(
            "nested-asym",
            ModelPlan::Nested {
                scheme: NestedScheme::Asymmetric,
                target_order: 4,
                budgets: vec![16, 4],
            },
        ),
        sep(
            "nested-hier",
            ModelPlan::Nested {
                scheme: NestedScheme::Hierarchical,
                target_order: 4,
                budgets: vec![8, 4],
            },
        ),
        sep("hcb", ModelPlan::Hcb { budgets: vec![8, 4] }),
        sep(
            "hscm",
            ModelPlan::SoftHscm {
                states: 2,
                steps: 2,
                seed,
            },
        ),
        sep("adaptive", adaptive.clone()),
        sep(
            "adaptive-p1",
            ModelPlan::Adaptive {
                order: 0,
                rate: 5,
                update_period: 1,
            },
        ),
        clustered("clustered-flat", ModelPlan::Order(1), 3, SelectorCoding::Flat),
        clustered(
            "clustered-nested",
            ModelPlan::Nested {
                scheme: NestedScheme::Symmetric,
                target_order: 2,
                budgets: vec![8],
            },
            2,
            SelectorCoding::Entropy,
        ),
    ];
    if quality_max == 40 {
        plans.push(packed("packed-adaptive", adaptive));
        plans.push(packed("packed-order1", ModelPlan::Order(1)));
        plans.push(packed(
            "packed-binned",
            ModelPlan::Binned {
                order: 1,
                cut: CutCriterion::MaxBins(12),
            },
        ));
    }
    plans
}

fn fuzz_lengths(g: &mut ChaCha8Rng) -> Vec<usize> {
    let reads = g.gen_range(0..=6);
    (0..reads)
        .map(|_| match g.gen_range(0..6) {
            0 => 0,
            1 => 1,
            2 => g.gen_range(299..=300),
            _ => g.gen_range(0..=300),
        })
        .collect()
}

fn c1_roundtrip() -> Result<String, String> {
    let start = Instant::now();
    let mut g = rng(1);
    let mut runs = 0;
    for i in 0..1000u64 {
        let quality_max = if i % 2 == 0 { 63 } else { 40 };
        let lengths = fuzz_lengths(&mut g);
        let data = fastq_dataset(&mut g, &lengths, quality_max);
        for plan in fuzz_plans(quality_max, i) {
            let bytes = compress_bytes(&data, &plan).map_err(|e| format!("dataset {i} plan {}: {e}", plan.name))?;
            let back = decompress_bytes(&bytes).map_err(|e| format!("dataset {i} plan {}: {e}", plan.name))?;
            ensure(back.reads == data.reads && back.quality_alphabet == data.quality_alphabet, || {
                format!("dataset {i} plan {} did not roundtrip", plan.name)
            })?;
            runs += 1;
        }
    }
    within(Duration::from_secs(300), start)?;
    Ok(format!("{runs} roundtrips over 1000 datasets (alphabets 4/64/164) in {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- criterion 2

fn c2_coder_optimality() -> Result<String, String> {
    let start = Instant::now();
    let mut g = rng(2);
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let m = g.gen_range(2..=256);
        let p = random_dist(&mut g, m, 0.001);
        let symbols: Vec<usize> = (0..n).map(|_| sample(&mut g, &p)).collect();
        let mut table = normalize_weights(&p, PRECISION).map_err(|e| e.to_string())?;
        let ce = rans::model_bits(&symbols, &mut table);
        let payload = rans::encode(&symbols, &mut table).map_err(|e| e.to_string())?;
        let bits = payload.len() as f64 * 8.0;
        let gap = (bits - ce).abs();
        worst = worst.max((gap - 64.0).max(0.0) / n as f64);
        ensure(gap <= 0.01 * n as f64 + 64.0, || format!("instance {inst}: payload {bits} vs cross-entropy {ce}"))?;
        let back = rans::decode(&payload, n, &mut table).map_err(|e| e.to_string())?;
        ensure(back == symbols, || format!("instance {inst} did not roundtrip"))?;
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("worst excess beyond 64 bits: {worst:.2e} bpv"))
}

// ---------------------------------------------------------------- criterion 3

fn random_stats(g: &mut ChaCha8Rng, contexts: usize, m: usize, max_count: u64) -> ContextStats {
    let rows: Vec<Vec<u64>> = (0..contexts)
        .map(|_| {
            let mut row: Vec<u64> = (0..m).map(|_| g.gen_range(0..=max_count)).collect();
            if row.iter().all(|&c| c == 0) {
                row[g.gen_range(0..m)] = 1;
            }
            row
        })
        .collect();
    ContextStats::from_rows(&rows).unwrap()
}

/// Sum of merge costs of internal nodes lying entirely inside one bin.
fn accepted_merge_cost(tree: &MergeTree, bins: &seqctx::BinningTable) -> f64 {
    tree.nodes
        .iter()
        .filter(|n| !n.is_leaf())
        .filter(|n| n.members.iter().all(|&c| bins.bin(c) == bins.bin(n.members[0])))
        .map(|n| n.merge_cost)
        .sum()
}

fn c3_merge_cost() -> Result<String, String> {
    let mut g = rng(3);
    for i in 0..10_000 {
        let m = g.gen_range(2..=8);
        let (ds, dr) = (random_dist(&mut g, m, 0.0), random_dist(&mut g, m, 0.0));
        let (ps, pr) = (g.gen::<f64>(), g.gen::<f64>());
        let d = merge_delta(ps, &ds, pr, &dr);
        ensure(d >= 0.0, || format!("pair {i}: delta {d}"))?;
    }
    let mut worst: f64 = 0.0;
    let mut cuts = 0;
    for t in 0..100 {
        let (contexts, m) = (g.gen_range(2..=40), g.gen_range(2..=6));
        let stats = random_stats(&mut g, contexts, m, 30);
        let full = rate(&stats).unwrap().bpv;
        let tree = build_merge_tree(&stats).unwrap();
        for k in 1..=tree.leaf_count {
            let cut = tree.cut(CutCriterion::MaxBins(k));
            let binned = rate(&stats.rebin(&cut).unwrap()).unwrap().bpv;
            let accepted = accepted_merge_cost(&tree, &cut);
            let err = (binned - (full + accepted)).abs().max((cut.penalty_bpv() - accepted).abs());
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("table {t}, {k} bins: telescoping error {err}"))?;
            cuts += 1;
        }
    }
    Ok(format!("10^4 deltas non-negative; {cuts} cuts telescope, worst error {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 4

/// Every set partition of `0..n` as a block label per element.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<usize>, blocks: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=blocks {
            cur.push(b);
            rec(i + 1, n, cur, blocks.max(b + 1), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, &mut Vec::new(), 0, &mut out);
    out
}

/// `sum_c p_c H(P_c)` by direct summation over count rows.
fn rate_of(rows: &[Vec<f64>], total: f64) -> f64 {
    rows.iter()
        .map(|r| {
            let n: f64 = r.iter().sum();
            if n == 0.0 {
                0.0
            } else {
                n / total * h(&r.iter().map(|c| c / n).collect::<Vec<_>>())
            }
        })
        .sum()
}

fn partition_penalty(rows: &[Vec<f64>], labels: &[usize], total: f64) -> f64 {
    let blocks = labels.iter().max().map_or(0, |b| b + 1);
    let m = rows[0].len();
    let mut pooled = vec![vec![0.0; m]; blocks];
    for (row, &b) in rows.iter().zip(labels) {
        pooled[b].iter_mut().zip(row).for_each(|(a, c)| *a += c);
    }
    rate_of(&pooled, total) - rate_of(rows, total)
}

fn c4_binning_oracle() -> Result<String, String> {
    let mut g = rng(4);
    let (mut cases, mut equal) = (0usize, 0usize);
    for t in 0..100 {
        let n = g.gen_range(3..=6);
        let m = g.gen_range(2..=3);
        let stats = random_stats(&mut g, n, m, 12);
        let rows: Vec<Vec<f64>> = (0..n).map(|c| stats.row(c).iter().map(|&v| v as f64).collect()).collect();
        let total: f64 = rows.iter().flatten().sum();
        let tree = build_merge_tree(&stats).unwrap();

        // step 1 equals the global pairwise argmin
        let mut best_pair = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let mut labels: Vec<usize> = (0..n).map(|c| if c < b { c } else { c - 1 }).collect();
                labels[b] = a;
                best_pair = best_pair.min(partition_penalty(&rows, &labels, total));
            }
        }
        let first = tree.nodes.iter().find(|x| !x.is_leaf()).unwrap();
        ensure((first.merge_cost - best_pair).abs() <= 1e-12, || {
            format!("table {t}: first merge {} vs pairwise argmin {best_pair}", first.merge_cost)
        })?;

        let parts = partitions(n);
        for k in 2..n {
            let opt = parts
                .iter()
                .filter(|p| p.iter().max().unwrap() + 1 == k)
                .map(|p| partition_penalty(&rows, p, total))
                .fold(f64::INFINITY, f64::min);
            let cut = tree.cut(CutCriterion::MaxBins(k));
            let labels: Vec<usize> = (0..n).map(|c| cut.bin(c)).collect();
            let greedy = partition_penalty(&rows, &labels, total);
            ensure(greedy >= opt - 1e-12, || format!("table {t}, k={k}: greedy {greedy} below optimum {opt}"))?;
            cases += 1;
            if greedy - opt <= 1e-12 {
                equal += 1;
            }
        }
    }
    let frac = equal as f64 / cases as f64;
    ensure(frac >= 0.60, || format!("greedy optimal in {frac:.3} of cases, below 0.60"))?;
    ensure(frac >= FROZEN_EQUALITY_RATE, || {
        format!("greedy optimal in {frac:.3} of cases, below frozen {FROZEN_EQUALITY_RATE}")
    })?;
    Ok(format!("greedy k-cut optimal in {equal}/{cases} = {frac:.3} of cases; never below optimum"))
}

// ---------------------------------------------------------------- criterion 5

fn c5_markov_recovery() -> Result<String, String> {
    let start = Instant::now();
    let mut g = rng(5);
    let m = 4;
    let t = random_matrix(&mut g, m);
    let data = markov_sequences(&mut g, &t, 1000, 1000);
    let hc = conditional_entropy(&t);
    let full = empirical_bpv(&data, &ContextModel::fit(&data, ContextSpec::Order(1)).unwrap()).unwrap();
    ensure((full - hc).abs() <= 0.01, || format!("order-1 model {full} vs entropy {hc}"))?;
    let stats = collect_stats(&data, &ContextSpec::Order(2)).unwrap();
    let cut = build_merge_tree(&stats).unwrap().cut(CutCriterion::MaxBins(m));
    let binned_spec = ContextSpec::binned(ContextSpec::Order(2), cut);
    let binned = empirical_bpv(&data, &ContextModel::fit(&data, binned_spec).unwrap()).unwrap();
    ensure((binned - hc).abs() <= 0.02, || format!("binned model {binned} vs entropy {hc}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("entropy {hc:.4}; order-1 {full:.4}; order-2 binned to {m} states {binned:.4}"))
}

// ---------------------------------------------------------------- criterion 6

fn c6_hcb_fidelity() -> Result<String, String> {
    let mut g = rng(6);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let m = g.gen_range(2..=6);
        let levels = g.gen_range(1..=3);
        let budgets: Vec<usize> = (0..levels).map(|_| g.gen_range(1..=8)).collect();
        let t = random_matrix(&mut g, m);
        let (count, len) = (g.gen_range(1..20), g.gen_range(1..200));
        let train = markov_sequences(&mut g, &t, count, len);
        let other = Sequences::new(m, (0..5).map(|_| (0..g.gen_range(0..100)).map(|_| g.gen_range(0..m as Symbol)).collect()).collect());
        let (chain, _) = train_hcb_binnings(&train, &budgets).unwrap();
        let table = build_hcb_transition(&chain, &train).unwrap();
        let (bits, _) = tuple_model_bits(chain.binnings(), &train);
        let err_train = (empirical_bpv(&train, &table).unwrap() - bits / train.total_len() as f64).abs();
        let explicit = ContextModel::fit(&train, ContextSpec::HcbWindow(chain.into())).unwrap();
        let err_other = if other.total_len() > 0 {
            (empirical_bpv(&other, &table).unwrap() - empirical_bpv(&other, &explicit).unwrap()).abs()
        } else {
            0.0
        };
        let err = err_train.max(err_other);
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("instance {inst} budgets {budgets:?}: difference {err}"))?;
    }
    Ok(format!("100 instances, worst difference {worst:.1e} bpv"))
}

// ---------------------------------------------------------------- criterion 7

fn c7_kmeans() -> Result<String, String> {
    let start = Instant::now();
    let mut g = rng(7);
    for run in 0..50u64 {
        let m = g.gen_range(2..=4);
        let pops = g.gen_range(1..=3);
        let mut reads = Vec::new();
        for _ in 0..pops {
            let t = random_matrix(&mut g, m);
            let (count, len) = (g.gen_range(5..40), g.gen_range(10..120));
            reads.extend(markov_reads(&mut g, &t, count, len));
        }
        let data = Sequences::new(m, reads);
        let k = g.gen_range(1..=5).min(data.reads.len());
        let set = kmeans_cluster(&data, &ContextSpec::Order(1), k, 50, run).unwrap();
        for w in set.history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-6), || format!("run {run}: total bits rose {} -> {}", w[0], w[1]))?;
        }
    }
    let a = vec![vec![0.85, 0.05, 0.05, 0.05], vec![0.7, 0.1, 0.1, 0.1], vec![0.6, 0.2, 0.1, 0.1], vec![0.7, 0.1, 0.1, 0.1]];
    let b = vec![vec![0.1, 0.1, 0.1, 0.7], vec![0.05, 0.05, 0.2, 0.7], vec![0.1, 0.1, 0.1, 0.7], vec![0.05, 0.05, 0.05, 0.85]];
    let mut reads = markov_reads(&mut g, &a, 500, 100);
    reads.extend(markov_reads(&mut g, &b, 500, 100));
    let data = Sequences::new(4, reads);
    let set = kmeans_cluster(&data, &ContextSpec::Order(1), 2, 50, 0).unwrap();
    let same = (0..1000).filter(|&r| set.assignment[r] == r / 500).count();
    let purity = same.max(1000 - same) as f64 / 1000.0;
    ensure(purity >= 0.99, || format!("purity {purity}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("50 runs non-increasing; two-population purity {purity:.3}"))
}

// ---------------------------------------------------------------- criterion 8

fn c8_header_cost() -> Result<String, String> {
    let mut g = rng(8);
    for _ in 0..200 {
        let k = g.gen_range(2..=64);
        let reads = g.gen_range(1..500);
        let n = reads * g.gen_range(1..200);
        let assignment: Vec<usize> = (0..reads).map(|_| g.gen_range(0..k)).collect();
        let c = header_cost(k, &assignment, n);
        let bits = c.flat_bpv * n as f64;
        let exact = (k as f64).log2() * reads as f64;
        ensure((bits - exact).abs() <= 1e-9 * exact.max(1.0), || format!("k={k}: {bits} vs {exact}"))?;
    }
    let c = header_cost(4, &vec![0; 1000], 101 * 1000);
    ensure((c.flat_bpv - 2.0 / 101.0).abs() < 1e-15, || format!("{}", c.flat_bpv))?;
    ensure((0.01..=0.04).contains(&c.flat_bpv), || format!("{} outside 0.01..0.04", c.flat_bpv))?;

    // the flat selector stream of an archive costs lg(k) bits per read
    let lengths = vec![101; 400];
    let data = fastq_dataset(&mut g, &lengths, 40);
    let mut cp = ClusterPlan::new(4);
    cp.selector = SelectorCoding::Flat;
    let plan = CompressionPlan {
        name: "k4".into(),
        streams: StreamPlans::Separate {
            bases: FieldPlan::new(ModelPlan::Order(0)),
            qualities: Some(FieldPlan::clustered(ModelPlan::Order(1), cp)),
        },
    };
    let archive = seqctx::container::compress(&data, &plan).unwrap();
    let costs = seqctx::container::stream_costs(&archive, &data).unwrap();
    let sel = archive
        .streams
        .iter()
        .position(|(k, _)| *k == seqctx::container::StreamKind::Selectors)
        .ok_or("no selector stream")?;
    ensure((costs[sel] - 2.0 * 400.0).abs() < 1e-9, || format!("selector model cost {}", costs[sel]))?;
    let payload_bits = archive.streams[sel].1.len() as f64 * 8.0;
    ensure(payload_bits <= 800.0 + 64.0, || format!("selector payload {payload_bits} bits"))?;
    Ok(format!("flat cost lg(k) per read; k=4, length 101: {:.4} bpv", c.flat_bpv))
}

// ---------------------------------------------------------------- criterion 9

fn c9_gradient() -> Result<String, String> {
    let mut g = rng(9);
    let mut worst: f64 = 0.0;
    for point in 0..20u64 {
        let seq: Vec<Symbol> = (0..20).map(|_| g.gen_range(0..2)).collect();
        let data = Sequences::single(2, seq);
        for mode in [EmissionMode::Bayes, EmissionMode::Explicit] {
            let model = SoftHscm::init(3, 2, mode, point, 1.5).unwrap();
            let err = gradient_check(&model, &data, 1e-5);
            worst = worst.max(err);
            ensure(err < 1e-4, || format!("point {point} {mode:?}: relative error {err}"))?;
        }
    }
    Ok(format!("20 points, both emission modes, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 10

fn cdf_valid(c: &[u32], total: u32) -> bool {
    c[0] == 0 && *c.last().unwrap() == total && c.windows(2).all(|w| w[1] >= w[0] + 1)
}

fn c10_adaptive() -> Result<String, String> {
    for eta in default_eta_grid() {
        let e = (eta.powf(half_life(eta)) - 0.5).abs();
        ensure(e <= 1e-9, || format!("eta {eta}: identity error {e}"))?;
    }
    let mu = half_life(eta_for_rate(8));
    ensure((mu - 177.0).abs() <= 0.5, || format!("rate 8 half-life {mu}"))?;

    let mut g = rng(10);
    let mut updates = 0;
    while updates < 100_000 {
        let m = g.gen_range(2..=64);
        let params = AdaptiveParams {
            rate: g.gen_range(1..=12),
            precision: PRECISION,
            update_period: [1, 2, 16, 33][g.gen_range(0..4)],
        };
        let contexts = g.gen_range(1..=4);
        let mut cdf = AdaptiveCdf::new(m, contexts, params).unwrap();
        let skew = g.gen_range(0..m);
        for _ in 0..5000 {
            let ctx = g.gen_range(0..contexts);
            let s = if g.gen_bool(0.7) { skew } else { g.gen_range(0..m) };
            cdf.update(ctx, s);
            ensure(cdf_valid(cdf.cdf(ctx), 1 << PRECISION), || format!("invalid cdf after update {updates}"))?;
            updates += 1;
        }
    }

    // decoder-side state mirrors the encoder at every step, then a full rANS roundtrip
    for period in [1, 16] {
        let params = AdaptiveParams {
            update_period: period,
            ..AdaptiveParams::default()
        };
        let m = 6;
        let symbols: Vec<usize> = (0..10_000).map(|i| if g.gen_bool(0.6) { (i / 700) % m } else { g.gen_range(0..m) }).collect();
        let (mut enc, mut dec) = (AdaptiveCdf::new(m, m, params).unwrap(), AdaptiveCdf::new(m, m, params).unwrap());
        let mut prev = 0;
        for (i, &s) in symbols.iter().enumerate() {
            let c = enc.cdf(prev);
            let slot = g.gen_range(c[s]..c[s + 1]);
            let d = dec.cdf(prev);
            let decoded = (0..m).find(|&j| d[j] <= slot && slot < d[j + 1]).unwrap();
            ensure(decoded == s, || format!("period {period}: step {i} decoded {decoded}, sent {s}"))?;
            enc.update(prev, s);
            dec.update(prev, decoded);
            ensure(enc == dec, || format!("period {period}: states diverged at step {i}"))?;
            prev = s;
        }
        let lengths = [symbols.len()];
        let payload = rans::encode(&symbols, &mut AdaptiveCoder::new(m, 1, params, &lengths).unwrap()).unwrap();
        let back = rans::decode(&payload, symbols.len(), &mut AdaptiveCoder::new(m, 1, params, &lengths).unwrap());
        ensure(back.is_ok_and(|b| b == symbols), || format!("period {period}: rANS roundtrip failed"))?;
    }
    Ok(format!("half-life identity on grid; rate 8 -> {mu:.2}; {updates} fuzzed updates valid; coder states mirror"))
}

// ---------------------------------------------------------------- criterion 11

const DATASET_ENV: &str = "SEQCTX_ERR174310";

fn c11_reference_data() -> Option<Result<String, String>> {
    let path = std::env::var_os(DATASET_ENV)?;
    Some((|| {
        let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
        // first 10^6 records
        let mut end = 0;
        let mut lines = 0;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'\n' {
                lines += 1;
                if lines == 4_000_000 {
                    end = i + 1;
                    break;
                }
            }
        }
        let slice = if end == 0 { &bytes[..] } else { &bytes[..end] };
        let data = parse_fastq(slice, &ParseOptions::default()).map_err(|e| e.to_string())?;
        let q = data.field(Field::Qualities).map_err(|e| e.to_string())?;
        let stats1 = collect_stats(&q, &ContextSpec::Order(1)).map_err(|e| e.to_string())?;
        let full = rate(&stats1).unwrap().bpv;
        let order0 = rate(&collect_stats(&q, &ContextSpec::Order(0)).unwrap()).unwrap().bpv;
        let bins = build_merge_tree(&stats1).unwrap().cut(CutCriterion::MaxPenalty(0.01)).n_bins();
        let summary = format!("{} reads: order-1 {full:.3}, order-0 {order0:.3}, {bins} bins at 0.01", data.reads.len());
        ensure((full - 2.44).abs() <= 0.05, || format!("{summary}; order-1 off"))?;
        ensure((order0 - 3.60).abs() <= 0.05, || format!("{summary}; order-0 off"))?;
        ensure((bins as i64 - 17).abs() <= 3, || format!("{summary}; bin count off"))?;
        Ok(summary)
    })())
}

fn main() {
    let criteria: [(u32, &str, Check); 10] = [
        (1, "roundtrip identity", c1_roundtrip),
        (2, "coder entropy optimality", c2_coder_optimality),
        (3, "merge-cost correctness", c3_merge_cost),
        (4, "small-instance binning oracle", c4_binning_oracle),
        (5, "synthetic Markov recovery", c5_markov_recovery),
        (6, "nested-binning fidelity", c6_hcb_fidelity),
        (7, "k-means descent", c7_kmeans),
        (8, "header cost", c8_header_cost),
        (9, "gradient check", c9_gradient),
        (10, "adaptive model", c10_adaptive),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    match c11_reference_data() {
        None => println!("criterion 11 SKIP  reference-dataset figures: set {DATASET_ENV} to the ERR174310 FASTQ"),
        Some(Ok(detail)) => println!("criterion 11 PASS  reference-dataset figures: {detail}"),
        Some(Err(detail)) => {
            failed += 1;
            println!("criterion 11 FAIL  reference-dataset figures: {detail}");
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all binding criteria passed");
}
