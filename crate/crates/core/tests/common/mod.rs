//! Synthetic sources and closed-form oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqctx::{Alphabet, Dataset, Read, Sequences, Symbol};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shannon entropy in bits, computed by direct summation.
pub fn h(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

pub fn random_dist(rng: &mut ChaCha8Rng, m: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| floor + rng.gen::<f64>().powi(3)).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|v| v / t).collect()
}

pub fn sample(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Row-stochastic transition matrix `rows[prev][next]`.
pub type Matrix = Vec<Vec<f64>>;

pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    (0..m).map(|_| random_dist(rng, m, 0.02)).collect()
}

/// Stationary distribution by power iteration.
pub fn stationary(t: &Matrix) -> Vec<f64> {
    let m = t.len();
    let mut pi = vec![1.0 / m as f64; m];
    for _ in 0..10_000 {
        let mut next = vec![0.0; m];
        for (i, row) in t.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// `H(X_i | X_{i-1})` of the stationary chain.
pub fn conditional_entropy(t: &Matrix) -> f64 {
    stationary(t).iter().zip(t).map(|(p, row)| p * h(row)).sum()
}

/// Reads drawn from the chain, each starting from the stationary distribution.
pub fn markov_reads(rng: &mut ChaCha8Rng, t: &Matrix, reads: usize, len: usize) -> Vec<Vec<Symbol>> {
    let pi = stationary(t);
    (0..reads)
        .map(|_| {
            let mut x = sample(rng, &pi);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                out.push(x as Symbol);
                x = sample(rng, &t[x]);
            }
            out
        })
        .collect()
}

pub fn markov_sequences(rng: &mut ChaCha8Rng, t: &Matrix, reads: usize, len: usize) -> Sequences {
    Sequences::new(t.len(), markov_reads(rng, t, reads, len))
}

/// Cross-entropy in bits of `seq` under the chain, the first symbol under `first`.
pub fn chain_bits(t: &Matrix, first: &[f64], seq: &[Symbol]) -> f64 {
    seq.iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = if i == 0 { first[x as usize] } else { t[seq[i - 1] as usize][x as usize] };
            -p.log2()
        })
        .sum()
}

/// FASTQ-like dataset with random bases and random-walk qualities in `0..=quality_max`.
pub fn fastq_dataset(rng: &mut ChaCha8Rng, lengths: &[usize], quality_max: u16) -> Dataset {
    let reads = lengths
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            let mut q = rng.gen_range(0..=quality_max) as i32;
            let qualities: Vec<Symbol> = (0..l)
                .map(|_| {
                    q = (q + rng.gen_range(-2..=2)).clamp(0, quality_max as i32);
                    q as Symbol
                })
                .collect();
            Read {
                id: format!("r{r} len={l}"),
                bases: (0..l).map(|_| rng.gen_range(0..4)).collect(),
                qualities: Some(qualities),
            }
        })
        .collect();
    Dataset {
        reads,
        alphabet: Alphabet::bases(),
        quality_alphabet: Some(Alphabet::quality(quality_max)),
        source_path: String::new(),
        substituted: 0,
    }
}

pub fn fasta_dataset(reads: Vec<Vec<Symbol>>) -> Dataset {
    Dataset {
        reads: reads
            .into_iter()
            .enumerate()
            .map(|(r, bases)| Read {
                id: format!("s{r}"),
                bases,
                qualities: None,
            })
            .collect(),
        alphabet: Alphabet::bases(),
        quality_alphabet: None,
        source_path: String::new(),
        substituted: 0,
    }
}

/// Explicit multi-lookup evaluation of a window binning: digits from direct table lookups,
/// counts keyed by the digit tuple, smoothed as `(n_cx + 1/m) / (n_c + 1)`.
pub fn tuple_model_bits(bins: &[seqctx::BinningTable], data: &Sequences) -> (f64, Vec<Vec<Vec<usize>>>) {
    use std::collections::HashMap;
    let m = data.alphabet_size;
    let digits = |seq: &[Symbol], i: usize| -> Vec<usize> {
        (0..bins.len())
            .map(|d| {
                let mut v;
                let from;
                if i > d {
                    v = bins[0].bin(seq[i - 1 - d] as usize);
                    from = 1;
                } else {
                    v = 0;
                    from = d - i + 1;
                }
                for b in &bins[from..=d] {
                    v = b.bin(v);
                }
                v
            })
            .collect()
    };
    let tuples: Vec<Vec<Vec<usize>>> = data
        .reads
        .iter()
        .map(|seq| (0..seq.len()).map(|i| digits(seq, i)).collect())
        .collect();
    let mut counts: HashMap<&[usize], Vec<u64>> = HashMap::new();
    for (seq, ts) in data.reads.iter().zip(&tuples) {
        for (x, t) in seq.iter().zip(ts) {
            counts.entry(t.as_slice()).or_insert_with(|| vec![0; m])[*x as usize] += 1;
        }
    }
    let mut bits = 0.0;
    for (seq, ts) in data.reads.iter().zip(&tuples) {
        for (x, t) in seq.iter().zip(ts) {
            let row = &counts[t.as_slice()];
            let n: u64 = row.iter().sum();
            let p = (row[*x as usize] as f64 + 1.0 / m as f64) / (n as f64 + 1.0);
            bits -= p.log2();
        }
    }
    (bits, tuples)
}
