//! k-means over per-read context models, with coding cost in bits as the distance.

use crate::ctxstats::{entropy_unchecked, sequence_bits, ContextModel, ContextSpec, ContextStats};
use crate::error::{invalid, Error, Result};
use crate::seqio::{Sequences, Symbol};
use crate::wire::{ByteReader, ByteWriter};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_MAX_ITER: usize = 50;
/// Relative improvement below which iteration stops.
pub const REL_TOL: f64 = 1e-6;

/// Bits to code `read` with `model` (start positions use the model's start tables).
pub fn read_model_cost(read: &[Symbol], model: &ContextModel) -> Result<f64> {
    sequence_bits(model, read, 0)
}

#[derive(Debug, Clone)]
pub struct ModelSet {
    pub spec: ContextSpec,
    pub centroids: Vec<ContextModel>,
    pub assignment: Vec<usize>,
    pub total_bits: f64,
    /// Total bits after each assignment pass.
    pub history: Vec<f64>,
}

impl ModelSet {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Total coding cost in bits/value, excluding the per-read selector.
    pub fn bpv(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.total_bits / n as f64
        }
    }

    /// `CMS1`, k, spec, alphabet, then each centroid's count tables.
    pub fn write_models(&self, w: &mut ByteWriter) {
        write_centroids(w, &self.spec, &self.centroids);
    }

    /// Reads centroids written by [`ModelSet::write_models`].
    pub fn read_models(r: &mut ByteReader<'_>) -> Result<(ContextSpec, Vec<ContextModel>)> {
        read_centroids(r)
    }

    /// `cluster,reads,symbols,bits,bpv` per centroid.
    pub fn cluster_csv(&self, data: &Sequences) -> Result<String> {
        let mut s = String::from("cluster,reads,symbols,bits,bpv\n");
        for j in 0..self.k() {
            let (mut reads, mut symbols, mut bits) = (0usize, 0usize, 0.0);
            for (r, seq) in data.reads.iter().enumerate() {
                if self.assignment[r] == j {
                    reads += 1;
                    symbols += seq.len();
                    bits += read_model_cost(seq, &self.centroids[j])?;
                }
            }
            let bpv = if symbols == 0 { 0.0 } else { bits / symbols as f64 };
            s.push_str(&format!("{j},{reads},{symbols},{bits},{bpv}\n"));
        }
        Ok(s)
    }

    /// Per-cluster histogram of read bpv under the assigned centroid.
    pub fn histogram_csv(&self, data: &Sequences, width: f64) -> Result<String> {
        if !(width > 0.0) {
            return Err(invalid("histogram width must be positive"));
        }
        let mut bins: std::collections::BTreeMap<(usize, i64), usize> = Default::default();
        for (r, seq) in data.reads.iter().enumerate() {
            if seq.is_empty() {
                continue;
            }
            let j = self.assignment[r];
            let bpv = read_model_cost(seq, &self.centroids[j])? / seq.len() as f64;
            *bins.entry((j, (bpv / width).floor() as i64)).or_default() += 1;
        }
        let mut s = String::from("cluster,bpv_lo,bpv_hi,reads\n");
        for ((j, b), n) in bins {
            s.push_str(&format!("{j},{},{},{n}\n", b as f64 * width, (b + 1) as f64 * width));
        }
        Ok(s)
    }
}

pub fn write_centroids(w: &mut ByteWriter, spec: &ContextSpec, centroids: &[ContextModel]) {
    w.bytes(b"CMS1");
    w.varint(centroids.len() as u64);
    spec.write(w);
    w.varint(centroids.first().map_or(0, ContextModel::alphabet) as u64);
    for c in centroids {
        w.varint(c.tables().len() as u64);
        for t in c.tables() {
            t.write_sparse(w);
        }
    }
}

pub fn read_centroids(r: &mut ByteReader<'_>) -> Result<(ContextSpec, Vec<ContextModel>)> {
    r.expect_magic(b"CMS1")?;
    let k = r.varint_usize(1 << 16)?;
    let spec = ContextSpec::read(r)?;
    let m = r.varint_usize(1 << 16)?;
    let mut centroids = Vec::with_capacity(k);
    for _ in 0..k {
        let n = r.varint_usize(1 << 16)?;
        let tables = (0..n)
            .map(|_| ContextStats::read_sparse(r))
            .collect::<Result<Vec<_>>>()?;
        if tables.iter().any(|t| t.alphabet_size() != m) {
            return Err(Error::Format("centroid alphabet mismatch".into()));
        }
        centroids.push(ContextModel::from_tables(spec.clone(), tables)?);
    }
    Ok((spec, centroids))
}

fn read_model(spec: &ContextSpec, m: usize, seq: &[Symbol]) -> Result<ContextModel> {
    let mut model = ContextModel::empty(spec.clone(), m)?;
    model.observe(seq);
    Ok(model)
}

fn pooled(spec: &ContextSpec, data: &Sequences, members: &[usize]) -> Result<ContextModel> {
    let mut model = ContextModel::empty(spec.clone(), data.alphabet_size)?;
    for &r in members {
        model.observe(&data.reads[r]);
    }
    Ok(model)
}

/// Costs of every read under every centroid, `costs[r][j]`.
fn cost_matrix(data: &Sequences, centroids: &[ContextModel]) -> Result<Vec<Vec<f64>>> {
    data.reads
        .par_iter()
        .enumerate()
        .map(|(r, seq)| {
            centroids
                .iter()
                .map(|c| sequence_bits(c, seq, r))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn assign(costs: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignment = costs
        .iter()
        .map(|row| {
            let (j, c) = row
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (j, &c)| if c < acc.1 { (j, c) } else { acc });
            total += c;
            j
        })
        .collect();
    (assignment, total)
}

/// Clusters reads into `k` models, starting from `k` distinct random reads.
pub fn kmeans_cluster(data: &Sequences, spec: &ContextSpec, k: usize, max_iter: usize, seed: u64) -> Result<ModelSet> {
    data.validate()?;
    spec.validate(data.alphabet_size)?;
    let n_reads = data.reads.len();
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if k > n_reads {
        return Err(invalid(format!("k = {k} exceeds the {n_reads} reads")));
    }
    if k == 1 {
        let all: Vec<usize> = (0..n_reads).collect();
        return kmeans_from(data, spec, vec![pooled(spec, data, &all)?], max_iter);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, n_reads, k).into_vec();
    picks.sort_unstable();
    let centroids = picks
        .iter()
        .map(|&r| read_model(spec, data.alphabet_size, &data.reads[r]))
        .collect::<Result<Vec<_>>>()?;
    kmeans_from(data, spec, centroids, max_iter)
}

/// Runs the assign/refit loop from given centroids.
///
/// A centroid is replaced by its members' pooled counts only when that does
/// not increase the members' total cost, so the total never increases.
pub fn kmeans_from(data: &Sequences, spec: &ContextSpec, mut centroids: Vec<ContextModel>, max_iter: usize) -> Result<ModelSet> {
    let k = centroids.len();
    if k == 0 {
        return Err(invalid("at least one centroid is required"));
    }
    if centroids.iter().any(|c| c.spec() != spec || c.alphabet() != data.alphabet_size) {
        return Err(invalid("centroids do not match the spec or alphabet"));
    }
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let max_iter = max_iter.max(1);
    loop {
        let costs = cost_matrix(data, &centroids)?;
        let (assignment, total) = assign(&costs);
        let improved = history.last().map_or(f64::INFINITY, |&p: &f64| p - total);
        history.push(total);
        let stable = previous.as_ref() == Some(&assignment);
        if stable || improved < REL_TOL * total || history.len() >= max_iter {
            return Ok(ModelSet {
                spec: spec.clone(),
                centroids,
                assignment,
                total_bits: total,
                history,
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (r, &j) in assignment.iter().enumerate() {
            members[j].push(r);
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for j in 0..k {
            if members[j].is_empty() {
                // worst fit: largest bits/value under its current centroid
                let worst = (0..data.reads.len())
                    .filter(|r| !data.reads[*r].is_empty() && !reseeded.contains(r))
                    .max_by(|&a, &b| {
                        let fa = costs[a][assignment[a]] / data.reads[a].len() as f64;
                        let fb = costs[b][assignment[b]] / data.reads[b].len() as f64;
                        fa.total_cmp(&fb).then(b.cmp(&a))
                    });
                if let Some(r) = worst {
                    reseeded.push(r);
                    centroids[j] = read_model(spec, data.alphabet_size, &data.reads[r])?;
                }
                continue;
            }
            let candidate = pooled(spec, data, &members[j])?;
            let current: f64 = members[j].iter().map(|&r| costs[r][j]).sum();
            let refit: f64 = members[j]
                .iter()
                .map(|&r| sequence_bits(&candidate, &data.reads[r], r))
                .sum::<Result<f64>>()?;
            if refit <= current {
                centroids[j] = candidate;
            }
        }
        previous = Some(assignment);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeaderCost {
    /// `lg(k) * reads / N`.
    pub flat_bpv: f64,
    /// `H(assignment frequencies) * reads / N`.
    pub entropy_bpv: f64,
}

/// Cost of storing the per-read centroid index, in bits per value of `n_symbols`.
pub fn header_cost(k: usize, assignment: &[usize], n_symbols: usize) -> HeaderCost {
    if k <= 1 || n_symbols == 0 || assignment.is_empty() {
        return HeaderCost {
            flat_bpv: 0.0,
            entropy_bpv: 0.0,
        };
    }
    let reads = assignment.len() as f64;
    let mut freq = vec![0.0; k];
    for &j in assignment {
        freq[j.min(k - 1)] += 1.0 / reads;
    }
    let n = n_symbols as f64;
    HeaderCost {
        flat_bpv: (k as f64).log2() * reads / n,
        entropy_bpv: entropy_unchecked(&freq) * reads / n,
    }
}
