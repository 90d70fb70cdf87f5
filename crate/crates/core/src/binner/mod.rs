//! Greedy context binning.
//!
//! [`build_merge_tree`] merges contexts pairwise, cheapest first, using the
//! rate increase of pooling two context subsets as the merge cost. Cutting the
//! resulting tree ([`MergeTree::cut`]) yields a [`BinningTable`] mapping every
//! context to a bin.

pub mod nested;
mod tree;

pub use tree::{build_merge_tree, merge_delta, MergeNode, MergeTree};

use crate::error::{invalid, Error, Result};
use crate::wire::{ByteReader, ByteWriter};

/// Bin ids are serialized as 16-bit values.
pub const MAX_BINS: usize = 1 << 16;

/// Context id → bin id lookup (`state = bin[context]`).
#[derive(Debug, Clone)]
pub struct BinningTable {
    bins: Vec<u32>,
    n_bins: usize,
    penalty_bpv: f64,
}

impl PartialEq for BinningTable {
    fn eq(&self, other: &Self) -> bool {
        self.bins == other.bins && self.n_bins == other.n_bins
    }
}

impl BinningTable {
    /// `bins[c] < n_bins` must hold; bins need not be surjective (padding).
    pub fn new(bins: Vec<u32>, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || n_bins > MAX_BINS {
            return Err(invalid(format!("bin count {n_bins} outside 1..={MAX_BINS}")));
        }
        if let Some(c) = bins.iter().position(|&b| b as usize >= n_bins) {
            return Err(invalid(format!("context {c} maps to bin {} >= {n_bins}", bins[c])));
        }
        if bins.len() > u32::MAX as usize {
            return Err(invalid("too many contexts"));
        }
        Ok(Self {
            bins,
            n_bins,
            penalty_bpv: 0.0,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n as u32).collect(), n)
    }

    pub(crate) fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty_bpv = penalty;
        self
    }

    #[inline]
    pub fn bin(&self, context: usize) -> usize {
        self.bins[context] as usize
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn context_count(&self) -> usize {
        self.bins.len()
    }

    /// Rate increase over the unbinned model; 0 when not known (e.g. deserialized).
    pub fn penalty_bpv(&self) -> f64 {
        self.penalty_bpv
    }

    pub fn is_surjective(&self) -> bool {
        let mut seen = vec![false; self.n_bins];
        self.bins.iter().for_each(|&b| seen[b as usize] = true);
        seen.into_iter().all(|s| s)
    }

    /// `outer[self[c]]`: bins this table's bins further.
    pub fn compose(&self, outer: &BinningTable) -> Result<BinningTable> {
        if outer.context_count() != self.n_bins {
            return Err(invalid(format!(
                "outer table covers {} ids, inner produces {}",
                outer.context_count(),
                self.n_bins
            )));
        }
        BinningTable::new(
            self.bins.iter().map(|&b| outer.bins[b as usize]).collect(),
            outer.n_bins,
        )
    }

    /// Maps every id through `shift`: `bin[c] >> shift`.
    pub fn shifted(&self, shift: u32) -> BinningTable {
        let n = ((self.n_bins - 1) >> shift) + 1;
        BinningTable {
            bins: self.bins.iter().map(|&b| b >> shift).collect(),
            n_bins: n,
            penalty_bpv: 0.0,
        }
    }

    /// `CBN1` blob: magic, `|C|` (u32), `nBins` (u32), `|C|` 16-bit bin ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"CBN1");
        w.u32(self.bins.len() as u32);
        w.u32(self.n_bins as u32);
        for &b in &self.bins {
            w.u16(b as u16);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(b"CBN1")?;
        let c = r.u32()? as usize;
        let n = r.u32()? as usize;
        if c.saturating_mul(2) != r.remaining() {
            return Err(Error::Corrupt(format!(
                "CBN1 declares {c} contexts but carries {} bytes",
                r.remaining()
            )));
        }
        let bins = (0..c)
            .map(|_| r.u16().map(u32::from))
            .collect::<Result<Vec<_>>>()?;
        BinningTable::new(bins, n).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// When to stop growing a cut from the root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutCriterion {
    /// Exactly `min(k, leaves)` bins.
    MaxBins(usize),
    /// Smallest frontier whose total penalty is at most this (bits/value).
    MaxPenalty(f64),
    /// Keep splitting while the next split removes more than this.
    MaxStepCost(f64),
}

/// Renumbers `fine` so that `coarse.bin(c) == renumbered.bin(c) / group_size` for every context.
///
/// Each coarse bin `j` owns the id block `j*group_size .. (j+1)*group_size`; fine bins
/// inside it keep their relative order. Unused ids in a block are padding.
pub fn enumerate_for_shift(
    fine: &BinningTable,
    coarse: &BinningTable,
    group_size: usize,
) -> Result<BinningTable> {
    if group_size == 0 || !group_size.is_power_of_two() {
        return Err(invalid(format!("group size {group_size} is not a power of two")));
    }
    if fine.context_count() != coarse.context_count() {
        return Err(invalid("fine and coarse tables cover different context sets"));
    }
    if coarse.n_bins() * group_size < fine.n_bins() {
        return Err(invalid(format!(
            "{} coarse bins x group {group_size} cannot hold {} fine bins",
            coarse.n_bins(),
            fine.n_bins()
        )));
    }
    let mut parent: Vec<Option<u32>> = vec![None; fine.n_bins()];
    for c in 0..fine.context_count() {
        let f = fine.bin(c);
        let g = coarse.bins[c];
        match parent[f] {
            None => parent[f] = Some(g),
            Some(p) if p == g => {}
            Some(p) => {
                return Err(Error::Renumbering(format!(
                    "fine bin {f} lies in coarse bins {p} and {g}"
                )))
            }
        }
    }
    let mut next_slot = vec![0usize; coarse.n_bins()];
    let mut new_id = vec![0u32; fine.n_bins()];
    for (f, p) in parent.iter().enumerate() {
        // bins no context maps to stay unreachable; park them in any free slot later
        let Some(g) = p else { continue };
        let g = *g as usize;
        if next_slot[g] == group_size {
            return Err(Error::Renumbering(format!(
                "coarse bin {g} holds more than {group_size} fine bins"
            )));
        }
        new_id[f] = (g * group_size + next_slot[g]) as u32;
        next_slot[g] += 1;
    }
    let bins = (0..fine.context_count())
        .map(|c| new_id[fine.bin(c)])
        .collect();
    BinningTable::new(bins, coarse.n_bins() * group_size).map(|t| t.with_penalty(fine.penalty_bpv))
}

/// Smallest power of two that fits the largest fine-bin group of `coarse`.
pub fn group_size_for(fine: &BinningTable, coarse: &BinningTable) -> Result<usize> {
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); coarse.n_bins()];
    let mut seen = vec![false; fine.n_bins()];
    for c in 0..fine.context_count() {
        let f = fine.bin(c);
        if !seen[f] {
            seen[f] = true;
            members[coarse.bin(c)].push(f as u32);
        }
    }
    let largest = members.iter().map(Vec::len).max().unwrap_or(1).max(1);
    Ok(largest.next_power_of_two())
}
