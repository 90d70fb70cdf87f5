//! Nested binning: composing pair binnings into approximations of high-order contexts.
//!
//! Windows are consecutive symbol pairs before the current position:
//! pair `k` is `(x[i-1-2k], x[i-2-2k])` with id `x[i-1-2k] + m * x[i-2-2k]`.

use super::{build_merge_tree, enumerate_for_shift, group_size_for, BinningTable, CutCriterion};
use crate::ctxstats::{collect_stats, collect_with, rate, ContextSpec, ContextStats};
use crate::error::{invalid, Error, Result};
use crate::seqio::{Sequences, Symbol};
use crate::wire::{ByteReader, ByteWriter};

use std::sync::Arc;

const MAX_STATES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NestedScheme {
    /// One table per level, reused for every window of that level's size.
    Symmetric,
    /// One near table; farther windows use `near >> shift`.
    Asymmetric,
    /// Far binnings depend on the near bin outcome.
    Hierarchical,
}

impl NestedScheme {
    fn tag(self) -> u8 {
        match self {
            NestedScheme::Symmetric => 0,
            NestedScheme::Asymmetric => 1,
            NestedScheme::Hierarchical => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NestedOptions {
    /// Hierarchical recursion stops when splitting a sub-table gains at most this (bits/value).
    pub penalty_threshold: f64,
}

impl Default for NestedOptions {
    fn default() -> Self {
        Self {
            penalty_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum HierChild {
    State(u32),
    Node(Box<HierNode>),
}

#[derive(Debug, Clone, PartialEq)]
struct HierNode {
    table: BinningTable,
    children: Vec<HierChild>,
}

#[derive(Debug, Clone, PartialEq)]
enum NestedKind {
    Symmetric {
        levels: Vec<BinningTable>,
    },
    Asymmetric {
        near: BinningTable,
        shifts: Vec<u32>,
        radices: Vec<usize>,
    },
    Hierarchical {
        root: HierNode,
    },
}

/// Maps a `target_order`-long history to a state id via a fixed sequence of table lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedContext {
    alphabet: usize,
    target_order: usize,
    kind: NestedKind,
    state_count: usize,
}

#[inline]
fn pair_id(seq: &[Symbol], i: usize, k: usize, m: usize) -> usize {
    seq[i - 1 - 2 * k] as usize + m * seq[i - 2 - 2 * k] as usize
}

/// Level values for `n_pairs` pairs reduced through `levels[1..]`.
fn symmetric_values(levels: &[BinningTable], m: usize, seq: &[Symbol], i: usize, n_pairs: usize) -> Vec<usize> {
    let mut values: Vec<usize> = (0..n_pairs).map(|k| levels[0].bin(pair_id(seq, i, k, m))).collect();
    for j in 1..levels.len() {
        let radix = levels[j - 1].n_bins();
        values = values
            .chunks(2)
            .map(|c| levels[j].bin(c[0] + radix * c[1]))
            .collect();
    }
    values
}

impl NestedContext {
    pub fn scheme(&self) -> NestedScheme {
        match self.kind {
            NestedKind::Symmetric { .. } => NestedScheme::Symmetric,
            NestedKind::Asymmetric { .. } => NestedScheme::Asymmetric,
            NestedKind::Hierarchical { .. } => NestedScheme::Hierarchical,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn target_order(&self) -> usize {
        self.target_order
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    /// Table lookups performed per symbol when nothing is cached.
    pub fn lookups_per_symbol(&self) -> usize {
        match &self.kind {
            NestedKind::Symmetric { levels } => levels.len(),
            NestedKind::Asymmetric { shifts, .. } => shifts.len(),
            NestedKind::Hierarchical { root } => root_depth(root),
        }
    }

    /// State for position `i >= target_order`.
    pub fn state_at(&self, seq: &[Symbol], i: usize) -> usize {
        let m = self.alphabet;
        match &self.kind {
            NestedKind::Symmetric { levels } => {
                symmetric_values(levels, m, seq, i, self.target_order / 2)[0]
            }
            NestedKind::Asymmetric {
                near,
                shifts,
                radices,
            } => {
                let mut state = 0;
                for k in (0..shifts.len()).rev() {
                    let digit = near.bin(pair_id(seq, i, k, m)) >> shifts[k];
                    state = state * radices[k] + digit;
                }
                state
            }
            NestedKind::Hierarchical { root } => {
                let mut node = root;
                let mut k = 0;
                loop {
                    match &node.children[node.table.bin(pair_id(seq, i, k, m))] {
                        HierChild::State(s) => return *s as usize,
                        HierChild::Node(n) => {
                            node = n;
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn write(&self, w: &mut ByteWriter) {
        w.u8(self.scheme().tag());
        w.varint(self.alphabet as u64);
        w.varint(self.target_order as u64);
        match &self.kind {
            NestedKind::Symmetric { levels } => {
                w.varint(levels.len() as u64);
                levels.iter().for_each(|t| w.blob(&t.to_bytes()));
            }
            NestedKind::Asymmetric { near, shifts, .. } => {
                w.blob(&near.to_bytes());
                w.varint(shifts.len() as u64);
                shifts.iter().for_each(|&s| w.varint(s as u64));
            }
            NestedKind::Hierarchical { root } => write_hier(root, w),
        }
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let tag = r.u8()?;
        let alphabet = r.varint_usize(1 << 16)?;
        let target_order = r.varint_usize(64)?;
        let pair_contexts = alphabet * alphabet;
        let bad = |msg: &str| Error::Corrupt(format!("nested context: {msg}"));
        let kind = match tag {
            0 => {
                let n = r.varint_usize(8)?;
                let levels = (0..n)
                    .map(|_| BinningTable::from_bytes(r.blob()?))
                    .collect::<Result<Vec<_>>>()?;
                if n == 0 || 1 << n != target_order || levels[0].context_count() != pair_contexts {
                    return Err(bad("symmetric level shapes"));
                }
                for j in 1..n {
                    let input = levels[j - 1].n_bins();
                    if levels[j].context_count() != input * input {
                        return Err(bad("symmetric level shapes"));
                    }
                }
                NestedKind::Symmetric { levels }
            }
            1 => {
                let near = BinningTable::from_bytes(r.blob()?)?;
                let n = r.varint_usize(32)?;
                let shifts = (0..n)
                    .map(|_| r.varint_usize(16).map(|s| s as u32))
                    .collect::<Result<Vec<_>>>()?;
                if n == 0 || 2 * n != target_order || near.context_count() != pair_contexts {
                    return Err(bad("asymmetric shapes"));
                }
                let radices = shifts.iter().map(|&s| near.shifted(s).n_bins()).collect();
                NestedKind::Asymmetric {
                    near,
                    shifts,
                    radices,
                }
            }
            2 => {
                let mut next = 0u32;
                let root = read_hier(r, pair_contexts, target_order / 2, 0, &mut next)?;
                NestedKind::Hierarchical { root }
            }
            t => return Err(Error::Format(format!("unknown nested scheme tag {t}"))),
        };
        Self::assemble(alphabet, target_order, kind)
    }

    fn assemble(alphabet: usize, target_order: usize, kind: NestedKind) -> Result<Self> {
        let state_count = match &kind {
            NestedKind::Symmetric { levels } => levels.last().map(BinningTable::n_bins).unwrap_or(1),
            NestedKind::Asymmetric { radices, .. } => radices
                .iter()
                .try_fold(1usize, |acc, &r| acc.checked_mul(r))
                .filter(|&n| n <= MAX_STATES)
                .ok_or_else(|| invalid("asymmetric state count exceeds 2^24"))?,
            NestedKind::Hierarchical { root } => count_states(root),
        };
        Ok(Self {
            alphabet,
            target_order,
            kind,
            state_count,
        })
    }
}

fn root_depth(node: &HierNode) -> usize {
    1 + node
        .children
        .iter()
        .map(|c| match c {
            HierChild::State(_) => 0,
            HierChild::Node(n) => root_depth(n),
        })
        .max()
        .unwrap_or(0)
}

fn count_states(node: &HierNode) -> usize {
    node.children
        .iter()
        .map(|c| match c {
            HierChild::State(_) => 1,
            HierChild::Node(n) => count_states(n),
        })
        .sum()
}

fn write_hier(node: &HierNode, w: &mut ByteWriter) {
    w.blob(&node.table.to_bytes());
    w.varint(node.children.len() as u64);
    for c in &node.children {
        match c {
            HierChild::State(s) => {
                w.u8(0);
                w.varint(*s as u64);
            }
            HierChild::Node(n) => {
                w.u8(1);
                write_hier(n, w);
            }
        }
    }
}

fn read_hier(
    r: &mut ByteReader<'_>,
    pair_contexts: usize,
    windows: usize,
    depth: usize,
    next: &mut u32,
) -> Result<HierNode> {
    let table = BinningTable::from_bytes(r.blob()?)?;
    if table.context_count() != pair_contexts || depth >= windows {
        return Err(Error::Corrupt("hierarchical node shape".into()));
    }
    let n = r.varint_usize(table.n_bins())?;
    if n != table.n_bins() {
        return Err(Error::Corrupt("hierarchical child count".into()));
    }
    let mut children = Vec::with_capacity(n);
    for _ in 0..n {
        children.push(match r.u8()? {
            0 => {
                let s = r.varint()? as u32;
                if s != *next {
                    return Err(Error::Corrupt("hierarchical state ids out of order".into()));
                }
                *next += 1;
                HierChild::State(s)
            }
            1 => HierChild::Node(Box::new(read_hier(r, pair_contexts, windows, depth + 1, next)?)),
            t => return Err(Error::Corrupt(format!("hierarchical child tag {t}"))),
        });
    }
    Ok(HierNode { table, children })
}

/// Nested binning output: the composite context plus per-state counts.
#[derive(Debug, Clone)]
pub struct NestedBinning {
    pub context: Arc<NestedContext>,
    /// Next-symbol counts per final state over positions `>= target_order`.
    pub stats: ContextStats,
    /// Budget clamps and similar notes.
    pub warnings: Vec<String>,
}

impl NestedBinning {
    pub fn spec(&self) -> ContextSpec {
        ContextSpec::Nested(self.context.clone())
    }

    pub fn bpv(&self) -> Result<f64> {
        rate(&self.stats).map(|r| r.bpv)
    }
}

fn cut_with_budget(
    stats: &ContextStats,
    budget: usize,
    level: usize,
    warnings: &mut Vec<String>,
) -> Result<BinningTable> {
    let tree = build_merge_tree(stats)?;
    if budget > tree.leaf_count {
        warnings.push(format!(
            "level {level}: budget {budget} exceeds {} distinct contexts, clamped",
            tree.leaf_count
        ));
    }
    Ok(tree.cut(CutCriterion::MaxBins(budget.min(tree.leaf_count))))
}

/// Builds a composite model for `target_order` previous symbols.
///
/// `budgets` holds one bin count per level: `log2(target_order)` levels for
/// [`NestedScheme::Symmetric`], `target_order / 2` pair windows otherwise.
pub fn nested_binning(
    data: &Sequences,
    scheme: NestedScheme,
    target_order: usize,
    budgets: &[usize],
    opts: &NestedOptions,
) -> Result<NestedBinning> {
    let m = data.alphabet_size;
    data.validate()?;
    if m * m > 1 << 20 {
        return Err(invalid(format!("alphabet {m} too large for pair binning")));
    }
    if budgets.iter().any(|&b| b == 0) {
        return Err(invalid("bin budgets must be positive"));
    }
    let mut warnings = Vec::new();
    let kind = match scheme {
        NestedScheme::Symmetric => {
            if target_order < 2 || !target_order.is_power_of_two() {
                return Err(invalid(format!(
                    "symmetric nesting needs a power-of-two order >= 2, got {target_order}"
                )));
            }
            let levels_needed = target_order.trailing_zeros() as usize;
            if budgets.len() != levels_needed {
                return Err(invalid(format!(
                    "order {target_order} needs {levels_needed} budgets, got {}",
                    budgets.len()
                )));
            }
            let mut levels: Vec<BinningTable> = Vec::new();
            for (j, &budget) in budgets.iter().enumerate() {
                let stats = if j == 0 {
                    collect_with(data, m * m, 2, |seq, i| pair_id(seq, i, 0, m))
                } else {
                    let radix = levels[j - 1].n_bins();
                    let lv = &levels;
                    collect_with(data, radix * radix, 2 << j, |seq, i| {
                        let v = symmetric_values(lv, m, seq, i, 1 << j);
                        v[0] + radix * v[1]
                    })
                };
                levels.push(cut_with_budget(&stats, budget, j, &mut warnings)?);
            }
            NestedKind::Symmetric { levels }
        }
        NestedScheme::Asymmetric => {
            let windows = check_pair_windows(target_order, budgets)?;
            // chain of coarsenings: groups[j] bins pair j, each a coarsening of groups[j-1]
            let mut groups: Vec<BinningTable> = Vec::new();
            for (j, &budget) in budgets.iter().enumerate() {
                let table = if j == 0 {
                    let stats = collect_with(data, m * m, 2, |seq, i| pair_id(seq, i, 0, m));
                    cut_with_budget(&stats, budget, 0, &mut warnings)?
                } else {
                    let prev = &groups[j - 1];
                    let stats = collect_with(data, prev.n_bins(), 2 * j + 2, |seq, i| {
                        prev.bin(pair_id(seq, i, j, m))
                    });
                    let outer = match cut_with_budget(&stats, budget, j, &mut warnings) {
                        Ok(t) => t,
                        Err(Error::EmptyStats) => BinningTable::new(vec![0; prev.n_bins()], 1)?,
                        Err(e) => return Err(e),
                    };
                    prev.compose(&outer)?
                };
                groups.push(table);
            }
            let mut renumbered = groups[windows - 1].clone();
            let mut bits = vec![0u32; windows];
            for j in (0..windows - 1).rev() {
                let g = group_size_for(&groups[j], &renumbered)?;
                renumbered = enumerate_for_shift(&groups[j], &renumbered, g)?;
                bits[j] = g.trailing_zeros();
            }
            let near = renumbered;
            let shifts: Vec<u32> = (0..windows).map(|j| bits[..j].iter().sum()).collect();
            let radices = shifts.iter().map(|&s| near.shifted(s).n_bins()).collect();
            NestedKind::Asymmetric {
                near,
                shifts,
                radices,
            }
        }
        NestedScheme::Hierarchical => {
            let windows = check_pair_windows(target_order, budgets)?;
            let positions: Vec<(u32, u32)> = data
                .reads
                .iter()
                .enumerate()
                .flat_map(|(r, seq)| (target_order..seq.len()).map(move |i| (r as u32, i as u32)))
                .collect();
            if positions.is_empty() {
                return Err(Error::EmptyStats);
            }
            let mut builder = HierBuilder {
                data,
                budgets,
                windows,
                threshold: opts.penalty_threshold,
                total: positions.len() as f64,
                next_state: 0,
                warnings: &mut warnings,
            };
            let root = builder.node(&positions, 0)?;
            NestedKind::Hierarchical { root }
        }
    };
    let context = Arc::new(NestedContext::assemble(m, target_order, kind)?);
    let stats = collect_stats(data, &ContextSpec::Nested(context.clone()))?;
    Ok(NestedBinning {
        context,
        stats,
        warnings,
    })
}

fn check_pair_windows(target_order: usize, budgets: &[usize]) -> Result<usize> {
    if target_order < 2 || target_order % 2 != 0 {
        return Err(invalid(format!("pair nesting needs an even order >= 2, got {target_order}")));
    }
    let windows = target_order / 2;
    if budgets.len() != windows {
        return Err(invalid(format!(
            "order {target_order} needs {windows} budgets, got {}",
            budgets.len()
        )));
    }
    Ok(windows)
}

struct HierBuilder<'a> {
    data: &'a Sequences,
    budgets: &'a [usize],
    windows: usize,
    threshold: f64,
    total: f64,
    next_state: u32,
    warnings: &'a mut Vec<String>,
}

impl HierBuilder<'_> {
    fn pair_stats(&self, positions: &[(u32, u32)], depth: usize) -> ContextStats {
        let m = self.data.alphabet_size;
        let mut s = ContextStats::new(m, m * m);
        for &(r, i) in positions {
            let seq = &self.data.reads[r as usize];
            s.add(pair_id(seq, i as usize, depth, m), seq[i as usize] as usize);
        }
        s
    }

    fn leaf(&mut self) -> HierChild {
        let s = self.next_state;
        self.next_state += 1;
        HierChild::State(s)
    }

    fn child(&mut self, positions: &[(u32, u32)], depth: usize) -> Result<HierChild> {
        let m = self.data.alphabet_size;
        if depth == self.windows || positions.len() < 16 * m {
            return Ok(self.leaf());
        }
        let stats = self.pair_stats(positions, depth);
        // gain of splitting this subset at all, in bits/value of the whole data
        let gain = build_merge_tree(&stats)?.total_cost() * positions.len() as f64 / self.total;
        if gain <= self.threshold {
            return Ok(self.leaf());
        }
        Ok(HierChild::Node(Box::new(self.node_from(positions, depth, &stats)?)))
    }

    fn node(&mut self, positions: &[(u32, u32)], depth: usize) -> Result<HierNode> {
        let stats = self.pair_stats(positions, depth);
        self.node_from(positions, depth, &stats)
    }

    fn node_from(&mut self, positions: &[(u32, u32)], depth: usize, stats: &ContextStats) -> Result<HierNode> {
        let m = self.data.alphabet_size;
        let table = cut_with_budget(stats, self.budgets[depth], depth, self.warnings)?;
        let mut parts: Vec<Vec<(u32, u32)>> = vec![Vec::new(); table.n_bins()];
        for &(r, i) in positions {
            let seq = &self.data.reads[r as usize];
            parts[table.bin(pair_id(seq, i as usize, depth, m))].push((r, i));
        }
        let mut children = Vec::with_capacity(parts.len());
        for part in &parts {
            children.push(self.child(part, depth + 1)?);
        }
        Ok(HierNode { table, children })
    }
}
