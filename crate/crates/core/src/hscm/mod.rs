//! Hidden-state context models driven by one `next[state][symbol]` table.

mod soft;

pub use soft::{
    determinize, gradient_check, optimize_soft, DeterminizeReport, EmissionMode, SoftHscm, SoftOptions,
    StateBelief, MAX_SOFT_STATES,
};

use crate::binner::{build_merge_tree, BinningTable, CutCriterion};
use crate::ctxstats::{collect_stats, collect_with, ConditionalModel, ContextSpec, ContextStats};
use crate::error::{invalid, Error, Result};
use crate::rans::{normalize_weights, PRECISION};
use crate::seqio::{Sequences, Symbol};
use crate::wire::{ByteReader, ByteWriter};

use std::sync::Arc;

const MAX_STATES: usize = 1 << 24;

/// Mixed-radix packing `c1 + nc1 * (c2 + nc2 * (...))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadixLayout {
    counts: Vec<usize>,
    state_count: usize,
}

impl RadixLayout {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(invalid("radix layout needs positive digit counts"));
        }
        let state_count = counts
            .iter()
            .try_fold(1usize, |a, &c| a.checked_mul(c))
            .filter(|&n| n <= MAX_STATES)
            .ok_or_else(|| invalid("state count exceeds 2^24"))?;
        Ok(Self { counts, state_count })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.counts.len());
        digits
            .iter()
            .zip(&self.counts)
            .rev()
            .fold(0, |acc, (&d, &n)| acc * n + d)
    }

    pub fn decode(&self, mut state: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&n| {
                let d = state % n;
                state /= n;
                d
            })
            .collect()
    }
}

/// Deterministic state machine with a coding distribution per state. State 0 starts every read.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    m: usize,
    next: Vec<u32>,
    emit: Vec<f64>,
    layout: RadixLayout,
}

impl TransitionTable {
    pub fn new(m: usize, next: Vec<u32>, emit: Vec<f64>, layout: RadixLayout) -> Result<Self> {
        let s = layout.state_count();
        if m < 2 || next.len() != s * m || emit.len() != s * m {
            return Err(invalid("transition table shape does not match layout"));
        }
        if next.iter().any(|&n| n as usize >= s) {
            return Err(invalid("transition target outside state range"));
        }
        for row in emit.chunks(m) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidDistribution("emission row must sum to 1".into()));
            }
        }
        Ok(Self { m, next, emit, layout })
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn state_count(&self) -> usize {
        self.layout.state_count()
    }

    pub fn layout(&self) -> &RadixLayout {
        &self.layout
    }

    pub fn next(&self, state: usize, symbol: usize) -> usize {
        self.next[state * self.m + symbol] as usize
    }

    pub fn emission(&self, state: usize) -> &[f64] {
        &self.emit[state * self.m..(state + 1) * self.m]
    }

    /// State before each position of `seq`.
    pub fn states(&self, seq: &[Symbol]) -> Vec<usize> {
        let mut out = Vec::with_capacity(seq.len());
        let mut s = 0;
        for &x in seq {
            out.push(s);
            s = self.next(s, x as usize);
        }
        out
    }

    /// Next-symbol counts per state.
    pub fn state_stats(&self, data: &Sequences) -> ContextStats {
        let mut st = ContextStats::new(self.m, self.state_count());
        for seq in &data.reads {
            for (i, s) in self.states(seq).into_iter().enumerate() {
                st.add(s, seq[i] as usize);
            }
        }
        st
    }

    /// Replaces emissions by smoothed frequencies from `stats`.
    pub fn with_emissions(mut self, stats: &ContextStats) -> Result<Self> {
        if stats.context_count() != self.state_count() || stats.alphabet_size() != self.m {
            return Err(invalid("stats shape does not match transition table"));
        }
        for s in 0..self.state_count() {
            for x in 0..self.m {
                self.emit[s * self.m + x] = stats.smoothed_prob(s, x);
            }
        }
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write(&mut w);
        w.into_inner()
    }

    /// `HSC1`, state count, m, next ids (u32), emission rows as 16-bit frequencies, digit counts.
    pub fn write(&self, w: &mut ByteWriter) {
        w.bytes(b"HSC1");
        w.u32(self.state_count() as u32);
        w.u32(self.m as u32);
        self.next.iter().for_each(|&n| w.u32(n));
        for row in self.emit.chunks(self.m) {
            let table = normalize_weights(row, PRECISION).expect("valid emission row");
            table.freqs().iter().for_each(|&f| w.u16(f as u16));
        }
        w.varint(self.layout.levels() as u64);
        self.layout.counts().iter().for_each(|&c| w.varint(c as u64));
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let t = Self::read(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after HSC1 table".into()));
        }
        Ok(t)
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(b"HSC1")?;
        let s = r.u32()? as usize;
        let m = r.u32()? as usize;
        if s == 0 || s > MAX_STATES || !(2..=1 << 16).contains(&m) || s * m > r.remaining() / 4 {
            return Err(Error::Format("HSC1 dimensions out of range".into()));
        }
        let next = (0..s * m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let total = (1u32 << PRECISION) as f64;
        let emit = (0..s * m)
            .map(|_| r.u16().map(|f| f as f64 / total))
            .collect::<Result<Vec<_>>>()?;
        let levels = r.varint_usize(64)?;
        let counts = (0..levels).map(|_| r.varint_usize(MAX_STATES)).collect::<Result<Vec<_>>>()?;
        let layout = RadixLayout::new(counts).map_err(|e| Error::Format(e.to_string()))?;
        if layout.state_count() != s {
            return Err(Error::Format("HSC1 layout does not match state count".into()));
        }
        Self::new(m, next, emit, layout).map_err(|e| Error::Format(e.to_string()))
    }
}

impl ConditionalModel for TransitionTable {
    fn alphabet_size(&self) -> usize {
        self.m
    }

    fn visit_probs(&self, seq: &[Symbol], f: &mut dyn FnMut(usize, f64)) {
        let mut s = 0;
        for (i, &x) in seq.iter().enumerate() {
            f(i, self.emit[s * self.m + x as usize]);
            s = self.next(s, x as usize);
        }
    }
}

/// Chain of binnings: `bins[0]` maps symbols, `bins[j]` maps the digit from level `j - 1`.
///
/// Digit `j` at position `i` is `bins[j](...bins[0](x[i-1-j]))`; before the
/// read has `j + 1` symbols the digit derives from the all-zero start state.
#[derive(Debug, Clone, PartialEq)]
pub struct HcbChain {
    m: usize,
    bins: Vec<BinningTable>,
    layout: RadixLayout,
}

impl HcbChain {
    pub fn new(m: usize, bins: Vec<BinningTable>) -> Result<Self> {
        if bins.is_empty() {
            return Err(invalid("HCB chain needs at least one level"));
        }
        if bins[0].context_count() != m {
            return Err(invalid(format!(
                "first HCB binning covers {} symbols, alphabet has {m}",
                bins[0].context_count()
            )));
        }
        for j in 1..bins.len() {
            if bins[j].context_count() != bins[j - 1].n_bins() {
                return Err(invalid(format!("HCB level {j} input size does not match level {}", j - 1)));
            }
        }
        let layout = RadixLayout::new(bins.iter().map(BinningTable::n_bins).collect())?;
        Ok(Self { m, bins, layout })
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn layout(&self) -> &RadixLayout {
        &self.layout
    }

    pub fn binnings(&self) -> &[BinningTable] {
        &self.bins
    }

    /// Digits computed directly from the window of previous symbols.
    pub fn window_digits(&self, seq: &[Symbol], i: usize) -> Vec<usize> {
        (0..self.bins.len())
            .map(|d| {
                if i > d {
                    let mut v = self.bins[0].bin(seq[i - 1 - d] as usize);
                    for k in 1..=d {
                        v = self.bins[k].bin(v);
                    }
                    v
                } else {
                    let mut v = 0;
                    for k in d - i + 1..=d {
                        v = self.bins[k].bin(v);
                    }
                    v
                }
            })
            .collect()
    }

    pub fn window_state(&self, seq: &[Symbol], i: usize) -> usize {
        self.layout.encode(&self.window_digits(seq, i))
    }

    /// Digit shift after observing `symbol`: `(bins[0][v], bins[1][c1], ...)`.
    pub fn step(&self, digits: &[usize], symbol: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(digits.len());
        out.push(self.bins[0].bin(symbol));
        for j in 1..digits.len() {
            out.push(self.bins[j].bin(digits[j - 1]));
        }
        out
    }

    pub fn write(&self, w: &mut ByteWriter) {
        w.varint(self.m as u64);
        w.varint(self.bins.len() as u64);
        self.bins.iter().for_each(|b| w.blob(&b.to_bytes()));
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let m = r.varint_usize(1 << 16)?;
        let n = r.varint_usize(64)?;
        let bins = (0..n)
            .map(|_| BinningTable::from_bytes(r.blob()?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(m, bins).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// Trains one binning per level. Level 0 bins the previous symbol by its
/// order-1 statistics; level `j` bins level `j - 1` digits of `x[i-1-j]`
/// by their effect on `x[i]`. Budgets above the available contexts are clamped.
pub fn train_hcb_binnings(data: &Sequences, budgets: &[usize]) -> Result<(HcbChain, Vec<String>)> {
    let m = data.alphabet_size;
    data.validate()?;
    if budgets.is_empty() || budgets.iter().any(|&b| b == 0) {
        return Err(invalid("HCB budgets must be a non-empty list of positive counts"));
    }
    let mut warnings = Vec::new();
    let mut bins: Vec<BinningTable> = Vec::new();
    for (j, &budget) in budgets.iter().enumerate() {
        let inputs = if j == 0 { m } else { bins[j - 1].n_bins() };
        let stats = {
            let chain = &bins;
            collect_with(data, inputs, j + 1, |seq, i| {
                let mut v = seq[i - 1 - j] as usize;
                for b in chain.iter() {
                    v = b.bin(v);
                }
                v
            })
        };
        let table = match build_merge_tree(&stats) {
            Ok(tree) => {
                if budget > tree.leaf_count {
                    warnings.push(format!(
                        "level {j}: budget {budget} exceeds {} distinct contexts, clamped",
                        tree.leaf_count
                    ));
                }
                tree.cut(CutCriterion::MaxBins(budget.min(tree.leaf_count)))
            }
            Err(Error::EmptyStats) => {
                warnings.push(format!("level {j}: no training windows, single bin"));
                BinningTable::new(vec![0; inputs], 1)?
            }
            Err(e) => return Err(e),
        };
        bins.push(table);
    }
    Ok((HcbChain::new(m, bins)?, warnings))
}

/// Packs the chain's window into one transition table; emissions are smoothed
/// next-symbol frequencies per state from `data`.
pub fn build_hcb_transition(chain: &HcbChain, data: &Sequences) -> Result<TransitionTable> {
    let m = chain.alphabet_size();
    if data.alphabet_size != m {
        return Err(invalid("data alphabet does not match HCB chain"));
    }
    let layout = chain.layout().clone();
    let s = layout.state_count();
    let mut next = Vec::with_capacity(s * m);
    for state in 0..s {
        let digits = layout.decode(state);
        for v in 0..m {
            next.push(layout.encode(&chain.step(&digits, v)) as u32);
        }
    }
    let stats = collect_stats(data, &ContextSpec::HcbWindow(Arc::new(chain.clone())))?;
    TransitionTable::new(m, next, vec![1.0 / m as f64; s * m], layout)?.with_emissions(&stats)
}
