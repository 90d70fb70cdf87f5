//! Context windows, count tables, and the rate quantities every optimizer consumes.

use std::sync::Arc;

use rayon::prelude::*;

use crate::binner::nested::NestedContext;
use crate::binner::BinningTable;
use crate::error::{invalid, Error, Result};
use crate::hscm::HcbChain;
use crate::seqio::{Sequences, Symbol};
use crate::wire::{ByteReader, ByteWriter};

/// Start-of-read tables never exceed this many cells; longer histories fall back
/// to a shorter order.
pub const START_TABLE_CELLS: usize = 1 << 16;

/// Tables at most this large are collected in parallel shards.
const PARALLEL_CELLS: usize = 1 << 20;

/// How the conditioning context of a symbol is formed.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSpec {
    /// `l` previous symbols; most recent symbol is the lowest digit.
    Order(usize),
    /// Position in read, clamped to `max_pos - 1`.
    Position(usize),
    /// Position (clamped) combined with the previous symbol: `pos * m + prev`.
    PositionAndPrev(usize),
    /// Another spec followed by a bin lookup.
    Binned {
        base: Box<ContextSpec>,
        table: BinningTable,
    },
    /// Multi-lookup composite from nested binning.
    Nested(Arc<NestedContext>),
    /// Explicit window of hierarchically binned previous values.
    HcbWindow(Arc<HcbChain>),
}

impl ContextSpec {
    pub fn binned(base: ContextSpec, table: BinningTable) -> Self {
        ContextSpec::Binned {
            base: Box::new(base),
            table,
        }
    }

    /// `|C|` for alphabet size `m`.
    pub fn context_count(&self, m: usize) -> usize {
        match self {
            ContextSpec::Order(l) => m.pow(*l as u32),
            ContextSpec::Position(p) => *p,
            ContextSpec::PositionAndPrev(p) => p * m,
            ContextSpec::Binned { table, .. } => table.n_bins(),
            ContextSpec::Nested(n) => n.state_count(),
            ContextSpec::HcbWindow(c) => c.layout().state_count(),
        }
    }

    /// Number of leading symbols per read without a full context.
    pub fn warmup(&self) -> usize {
        match self {
            ContextSpec::Order(l) => *l,
            ContextSpec::Position(_) => 0,
            ContextSpec::PositionAndPrev(_) => 1,
            ContextSpec::Binned { base, .. } => base.warmup(),
            ContextSpec::Nested(n) => n.target_order(),
            ContextSpec::HcbWindow(_) => 0,
        }
    }

    /// Context id for `seq[i]`; requires `i >= warmup()`.
    pub fn context_at(&self, seq: &[Symbol], i: usize, m: usize) -> usize {
        match self {
            ContextSpec::Order(l) => order_context(seq, i, *l, m),
            ContextSpec::Position(p) => i.min(p - 1),
            ContextSpec::PositionAndPrev(p) => i.min(p - 1) * m + seq[i - 1] as usize,
            ContextSpec::Binned { base, table } => table.bin(base.context_at(seq, i, m)),
            ContextSpec::Nested(n) => n.state_at(seq, i),
            ContextSpec::HcbWindow(c) => c.window_state(seq, i),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if m < 2 {
            return Err(invalid(format!("alphabet size {m} < 2")));
        }
        match self {
            ContextSpec::Order(l) => {
                let cells = (m as u128).checked_pow(*l as u32 + 1);
                if cells.is_none_or(|c| c > 1 << 28) {
                    return Err(invalid(format!("order {l} over alphabet {m} is too large")));
                }
            }
            ContextSpec::Position(p) | ContextSpec::PositionAndPrev(p) => {
                if *p == 0 {
                    return Err(invalid("position context needs max_pos >= 1"));
                }
            }
            ContextSpec::Binned { base, table } => {
                base.validate(m)?;
                if table.context_count() != base.context_count(m) {
                    return Err(invalid(format!(
                        "binning table covers {} contexts, base spec has {}",
                        table.context_count(),
                        base.context_count(m)
                    )));
                }
            }
            ContextSpec::Nested(n) => {
                if n.alphabet_size() != m {
                    return Err(invalid("nested context built for a different alphabet"));
                }
            }
            ContextSpec::HcbWindow(c) => {
                if c.alphabet_size() != m {
                    return Err(invalid("HCB chain built for a different alphabet"));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, w: &mut ByteWriter) {
        match self {
            ContextSpec::Order(l) => {
                w.u8(0);
                w.varint(*l as u64);
            }
            ContextSpec::Position(p) => {
                w.u8(1);
                w.varint(*p as u64);
            }
            ContextSpec::PositionAndPrev(p) => {
                w.u8(2);
                w.varint(*p as u64);
            }
            ContextSpec::Binned { base, table } => {
                w.u8(3);
                base.write(w);
                w.blob(&table.to_bytes());
            }
            ContextSpec::Nested(n) => {
                w.u8(4);
                n.write(w);
            }
            ContextSpec::HcbWindow(c) => {
                w.u8(5);
                c.write(w);
            }
        }
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        Ok(match r.u8()? {
            0 => ContextSpec::Order(r.varint_usize(64)?),
            1 => ContextSpec::Position(r.varint_usize(1 << 24)?),
            2 => ContextSpec::PositionAndPrev(r.varint_usize(1 << 24)?),
            3 => {
                let base = ContextSpec::read(r)?;
                let table = BinningTable::from_bytes(r.blob()?)?;
                ContextSpec::binned(base, table)
            }
            4 => ContextSpec::Nested(Arc::new(NestedContext::read(r)?)),
            5 => ContextSpec::HcbWindow(Arc::new(HcbChain::read(r)?)),
            t => return Err(Error::Format(format!("unknown context spec tag {t}"))),
        })
    }
}

pub(crate) fn order_context(seq: &[Symbol], i: usize, l: usize, m: usize) -> usize {
    let mut id = 0usize;
    for j in (1..=l).rev() {
        id = id * m + seq[i - j] as usize;
    }
    id
}

/// Largest history order usable at read position `j` within [`START_TABLE_CELLS`].
pub fn start_order(m: usize, j: usize) -> usize {
    let mut h = 0;
    let mut cells = m;
    while h < j && cells.saturating_mul(m) <= START_TABLE_CELLS {
        cells *= m;
        h += 1;
    }
    h
}

/// Counts over `(context, next symbol)` windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextStats {
    alphabet_size: usize,
    context_count: usize,
    counts: Vec<u64>,
    window_total: u64,
}

impl ContextStats {
    pub fn new(alphabet_size: usize, context_count: usize) -> Self {
        Self {
            alphabet_size,
            context_count,
            counts: vec![0; alphabet_size * context_count],
            window_total: 0,
        }
    }

    /// Builds from a `|C| x m` table of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(invalid("count rows must be non-empty and of equal length"));
        }
        let mut s = Self::new(m, rows.len());
        for (c, row) in rows.iter().enumerate() {
            for (x, &n) in row.iter().enumerate() {
                s.add_n(c, x, n);
            }
        }
        Ok(s)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn context_count(&self) -> usize {
        self.context_count
    }

    pub fn window_total(&self) -> u64 {
        self.window_total
    }

    pub fn is_empty(&self) -> bool {
        self.window_total == 0
    }

    /// Smoothing mass added to every joint cell: `1 / (|W| m)`.
    pub fn epsilon(&self) -> f64 {
        1.0 / (self.window_total.max(1) as f64 * self.alphabet_size as f64)
    }

    #[inline]
    pub fn add(&mut self, context: usize, symbol: usize) {
        self.counts[context * self.alphabet_size + symbol] += 1;
        self.window_total += 1;
    }

    pub fn add_n(&mut self, context: usize, symbol: usize, n: u64) {
        self.counts[context * self.alphabet_size + symbol] += n;
        self.window_total += n;
    }

    #[inline]
    pub fn count(&self, context: usize, symbol: usize) -> u64 {
        self.counts[context * self.alphabet_size + symbol]
    }

    pub fn row(&self, context: usize) -> &[u64] {
        let m = self.alphabet_size;
        &self.counts[context * m..(context + 1) * m]
    }

    pub fn row_sum(&self, context: usize) -> u64 {
        self.row(context).iter().sum()
    }

    /// `p_c = rowSum(c) / |W|`.
    pub fn context_prob(&self, context: usize) -> f64 {
        if self.window_total == 0 {
            return 0.0;
        }
        self.row_sum(context) as f64 / self.window_total as f64
    }

    /// Empirical conditional `P_c`; uniform for an empty context.
    pub fn conditional(&self, context: usize) -> Vec<f64> {
        let row = self.row(context);
        let n: u64 = row.iter().sum();
        if n == 0 {
            return vec![1.0 / self.alphabet_size as f64; self.alphabet_size];
        }
        row.iter().map(|&c| c as f64 / n as f64).collect()
    }

    /// `(n_cx + 1/m) / (n_c + 1)`; uniform for an empty context.
    #[inline]
    pub fn smoothed_prob(&self, context: usize, symbol: usize) -> f64 {
        let m = self.alphabet_size as f64;
        let n = self.row_sum(context) as f64;
        (self.count(context, symbol) as f64 + 1.0 / m) / (n + 1.0)
    }

    pub fn smoothed_conditional(&self, context: usize) -> Vec<f64> {
        let m = self.alphabet_size as f64;
        let row = self.row(context);
        let n: u64 = row.iter().sum();
        row.iter()
            .map(|&c| (c as f64 + 1.0 / m) / (n as f64 + 1.0))
            .collect()
    }

    /// Adds another table of the same shape.
    pub fn merge(&mut self, other: &ContextStats) -> Result<()> {
        if other.alphabet_size != self.alphabet_size || other.context_count != self.context_count {
            return Err(invalid("cannot merge statistics of different shapes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.window_total += other.window_total;
        Ok(())
    }

    /// Pools rows by bin id.
    pub fn rebin(&self, table: &BinningTable) -> Result<ContextStats> {
        if table.context_count() != self.context_count {
            return Err(invalid(format!(
                "binning table covers {} contexts, statistics have {}",
                table.context_count(),
                self.context_count
            )));
        }
        let mut out = ContextStats::new(self.alphabet_size, table.n_bins());
        for c in 0..self.context_count {
            let b = table.bin(c);
            for (x, &n) in self.row(c).iter().enumerate() {
                if n > 0 {
                    out.add_n(b, x, n);
                }
            }
        }
        Ok(out)
    }

    /// `CST1` blob: magic, `m` (u32), `|C|` (u32), row-major u64 counts.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"CST1");
        w.u32(self.alphabet_size as u32);
        w.u32(self.context_count as u32);
        for &c in &self.counts {
            w.u64(c);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let s = Self::read_cst1(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after CST1 blob".into()));
        }
        Ok(s)
    }

    pub(crate) fn read_cst1(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(b"CST1")?;
        let m = r.u32()? as usize;
        let c = r.u32()? as usize;
        let cells = m
            .checked_mul(c)
            .filter(|&n| n.saturating_mul(8) <= r.remaining())
            .ok_or_else(|| Error::Corrupt("CST1 table larger than blob".into()))?;
        let mut s = ContextStats::new(m, c);
        for i in 0..cells {
            let n = r.u64()?;
            s.counts[i] = n;
            s.window_total += n;
        }
        Ok(s)
    }

    /// Compact encoding: per row, the number of non-zero cells then `(symbol, count)` varints.
    pub fn write_sparse(&self, w: &mut ByteWriter) {
        w.varint(self.alphabet_size as u64);
        w.varint(self.context_count as u64);
        for c in 0..self.context_count {
            let row = self.row(c);
            let nz = row.iter().filter(|&&n| n > 0).count();
            w.varint(nz as u64);
            for (x, &n) in row.iter().enumerate() {
                if n > 0 {
                    w.varint(x as u64);
                    w.varint(n);
                }
            }
        }
    }

    pub fn read_sparse(r: &mut ByteReader<'_>) -> Result<Self> {
        let m = r.varint_usize(1 << 16)?;
        let c = r.varint_usize(1 << 28)?;
        if m.saturating_mul(c) > 1 << 28 {
            return Err(Error::Corrupt("sparse table too large".into()));
        }
        let mut s = ContextStats::new(m, c);
        for ctx in 0..c {
            let nz = r.varint_usize(m)?;
            for _ in 0..nz {
                let x = r.varint_usize(m.saturating_sub(1))?;
                let n = r.varint()?;
                s.add_n(ctx, x, n);
            }
        }
        Ok(s)
    }

    /// CSV with one row per context: id, `p_c`, `H(P_c)`, total, then per-symbol counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("context,p,entropy,total");
        for x in 0..self.alphabet_size {
            out.push_str(&format!(",n{x}"));
        }
        out.push('\n');
        for c in 0..self.context_count {
            let row = self.row(c);
            let n: u64 = row.iter().sum();
            let h = if n == 0 {
                0.0
            } else {
                entropy_unchecked(&self.conditional(c))
            };
            out.push_str(&format!("{c},{},{h},{n}", self.context_prob(c)));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Counts windows of every read under `spec`, starting at each read's warmup offset.
pub fn collect_stats(data: &Sequences, spec: &ContextSpec) -> Result<ContextStats> {
    collect_stats_from(data, spec, spec.warmup())
}

/// Like [`collect_stats`] but only positions `>= start` contribute (`start >= warmup`).
pub fn collect_stats_from(data: &Sequences, spec: &ContextSpec, start: usize) -> Result<ContextStats> {
    let m = data.alphabet_size;
    spec.validate(m)?;
    if start < spec.warmup() {
        return Err(invalid(format!(
            "start {start} precedes the spec's warmup {}",
            spec.warmup()
        )));
    }
    data.validate()?;
    let contexts = spec.context_count(m);
    let fill = |stats: &mut ContextStats, seq: &Vec<Symbol>| {
        for i in start..seq.len() {
            stats.add(spec.context_at(seq, i, m), seq[i] as usize);
        }
    };
    if contexts * m <= PARALLEL_CELLS && data.reads.len() > 64 {
        let shards: Vec<ContextStats> = data
            .reads
            .par_chunks(256)
            .map(|chunk| {
                let mut s = ContextStats::new(m, contexts);
                chunk.iter().for_each(|seq| fill(&mut s, seq));
                s
            })
            .collect();
        let mut total = ContextStats::new(m, contexts);
        for s in &shards {
            total.merge(s)?;
        }
        Ok(total)
    } else {
        let mut s = ContextStats::new(m, contexts);
        data.reads.iter().for_each(|seq| fill(&mut s, seq));
        Ok(s)
    }
}

/// Counts `(f(seq, i), seq[i])` for every `i >= start` of every read.
pub(crate) fn collect_with(
    data: &Sequences,
    contexts: usize,
    start: usize,
    f: impl Fn(&[Symbol], usize) -> usize,
) -> ContextStats {
    let mut s = ContextStats::new(data.alphabet_size, contexts);
    for seq in &data.reads {
        for i in start..seq.len() {
            s.add(f(seq, i), seq[i] as usize);
        }
    }
    s
}

pub(crate) fn entropy_unchecked(dist: &[f64]) -> f64 {
    dist.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Shannon entropy in bits; `0 lg 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if let Some(p) = dist.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("entry {p} is negative or NaN")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(entropy_unchecked(dist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRate {
    pub context: usize,
    pub p: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `R = sum_c p_c H(P_c)` in bits/value.
    pub bpv: f64,
    pub per_context: Vec<ContextRate>,
}

/// Rate of the full context model described by `stats`.
///
/// Only contexts with `p_c > 0` contribute, so the result uses the empirical
/// conditionals; smoothing only changes rows of empty contexts.
pub fn rate(stats: &ContextStats) -> Result<RateReport> {
    if stats.is_empty() {
        return Err(Error::EmptyStats);
    }
    let mut per_context = Vec::new();
    let mut bpv = 0.0;
    for c in 0..stats.context_count() {
        let p = stats.context_prob(c);
        if p > 0.0 {
            let h = entropy_unchecked(&stats.conditional(c));
            bpv += p * h;
            per_context.push(ContextRate {
                context: c,
                p,
                entropy: h,
            });
        }
    }
    Ok(RateReport { bpv, per_context })
}

/// Any model assigning `Pr(x_i | x_1..x_{i-1})` along one read.
pub trait ConditionalModel {
    fn alphabet_size(&self) -> usize;

    /// Calls `f(i, Pr(seq[i] | seq[..i]))` for every position in order.
    fn visit_probs(&self, seq: &[Symbol], f: &mut dyn FnMut(usize, f64));
}

/// Total coding cost of one read in bits. Errors on a zero probability.
pub fn sequence_bits(model: &dyn ConditionalModel, seq: &[Symbol], read: usize) -> Result<f64> {
    let mut bits = 0.0;
    let mut zero = None;
    model.visit_probs(seq, &mut |i, p| {
        if p <= 0.0 {
            zero.get_or_insert(i);
        } else {
            bits -= p.log2();
        }
    });
    match zero {
        Some(position) => Err(Error::ZeroProbability { read, position }),
        None => Ok(bits),
    }
}

/// `(1/N) sum lg(1 / Pr(x_i | context_i))` over every symbol of every read.
pub fn empirical_bpv(data: &Sequences, model: &dyn ConditionalModel) -> Result<f64> {
    let n = data.total_len();
    if n == 0 {
        return Err(Error::EmptyStats);
    }
    let mut total = 0.0;
    for (r, seq) in data.reads.iter().enumerate() {
        total += sequence_bits(model, seq, r)?;
    }
    Ok(total / n as f64)
}

/// Every symbol has probability `1/m`.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel(pub usize);

impl ConditionalModel for UniformModel {
    fn alphabet_size(&self) -> usize {
        self.0
    }

    fn visit_probs(&self, seq: &[Symbol], f: &mut dyn FnMut(usize, f64)) {
        let p = 1.0 / self.0 as f64;
        (0..seq.len()).for_each(|i| f(i, p));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Raw empirical frequencies; unseen symbols get probability 0.
    None,
    /// Pseudo-count `1/m` per cell: `(n_cx + 1/m) / (n_c + 1)`.
    #[default]
    Epsilon,
}

/// A context model that codes every symbol of a read: `spec` for positions past
/// the warmup, and one order-`h` start table per earlier position.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    spec: ContextSpec,
    /// Index 0 is the main table, `1 + j` the start table of position `j`.
    tables: Vec<ContextStats>,
    smoothing: Smoothing,
}

/// Where a symbol's distribution lives inside a [`ContextModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub table: usize,
    pub context: usize,
}

impl ContextModel {
    /// Empty count tables shaped for `spec` over alphabet `m`.
    pub fn empty(spec: ContextSpec, m: usize) -> Result<Self> {
        spec.validate(m)?;
        let mut tables = vec![ContextStats::new(m, spec.context_count(m))];
        for j in 0..spec.warmup() {
            tables.push(ContextStats::new(m, m.pow(start_order(m, j) as u32)));
        }
        Ok(Self {
            spec,
            tables,
            smoothing: Smoothing::default(),
        })
    }

    pub fn fit(data: &Sequences, spec: ContextSpec) -> Result<Self> {
        let mut model = Self::empty(spec, data.alphabet_size)?;
        data.validate()?;
        for seq in &data.reads {
            model.observe(seq);
        }
        Ok(model)
    }

    pub fn from_tables(spec: ContextSpec, tables: Vec<ContextStats>) -> Result<Self> {
        let m = tables
            .first()
            .map(ContextStats::alphabet_size)
            .ok_or_else(|| invalid("context model needs a main table"))?;
        let shape = Self::empty(spec, m)?;
        if tables.len() != shape.tables.len()
            || tables
                .iter()
                .zip(&shape.tables)
                .any(|(a, b)| a.context_count() != b.context_count() || a.alphabet_size() != m)
        {
            return Err(Error::Format("context model tables do not match the spec".into()));
        }
        Ok(Self { tables, ..shape })
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn spec(&self) -> &ContextSpec {
        &self.spec
    }

    pub fn alphabet(&self) -> usize {
        self.tables[0].alphabet_size()
    }

    pub fn main(&self) -> &ContextStats {
        &self.tables[0]
    }

    pub fn tables(&self) -> &[ContextStats] {
        &self.tables
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    #[inline]
    pub fn slot(&self, seq: &[Symbol], i: usize) -> Slot {
        let m = self.alphabet();
        let warm = self.spec.warmup();
        if i >= warm {
            Slot {
                table: 0,
                context: self.spec.context_at(seq, i, m),
            }
        } else {
            Slot {
                table: 1 + i,
                context: order_context(seq, i, start_order(m, i), m),
            }
        }
    }

    /// Adds one read's counts.
    pub fn observe(&mut self, seq: &[Symbol]) {
        for i in 0..seq.len() {
            let s = self.slot(seq, i);
            self.tables[s.table].add(s.context, seq[i] as usize);
        }
    }

    /// Pools another model's counts (same spec).
    pub fn absorb(&mut self, other: &ContextModel) -> Result<()> {
        if self.tables.len() != other.tables.len() {
            return Err(invalid("cannot pool models with different table layouts"));
        }
        for (a, b) in self.tables.iter_mut().zip(&other.tables) {
            a.merge(b)?;
        }
        Ok(())
    }

    /// Same spec and shapes, all counts zero.
    pub fn cleared(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| ContextStats::new(t.alphabet_size(), t.context_count()))
                .collect(),
            smoothing: self.smoothing,
        }
    }

    #[inline]
    pub fn prob(&self, slot: Slot, symbol: usize) -> f64 {
        let t = &self.tables[slot.table];
        match self.smoothing {
            Smoothing::Epsilon => t.smoothed_prob(slot.context, symbol),
            Smoothing::None => {
                let n = t.row_sum(slot.context);
                if n == 0 {
                    0.0
                } else {
                    t.count(slot.context, symbol) as f64 / n as f64
                }
            }
        }
    }
}

impl ConditionalModel for ContextModel {
    fn alphabet_size(&self) -> usize {
        self.alphabet()
    }

    fn visit_probs(&self, seq: &[Symbol], f: &mut dyn FnMut(usize, f64)) {
        for i in 0..seq.len() {
            f(i, self.prob(self.slot(seq, i), seq[i] as usize));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(m: usize, seq: Vec<Symbol>) -> Sequences {
        Sequences::single(m, seq)
    }

    #[test]
    fn order1_counts() {
        let s = collect_stats(&one(2, vec![0, 1, 0, 1]), &ContextSpec::Order(1)).unwrap();
        assert_eq!(s.row(0), &[0, 2]);
        assert_eq!(s.row(1), &[1, 0]);
        assert_eq!(s.window_total(), 3);
    }

    #[test]
    fn order0_counts() {
        let s = collect_stats(&one(2, vec![0, 1, 0, 1]), &ContextSpec::Order(0)).unwrap();
        assert_eq!(s.row(0), &[2, 2]);
        assert_eq!(s.window_total(), 4);
    }

    #[test]
    fn position_counts() {
        let d = Sequences::new(2, vec![vec![0, 1], vec![0, 1]]);
        let s = collect_stats(&d, &ContextSpec::Position(2)).unwrap();
        assert_eq!(s.row(0), &[2, 0]);
        assert_eq!(s.row(1), &[0, 2]);
        assert_eq!(s.window_total(), 4);
    }

    #[test]
    fn windows_do_not_span_reads() {
        let d = Sequences::new(3, vec![vec![0, 1, 2], vec![2], vec![1, 1]]);
        let s = collect_stats(&d, &ContextSpec::Order(2)).unwrap();
        assert_eq!(s.window_total(), 1);
        // context (x_{i-1}=1, x_{i-2}=0) -> id 1 + 3*0
        assert_eq!(s.count(1, 2), 1);
    }

    #[test]
    fn order_too_long_gives_empty_stats() {
        let s = collect_stats(&one(4, vec![0, 1]), &ContextSpec::Order(3)).unwrap();
        assert!(s.is_empty());
        assert!(matches!(rate(&s), Err(Error::EmptyStats)));
    }

    #[test]
    fn context_id_digit_order() {
        // most recent symbol is the lowest digit
        let seq = [2, 1, 0];
        assert_eq!(order_context(&seq, 2, 2, 3), 1 + 3 * 2);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5).abs() < 1e-15);
        assert!(entropy(&[-0.1, 1.1]).is_err());
        assert!(entropy(&[0.5, 0.4]).is_err());
    }

    #[test]
    fn rate_examples() {
        let det = ContextStats::from_rows(&[vec![5, 0], vec![0, 7]]).unwrap();
        assert_eq!(rate(&det).unwrap().bpv, 0.0);
        let uni = ContextStats::from_rows(&[vec![3, 3, 3, 3]]).unwrap();
        assert!((rate(&uni).unwrap().bpv - 2.0).abs() < 1e-12);
        let mixed = ContextStats::from_rows(&[vec![3, 1], vec![1, 3]]).unwrap();
        // hand summation: 2 * 0.5 * (0.75 lg(4/3) + 0.25 lg 4)
        let oracle = 0.75 * (4.0f64 / 3.0).log2() + 0.25 * 2.0;
        assert!((rate(&mixed).unwrap().bpv - oracle).abs() < 1e-12);
        assert!((oracle - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn empirical_bpv_of_true_order0_model_equals_rate() {
        let d = one(4, vec![0, 1, 1, 2, 3, 3, 3, 0, 2, 2, 1]);
        let stats = collect_stats(&d, &ContextSpec::Order(0)).unwrap();
        let model = ContextModel::fit(&d, ContextSpec::Order(0))
            .unwrap()
            .with_smoothing(Smoothing::None);
        let bpv = empirical_bpv(&d, &model).unwrap();
        assert!((bpv - rate(&stats).unwrap().bpv).abs() < 1e-9);
    }

    #[test]
    fn uniform_model_costs_lg_m() {
        let d = Sequences::new(4, vec![vec![0, 3, 2, 2, 1], vec![1, 1]]);
        assert_eq!(empirical_bpv(&d, &UniformModel(4)).unwrap(), 2.0);
    }

    #[test]
    fn zero_probability_names_position() {
        let train = one(2, vec![0, 0, 0]);
        let model = ContextModel::fit(&train, ContextSpec::Order(0))
            .unwrap()
            .with_smoothing(Smoothing::None);
        let test = Sequences::new(2, vec![vec![0], vec![0, 0, 1]]);
        match empirical_bpv(&test, &model) {
            Err(Error::ZeroProbability { read, position }) => {
                assert_eq!((read, position), (1, 2));
            }
            other => panic!("expected zero-probability error, got {other:?}"),
        }
    }

    #[test]
    fn start_tables_cover_prefix() {
        let d = Sequences::new(4, vec![vec![0, 1, 2, 3, 0], vec![1]]);
        let model = ContextModel::fit(&d, ContextSpec::Order(2)).unwrap();
        assert_eq!(model.tables().len(), 3);
        let coded: u64 = model.tables().iter().map(ContextStats::window_total).sum();
        assert_eq!(coded, 6);
        assert_eq!(model.tables()[2].context_count(), 4);
    }

    #[test]
    fn start_order_falls_back() {
        assert_eq!(start_order(4, 3), 3);
        assert_eq!(start_order(64, 3), 1);
        assert_eq!(start_order(164, 1), 1);
        assert_eq!(start_order(300, 1), 0);
    }

    #[test]
    fn cst1_and_sparse_roundtrip() {
        let s = ContextStats::from_rows(&[vec![1, 0, 7], vec![0, 0, 0], vec![3, 2, 1]]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"CST1");
        assert_eq!(bytes.len(), 12 + 9 * 8);
        assert_eq!(ContextStats::from_bytes(&bytes).unwrap(), s);
        let mut w = ByteWriter::new();
        s.write_sparse(&mut w);
        let buf = w.into_inner();
        assert_eq!(ContextStats::read_sparse(&mut ByteReader::new(&buf)).unwrap(), s);
        assert!(ContextStats::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = ContextStats::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap();
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("context,p,entropy,total,n0,n1"));
    }

    fn random_data() -> impl Strategy<Value = Sequences> {
        (2usize..=4).prop_flat_map(|m| {
            prop::collection::vec(prop::collection::vec(0..m as Symbol, 0..60), 1..6)
                .prop_map(move |reads| Sequences::new(m, reads))
        })
    }

    proptest! {
        #[test]
        fn probabilities_normalise(data in random_data(), l in 0usize..3) {
            let s = collect_stats(&data, &ContextSpec::Order(l)).unwrap();
            prop_assume!(!s.is_empty());
            let total: f64 = (0..s.context_count()).map(|c| s.context_prob(c)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for c in 0..s.context_count() {
                let row: f64 = s.smoothed_conditional(c).iter().sum();
                prop_assert!((row - 1.0).abs() < 1e-9);
            }
            let r = rate(&s).unwrap().bpv;
            prop_assert!(r >= 0.0 && r <= (data.alphabet_size as f64).log2() + 1e-12);
        }

        #[test]
        fn conditioning_never_increases_rate(data in random_data(), l in 0usize..3) {
            let lo = collect_stats_from(&data, &ContextSpec::Order(l), l + 1).unwrap();
            let hi = collect_stats(&data, &ContextSpec::Order(l + 1)).unwrap();
            prop_assume!(!hi.is_empty());
            prop_assert!(rate(&hi).unwrap().bpv <= rate(&lo).unwrap().bpv + 1e-9);
        }

        #[test]
        fn rate_is_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(0u64..20, 3), 2..8), seed in 0u64..1000) {
            let s = ContextStats::from_rows(&rows).unwrap();
            prop_assume!(!s.is_empty());
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let k = (seed as usize) % rows.len();
            perm.rotate_left(k);
            perm.swap(0, rows.len() - 1);
            let shuffled: Vec<Vec<u64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let t = ContextStats::from_rows(&shuffled).unwrap();
            prop_assert!((rate(&s).unwrap().bpv - rate(&t).unwrap().bpv).abs() < 1e-12);
        }
    }
}
