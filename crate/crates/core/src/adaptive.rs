//! Exponential moving averages and the integer shift-update CDF model.

use crate::error::{invalid, Error, Result};
use crate::rans::{normalize_freqs, CodingModel, PRECISION};
use crate::seqio::Symbol;

use serde::Serialize;

/// `eta = 1 - 2^-rate`.
pub fn eta_for_rate(rate: u32) -> f64 {
    1.0 - (-(rate as f64)).exp2()
}

/// Distance at which a contribution's weight halves: `-1 / lg(eta)`.
pub fn half_life(eta: f64) -> f64 {
    -1.0 / eta.log2()
}

/// Default search grid: `eta = 1 - 2^-r`, `r = 1..=14`.
pub fn default_eta_grid() -> Vec<f64> {
    (1..=14).map(eta_for_rate).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaEstimator {
    pub eta: f64,
    pub value: f64,
}

impl EmaEstimator {
    pub fn new(eta: f64, value: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(invalid(format!("eta {eta} outside (0,1)")));
        }
        Ok(Self { eta, value })
    }

    pub fn update(&mut self, x: f64) -> f64 {
        self.value = self.eta * self.value + (1.0 - self.eta) * x;
        self.value
    }

    pub fn half_life(&self) -> f64 {
        half_life(self.eta)
    }
}

/// Floor mixed into the EMA estimate so that no symbol underflows to probability 0.
const EMA_FLOOR: f64 = 1e-9;
pub const MIN_BLOCK: usize = 1000;

/// Causal bpv of `block` under an EMA frequency estimator of the given order (0 or 1).
pub fn ema_bpv(block: &[Symbol], m: usize, eta: f64, order: usize) -> Result<f64> {
    if order > 1 {
        return Err(invalid("EMA evaluation supports order 0 or 1"));
    }
    if block.is_empty() {
        return Err(Error::EmptyStats);
    }
    let rows = if order == 0 { 1 } else { m };
    let mut p = vec![1.0 / m as f64; rows * m];
    let mut bits = 0.0;
    let mut prev = 0usize;
    for &x in block {
        let x = x as usize;
        if x >= m {
            return Err(invalid(format!("symbol {x} outside alphabet {m}")));
        }
        let row = &mut p[(prev % rows) * m..(prev % rows + 1) * m];
        bits -= ((1.0 - EMA_FLOOR) * row[x] + EMA_FLOOR / m as f64).log2();
        for v in row.iter_mut() {
            *v *= eta;
        }
        row[x] += 1.0 - eta;
        prev = x;
    }
    Ok(bits / block.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct HalfLifeResult {
    pub eta: f64,
    pub half_life: f64,
    pub bpv: f64,
    /// Best and longest-memory grid points differ by less than [`FLAT_GAP`] bits/value.
    pub flat: bool,
    pub curve: Vec<(f64, f64)>,
}

pub const FLAT_GAP: f64 = 1e-3;

/// Grid argmin of causal EMA bpv on one independent block.
pub fn search_half_life(block: &[Symbol], m: usize, grid: &[f64], order: usize) -> Result<HalfLifeResult> {
    if block.len() < MIN_BLOCK {
        return Err(invalid(format!("block of {} symbols is shorter than {MIN_BLOCK}", block.len())));
    }
    if grid.is_empty() || grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(invalid("eta grid must be non-empty with values in (0,1)"));
    }
    let curve = grid
        .iter()
        .map(|&eta| ema_bpv(block, m, eta, order).map(|b| (eta, b)))
        .collect::<Result<Vec<_>>>()?;
    let (eta, bpv) = curve
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let longest = curve
        .iter()
        .copied()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty grid");
    Ok(HalfLifeResult {
        eta,
        half_life: half_life(eta),
        bpv,
        flat: longest.1 - bpv < FLAT_GAP,
        curve,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockScan {
    pub block: usize,
    pub eta: f64,
    pub half_life: f64,
    pub bpv: f64,
    pub flat: bool,
}

/// Splits the concatenated stream into blocks of `block_len` and searches each independently.
/// A trailing block shorter than the minimum is dropped.
pub fn scan_blocks(stream: &[Symbol], m: usize, block_len: usize, grid: &[f64], order: usize) -> Result<Vec<BlockScan>> {
    if block_len < MIN_BLOCK {
        return Err(invalid(format!("block length must be at least {MIN_BLOCK}")));
    }
    stream
        .chunks(block_len)
        .filter(|c| c.len() >= MIN_BLOCK)
        .enumerate()
        .map(|(block, c)| {
            search_half_life(c, m, grid, order).map(|r| BlockScan {
                block,
                eta: r.eta,
                half_life: r.half_life,
                bpv: r.bpv,
                flat: r.flat,
            })
        })
        .collect()
}

pub fn blocks_csv(rows: &[BlockScan]) -> String {
    let mut s = String::from("blockIndex,etaBest,halfLife,bpvBest\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.block, r.eta, r.half_life, r.bpv));
    }
    s
}

/// Parameters of an [`AdaptiveCdf`]; recorded in archives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AdaptiveParams {
    pub rate: u32,
    pub precision: u32,
    pub update_period: u32,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            rate: 4,
            precision: PRECISION,
            update_period: 16,
        }
    }
}

/// Per-context integer CDFs moved toward a target CDF by `(mix - cdf) >> rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveCdf {
    m: usize,
    params: AdaptiveParams,
    cdfs: Vec<u32>,
    pending: Vec<u64>,
    pending_n: Vec<u32>,
}

impl AdaptiveCdf {
    pub fn new(m: usize, contexts: usize, params: AdaptiveParams) -> Result<Self> {
        if m < 2 || m > 1 << params.precision {
            return Err(invalid(format!("alphabet {m} does not fit precision {}", params.precision)));
        }
        if !(1..=16).contains(&params.precision) || params.rate == 0 || params.rate >= 31 {
            return Err(invalid("adaptive rate must be in 1..31 and precision in 1..=16"));
        }
        if params.update_period == 0 || contexts == 0 {
            return Err(invalid("update period and context count must be positive"));
        }
        let total = 1u64 << params.precision;
        let row: Vec<u32> = (0..=m).map(|j| (j as u64 * total / m as u64) as u32).collect();
        let pending_len = if params.update_period > 1 { contexts * m } else { 0 };
        Ok(Self {
            m,
            params,
            cdfs: row.iter().copied().cycle().take(contexts * (m + 1)).collect(),
            pending: vec![0; pending_len],
            pending_n: vec![0; if params.update_period > 1 { contexts } else { 0 }],
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn params(&self) -> AdaptiveParams {
        self.params
    }

    pub fn context_count(&self) -> usize {
        self.cdfs.len() / (self.m + 1)
    }

    pub fn cdf(&self, context: usize) -> &[u32] {
        &self.cdfs[context * (self.m + 1)..(context + 1) * (self.m + 1)]
    }

    pub fn prob(&self, context: usize, s: usize) -> f64 {
        let c = self.cdf(context);
        (c[s + 1] - c[s]) as f64 / (1u64 << self.params.precision) as f64
    }

    /// Observes `symbol` in `context`, updating immediately or at the end of the block.
    pub fn update(&mut self, context: usize, symbol: usize) {
        let m = self.m;
        if self.params.update_period == 1 {
            let total = 1u32 << self.params.precision;
            let mix: Vec<u32> = (0..=m).map(|j| if j <= symbol { 0 } else { total }).collect();
            self.mix_toward(context, &mix);
            return;
        }
        self.pending[context * m + symbol] += 1;
        self.pending_n[context] += 1;
        if self.pending_n[context] == self.params.update_period {
            let counts = &self.pending[context * m..(context + 1) * m];
            let table = normalize_freqs(counts, self.params.precision).expect("block has counts");
            let mix = table.cumulative().to_vec();
            self.pending[context * m..(context + 1) * m].fill(0);
            self.pending_n[context] = 0;
            self.mix_toward(context, &mix);
        }
    }

    /// One shift step toward `mix`, then the monotonicity repair.
    pub fn mix_toward(&mut self, context: usize, mix: &[u32]) {
        let m = self.m;
        let total = 1u32 << self.params.precision;
        let rate = self.params.rate;
        let cdf = &mut self.cdfs[context * (m + 1)..(context + 1) * (m + 1)];
        for j in 1..m {
            cdf[j] = shift_toward(cdf[j], mix[j], rate);
        }
        repair(cdf, total);
    }
}

/// `c + ((mix - c) >> rate)` with an arithmetic shift.
pub fn shift_toward(c: u32, mix: u32, rate: u32) -> u32 {
    let c = c as i64;
    (c + ((mix as i64 - c) >> rate)) as u32
}

/// Forward sweep to give every symbol width >= 1, then backward clamp under the total.
fn repair(cdf: &mut [u32], total: u32) {
    let m = cdf.len() - 1;
    cdf[0] = 0;
    for j in 1..m {
        cdf[j] = cdf[j].max(cdf[j - 1] + 1);
    }
    cdf[m] = total;
    for j in (1..m).rev() {
        cdf[j] = cdf[j].min(cdf[j + 1] - 1);
    }
}

/// Context id for the adaptive coder: previous `order` symbols, missing history read as 0.
pub fn adaptive_context(seq: &[Symbol], i: usize, order: usize, m: usize) -> usize {
    let mut c = 0;
    for k in (1..=order).rev() {
        let v = if i >= k { seq[i - k] as usize } else { 0 };
        c = c * m + v;
    }
    c
}

/// Coding schedule over one stream of reads, using an order-`l` adaptive CDF that
/// persists across reads and restarts its history at each read boundary.
pub struct AdaptiveCoder<'a> {
    pub model: AdaptiveCdf,
    order: usize,
    lengths: &'a [usize],
    read: usize,
    pos: usize,
    history: Vec<Symbol>,
    context: usize,
}

impl<'a> AdaptiveCoder<'a> {
    pub fn new(m: usize, order: usize, params: AdaptiveParams, lengths: &'a [usize]) -> Result<Self> {
        let contexts = (m as u64)
            .checked_pow(order as u32)
            .filter(|&c| c <= 1 << 22)
            .ok_or_else(|| invalid(format!("adaptive order {order} too large for alphabet {m}")))?;
        let mut coder = Self {
            model: AdaptiveCdf::new(m, contexts as usize, params)?,
            order,
            lengths,
            read: 0,
            pos: 0,
            history: Vec::new(),
            context: 0,
        };
        coder.skip_empty();
        Ok(coder)
    }

    fn skip_empty(&mut self) {
        while self.read < self.lengths.len() && self.pos == self.lengths[self.read] {
            self.read += 1;
            self.pos = 0;
            self.history.clear();
        }
        self.context = 0;
        let m = self.model.alphabet_size();
        self.context = adaptive_context(&self.history, self.history.len(), self.order, m);
    }
}

impl CodingModel for AdaptiveCoder<'_> {
    fn cumulative(&self) -> &[u32] {
        self.model.cdf(self.context)
    }

    fn advance(&mut self, symbol: usize) {
        self.model.update(self.context, symbol);
        self.history.push(symbol as Symbol);
        if self.history.len() > self.order {
            self.history.remove(0);
        }
        self.pos += 1;
        self.skip_empty();
    }
}
