//! Byte-renormalized range ANS with a 32-bit state.
//!
//! Payload: final encoder state (u32 LE), then renormalization bytes in decode order.

use crate::error::{invalid, Error, Result};

/// Frequency precision in bits; every table sums to `1 << PRECISION`.
pub const PRECISION: u32 = 12;
/// Lower bound of the normalized state interval `[L, L << 8)`.
pub const RANS_L: u32 = 1 << 23;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
    precision: u32,
}

impl FreqTable {
    pub fn new(freqs: Vec<u32>, precision: u32) -> Result<Self> {
        if !(1..=16).contains(&precision) {
            return Err(invalid(format!("precision {precision} outside 1..=16")));
        }
        if freqs.is_empty() || freqs.iter().any(|&f| f == 0) {
            return Err(Error::InvalidDistribution("frequencies must be positive".into()));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in &freqs {
            acc = acc.saturating_add(f);
            cumulative.push(acc);
        }
        if acc != 1 << precision {
            return Err(Error::InvalidDistribution(format!(
                "frequencies sum to {acc}, expected {}",
                1u32 << precision
            )));
        }
        Ok(Self {
            freqs,
            cumulative,
            precision,
        })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        normalize_freqs(&vec![1; m], PRECISION)
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.freqs[s] as f64 / (1u64 << self.precision) as f64
    }
}

/// Scales counts to sum `2^precision`, every symbol at least 1.
pub fn normalize_freqs(counts: &[u64], precision: u32) -> Result<FreqTable> {
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    normalize_weights(&weights, precision)
}

/// [`normalize_freqs`] for real-valued non-negative weights.
pub fn normalize_weights(weights: &[f64], precision: u32) -> Result<FreqTable> {
    if !(1..=16).contains(&precision) {
        return Err(invalid(format!("precision {precision} outside 1..=16")));
    }
    let m = weights.len();
    let total = 1u64 << precision;
    if m == 0 || m as u64 > total {
        return Err(invalid(format!("alphabet {m} does not fit precision {precision}")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidDistribution("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidDistribution("no positive weight".into()));
    }
    let scaled: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut freqs: Vec<u64> = scaled.iter().map(|s| (s.floor() as u64).max(1)).collect();
    let mut diff = total as i64 - freqs.iter().sum::<u64>() as i64;
    while diff != 0 {
        // remainder = scaled - freq; grow the most under-served, shrink the most over-served
        let mut order: Vec<usize> = (0..m).collect();
        let rem = |s: usize, f: &[u64]| scaled[s] - f[s] as f64;
        if diff > 0 {
            order.sort_by(|&a, &b| rem(b, &freqs).total_cmp(&rem(a, &freqs)).then(a.cmp(&b)));
            for &s in order.iter().take(diff as usize) {
                freqs[s] += 1;
                diff -= 1;
            }
        } else {
            order.retain(|&s| freqs[s] > 1);
            order.sort_by(|&a, &b| rem(a, &freqs).total_cmp(&rem(b, &freqs)).then(a.cmp(&b)));
            for &s in order.iter().take((-diff) as usize) {
                freqs[s] -= 1;
                diff += 1;
            }
        }
    }
    FreqTable::new(freqs.into_iter().map(|f| f as u32).collect(), precision)
}

/// Supplies the cumulative table for the next symbol; decoder and encoder see the same schedule.
pub trait CodingModel {
    /// `m + 1` cumulative frequencies at [`PRECISION`] bits.
    fn cumulative(&self) -> &[u32];
    /// Called after each symbol, in forward order.
    fn advance(&mut self, symbol: usize);
}

/// A single static table.
impl CodingModel for FreqTable {
    fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    fn advance(&mut self, _symbol: usize) {}
}

pub fn encode(symbols: &[usize], model: &mut dyn CodingModel) -> Result<Vec<u8>> {
    let mut spans = Vec::with_capacity(symbols.len());
    for (i, &s) in symbols.iter().enumerate() {
        let cum = model.cumulative();
        if s + 1 >= cum.len() || cum[cum.len() - 1] != 1 << PRECISION {
            return Err(invalid(format!("symbol {s} at {i} outside coding table")));
        }
        let (start, freq) = (cum[s], cum[s + 1] - cum[s]);
        if freq == 0 {
            return Err(Error::InvalidDistribution(format!("symbol {s} at {i} has zero frequency")));
        }
        spans.push((start, freq));
        model.advance(s);
    }
    let mut x = RANS_L;
    let mut out = Vec::with_capacity(symbols.len() / 2 + 8);
    for &(start, freq) in spans.iter().rev() {
        let x_max = ((RANS_L >> PRECISION) << 8) * freq;
        while x >= x_max {
            out.push(x as u8);
            x >>= 8;
        }
        x = ((x / freq) << PRECISION) + (x % freq) + start;
    }
    let mut payload = Vec::with_capacity(out.len() + 4);
    payload.extend_from_slice(&x.to_le_bytes());
    payload.extend(out.iter().rev());
    Ok(payload)
}

pub fn decode(payload: &[u8], n: usize, model: &mut dyn CodingModel) -> Result<Vec<usize>> {
    if payload.len() < 4 {
        return Err(Error::Corrupt("rANS payload shorter than its state".into()));
    }
    let mut x = u32::from_le_bytes(payload[..4].try_into().unwrap());
    if !(RANS_L..=u32::MAX).contains(&x) || (x >> 31) != 0 {
        return Err(Error::Corrupt(format!("rANS state {x:#x} out of range")));
    }
    let mut pos = 4;
    let mask = (1u32 << PRECISION) - 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let cum = model.cumulative();
        let slot = x & mask;
        let s = cum.partition_point(|&c| c <= slot) - 1;
        if s + 1 >= cum.len() {
            return Err(Error::Corrupt(format!("rANS slot {slot} outside table at {i}")));
        }
        let (start, freq) = (cum[s], cum[s + 1] - cum[s]);
        x = freq * (x >> PRECISION) + slot - start;
        while x < RANS_L {
            let Some(&b) = payload.get(pos) else {
                return Err(Error::Corrupt(format!("rANS payload truncated at symbol {i}")));
            };
            x = (x << 8) | b as u32;
            pos += 1;
        }
        out.push(s);
        model.advance(s);
    }
    if x != RANS_L || pos != payload.len() {
        return Err(Error::Corrupt("rANS stream did not terminate cleanly".into()));
    }
    Ok(out)
}

/// Cost in bits of `symbols` under the model schedule, as the coder sees it.
pub fn model_bits(symbols: &[usize], model: &mut dyn CodingModel) -> f64 {
    let total = (1u32 << PRECISION) as f64;
    let mut bits = 0.0;
    for &s in symbols {
        let cum = model.cumulative();
        bits -= ((cum[s + 1] - cum[s]) as f64 / total).log2();
        model.advance(s);
    }
    bits
}
