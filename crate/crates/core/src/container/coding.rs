//! Per-position coding schedules over a field's reads.

use crate::adaptive::{AdaptiveCoder, AdaptiveParams};
use crate::ctxstats::{ContextModel, ContextStats};
use crate::error::Result;
use crate::hscm::TransitionTable;
use crate::rans::{normalize_freqs, normalize_weights, CodingModel, FreqTable, PRECISION};
use crate::seqio::Symbol;

/// Cumulative rows for every context of every table of one [`ContextModel`].
/// Row 0 is uniform and serves empty contexts.
#[derive(Debug, Clone)]
pub struct CodingRows {
    m: usize,
    index: Vec<Vec<u32>>,
    cums: Vec<u32>,
}

impl CodingRows {
    pub fn new(model: &ContextModel) -> Result<Self> {
        let m = model.alphabet();
        let mut cums = FreqTable::uniform(m)?.cumulative().to_vec();
        let mut index = Vec::with_capacity(model.tables().len());
        for table in model.tables() {
            index.push(Self::rows_for(table, m, &mut cums)?);
        }
        Ok(Self { m, index, cums })
    }

    fn rows_for(table: &ContextStats, m: usize, cums: &mut Vec<u32>) -> Result<Vec<u32>> {
        let mut idx = vec![0u32; table.context_count()];
        for (c, slot) in idx.iter_mut().enumerate() {
            let row = table.row(c);
            if row.iter().any(|&n| n > 0) {
                *slot = (cums.len() / (m + 1)) as u32;
                cums.extend_from_slice(normalize_freqs(row, PRECISION)?.cumulative());
            }
        }
        Ok(idx)
    }

    #[inline]
    fn row(&self, table: usize, context: usize) -> usize {
        self.index[table][context] as usize * (self.m + 1)
    }
}

/// Tracks which read and position the next symbol belongs to.
#[derive(Debug, Clone)]
struct Cursor<'a> {
    lengths: &'a [usize],
    read: usize,
    current: Vec<Symbol>,
}

impl<'a> Cursor<'a> {
    fn new(lengths: &'a [usize]) -> Self {
        let mut c = Self {
            lengths,
            read: 0,
            current: Vec::new(),
        };
        c.skip_finished();
        c
    }

    fn skip_finished(&mut self) {
        while self.read < self.lengths.len() && self.current.len() == self.lengths[self.read] {
            self.read += 1;
            self.current.clear();
        }
    }

    fn push(&mut self, s: usize) {
        self.current.push(s as Symbol);
        self.skip_finished();
    }

    fn done(&self) -> bool {
        self.read >= self.lengths.len()
    }
}

pub struct ContextStream<'a> {
    models: &'a [ContextModel],
    rows: &'a [CodingRows],
    selectors: &'a [usize],
    cursor: Cursor<'a>,
    offset: usize,
}

impl<'a> ContextStream<'a> {
    pub fn new(models: &'a [ContextModel], rows: &'a [CodingRows], selectors: &'a [usize], lengths: &'a [usize]) -> Self {
        let mut s = Self {
            models,
            rows,
            selectors,
            cursor: Cursor::new(lengths),
            offset: 0,
        };
        s.refresh();
        s
    }

    fn centroid(&self) -> usize {
        self.selectors.get(self.cursor.read).copied().unwrap_or(0)
    }

    fn refresh(&mut self) {
        if self.cursor.done() {
            return;
        }
        let c = self.centroid();
        let cur = &self.cursor.current;
        let slot = self.models[c].slot(cur, cur.len());
        self.offset = self.rows[c].row(slot.table, slot.context);
    }
}

impl CodingModel for ContextStream<'_> {
    fn cumulative(&self) -> &[u32] {
        let rows = &self.rows[self.centroid()];
        &rows.cums[self.offset..self.offset + rows.m + 1]
    }

    fn advance(&mut self, symbol: usize) {
        self.cursor.push(symbol);
        self.refresh();
    }
}

/// Coding tables of a transition model: one row per state.
#[derive(Debug, Clone)]
pub struct TransitionRows {
    pub table: TransitionTable,
    cums: Vec<u32>,
}

impl TransitionRows {
    pub fn new(table: TransitionTable) -> Result<Self> {
        let m = table.alphabet_size();
        let mut cums = Vec::with_capacity(table.state_count() * (m + 1));
        for s in 0..table.state_count() {
            cums.extend_from_slice(normalize_weights(table.emission(s), PRECISION)?.cumulative());
        }
        Ok(Self { table, cums })
    }
}

pub struct TransitionStream<'a> {
    rows: &'a TransitionRows,
    cursor: Cursor<'a>,
    state: usize,
}

impl<'a> TransitionStream<'a> {
    pub fn new(rows: &'a TransitionRows, lengths: &'a [usize]) -> Self {
        Self {
            rows,
            cursor: Cursor::new(lengths),
            state: 0,
        }
    }
}

impl CodingModel for TransitionStream<'_> {
    fn cumulative(&self) -> &[u32] {
        let m = self.rows.table.alphabet_size();
        &self.rows.cums[self.state * (m + 1)..(self.state + 1) * (m + 1)]
    }

    fn advance(&mut self, symbol: usize) {
        let read = self.cursor.read;
        self.state = self.rows.table.next(self.state, symbol);
        self.cursor.push(symbol);
        if self.cursor.read != read {
            self.state = 0;
        }
    }
}

pub fn adaptive_stream(m: usize, order: usize, params: AdaptiveParams, lengths: &[usize]) -> Result<AdaptiveCoder<'_>> {
    AdaptiveCoder::new(m, order, params, lengths)
}
