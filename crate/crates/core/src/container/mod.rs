//! Archive format and compress/decompress pipelines.
//!
//! Layout of a `CGC1` archive (all integers little-endian, `varint` = LEB128):
//!
//! ```text
//! "CGC1" u8 version
//! u8 precision  u8 log2(rANS lower bound)
//! varint reads
//! u8 layout            0 bases only | 1 bases + qualities | 2 packed
//!   layout 1: varint quality_max
//!   layout 2: varint packed_max_score  varint quality_max
//! varint length_bytes  size of the varint-encoded lengths block
//! reads x blob(id)     verbatim read ids
//! varint fields, then per field:
//!   varint alphabet  u8 model tag
//!   0 empty
//!   1 context: CMS1 centroid block, u8 selector (0 none | 1 flat | 2 entropy [+ k varint counts])
//!   2 transition: HSC1 table
//!   3 adaptive: varint order  u8 rate  u8 precision  varint update_period
//! varint streams, then per stream: u8 kind, blob payload
//! ```
//!
//! `blob` is a varint length followed by that many bytes. Each payload is one rANS stream.

mod coding;
pub mod plan;

pub use plan::{ClusterPlan, CompressionPlan, FieldPlan, ModelPlan, SelectorCoding, StreamPlans, PRESETS};

use coding::{adaptive_stream, CodingRows, ContextStream, TransitionRows, TransitionStream};

use crate::adaptive::AdaptiveParams;
use crate::binner::nested::{nested_binning, NestedOptions};
use crate::binner::{build_merge_tree, BinningTable};
use crate::cluster::{header_cost, kmeans_cluster, read_centroids, write_centroids};
use crate::ctxstats::{collect_stats, ContextModel, ContextSpec};
use crate::error::{invalid, Error, Result};
use crate::hscm::{build_hcb_transition, determinize, optimize_soft, train_hcb_binnings, SoftOptions, TransitionTable};
use crate::rans::{self, normalize_freqs, FreqTable, PRECISION};
use crate::seqio::{unpack_symbol, Alphabet, Dataset, Field, Read, Sequences, Symbol};
use crate::wire::{ByteReader, ByteWriter};

use serde::Serialize;

pub const MAGIC: &[u8; 4] = b"CGC1";
pub const VERSION: u8 = 1;
const LOWER_BOUND_BITS: u8 = 23;
const MAX_SELECTOR_K: usize = 1 << PRECISION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StreamKind {
    Lengths,
    Selectors,
    Symbols,
}

impl StreamKind {
    fn tag(self) -> u8 {
        match self {
            StreamKind::Lengths => 0,
            StreamKind::Selectors => 1,
            StreamKind::Symbols => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => StreamKind::Lengths,
            1 => StreamKind::Selectors,
            2 => StreamKind::Symbols,
            t => return Err(Error::Format(format!("unknown stream kind {t}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    BasesOnly,
    Separate { quality_max: u16 },
    Packed { max_score: u16, quality_max: u16 },
}

/// The model a field's symbols are decoded with, as stored in the header.
#[derive(Debug, Clone)]
pub enum FieldModel {
    /// Field has no symbols.
    Empty,
    Context {
        spec: ContextSpec,
        centroids: Vec<ContextModel>,
        selector: Option<(SelectorCoding, Vec<u64>)>,
    },
    Transition(TransitionTable),
    Adaptive { order: usize, params: AdaptiveParams },
}

impl FieldModel {
    fn write(&self, w: &mut ByteWriter) {
        match self {
            FieldModel::Empty => w.u8(0),
            FieldModel::Context {
                spec,
                centroids,
                selector,
            } => {
                w.u8(1);
                write_centroids(w, spec, centroids);
                match selector {
                    None => w.u8(0),
                    Some((SelectorCoding::Flat, _)) => w.u8(1),
                    Some((SelectorCoding::Entropy, counts)) => {
                        w.u8(2);
                        counts.iter().for_each(|&c| w.varint(c));
                    }
                }
            }
            FieldModel::Transition(t) => {
                w.u8(2);
                t.write(w);
            }
            FieldModel::Adaptive { order, params } => {
                w.u8(3);
                w.varint(*order as u64);
                w.u8(params.rate as u8);
                w.u8(params.precision as u8);
                w.varint(params.update_period as u64);
            }
        }
    }

    fn read(r: &mut ByteReader<'_>, m: usize) -> Result<Self> {
        Ok(match r.u8()? {
            0 => FieldModel::Empty,
            1 => {
                let (spec, centroids) = read_centroids(r)?;
                if centroids.is_empty() || centroids.iter().any(|c| c.alphabet() != m) {
                    return Err(Error::Format("context field model does not match its alphabet".into()));
                }
                let k = centroids.len();
                let selector = match r.u8()? {
                    0 => None,
                    1 => Some((SelectorCoding::Flat, Vec::new())),
                    2 => {
                        let counts = (0..k).map(|_| r.varint()).collect::<Result<Vec<_>>>()?;
                        Some((SelectorCoding::Entropy, counts))
                    }
                    t => return Err(Error::Format(format!("unknown selector coding {t}"))),
                };
                if selector.is_some() != (k > 1) {
                    return Err(Error::Format("selector presence does not match centroid count".into()));
                }
                FieldModel::Context {
                    spec,
                    centroids,
                    selector,
                }
            }
            2 => {
                let t = TransitionTable::read(r)?;
                if t.alphabet_size() != m {
                    return Err(Error::Format("transition table alphabet mismatch".into()));
                }
                FieldModel::Transition(t)
            }
            3 => {
                let order = r.varint_usize(16)?;
                let params = AdaptiveParams {
                    rate: r.u8()? as u32,
                    precision: r.u8()? as u32,
                    update_period: r.varint_usize(1 << 20)? as u32,
                };
                if params.precision != PRECISION {
                    return Err(Error::Format("adaptive precision must match the coder".into()));
                }
                FieldModel::Adaptive { order, params }
            }
            t => return Err(Error::Format(format!("unknown field model tag {t}"))),
        })
    }

    fn selector_table(&self) -> Result<Option<FreqTable>> {
        match self {
            FieldModel::Context {
                selector: Some((coding, counts)),
                centroids,
                ..
            } => {
                let k = centroids.len();
                Ok(Some(match coding {
                    SelectorCoding::Flat => normalize_freqs(&vec![1; k], PRECISION)?,
                    SelectorCoding::Entropy => normalize_freqs(counts, PRECISION)?,
                }))
            }
            _ => Ok(None),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FieldModel::Empty => "empty".into(),
            FieldModel::Context { spec, centroids, .. } => {
                format!("context model ({} contexts) x {}", spec.context_count(centroids[0].alphabet()), centroids.len())
            }
            FieldModel::Transition(t) => format!("transition table ({} states)", t.state_count()),
            FieldModel::Adaptive { order, params } => {
                format!("adaptive order {order}, rate {}, period {}", params.rate, params.update_period)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldHeader {
    pub alphabet: usize,
    pub model: FieldModel,
}

#[derive(Debug, Clone)]
pub struct Archive {
    pub layout: Layout,
    pub ids: Vec<String>,
    pub length_bytes: usize,
    pub fields: Vec<FieldHeader>,
    pub streams: Vec<(StreamKind, Vec<u8>)>,
    /// Fitting notes (budget clamps, fallbacks). Not serialized.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArchiveReport {
    pub reads: usize,
    pub header_bytes: usize,
    pub length_bytes: usize,
    /// Per field: (selector bytes, symbol bytes).
    pub field_bytes: Vec<(usize, usize)>,
    pub total_bytes: usize,
}

impl Archive {
    fn write_header(&self, w: &mut ByteWriter) {
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u8(PRECISION as u8);
        w.u8(LOWER_BOUND_BITS);
        w.varint(self.ids.len() as u64);
        match self.layout {
            Layout::BasesOnly => w.u8(0),
            Layout::Separate { quality_max } => {
                w.u8(1);
                w.varint(quality_max as u64);
            }
            Layout::Packed { max_score, quality_max } => {
                w.u8(2);
                w.varint(max_score as u64);
                w.varint(quality_max as u64);
            }
        }
        w.varint(self.length_bytes as u64);
        self.ids.iter().for_each(|id| w.blob(id.as_bytes()));
        w.varint(self.fields.len() as u64);
        for f in &self.fields {
            w.varint(f.alphabet as u64);
            f.model.write(w);
        }
    }

    pub fn header_bytes(&self) -> usize {
        let mut w = ByteWriter::new();
        self.write_header(&mut w);
        w.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_header(&mut w);
        w.varint(self.streams.len() as u64);
        for (kind, payload) in &self.streams {
            w.u8(kind.tag());
            w.blob(payload);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (layout, ids, length_bytes, fields) = read_header(&mut r)?;
        let n_streams = r.varint_usize(1 + 2 * fields.len())?;
        let mut streams = Vec::with_capacity(n_streams);
        for _ in 0..n_streams {
            let kind = StreamKind::from_tag(r.u8()?)?;
            streams.push((kind, r.blob()?.to_vec()));
        }
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after archive".into()));
        }
        Ok(Self {
            layout,
            ids,
            length_bytes,
            fields,
            streams,
            warnings: Vec::new(),
        })
    }

    pub fn report(&self) -> ArchiveReport {
        let header_bytes = self.header_bytes();
        let mut field_bytes = Vec::new();
        let mut length_bytes = 0;
        let mut sel = 0;
        for (kind, p) in &self.streams {
            match kind {
                StreamKind::Lengths => length_bytes = p.len(),
                StreamKind::Selectors => sel = p.len(),
                StreamKind::Symbols => {
                    field_bytes.push((sel, p.len()));
                    sel = 0;
                }
            }
        }
        ArchiveReport {
            reads: self.ids.len(),
            header_bytes,
            length_bytes,
            field_bytes,
            total_bytes: self.to_bytes().len(),
        }
    }
}

fn read_header(r: &mut ByteReader<'_>) -> Result<(Layout, Vec<String>, usize, Vec<FieldHeader>)> {
    r.expect_magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    if r.u8()? as u32 != PRECISION || r.u8()? != LOWER_BOUND_BITS {
        return Err(Error::Format("archive uses a different rANS profile".into()));
    }
    let reads = r.varint_usize(r.remaining())?;
    let layout = match r.u8()? {
        0 => Layout::BasesOnly,
        1 => Layout::Separate {
            quality_max: r.varint_usize(u16::MAX as usize)? as u16,
        },
        2 => Layout::Packed {
            max_score: r.varint_usize(u16::MAX as usize)? as u16,
            quality_max: r.varint_usize(u16::MAX as usize)? as u16,
        },
        t => return Err(Error::Format(format!("unknown layout {t}"))),
    };
    let length_bytes = r.varint_usize(10 * reads)?;
    let ids = (0..reads)
        .map(|_| r.blob().map(|b| String::from_utf8_lossy(b).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let n_fields = r.varint_usize(2)?;
    let expected = match layout {
        Layout::Separate { .. } => 2,
        _ => 1,
    };
    if n_fields != expected {
        return Err(Error::Format("field count does not match layout".into()));
    }
    let mut fields = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let alphabet = r.varint_usize(1 << 16)?;
        let model = FieldModel::read(r, alphabet)?;
        fields.push(FieldHeader { alphabet, model });
    }
    Ok((layout, ids, length_bytes, fields))
}

fn fit_context_spec(seqs: &Sequences, model: &ModelPlan, warnings: &mut Vec<String>, label: &str) -> Result<ContextSpec> {
    let m = seqs.alphabet_size;
    Ok(match model {
        ModelPlan::Order(l) => ContextSpec::Order(*l),
        ModelPlan::Binned { order, cut } => {
            let base = ContextSpec::Order(*order);
            base.validate(m)?;
            let stats = collect_stats(seqs, &base)?;
            let table = match build_merge_tree(&stats) {
                Ok(tree) => tree.cut(*cut),
                Err(Error::EmptyStats) => {
                    warnings.push(format!("{label}: no order-{order} windows, single bin"));
                    BinningTable::new(vec![0; base.context_count(m)], 1)?
                }
                Err(e) => return Err(e),
            };
            ContextSpec::binned(base, table)
        }
        ModelPlan::Nested {
            scheme,
            target_order,
            budgets,
        } => match nested_binning(seqs, *scheme, *target_order, budgets, &NestedOptions::default()) {
            Ok(nb) => {
                warnings.extend(nb.warnings.iter().map(|w| format!("{label}: {w}")));
                nb.spec()
            }
            Err(Error::EmptyStats) => {
                warnings.push(format!("{label}: reads too short for nesting, order-0 fallback"));
                ContextSpec::Order(0)
            }
            Err(e) => return Err(e),
        },
        _ => unreachable!("not a context plan"),
    })
}

/// Fits one field's model; returns it with the per-read centroid assignment.
fn fit_field(seqs: &Sequences, plan: &FieldPlan, label: &str, warnings: &mut Vec<String>) -> Result<(FieldModel, Vec<usize>)> {
    seqs.validate()?;
    if seqs.total_len() == 0 {
        return Ok((FieldModel::Empty, Vec::new()));
    }
    let model = match &plan.model {
        m if m.is_context_model() => {
            let spec = fit_context_spec(seqs, m, warnings, label)?;
            let k = plan.cluster.map_or(1, |c| c.k);
            let k_eff = k.min(seqs.reads.len());
            if k_eff < k {
                warnings.push(format!("{label}: k = {k} clamped to {k_eff} reads"));
            }
            if let (Some(c), true) = (plan.cluster, k_eff > 1) {
                if k_eff > MAX_SELECTOR_K {
                    return Err(invalid(format!("k must be at most {MAX_SELECTOR_K}")));
                }
                let set = kmeans_cluster(seqs, &spec, k_eff, c.max_iter, c.seed)?;
                let mut counts = vec![0u64; k_eff];
                set.assignment.iter().for_each(|&j| counts[j] += 1);
                return Ok((
                    FieldModel::Context {
                        spec,
                        centroids: set.centroids,
                        selector: Some((c.selector, counts)),
                    },
                    set.assignment,
                ));
            }
            FieldModel::Context {
                centroids: vec![ContextModel::fit(seqs, spec.clone())?],
                spec,
                selector: None,
            }
        }
        ModelPlan::Hcb { budgets } => {
            let (chain, w) = train_hcb_binnings(seqs, budgets)?;
            warnings.extend(w.into_iter().map(|w| format!("{label}: {w}")));
            FieldModel::Transition(build_hcb_transition(&chain, seqs)?)
        }
        ModelPlan::SoftHscm { states, steps, seed } => {
            let opts = SoftOptions {
                steps: *steps,
                seed: *seed,
                ..SoftOptions::default()
            };
            let soft = optimize_soft(seqs, *states, &opts)?;
            FieldModel::Transition(determinize(&soft, seqs, &opts)?.table)
        }
        ModelPlan::Adaptive { .. } => {
            let (order, params) = plan.model.adaptive_params().expect("adaptive plan");
            // validates order and parameters
            adaptive_stream(seqs.alphabet_size, order, params, &[])?;
            FieldModel::Adaptive { order, params }
        }
        _ => unreachable!(),
    };
    Ok((model, vec![0; seqs.reads.len()]))
}

fn flatten(seqs: &Sequences) -> Vec<usize> {
    seqs.reads.iter().flatten().map(|&s| s as usize).collect()
}

fn encode_lengths(lengths: &[usize]) -> Vec<usize> {
    let mut w = ByteWriter::new();
    lengths.iter().for_each(|&l| w.varint(l as u64));
    w.into_inner().into_iter().map(usize::from).collect()
}

fn length_params() -> AdaptiveParams {
    AdaptiveParams::default()
}

/// Decoder-side coding state for one field.
enum FieldCoder {
    Empty,
    Context {
        centroids: Vec<ContextModel>,
        rows: Vec<CodingRows>,
        selector: Option<FreqTable>,
    },
    Transition(TransitionRows),
    Adaptive {
        m: usize,
        order: usize,
        params: AdaptiveParams,
    },
}

impl FieldCoder {
    fn new(h: &FieldHeader) -> Result<Self> {
        Ok(match &h.model {
            FieldModel::Empty => FieldCoder::Empty,
            FieldModel::Context { centroids, .. } => FieldCoder::Context {
                rows: centroids.iter().map(CodingRows::new).collect::<Result<_>>()?,
                centroids: centroids.clone(),
                selector: h.model.selector_table()?,
            },
            FieldModel::Transition(t) => FieldCoder::Transition(TransitionRows::new(t.clone())?),
            FieldModel::Adaptive { order, params } => FieldCoder::Adaptive {
                m: h.alphabet,
                order: *order,
                params: *params,
            },
        })
    }

    fn encode(&self, symbols: &[usize], selectors: &[usize], lengths: &[usize]) -> Result<(Option<Vec<u8>>, Vec<u8>)> {
        match self {
            FieldCoder::Empty => {
                if !symbols.is_empty() {
                    return Err(invalid("empty field model cannot code symbols"));
                }
                Ok((None, rans::encode(&[], &mut FreqTable::uniform(2)?)?))
            }
            FieldCoder::Context {
                centroids,
                rows,
                selector,
            } => {
                let sel = match selector {
                    Some(t) => Some(rans::encode(selectors, &mut t.clone())?),
                    None => None,
                };
                let mut stream = ContextStream::new(centroids, rows, selectors, lengths);
                Ok((sel, rans::encode(symbols, &mut stream)?))
            }
            FieldCoder::Transition(rows) => Ok((None, rans::encode(symbols, &mut TransitionStream::new(rows, lengths))?)),
            FieldCoder::Adaptive { m, order, params } => {
                let mut stream = adaptive_stream(*m, *order, *params, lengths)?;
                Ok((None, rans::encode(symbols, &mut stream)?))
            }
        }
    }

    fn decode(&self, sel: Option<&[u8]>, payload: &[u8], lengths: &[usize]) -> Result<Vec<usize>> {
        let n: usize = lengths.iter().sum();
        match self {
            FieldCoder::Empty => {
                if n != 0 {
                    return Err(Error::Corrupt("empty field model with non-zero lengths".into()));
                }
                rans::decode(payload, 0, &mut FreqTable::uniform(2)?)
            }
            FieldCoder::Context {
                centroids,
                rows,
                selector,
            } => {
                let selectors = match (selector, sel) {
                    (Some(t), Some(bytes)) => rans::decode(bytes, lengths.len(), &mut t.clone())?,
                    (None, None) => vec![0; lengths.len()],
                    _ => return Err(Error::Corrupt("selector stream presence mismatch".into())),
                };
                let mut stream = ContextStream::new(centroids, rows, &selectors, lengths);
                rans::decode(payload, n, &mut stream)
            }
            FieldCoder::Transition(rows) => rans::decode(payload, n, &mut TransitionStream::new(rows, lengths)),
            FieldCoder::Adaptive { m, order, params } => {
                let mut stream = adaptive_stream(*m, *order, *params, lengths)?;
                rans::decode(payload, n, &mut stream)
            }
        }
    }

    /// Ideal cost in bits of `symbols` under this coder's models: `(selectors, symbols)`.
    fn model_bits(&self, symbols: &[usize], selectors: &[usize], lengths: &[usize]) -> Result<(Option<f64>, f64)> {
        Ok(match self {
            FieldCoder::Empty => (None, 0.0),
            FieldCoder::Context {
                centroids,
                rows,
                selector,
            } => {
                let sel = selector.as_ref().map(|t| rans::model_bits(selectors, &mut t.clone()));
                let mut stream = ContextStream::new(centroids, rows, selectors, lengths);
                (sel, rans::model_bits(symbols, &mut stream))
            }
            FieldCoder::Transition(rows) => (None, rans::model_bits(symbols, &mut TransitionStream::new(rows, lengths))),
            FieldCoder::Adaptive { m, order, params } => {
                let mut stream = adaptive_stream(*m, *order, *params, lengths)?;
                (None, rans::model_bits(symbols, &mut stream))
            }
        })
    }
}

/// Ideal cost in bits of every stream of `archive` (same order as `archive.streams`)
/// when coding `data` with the archive's own models.
pub fn stream_costs(archive: &Archive, data: &Dataset) -> Result<Vec<f64>> {
    let lengths: Vec<usize> = data.reads.iter().map(Read::len).collect();
    let length_symbols = encode_lengths(&lengths);
    let len_total = [length_symbols.len()];
    let mut len_model = adaptive_stream(256, 0, length_params(), &len_total)?;
    let mut costs = vec![rans::model_bits(&length_symbols, &mut len_model)];
    let fields = match archive.layout {
        Layout::BasesOnly => vec![data.field(Field::Bases)?],
        Layout::Separate { .. } => vec![data.field(Field::Bases)?, data.field(Field::Qualities)?],
        Layout::Packed { max_score, .. } => vec![data.field(Field::Packed { max_score })?],
    };
    let mut streams = archive.streams.iter().skip(1);
    for (fh, seqs) in archive.fields.iter().zip(&fields) {
        let coder = FieldCoder::new(fh)?;
        let selectors = match &coder {
            FieldCoder::Context {
                selector: Some(t), ..
            } => {
                let (_, bytes) = streams
                    .next()
                    .ok_or_else(|| Error::Corrupt("missing selector stream".into()))?;
                rans::decode(bytes, lengths.len(), &mut t.clone())?
            }
            _ => vec![0; lengths.len()],
        };
        streams.next();
        let (sel, sym) = coder.model_bits(&flatten(seqs), &selectors, &lengths)?;
        costs.extend(sel);
        costs.push(sym);
    }
    Ok(costs)
}

/// Compresses every field of `data` under `plan`.
pub fn compress(data: &Dataset, plan: &CompressionPlan) -> Result<Archive> {
    plan.validate()?;
    let lengths: Vec<usize> = data.reads.iter().map(Read::len).collect();
    for r in &data.reads {
        if data.has_qualities() && r.qualities.as_ref().map(Vec::len) != Some(r.len()) {
            return Err(invalid(format!("read {:?} lacks qualities of matching length", r.id)));
        }
    }
    let quality_max = data.quality_alphabet.map(|a| (a.size() - 1) as u16);
    let (layout, jobs): (Layout, Vec<(Sequences, &FieldPlan, &str)>) = match &plan.streams {
        StreamPlans::Separate { bases, qualities } => match (qualities, quality_max) {
            (None, None) => (Layout::BasesOnly, vec![(data.field(Field::Bases)?, bases, "bases")]),
            (Some(q), Some(qm)) => (
                Layout::Separate { quality_max: qm },
                vec![
                    (data.field(Field::Bases)?, bases, "bases"),
                    (data.field(Field::Qualities)?, q, "qualities"),
                ],
            ),
            (Some(_), None) => return Err(invalid("plan codes qualities but the input has none")),
            (None, Some(_)) => return Err(invalid("input has qualities but the plan does not code them")),
        },
        StreamPlans::Packed { max_score, plan } => {
            let qm = quality_max.ok_or_else(|| invalid("packed plan needs quality scores"))?;
            (
                Layout::Packed {
                    max_score: *max_score,
                    quality_max: qm,
                },
                vec![(data.field(Field::Packed { max_score: *max_score })?, plan, "packed")],
            )
        }
    };
    let mut warnings = Vec::new();
    let mut fields = Vec::new();
    let mut assignments = Vec::new();
    for (seqs, fplan, label) in &jobs {
        let (model, assignment) = fit_field(seqs, fplan, label, &mut warnings)?;
        fields.push(FieldHeader {
            alphabet: seqs.alphabet_size,
            model,
        });
        assignments.push(assignment);
    }
    let length_symbols = encode_lengths(&lengths);
    let mut archive = Archive {
        layout,
        ids: data.reads.iter().map(|r| r.id.clone()).collect(),
        length_bytes: length_symbols.len(),
        fields,
        streams: Vec::new(),
        warnings,
    };
    // code with exactly what the decoder will parse back
    let mut w = ByteWriter::new();
    archive.write_header(&mut w);
    let header = w.into_inner();
    let (_, _, _, decoded_fields) = read_header(&mut ByteReader::new(&header))?;

    let len_total = [length_symbols.len()];
    let mut len_model = adaptive_stream(256, 0, length_params(), &len_total)?;
    archive
        .streams
        .push((StreamKind::Lengths, rans::encode(&length_symbols, &mut len_model)?));
    for ((fh, (seqs, _, _)), assignment) in decoded_fields.iter().zip(&jobs).zip(&assignments) {
        let coder = FieldCoder::new(fh)?;
        let (sel, payload) = coder.encode(&flatten(seqs), assignment, &lengths)?;
        if let Some(sel) = sel {
            archive.streams.push((StreamKind::Selectors, sel));
        }
        archive.streams.push((StreamKind::Symbols, payload));
    }
    Ok(archive)
}

/// Restores ids and symbol content.
pub fn decompress(archive: &Archive) -> Result<Dataset> {
    let n_reads = archive.ids.len();
    let mut streams = archive.streams.iter();
    let (kind, len_payload) = streams
        .next()
        .ok_or_else(|| Error::Corrupt("archive has no streams".into()))?;
    if *kind != StreamKind::Lengths {
        return Err(Error::Corrupt("first stream must hold read lengths".into()));
    }
    let len_total = [archive.length_bytes];
    let mut len_model = adaptive_stream(256, 0, length_params(), &len_total)?;
    let len_bytes: Vec<u8> = rans::decode(len_payload, archive.length_bytes, &mut len_model)?
        .into_iter()
        .map(|b| b as u8)
        .collect();
    let mut r = ByteReader::new(&len_bytes);
    let lengths = (0..n_reads)
        .map(|_| r.varint_usize(1 << 32))
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::Corrupt("read lengths block is malformed".into()))?;
    if r.remaining() != 0 {
        return Err(Error::Corrupt("read lengths block has trailing bytes".into()));
    }

    let mut decoded = Vec::with_capacity(archive.fields.len());
    for fh in &archive.fields {
        let coder = FieldCoder::new(fh)?;
        let mut next = streams
            .next()
            .ok_or_else(|| Error::Corrupt("missing field stream".into()))?;
        let sel = if next.0 == StreamKind::Selectors {
            let s = next.1.as_slice();
            next = streams
                .next()
                .ok_or_else(|| Error::Corrupt("missing symbol stream".into()))?;
            Some(s)
        } else {
            None
        };
        if next.0 != StreamKind::Symbols {
            return Err(Error::Corrupt("unexpected stream order".into()));
        }
        let symbols = coder.decode(sel, &next.1, &lengths)?;
        if symbols.iter().any(|&s| s >= fh.alphabet) {
            return Err(Error::Corrupt("decoded symbol outside field alphabet".into()));
        }
        decoded.push(symbols);
    }
    if streams.next().is_some() {
        return Err(Error::Corrupt("unexpected extra stream".into()));
    }

    let split = |flat: &[usize]| -> Vec<Vec<Symbol>> {
        let mut out = Vec::with_capacity(n_reads);
        let mut pos = 0;
        for &l in &lengths {
            out.push(flat[pos..pos + l].iter().map(|&s| s as Symbol).collect());
            pos += l;
        }
        out
    };
    let (bases, qualities, quality_alphabet) = match archive.layout {
        Layout::BasesOnly => (split(&decoded[0]), None, None),
        Layout::Separate { quality_max } => {
            if archive.fields[0].alphabet != 4 || archive.fields[1].alphabet != quality_max as usize + 1 {
                return Err(Error::Corrupt("field alphabets do not match layout".into()));
            }
            (split(&decoded[0]), Some(split(&decoded[1])), Some(Alphabet::quality(quality_max)))
        }
        Layout::Packed { max_score, quality_max } => {
            if archive.fields[0].alphabet != Alphabet::packed(max_score)?.size() {
                return Err(Error::Corrupt("packed alphabet does not match layout".into()));
            }
            let packed = split(&decoded[0]);
            let mut b = Vec::with_capacity(n_reads);
            let mut q = Vec::with_capacity(n_reads);
            for read in packed {
                let (qs, bs): (Vec<Symbol>, Vec<Symbol>) = read.into_iter().map(unpack_symbol).unzip();
                if qs.iter().any(|&v| v > quality_max) {
                    return Err(Error::Corrupt("unpacked quality exceeds maximum".into()));
                }
                b.push(bs);
                q.push(qs);
            }
            (b, Some(q), Some(Alphabet::quality(quality_max)))
        }
    };
    let mut qualities = qualities.map(Vec::into_iter);
    let reads = archive
        .ids
        .iter()
        .zip(bases)
        .map(|(id, bases)| Read {
            id: id.clone(),
            bases,
            qualities: qualities.as_mut().and_then(Iterator::next),
        })
        .collect();
    Ok(Dataset {
        reads,
        alphabet: Alphabet::bases(),
        quality_alphabet,
        source_path: String::new(),
        substituted: 0,
    })
}

pub fn compress_bytes(data: &Dataset, plan: &CompressionPlan) -> Result<Vec<u8>> {
    compress(data, plan).map(|a| a.to_bytes())
}

pub fn decompress_bytes(bytes: &[u8]) -> Result<Dataset> {
    decompress(&Archive::from_bytes(bytes)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanEvaluation {
    pub plan: String,
    pub bases_bpv: f64,
    /// `None` when qualities are absent or coded jointly with bases.
    pub qualities_bpv: Option<f64>,
    /// Header, lengths and selector streams.
    pub header_bpv: f64,
    pub selector_flat_bpv: f64,
    pub total_bpv: f64,
    pub total_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub symbols: usize,
    pub rows: Vec<PlanEvaluation>,
    pub best: usize,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("plan,bases_bpv,qualities_bpv,header_bpv,total_bpv\n");
        for r in &self.rows {
            let q = r.qualities_bpv.map(|q| q.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.plan, r.bases_bpv, q, r.header_bpv, r.total_bpv));
        }
        s
    }

    pub fn best(&self) -> &PlanEvaluation {
        &self.rows[self.best]
    }
}

/// Compresses `data` under one plan and reports bits per base position.
pub fn evaluate_plan(data: &Dataset, plan: &CompressionPlan) -> Result<PlanEvaluation> {
    let n = data.total_symbols();
    let per = |bytes: usize| if n == 0 { 0.0 } else { bytes as f64 * 8.0 / n as f64 };
    let archive = compress(data, plan)?;
    let rep = archive.report();
    let qualities_bpv = match archive.layout {
        Layout::Separate { .. } => Some(per(rep.field_bytes[1].1)),
        _ => None,
    };
    let payload: usize = rep.field_bytes.iter().map(|f| f.1).sum();
    let selector_flat_bpv = archive
        .fields
        .iter()
        .map(|f| match &f.model {
            FieldModel::Context { centroids, .. } => {
                header_cost(centroids.len(), &vec![0; archive.ids.len()], n).flat_bpv
            }
            _ => 0.0,
        })
        .sum();
    Ok(PlanEvaluation {
        plan: plan.name.clone(),
        bases_bpv: per(rep.field_bytes[0].1),
        qualities_bpv,
        header_bpv: per(rep.total_bytes - payload),
        selector_flat_bpv,
        total_bpv: per(rep.total_bytes),
        total_bytes: rep.total_bytes,
    })
}

impl EvaluationReport {
    /// Picks the smallest archive; ties go to the earliest row.
    pub fn from_rows(symbols: usize, rows: Vec<PlanEvaluation>) -> Result<Self> {
        let best = rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_bytes.cmp(&b.1.total_bytes).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| invalid("at least one plan is required"))?;
        Ok(Self { symbols, rows, best })
    }
}

pub fn evaluate_plans(data: &Dataset, plans: &[CompressionPlan]) -> Result<EvaluationReport> {
    let rows = plans.iter().map(|p| evaluate_plan(data, p)).collect::<Result<Vec<_>>>()?;
    EvaluationReport::from_rows(data.total_symbols(), rows)
}
