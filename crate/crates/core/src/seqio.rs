//! FASTA/FASTQ ingestion into symbol sequences.
//!
//! Bases map `A,C,G,T -> 0,1,2,3` (case-insensitive). Quality characters map
//! to `ASCII - 33`. Packed symbols combine both as `(quality << 2) | base`.

use crate::error::{Error, Result};

/// Symbol index under some [`Alphabet`].
pub type Symbol = u16;

/// Default quality alphabet: Phred+33 scores 0..=63.
pub const DEFAULT_QUALITY_MAX: u16 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphabetKind {
    Bases4,
    Quality { max_score: u16 },
    PackedBaseQuality { max_score: u16 },
    Custom { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    kind: AlphabetKind,
}

impl Alphabet {
    pub const fn bases() -> Self {
        Self {
            kind: AlphabetKind::Bases4,
        }
    }

    pub const fn quality(max_score: u16) -> Self {
        Self {
            kind: AlphabetKind::Quality { max_score },
        }
    }

    pub fn packed(max_score: u16) -> Result<Self> {
        if 4 * (max_score as usize + 1) > Symbol::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "packed alphabet with max score {max_score} does not fit 16-bit symbols"
            )));
        }
        Ok(Self {
            kind: AlphabetKind::PackedBaseQuality { max_score },
        })
    }

    pub fn custom(size: usize) -> Result<Self> {
        if !(2..=Symbol::MAX as usize + 1).contains(&size) {
            return Err(Error::InvalidArgument(format!(
                "alphabet size {size} outside 2..=65536"
            )));
        }
        Ok(Self {
            kind: AlphabetKind::Custom { size },
        })
    }

    pub fn kind(&self) -> AlphabetKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        match self.kind {
            AlphabetKind::Bases4 => 4,
            AlphabetKind::Quality { max_score } => max_score as usize + 1,
            AlphabetKind::PackedBaseQuality { max_score } => 4 * (max_score as usize + 1),
            AlphabetKind::Custom { size } => size,
        }
    }

    pub fn contains(&self, s: Symbol) -> bool {
        (s as usize) < self.size()
    }
}

/// One sequencing record.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Read {
    pub id: String,
    pub bases: Vec<Symbol>,
    pub qualities: Option<Vec<Symbol>>,
}

impl Read {
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

/// Parsed file contents. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub reads: Vec<Read>,
    pub alphabet: Alphabet,
    /// Present for FASTQ input.
    pub quality_alphabet: Option<Alphabet>,
    pub source_path: String,
    /// Number of unknown base characters replaced under [`UnknownBasePolicy::Substitute`].
    pub substituted: usize,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            reads: Vec::new(),
            alphabet: Alphabet::bases(),
            quality_alphabet: None,
            source_path: String::new(),
            substituted: 0,
        }
    }

    /// Total number of base symbols `N`.
    pub fn total_symbols(&self) -> usize {
        self.reads.iter().map(Read::len).sum()
    }

    pub fn has_qualities(&self) -> bool {
        self.quality_alphabet.is_some()
    }

    /// Symbol streams of one field, one sequence per read.
    pub fn field(&self, field: Field) -> Result<Sequences> {
        match field {
            Field::Bases => Ok(Sequences {
                alphabet_size: self.alphabet.size(),
                reads: self.reads.iter().map(|r| r.bases.clone()).collect(),
            }),
            Field::Qualities => {
                let alpha = self.quality_alphabet.ok_or_else(|| {
                    Error::InvalidArgument("dataset has no quality scores".into())
                })?;
                let reads = self
                    .reads
                    .iter()
                    .map(|r| r.qualities.clone().unwrap_or_default())
                    .collect();
                Ok(Sequences {
                    alphabet_size: alpha.size(),
                    reads,
                })
            }
            Field::Packed { max_score } => {
                let alpha = Alphabet::packed(max_score)?;
                let reads = self
                    .reads
                    .iter()
                    .map(|r| pack_symbols(r, max_score))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Sequences {
                    alphabet_size: alpha.size(),
                    reads,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Bases,
    Qualities,
    Packed { max_score: u16 },
}

/// Per-read symbol sequences over a single alphabet; the unit every model consumes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sequences {
    pub alphabet_size: usize,
    pub reads: Vec<Vec<Symbol>>,
}

impl Sequences {
    pub fn new(alphabet_size: usize, reads: Vec<Vec<Symbol>>) -> Self {
        Self {
            alphabet_size,
            reads,
        }
    }

    pub fn single(alphabet_size: usize, seq: Vec<Symbol>) -> Self {
        Self::new(alphabet_size, vec![seq])
    }

    pub fn total_len(&self) -> usize {
        self.reads.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (r, seq) in self.reads.iter().enumerate() {
            if let Some(p) = seq
                .iter()
                .position(|&s| s as usize >= self.alphabet_size)
            {
                return Err(Error::InvalidArgument(format!(
                    "read {r} position {p}: symbol {} outside alphabet of size {}",
                    seq[p], self.alphabet_size
                )));
            }
        }
        Ok(())
    }
}

/// What to do with base characters outside `ACGT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownBasePolicy {
    Reject,
    Substitute(Symbol),
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub unknown_base: UnknownBasePolicy,
    pub quality_max: u16,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            unknown_base: UnknownBasePolicy::Substitute(0),
            quality_max: DEFAULT_QUALITY_MAX,
        }
    }
}

pub fn base_symbol(c: u8) -> Option<Symbol> {
    match c {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

pub const BASE_CHARS: [u8; 4] = *b"ACGT";

fn map_bases(
    line: &[u8],
    record: usize,
    opts: &ParseOptions,
    out: &mut Vec<Symbol>,
    substituted: &mut usize,
) -> Result<()> {
    out.reserve(line.len());
    for &c in line {
        match base_symbol(c) {
            Some(s) => out.push(s),
            None => match opts.unknown_base {
                UnknownBasePolicy::Reject => {
                    return Err(Error::Parse {
                        record,
                        message: format!("unknown base character {:?}", c as char),
                    })
                }
                UnknownBasePolicy::Substitute(s) => {
                    out.push(s);
                    *substituted += 1;
                }
            },
        }
    }
    Ok(())
}

fn lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut out: Vec<&[u8]> = bytes
        .split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .collect();
    // the terminating newline, then blank padding that cannot belong to a record
    if out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    while out.len() % 4 != 0 && out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out
}

/// Parses 4-line FASTQ records.
pub fn parse_fastq(bytes: &[u8], opts: &ParseOptions) -> Result<Dataset> {
    if let UnknownBasePolicy::Substitute(s) = opts.unknown_base {
        if s >= 4 {
            return Err(Error::InvalidArgument(format!("substitute base {s} is not a base")));
        }
    }
    let lines = lines(bytes);
    if lines.len() % 4 != 0 {
        return Err(Error::Parse {
            record: lines.len() / 4,
            message: "truncated record (expected 4 lines)".into(),
        });
    }
    let mut reads = Vec::with_capacity(lines.len() / 4);
    let mut substituted = 0;
    for (record, chunk) in lines.chunks(4).enumerate() {
        let header = chunk[0];
        let Some(id) = header.strip_prefix(b"@") else {
            return Err(Error::Parse {
                record,
                message: "header line does not start with '@'".into(),
            });
        };
        if !chunk[2].starts_with(b"+") {
            return Err(Error::Parse {
                record,
                message: "separator line does not start with '+'".into(),
            });
        }
        let (seq, qual) = (chunk[1], chunk[3]);
        if seq.len() != qual.len() {
            return Err(Error::Parse {
                record,
                message: format!(
                    "sequence length {} differs from quality length {}",
                    seq.len(),
                    qual.len()
                ),
            });
        }
        let mut bases = Vec::new();
        map_bases(seq, record, opts, &mut bases, &mut substituted)?;
        let mut qualities = Vec::with_capacity(qual.len());
        for &q in qual {
            let score = q.checked_sub(33).map(Symbol::from);
            match score {
                Some(s) if s <= opts.quality_max => qualities.push(s),
                _ => {
                    return Err(Error::Parse {
                        record,
                        message: format!(
                            "quality character {:?} outside Phred+33 range 0..={}",
                            q as char, opts.quality_max
                        ),
                    })
                }
            }
        }
        reads.push(Read {
            id: String::from_utf8_lossy(id).into_owned(),
            bases,
            qualities: Some(qualities),
        });
    }
    Ok(Dataset {
        reads,
        alphabet: Alphabet::bases(),
        quality_alphabet: Some(Alphabet::quality(opts.quality_max)),
        source_path: String::new(),
        substituted,
    })
}

/// Parses FASTA with wrapped sequence lines. Each `>` header starts a read.
pub fn parse_fasta(bytes: &[u8], opts: &ParseOptions) -> Result<Dataset> {
    let mut reads: Vec<Read> = Vec::new();
    let mut substituted = 0;
    for line in lines(bytes) {
        if let Some(id) = line.strip_prefix(b">") {
            reads.push(Read {
                id: String::from_utf8_lossy(id).into_owned(),
                bases: Vec::new(),
                qualities: None,
            });
        } else if line.is_empty() {
            continue;
        } else {
            let record = reads.len().saturating_sub(1);
            let Some(current) = reads.last_mut() else {
                return Err(Error::Parse {
                    record: 0,
                    message: "sequence data before the first '>' header".into(),
                });
            };
            map_bases(line, record, opts, &mut current.bases, &mut substituted)?;
        }
    }
    Ok(Dataset {
        reads,
        alphabet: Alphabet::bases(),
        quality_alphabet: None,
        source_path: String::new(),
        substituted,
    })
}

/// Chooses the parser from the first non-blank byte (`@` FASTQ, `>` FASTA).
pub fn parse_auto(bytes: &[u8], opts: &ParseOptions) -> Result<Dataset> {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        None => Ok(Dataset::empty()),
        Some(b'@') => parse_fastq(bytes, opts),
        Some(b'>') => parse_fasta(bytes, opts),
        Some(&c) => Err(Error::Parse {
            record: 0,
            message: format!("cannot detect format from leading byte {:?}", c as char),
        }),
    }
}

/// `qualities[i] * 4 + bases[i]` for every position.
pub fn pack_symbols(read: &Read, max_score: u16) -> Result<Vec<Symbol>> {
    let quals = read.qualities.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("read {:?} has no qualities to pack", read.id))
    })?;
    if quals.len() != read.bases.len() {
        return Err(Error::InvalidArgument(format!(
            "read {:?}: quality length differs from base length",
            read.id
        )));
    }
    Alphabet::packed(max_score)?;
    read.bases
        .iter()
        .zip(quals)
        .map(|(&b, &q)| {
            if q > max_score {
                Err(Error::InvalidArgument(format!(
                    "quality {q} exceeds max score {max_score}"
                )))
            } else if b >= 4 {
                Err(Error::InvalidArgument(format!("base symbol {b} is not a base")))
            } else {
                Ok((q << 2) | b)
            }
        })
        .collect()
}

/// Inverse of packing: `(quality, base)`.
pub fn unpack_symbol(s: Symbol) -> (Symbol, Symbol) {
    (s >> 2, s & 3)
}

pub fn write_fastq(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for r in &data.reads {
        out.push(b'@');
        out.extend_from_slice(r.id.as_bytes());
        out.push(b'\n');
        out.extend(r.bases.iter().map(|&b| BASE_CHARS[b as usize & 3]));
        out.extend_from_slice(b"\n+\n");
        if let Some(q) = &r.qualities {
            out.extend(q.iter().map(|&q| (q as u8).wrapping_add(33)));
        }
        out.push(b'\n');
    }
    out
}

/// Writes unwrapped FASTA (one sequence line per record).
pub fn write_fasta(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for r in &data.reads {
        out.push(b'>');
        out.extend_from_slice(r.id.as_bytes());
        out.push(b'\n');
        out.extend(r.bases.iter().map(|&b| BASE_CHARS[b as usize & 3]));
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts() -> ParseOptions {
        ParseOptions::default()
    }

    #[test]
    fn fastq_single_record() {
        let d = parse_fastq(b"@r\nACGT\n+\n!!!!\n", &opts()).unwrap();
        assert_eq!(d.reads.len(), 1);
        assert_eq!(d.reads[0].id, "r");
        assert_eq!(d.reads[0].bases, vec![0, 1, 2, 3]);
        assert_eq!(d.reads[0].qualities, Some(vec![0, 0, 0, 0]));
    }

    #[test]
    fn fastq_empty_input() {
        let d = parse_fastq(b"", &opts()).unwrap();
        assert!(d.reads.is_empty());
        assert_eq!(d.total_symbols(), 0);
    }

    #[test]
    fn fastq_length_accounting() {
        let seq = "A".repeat(101);
        let qual = "I".repeat(101);
        let text = format!("@a\n{seq}\n+\n{qual}\n@b\n{seq}\n+a\n{qual}\n");
        let d = parse_fastq(text.as_bytes(), &opts()).unwrap();
        assert_eq!(d.total_symbols(), 202);
    }

    #[test]
    fn fastq_errors_name_the_record() {
        let bad_len = b"@a\nAC\n+\n!!\n@b\nACG\n+\n!!\n";
        match parse_fastq(bad_len, &opts()) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_fastq(b"r\nAC\n+\n!!\n", &opts()),
            Err(Error::Parse { record: 0, .. })
        ));
        assert!(matches!(
            parse_fastq(b"@r\nAC\n-\n!!\n", &opts()),
            Err(Error::Parse { record: 0, .. })
        ));
        assert!(parse_fastq(b"@r\nAC\n+\n", &opts()).is_err());
    }

    #[test]
    fn unknown_base_policy() {
        let d = parse_fastq(b"@r\nANNT\n+\n!!!!\n", &opts()).unwrap();
        assert_eq!(d.reads[0].bases, vec![0, 0, 0, 3]);
        assert_eq!(d.substituted, 2);
        let strict = ParseOptions {
            unknown_base: UnknownBasePolicy::Reject,
            ..opts()
        };
        assert!(parse_fastq(b"@r\nANNT\n+\n!!!!\n", &strict).is_err());
    }

    #[test]
    fn quality_above_max_is_rejected() {
        let narrow = ParseOptions {
            quality_max: 10,
            ..opts()
        };
        assert!(parse_fastq(b"@r\nA\n+\nI\n", &narrow).is_err());
    }

    #[test]
    fn fasta_unwraps_lines() {
        let d = parse_fasta(b">h\nAC\nGT\n", &opts()).unwrap();
        assert_eq!(d.reads.len(), 1);
        assert_eq!(d.reads[0].bases, vec![0, 1, 2, 3]);
        assert!(d.reads[0].qualities.is_none());
    }

    #[test]
    fn fasta_multiple_records_and_case() {
        let d = parse_fasta(b">a\nA\n>b\nC\n", &opts()).unwrap();
        assert_eq!(d.reads.len(), 2);
        assert_eq!(d.reads[0].bases, vec![0]);
        assert_eq!(d.reads[1].bases, vec![1]);
        let lower = parse_fasta(b">x\nacgt\n", &opts()).unwrap();
        assert_eq!(lower.reads[0].bases, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fasta_rejects_data_before_header() {
        assert!(parse_fasta(b"ACGT\n", &opts()).is_err());
    }

    #[test]
    fn packing_examples() {
        let read = |b: Symbol, q: Symbol| Read {
            id: String::new(),
            bases: vec![b],
            qualities: Some(vec![q]),
        };
        assert_eq!(pack_symbols(&read(3, 0), 40).unwrap(), vec![3]);
        assert_eq!(pack_symbols(&read(1, 10), 40).unwrap(), vec![41]);
        assert_eq!(pack_symbols(&read(0, 40), 40).unwrap(), vec![160]);
        assert_eq!(Alphabet::packed(40).unwrap().size(), 164);
        assert!(pack_symbols(&read(0, 41), 40).is_err());
        let no_q = Read {
            id: String::new(),
            bases: vec![0],
            qualities: None,
        };
        assert!(pack_symbols(&no_q, 40).is_err());
    }

    #[test]
    fn auto_detect() {
        assert!(parse_auto(b"", &opts()).unwrap().reads.is_empty());
        assert!(parse_auto(b">x\nA\n", &opts()).unwrap().quality_alphabet.is_none());
        assert!(parse_auto(b"@x\nA\n+\n!\n", &opts()).unwrap().has_qualities());
        assert!(parse_auto(b"xyz", &opts()).is_err());
    }

    fn fastq_text() -> impl Strategy<Value = String> {
        let record = (
            "[A-Za-z0-9_:]{0,12}",
            prop::collection::vec((0usize..4, 0u8..=63), 0..40),
        );
        prop::collection::vec(record, 0..8).prop_map(|recs| {
            let mut s = String::new();
            for (id, body) in recs {
                let seq: String = body.iter().map(|&(b, _)| BASE_CHARS[b] as char).collect();
                let qual: String = body.iter().map(|&(_, q)| (q + 33) as char).collect();
                s.push_str(&format!("@{id}\n{seq}\n+\n{qual}\n"));
            }
            s
        })
    }

    proptest! {
        #[test]
        fn fastq_reserialization_is_lossless(text in fastq_text()) {
            let d = parse_fastq(text.as_bytes(), &opts()).unwrap();
            prop_assert_eq!(String::from_utf8(write_fastq(&d)).unwrap(), text.clone());
            // independent line scan of sequence lengths
            let n: usize = text.lines().skip(1).step_by(4).map(str::len).sum();
            prop_assert_eq!(d.total_symbols(), n);
        }

        #[test]
        fn packing_is_injective(b in 0u16..4, q in 0u16..=63) {
            let r = Read { id: String::new(), bases: vec![b], qualities: Some(vec![q]) };
            let s = pack_symbols(&r, 63).unwrap()[0];
            prop_assert_eq!(unpack_symbol(s), (q, b));
            prop_assert!((s as usize) < Alphabet::packed(63).unwrap().size());
        }
    }
}
