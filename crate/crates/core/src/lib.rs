//! Context binning, hidden-state context models, model clustering and adaptive
//! coding for genomic symbol streams, backed by a range-ANS coder.

pub mod adaptive;
pub mod binner;
pub mod container;
pub mod ctxstats;
pub mod error;
pub mod hscm;
pub mod cluster;
pub mod rans;
pub mod seqio;
pub mod wire;

pub use binner::{build_merge_tree, BinningTable, CutCriterion, MergeTree};
pub use ctxstats::{
    collect_stats, empirical_bpv, entropy, rate, ConditionalModel, ContextModel, ContextSpec,
    ContextStats, RateReport,
};
pub use error::{Error, Result};
pub use seqio::{Alphabet, Dataset, Field, Read, Sequences, Symbol};
