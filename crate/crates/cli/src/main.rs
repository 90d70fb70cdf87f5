//! `seqctx` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use seqctx::adaptive::{blocks_csv, eta_for_rate, scan_blocks};
use seqctx::binner::nested::{nested_binning, NestedOptions, NestedScheme};
use seqctx::cluster::{header_cost, kmeans_cluster};
use seqctx::container::{
    compress, decompress_bytes, evaluate_plan, ClusterPlan, CompressionPlan, EvaluationReport, FieldPlan, ModelPlan,
    StreamPlans, PRESETS,
};
use seqctx::hscm::{build_hcb_transition, determinize, optimize_soft, train_hcb_binnings, EmissionMode, SoftOptions};
use seqctx::seqio::{parse_auto, write_fasta, write_fastq, ParseOptions, DEFAULT_QUALITY_MAX};
use seqctx::{
    build_merge_tree, collect_stats, empirical_bpv, rate, ContextModel, ContextSpec, CutCriterion, Dataset, Field,
    Sequences,
};

/// Thread-count environment variable used when `--threads` is absent.
const THREADS_ENV: &str = "SEQCTX_THREADS";

#[derive(Parser, Debug)]
#[command(name = "seqctx", version, about = "Context modelling analysis and compression for FASTQ/FASTA")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FieldArg {
    Bases,
    Qualities,
    Packed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Symmetric,
    Asymmetric,
    Hierarchical,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Bayes,
    Explicit,
}

#[derive(clap::Args, Debug)]
struct InputArgs {
    /// FASTQ or FASTA file.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "qualities")]
    field: FieldArg,
    /// Highest quality score accepted by the parser.
    #[arg(long, default_value_t = DEFAULT_QUALITY_MAX)]
    quality_max: u16,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rate of a full context model, its merge tree and the bins-vs-penalty curve.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 1)]
        order: usize,
        /// Penalty used for the reported bin count (bits/value).
        #[arg(long, default_value_t = 0.01)]
        penalty: f64,
        /// Directory for contexts.csv, tree.json and curve.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Bins contexts by a merge-tree cut, or builds a nested binning.
    Bin {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, conflicts_with_all = ["bins", "step_cost", "nested"])]
        penalty: Option<f64>,
        #[arg(long, conflicts_with_all = ["step_cost", "nested"])]
        bins: Option<usize>,
        #[arg(long, conflicts_with = "nested")]
        step_cost: Option<f64>,
        /// Nested scheme; uses `--order` as the target order.
        #[arg(long, value_enum, requires = "budgets")]
        nested: Option<SchemeArg>,
        /// Comma-separated bin budgets for nested binning.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
        #[arg(long, default_value_t = 1e-3)]
        penalty_threshold: f64,
        /// Writes the binning table (flat cuts only).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// k-means over per-read models with coding cost as distance.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = seqctx::cluster::DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Per-read assignment CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Histogram CSV of per-read bits/value.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
    /// Trains a hidden-state model: soft-then-determinized, or hierarchical window binning.
    Hscm {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, value_enum, default_value = "bayes")]
        mode: ModeArg,
        /// Window bin budgets; switches to hierarchical window binning.
        #[arg(long, value_delimiter = ',')]
        hcb: Vec<usize>,
        /// Writes the transition table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Best EMA half-life per block of the concatenated stream (CSV).
    AdaptScan {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 100_000)]
        block: usize,
        #[arg(long, default_value_t = 0)]
        order: usize,
        /// Comma-separated rates r, each giving eta = 1 - 2^-r.
        #[arg(long, value_delimiter = ',', default_values_t = 1..=12u32)]
        rates: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a CGC1 archive.
    Compress {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "default")]
        plan: String,
        /// Also report the archive size under these plans.
        #[arg(long, value_delimiter = ',')]
        compare: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_QUALITY_MAX)]
        quality_max: u16,
    },
    /// Restores FASTQ (or FASTA when the archive has no qualities).
    Decompress { input: PathBuf, output: PathBuf },
    /// Compresses under several plans and reports bits/value per stream.
    Eval {
        input: PathBuf,
        /// Comma-separated plan names; defaults to every preset.
        #[arg(long, value_delimiter = ',')]
        plans: Vec<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_QUALITY_MAX)]
        quality_max: u16,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<seqctx::Error>() {
            Some(seqctx::Error::InvalidArgument(_)) => Failure::Usage(e),
            _ => Failure::Data(e),
        }
    }
}

impl From<seqctx::Error> for Failure {
    fn from(e: seqctx::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path, quality_max: u16) -> anyhow::Result<Dataset> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Dataset::empty());
    }
    let opts = ParseOptions {
        quality_max,
        ..ParseOptions::default()
    };
    let mut data = parse_auto(&bytes, &opts).with_context(|| format!("cannot parse {}", path.display()))?;
    data.source_path = path.display().to_string();
    Ok(data)
}

fn field_of(data: &Dataset, field: FieldArg) -> std::result::Result<Sequences, Failure> {
    let f = match field {
        FieldArg::Bases => Field::Bases,
        FieldArg::Qualities if data.reads.is_empty() => return Ok(Sequences::new(1, Vec::new())),
        FieldArg::Qualities => Field::Qualities,
        FieldArg::Packed => Field::Packed {
            max_score: data
                .quality_alphabet
                .map(|a| (a.size() - 1) as u16)
                .ok_or_else(|| usage("packed field needs FASTQ input"))?,
        },
    };
    if !matches!(f, Field::Bases) && !data.has_qualities() {
        return Err(usage("this field needs FASTQ input"));
    }
    Ok(data.field(f)?)
}

fn write_out(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn run(cli: Cli) -> CmdResult {
    let seed = cli.seed;
    match cli.command {
        Command::Analyze {
            input,
            order,
            penalty,
            out_dir,
        } => analyze(&input, order, penalty, out_dir.as_deref()),
        Command::Bin {
            input,
            order,
            penalty,
            bins,
            step_cost,
            nested,
            budgets,
            penalty_threshold,
            table,
        } => {
            let data = load(&input.input, input.quality_max)?;
            let seqs = field_of(&data, input.field)?;
            if let Some(scheme) = nested {
                let scheme = match scheme {
                    SchemeArg::Symmetric => NestedScheme::Symmetric,
                    SchemeArg::Asymmetric => NestedScheme::Asymmetric,
                    SchemeArg::Hierarchical => NestedScheme::Hierarchical,
                };
                if table.is_some() {
                    return Err(usage("--table applies to flat cuts only"));
                }
                let nb = nested_binning(&seqs, scheme, order, &budgets, &NestedOptions { penalty_threshold })?;
                print_json(&json!({
                    "scheme": format!("{scheme:?}"),
                    "target_order": order,
                    "states": nb.context.state_count(),
                    "lookups_per_symbol": nb.context.lookups_per_symbol(),
                    "bpv": nb.bpv()?,
                    "warnings": nb.warnings,
                }));
                return Ok(());
            }
            let criterion = match (penalty, bins, step_cost) {
                (Some(p), _, _) => CutCriterion::MaxPenalty(p),
                (_, Some(b), _) => CutCriterion::MaxBins(b),
                (_, _, Some(s)) => CutCriterion::MaxStepCost(s),
                _ => CutCriterion::MaxPenalty(0.01),
            };
            let spec = ContextSpec::Order(order);
            spec.validate(seqs.alphabet_size)?;
            let stats = collect_stats(&seqs, &spec)?;
            let full = rate(&stats)?.bpv;
            let tree = build_merge_tree(&stats)?;
            let cut = tree.cut(criterion);
            if let Some(path) = table {
                write_out(&path, &cut.to_bytes())?;
            }
            print_json(&json!({
                "order": order,
                "contexts": stats.context_count(),
                "bins": cut.n_bins(),
                "penalty_bpv": cut.penalty_bpv(),
                "full_bpv": full,
                "binned_bpv": rate(&stats.rebin(&cut)?)?.bpv,
            }));
            Ok(())
        }
        Command::Cluster {
            input,
            order,
            k,
            max_iter,
            csv,
            histogram,
            bin_width,
        } => {
            let data = load(&input.input, input.quality_max)?;
            let seqs = field_of(&data, input.field)?;
            let spec = ContextSpec::Order(order);
            let set = kmeans_cluster(&seqs, &spec, k, max_iter, seed)?;
            let n = seqs.total_len();
            if let Some(path) = csv {
                write_out(&path, set.cluster_csv(&seqs)?.as_bytes())?;
            }
            if let Some(path) = histogram {
                write_out(&path, set.histogram_csv(&seqs, bin_width)?.as_bytes())?;
            }
            let mut sizes = vec![0usize; set.k()];
            set.assignment.iter().for_each(|&j| sizes[j] += 1);
            print_json(&json!({
                "k": set.k(),
                "order": order,
                "bpv": set.bpv(n),
                "history_bits": set.history,
                "cluster_sizes": sizes,
                "header": header_cost(set.k(), &set.assignment, n),
            }));
            Ok(())
        }
        Command::Hscm {
            input,
            states,
            steps,
            mode,
            hcb,
            table,
        } => {
            let data = load(&input.input, input.quality_max)?;
            let seqs = field_of(&data, input.field)?;
            let (t, report) = if hcb.is_empty() {
                let opts = SoftOptions {
                    steps,
                    seed,
                    mode: match mode {
                        ModeArg::Bayes => EmissionMode::Bayes,
                        ModeArg::Explicit => EmissionMode::Explicit,
                    },
                    ..SoftOptions::default()
                };
                let soft = optimize_soft(&seqs, states, &opts)?;
                let soft_bpv = soft.bpv(&seqs);
                let det = determinize(&soft, &seqs, &opts)?;
                let bpv = empirical_bpv(&seqs, &det.table)?;
                let report = json!({
                    "states": states,
                    "soft_bpv": soft_bpv,
                    "deterministic_bpv": bpv,
                    "fixing_steps": det.fixing_steps,
                    "bpv_history": det.bpv_history,
                });
                (det.table, report)
            } else {
                let (chain, warnings) = train_hcb_binnings(&seqs, &hcb)?;
                let t = build_hcb_transition(&chain, &seqs)?;
                let report = json!({
                    "states": t.state_count(),
                    "bpv": empirical_bpv(&seqs, &t)?,
                    "warnings": warnings,
                });
                (t, report)
            };
            if let Some(path) = table {
                write_out(&path, &t.to_bytes())?;
            }
            print_json(&report);
            Ok(())
        }
        Command::AdaptScan {
            input,
            block,
            order,
            rates,
            out,
        } => {
            let data = load(&input.input, input.quality_max)?;
            let seqs = field_of(&data, input.field)?;
            let stream: Vec<_> = seqs.reads.concat();
            let grid: Vec<f64> = rates.iter().map(|&r| eta_for_rate(r)).collect();
            // blocks are independent; scan chunks of blocks in parallel and renumber
            let per = block.max(1);
            let chunks: Vec<&[u16]> = stream.chunks(per * 16).collect();
            let parts = chunks
                .par_iter()
                .map(|c| scan_blocks(c, seqs.alphabet_size, block, &grid, order))
                .collect::<seqctx::Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for part in parts {
                for mut r in part {
                    r.block = rows.len();
                    rows.push(r);
                }
            }
            let csv = blocks_csv(&rows);
            match out {
                Some(path) => write_out(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Compress {
            input,
            output,
            plan,
            compare,
            quality_max,
        } => {
            let data = load(&input, quality_max)?;
            let has_q = data.has_qualities();
            let p = seeded(CompressionPlan::preset(&plan, has_q)?, seed);
            let archive = compress(&data, &p)?;
            let bytes = archive.to_bytes();
            write_out(&output, &bytes)?;
            for w in &archive.warnings {
                eprintln!("warning: {w}");
            }
            let plans = compare
                .iter()
                .map(|n| CompressionPlan::preset(n, has_q).map(|p| seeded(p, seed)))
                .collect::<seqctx::Result<Vec<_>>>()?;
            let sizes = plans
                .par_iter()
                .map(|p| compress(&data, p).map(|a| json!({"plan": p.name, "bytes": a.to_bytes().len()})))
                .collect::<seqctx::Result<Vec<_>>>()?;
            let n = data.total_symbols();
            print_json(&json!({
                "plan": plan,
                "reads": data.reads.len(),
                "symbols": n,
                "bytes": bytes.len(),
                "bpv": if n == 0 { 0.0 } else { bytes.len() as f64 * 8.0 / n as f64 },
                "report": archive.report(),
                "compare": sizes,
            }));
            Ok(())
        }
        Command::Decompress { input, output } => {
            let bytes = fs::read(&input).with_context(|| format!("cannot read {}", input.display()))?;
            let data = decompress_bytes(&bytes).map_err(|e| Failure::Data(e.into()))?;
            let text = if data.has_qualities() { write_fastq(&data) } else { write_fasta(&data) };
            write_out(&output, &text)?;
            Ok(())
        }
        Command::Eval {
            input,
            plans,
            csv,
            quality_max,
        } => {
            let data = load(&input, quality_max)?;
            let has_q = data.has_qualities();
            let names: Vec<String> = if plans.is_empty() {
                PRESETS
                    .iter()
                    .filter(|n| has_q || **n != "packed")
                    .map(|n| n.to_string())
                    .collect()
            } else {
                plans
            };
            let plans = names
                .iter()
                .map(|n| CompressionPlan::preset(n, has_q).map(|p| seeded(p, seed)))
                .collect::<seqctx::Result<Vec<_>>>()?;
            let rows = plans
                .par_iter()
                .map(|p| evaluate_plan(&data, p))
                .collect::<seqctx::Result<Vec<_>>>()?;
            let report = EvaluationReport::from_rows(data.total_symbols(), rows)?;
            if let Some(path) = csv {
                write_out(&path, report.to_csv().as_bytes())?;
            }
            print_json(&json!({
                "symbols": report.symbols,
                "best": report.best().plan,
                "rows": report.rows,
            }));
            Ok(())
        }
    }
}

fn analyze(input: &InputArgs, order: usize, penalty: f64, out_dir: Option<&Path>) -> CmdResult {
    let data = load(&input.input, input.quality_max)?;
    if data.reads.is_empty() {
        print_json(&json!({"reads": 0, "symbols": 0}));
        return Ok(());
    }
    let seqs = field_of(&data, input.field)?;
    let spec = ContextSpec::Order(order);
    spec.validate(seqs.alphabet_size)?;
    let stats = collect_stats(&seqs, &spec)?;
    let order0 = rate(&collect_stats(&seqs, &ContextSpec::Order(0))?)?.bpv;
    let full = rate(&stats)?;
    let (tree, curve) = match build_merge_tree(&stats) {
        Ok(t) => {
            let curve = t.cut_curve();
            (Some(t), curve)
        }
        Err(seqctx::Error::EmptyStats) => (None, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let bins_at_penalty = tree.as_ref().map(|t| t.cut(CutCriterion::MaxPenalty(penalty)).n_bins());
    let model_bpv = empirical_bpv(&seqs, &ContextModel::fit(&seqs, spec)?)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_out(&dir.join("contexts.csv"), stats.to_csv().as_bytes())?;
        if let Some(t) = &tree {
            write_out(&dir.join("tree.json"), t.to_json().as_bytes())?;
        }
        let mut s = String::from("bins,penaltyBpv\n");
        for (b, p) in &curve {
            s.push_str(&format!("{b},{p}\n"));
        }
        write_out(&dir.join("curve.csv"), s.as_bytes())?;
    }
    print_json(&json!({
        "reads": data.reads.len(),
        "symbols": seqs.total_len(),
        "alphabet": seqs.alphabet_size,
        "order": order,
        "full_context_bpv": full.bpv,
        "order0_bpv": order0,
        "coded_bpv": model_bpv,
        "contexts_seen": full.per_context.len(),
        "penalty": penalty,
        "bins_at_penalty": bins_at_penalty,
    }));
    Ok(())
}

/// Applies the global seed to every randomized plan component.
fn seeded(mut plan: CompressionPlan, seed: u64) -> CompressionPlan {
    let fix = |f: &mut FieldPlan| {
        if let Some(c) = f.cluster.as_mut() {
            *c = ClusterPlan { seed, ..*c };
        }
        if let ModelPlan::SoftHscm { seed: s, .. } = &mut f.model {
            *s = seed;
        }
    };
    match &mut plan.streams {
        StreamPlans::Separate { bases, qualities } => {
            fix(bases);
            if let Some(q) = qualities {
                fix(q);
            }
        }
        StreamPlans::Packed { plan, .. } => fix(plan),
    }
    plan
}
