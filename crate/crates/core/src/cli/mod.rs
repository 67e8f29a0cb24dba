//! Command-line surface. [`dispatch`] parses argv, runs one pipeline and
//! maps failures to exit codes: 2 for usage errors, 1 for pipeline errors.

pub mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::eval::{self, ReconRow, DEFAULT_GT_DEPTH, DEFAULT_KS};
use crate::fusion::{write_history_csv, FusionError};
use crate::io::config::{KvMap, PipelineConfig, QuantizerKind};
use crate::io::{corpus_write, synth, write_atomic, FormatError};
use crate::nn::NnError;
use crate::quant::QuantError;
use crate::ranking::{run_ab, EngagementConfig, RankConfig, RankError, SyntheticEngagementSet};
use crate::sid::{read_sid_file, write_sid_file, SidError};
use pipeline::{read_corpora, read_numbers, Quantizer};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Pipeline(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sid(#[from] SidError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sidekit", version, about = "Quantizers, Semantic IDs and SIDE features")]
struct Cli {
    /// Emit machine-readable JSON instead of Markdown.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train (or fit) a quantizer and write a checkpoint plus `<out>.cfg`.
    Train(TrainArgs),
    /// Encode corpora into a SID file.
    Encode(EncodeArgs),
    /// Decode a SID file into per-signal reconstructions.
    Decode(DecodeArgs),
    /// Cosine reconstruction loss, optionally fused vs isolated.
    EvalRecon(EvalReconArgs),
    /// Recall@k of candidate-space neighbours against ground-truth neighbours.
    EvalRecall(EvalRecallArgs),
    /// Normalized entropy of predictions against binary labels.
    EvalNe(EvalNeArgs),
    /// SID vs SIDE ranking A/B on synthetic engagement data.
    RankAb(RankAbArgs),
    /// Grid over levels, depth, groups and n-gram length.
    Sweep(SweepArgs),
    /// Write a synthetic embedding corpus.
    GenCorpus(GenCorpusArgs),
    /// Write a synthetic engagement data set.
    GenEngagement(GenEngagementArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` pipeline config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Quantizer kind: kmeans, rq, pq, fsq or dpca.
    #[arg(long)]
    kind: Option<QuantizerKind>,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Input corpus, one per signal; repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// SID file to write.
    #[arg(long)]
    out: PathBuf,
    /// Digits per SID; defaults to the checkpoint config.
    #[arg(long)]
    ngram: Option<usize>,
    /// Also write the SIDE vectors recovered from the SIDs as a corpus.
    #[arg(long)]
    side_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    sids: PathBuf,
    /// Output corpus per signal, in order; repeatable.
    #[arg(long = "out", required = true)]
    outs: Vec<PathBuf>,
    /// DPCA prefix depth; the full stack by default.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalReconArgs {
    /// Fused checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Single-signal checkpoint per input, in order; repeatable.
    #[arg(long = "isolated")]
    isolated: Vec<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalRecallArgs {
    /// Corpus whose neighbours are the ground truth.
    #[arg(long)]
    truth: PathBuf,
    /// Corpus searched for candidates (same rows, any dimension).
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_GT_DEPTH)]
    gt_depth: usize,
    /// Number of query rows (the first rows of the corpus); all by default.
    #[arg(long)]
    queries: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalNeArgs {
    /// Whitespace-separated 0/1 labels.
    #[arg(long)]
    labels: PathBuf,
    /// Whitespace-separated probabilities.
    #[arg(long)]
    predictions: PathBuf,
}

#[derive(Debug, Args)]
struct RankAbArgs {
    /// Engagement file from `gen-engagement`; generated from `--seed` when
    /// absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    hash_size: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    depth: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    groups: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ngram: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CorpusKind {
    Clusters,
    Pair,
    Line,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    #[arg(long, value_enum, default_value = "clusters")]
    kind: CorpusKind,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f32,
    #[arg(long, default_value_t = 8)]
    shared: usize,
    #[arg(long, default_value_t = 4)]
    private: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f32,
    /// Output corpus; `pair` takes two.
    #[arg(long = "out", required = true)]
    outs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct GenEngagementArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    digits: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

struct Ctx {
    json: bool,
    seed: Option<u64>,
}

impl Ctx {
    fn emit<T: Serialize>(&self, out: &mut dyn std::io::Write, value: &T, markdown: String) -> Result<(), CliError> {
        let text = if self.json {
            serde_json::to_string_pretty(value).map_err(|e| CliError::Pipeline(e.to_string()))?
        } else {
            markdown
        };
        writeln!(out, "{}", text.trim_end()).map_err(|e| CliError::Pipeline(e.to_string()))
    }
}

/// Runs the CLI on `argv` (including the program name), writing reports to
/// `out` and diagnostics to stderr. Returns the process exit code.
pub fn dispatch<I, S>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let ctx = Ctx {
        json: cli.json,
        seed: cli.seed,
    };
    match run(&ctx, cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `SIDEKIT_THREADS` caps the worker pool. Only the first call in a process
/// takes effect.
fn configure_threads() {
    if let Some(n) = std::env::var("SIDEKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(ctx: &Ctx, command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train(ctx, a, out),
        Command::Encode(a) => encode(ctx, a, out),
        Command::Decode(a) => decode(ctx, a, out),
        Command::EvalRecon(a) => eval_recon(ctx, a, out),
        Command::EvalRecall(a) => eval_recall(ctx, a, out),
        Command::EvalNe(a) => eval_ne(ctx, a, out),
        Command::RankAb(a) => rank_ab(ctx, a, out),
        Command::Sweep(a) => sweep(ctx, a, out),
        Command::GenCorpus(a) => gen_corpus(ctx, a, out),
        Command::GenEngagement(a) => gen_engagement(ctx, a, out),
    }
}

fn load_config(ctx: &Ctx, args: &ConfigArgs, extra: &[(&str, String)]) -> Result<PipelineConfig, CliError> {
    let mut kv = match &args.config {
        Some(p) => KvMap::read(p)?,
        None => KvMap::default(),
    };
    if let Some(kind) = args.kind {
        kv.set("kind", kind);
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    for (k, v) in extra {
        kv.set(k, v);
    }
    if let Some(seed) = ctx.seed {
        kv.set("seed", seed);
    }
    Ok(PipelineConfig::from_kv(kv)?)
}

fn tensors(corpora: &[crate::io::EmbeddingCorpus]) -> Vec<&crate::nn::Tensor2> {
    corpora.iter().map(|c| c.vectors()).collect()
}

#[derive(Serialize)]
struct TrainReport {
    kind: String,
    checkpoint: PathBuf,
    code_len: usize,
    bits: f64,
    final_loss: Option<f64>,
    epochs: usize,
}

fn train(ctx: &Ctx, a: TrainArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let inputs = a.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
    let cfg = load_config(
        ctx,
        &a.config,
        &[("inputs", inputs), ("output", a.out.display().to_string())],
    )?;
    let corpora = read_corpora(&cfg.inputs)?;
    let (q, history) = Quantizer::fit(&cfg, &tensors(&corpora))?;
    q.save(&cfg, &a.out)?;
    if let Some(h) = &a.history {
        let names: Vec<String> = (0..corpora.len()).map(|k| format!("signal{k}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write_history_csv(h, &names, &history)?;
    }
    let report = TrainReport {
        kind: cfg.kind.to_string(),
        checkpoint: a.out.clone(),
        code_len: q.code_len(),
        bits: cfg.bits(),
        final_loss: history.last().map(|r| r.total),
        epochs: history.len().saturating_sub(1),
    };
    let md = format!(
        "Trained {} ({} digits, {:.1} bits){} → {}",
        report.kind,
        report.code_len,
        report.bits,
        report.final_loss.map_or(String::new(), |l| format!(", final loss {l:.5}")),
        a.out.display()
    );
    ctx.emit(out, &report, md)
}

#[derive(Serialize)]
struct EncodeReport {
    records: usize,
    grams: usize,
    base: u32,
    ngram: usize,
    out: PathBuf,
}

fn encode(ctx: &Ctx, a: EncodeArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let (cfg, q) = Quantizer::load(&a.ckpt)?;
    let corpora = read_corpora(&a.inputs)?;
    let file = q.encode(&tensors(&corpora), a.ngram.unwrap_or(cfg.ngram))?;
    write_sid_file(&file, &a.out)?;
    if let Some(side) = &a.side_out {
        corpus_write(&crate::io::EmbeddingCorpus::new(q.side_vectors(&file)?), side)?;
    }
    let report = EncodeReport {
        records: file.records.len(),
        grams: file.grams,
        base: file.scheme.base(),
        ngram: file.scheme.ngram(),
        out: a.out.clone(),
    };
    let md = format!(
        "Encoded {} records ({} grams of {} base-{} digits) → {}",
        report.records,
        report.grams,
        report.ngram,
        report.base,
        a.out.display()
    );
    ctx.emit(out, &report, md)
}

fn decode(ctx: &Ctx, a: DecodeArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let (_, q) = Quantizer::load(&a.ckpt)?;
    let file = read_sid_file(&a.sids)?;
    let recon = q.decode(&file, a.depth.unwrap_or(usize::MAX))?;
    if recon.len() != a.outs.len() {
        return Err(CliError::Usage(format!(
            "the checkpoint decodes {} signals but {} --out paths were given",
            recon.len(),
            a.outs.len()
        )));
    }
    for (t, p) in recon.into_iter().zip(&a.outs) {
        corpus_write(&crate::io::EmbeddingCorpus::new(t), p)?;
    }
    let outs: Vec<String> = a.outs.iter().map(|p| p.display().to_string()).collect();
    let md = format!("Decoded {} records → {}", file.records.len(), outs.join(", "));
    ctx.emit(out, &outs, md)
}

fn eval_recon(ctx: &Ctx, a: EvalReconArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let (cfg, fused) = Quantizer::load(&a.ckpt)?;
    let corpora = read_corpora(&a.inputs)?;
    let data = tensors(&corpora);
    let depth = a.depth.unwrap_or(usize::MAX);
    let fused_recon = fused.reconstruct(&data, depth)?;
    if !a.isolated.is_empty() && a.isolated.len() != data.len() {
        return Err(CliError::Usage(format!(
            "{} --isolated checkpoints for {} inputs",
            a.isolated.len(),
            data.len()
        )));
    }
    let mut rows = Vec::with_capacity(data.len());
    for (k, x) in data.iter().enumerate() {
        let f = eval::cosine_recon_loss(x, &fused_recon[k])?;
        let iso = match a.isolated.get(k) {
            Some(p) => {
                let (_, q) = Quantizer::load(p)?;
                let r = q.reconstruct(&[*x], depth)?;
                eval::cosine_recon_loss(x, &r[0])?
            }
            None => f64::NAN,
        };
        rows.push(ReconRow {
            quantizer: cfg.kind.to_string(),
            task: format!("signal{k}"),
            isolated: iso,
            fused: f,
        });
    }
    let md = if a.isolated.is_empty() {
        let mut s = String::from("| Quantizer | Task | Cosine loss |\n|---|---|---|\n");
        for r in &rows {
            let _ = writeln!(s, "| {} | {} | {:.4} |", r.quantizer, r.task, r.fused);
        }
        s
    } else {
        eval::recon_table(&rows)
    };
    ctx.emit(out, &rows, md)
}

fn eval_recall(ctx: &Ctx, a: EvalRecallArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let truth = crate::io::corpus_read(&a.truth)?;
    let cand = crate::io::corpus_read(&a.candidates)?;
    if truth.rows() != cand.rows() {
        return Err(CliError::Pipeline(format!(
            "truth has {} rows, candidates {}",
            truth.rows(),
            cand.rows()
        )));
    }
    let n = a.queries.unwrap_or(truth.rows()).min(truth.rows());
    let queries: Vec<usize> = (0..n).collect();
    let max_k = a.ks.iter().copied().max().unwrap_or(0);
    let gt = eval::knn_ground_truth(truth.vectors(), &queries, a.gt_depth)?;
    let found = eval::knn_search(cand.vectors(), &queries, max_k)?;
    let report = eval::recall_at_k(&gt, &found, &a.ks)?;
    let md = eval::recall_table(&[(a.candidates.display().to_string(), report.clone())]);
    ctx.emit(out, &report, md)
}

fn eval_ne(ctx: &Ctx, a: EvalNeArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let labels = read_numbers(&a.labels)?;
    let preds = read_numbers(&a.predictions)?;
    let report = eval::normalized_entropy(&labels, &preds)?;
    let md = format!(
        "NE {:.6} over {} samples (prior {:.4}, mean log loss {:.6})",
        report.ne, report.samples, report.prior, report.mean_log_loss
    );
    ctx.emit(out, &report, md)
}

fn rank_ab(ctx: &Ctx, a: RankAbArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(0);
    let data = match &a.data {
        Some(p) => {
            let bytes = crate::io::read_file(p)?;
            SyntheticEngagementSet::parse(&String::from_utf8_lossy(&bytes))?
        }
        None => {
            let d = EngagementConfig::default();
            SyntheticEngagementSet::generate(&EngagementConfig {
                users: a.users.unwrap_or(d.users),
                items: a.items.unwrap_or(d.items),
                seed,
                ..d
            })
            .map_err(CliError::Pipeline)?
        }
    };
    let d = RankConfig::default();
    let cfg = RankConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        dim: a.dim.unwrap_or(d.dim),
        seed,
        ..d
    };
    let report = run_ab(&data, a.hash_size, &cfg)?;
    let md = report.markdown();
    ctx.emit(out, &report, md)
}

#[derive(Serialize)]
struct SweepRow {
    kind: String,
    levels: u32,
    depth: usize,
    groups: usize,
    ngram: usize,
    bits: f64,
    grams: usize,
    /// Mean cosine reconstruction loss per signal.
    recon: Vec<f64>,
}

fn sweep(ctx: &Ctx, a: SweepArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let base = load_config(ctx, &a.config, &[])?;
    let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let levels = if a.levels.is_empty() { vec![base.levels] } else { a.levels.clone() };
    let corpora = read_corpora(&a.inputs)?;
    let data = tensors(&corpora);
    let mut rows = Vec::new();
    for &l in &levels {
        for &d in &or(&a.depth, base.depth) {
            for &p in &or(&a.groups, base.groups) {
                for &n in &or(&a.ngram, base.ngram) {
                    let cfg = PipelineConfig {
                        levels: l,
                        depth: d,
                        groups: p,
                        ngram: n,
                        ..base.clone()
                    };
                    cfg.validate()
                        .map_err(|e| CliError::Pipeline(format!("grid point L={l} D={d} P={p} n={n}: {e}")))?;
                    let (q, _) = Quantizer::fit(&cfg, &data)?;
                    let recon = q.reconstruct(&data, usize::MAX)?;
                    let losses = data
                        .iter()
                        .zip(&recon)
                        .map(|(x, r)| eval::cosine_recon_loss(x, r))
                        .collect::<Result<Vec<_>, _>>()?;
                    let file = q.encode(&data, n)?;
                    rows.push(SweepRow {
                        kind: cfg.kind.to_string(),
                        levels: l,
                        depth: d,
                        groups: p,
                        ngram: n,
                        bits: cfg.bits(),
                        grams: file.grams,
                        recon: losses,
                    });
                }
            }
        }
    }
    let mut md = String::from("| Quantizer | L | D | P | n | Bits | Grams | Cosine loss |\n|---|---|---|---|---|---|---|---|\n");
    for r in &rows {
        let losses: Vec<String> = r.recon.iter().map(|l| format!("{l:.4}")).collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.1} | {} | {} |",
            r.kind,
            r.levels,
            r.depth,
            r.groups,
            r.ngram,
            r.bits,
            r.grams,
            losses.join(" / ")
        );
    }
    ctx.emit(out, &rows, md)
}

fn gen_corpus(ctx: &Ctx, a: GenCorpusArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(0);
    let expected = if a.kind == CorpusKind::Pair { 2 } else { 1 };
    if a.outs.len() != expected {
        return Err(CliError::Usage(format!("{:?} writes {expected} corpus file(s)", a.kind)));
    }
    let written: Vec<(PathBuf, usize, usize)> = match a.kind {
        CorpusKind::Clusters => {
            let c = synth::planted_clusters(a.rows, a.dim, a.clusters, a.spread, seed);
            corpus_write(&c, &a.outs[0])?;
            vec![(a.outs[0].clone(), c.rows(), c.dim())]
        }
        CorpusKind::Line => {
            let c = synth::line_samples(a.rows, a.dim, seed);
            corpus_write(&c, &a.outs[0])?;
            vec![(a.outs[0].clone(), c.rows(), c.dim())]
        }
        CorpusKind::Pair => {
            let (x, y) = synth::correlated_pair(a.rows, a.dim, a.shared, a.private, a.noise, seed);
            corpus_write(&x, &a.outs[0])?;
            corpus_write(&y, &a.outs[1])?;
            vec![(a.outs[0].clone(), x.rows(), x.dim()), (a.outs[1].clone(), y.rows(), y.dim())]
        }
    };
    let md = written
        .iter()
        .map(|(p, r, d)| format!("Wrote {r}×{d} corpus → {}", p.display()))
        .collect::<Vec<_>>()
        .join("\n");
    ctx.emit(out, &written, md)
}

fn gen_engagement(ctx: &Ctx, a: GenEngagementArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let d = EngagementConfig::default();
    let cfg = EngagementConfig {
        users: a.users.unwrap_or(d.users),
        items: a.items.unwrap_or(d.items),
        digits: a.digits.unwrap_or(d.digits),
        history: a.history.unwrap_or(d.history),
        targets_per_user: a.targets.unwrap_or(d.targets_per_user),
        seed: ctx.seed.unwrap_or(0),
        ..d
    };
    let set = SyntheticEngagementSet::generate(&cfg).map_err(CliError::Pipeline)?;
    write_engagement(&set, &a.out)?;
    #[derive(Serialize)]
    struct Summary {
        users: usize,
        items: usize,
        samples: usize,
        positive_rate: f64,
    }
    let s = Summary {
        users: set.users(),
        items: set.items(),
        samples: set.samples.len(),
        positive_rate: set.positive_rate(),
    };
    let md = format!(
        "Wrote {} users, {} items, {} samples (positive rate {:.3}) → {}",
        s.users,
        s.items,
        s.samples,
        s.positive_rate,
        a.out.display()
    );
    ctx.emit(out, &s, md)
}

fn write_engagement(set: &SyntheticEngagementSet, path: &Path) -> Result<(), CliError> {
    Ok(write_atomic(path, set.to_text().as_bytes())?)
}
