//! phraselm — pipeline driver for the phrase-retrieval language model.
//!
//! Subcommands cover the full life cycle: corpus ingestion, constituent
//! phrase mining, index construction and merging, oracle segmentation,
//! dual-encoder training with self-reinforcement, mixed phrase/token
//! generation, likelihood scoring, and evaluation. Artifact-writing commands
//! drop a `<output>.manifest.json` beside each primary output with the
//! resolved configuration and input checksums.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod cmd;
mod load;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phraselm_core::generator::{DpMode, DupRule};
use phraselm_core::mining::IdfThresholds;
use phraselm_core::oracle::SegmentRule;
use phraselm_core::trainer::SrScore;
use phraselm_core::Result;

use settings::Settings;

#[derive(Parser)]
#[command(name = "phraselm", version, about = "Phrase-retrieval language model pipeline")]
struct Cli {
    /// Config file of `key = value` defaults (keys are long flag names);
    /// explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed: model init, training order, negative draws, sampling
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Skip wall-clock measurements so artifacts are byte-stable across runs
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    deterministic: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus into a block-aligned document store
    Ingest(IngestArgs),
    /// Filter constituent spans into phrase candidates by label, length, and IDF
    MinePhrases(MineArgs),
    /// Resolve candidates to best sources and encode them into a phrase table
    BuildIndex(BuildIndexArgs),
    /// Concatenate two phrase tables built over the same encoder
    IndexMerge(MergeArgs),
    /// Greedily segment each document into phrase and token steps
    MakeOracle(MakeOracleArgs),
    /// Train the prefix encoder (InfoNCE + token LM) with self-reinforcement
    Train(TrainArgs),
    /// Decode continuations by retrieving phrases and sampling
    Generate(GenerateArgs),
    /// Exact sequence log-likelihood under the phrase-distribution DP
    Likelihood(LikelihoodArgs),
    /// Rank candidate continuations of a prompt by likelihood
    ScoreOptions(ScoreOptionsArgs),
    /// Accuracy on a multiple-choice JSONL dataset
    EvalMc(EvalMcArgs),
    /// Generation quality across a φ threshold sweep
    EvalGen(EvalGenArgs),
    /// Decode latency statistics over a prompt set
    Bench(BenchArgs),
}

// ---------------------------------------------------------------------------
// Shared argument groups
// ---------------------------------------------------------------------------

/// Where the encoder comes from: a checkpoint, or fresh initialization with
/// reference dimensions (overridable per flag).
#[derive(Args)]
struct ModelArgs {
    /// Load the encoder from a checkpoint instead of initializing fresh
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Seed for fresh encoder weights (default: the master seed)
    #[arg(long, value_name = "N")]
    model_seed: Option<u64>,

    #[arg(long, value_name = "N")]
    d_model: Option<usize>,

    /// Matching-space dimensionality shared by both towers
    #[arg(long, value_name = "N")]
    index_dim: Option<usize>,

    #[arg(long, value_name = "N")]
    layers: Option<usize>,

    #[arg(long, value_name = "N")]
    heads: Option<usize>,

    #[arg(long, value_name = "N")]
    max_prefix_len: Option<usize>,

    #[arg(long, value_name = "N")]
    max_block_len: Option<usize>,
}

/// Retrieval backend: exact scan, or IVF with a probe budget.
#[derive(Args)]
struct SearchArgs {
    /// IVF coarse clusters (0 = exact full scan)
    #[arg(long, value_name = "N")]
    ivf_nlist: Option<usize>,

    /// Clusters probed per query (default: `nlist`, which matches exact search)
    #[arg(long, value_name = "N")]
    ivf_nprobe: Option<usize>,
}

/// Distribution knobs shared by the likelihood-style commands.
#[derive(Args)]
struct DpArgs {
    /// Phrases retrieved per step
    #[arg(long, value_name = "N")]
    k: Option<usize>,

    /// Phrase confidence threshold φ
    #[arg(long, value_name = "P")]
    phi: Option<f64>,

    /// Candidate set per step: retrieval united with all tokens, or retrieval only
    #[arg(long, value_enum, value_name = "MODE")]
    mode: Option<ModeArg>,

    /// Combining rule for lexically identical candidates
    #[arg(long, value_enum, value_name = "RULE")]
    dup: Option<DupArg>,
}

/// Sampling knobs shared by the decoding commands.
#[derive(Args)]
struct GenArgs {
    /// Phrases retrieved per step
    #[arg(long, value_name = "N")]
    k: Option<usize>,

    /// Phrase confidence threshold φ
    #[arg(long, value_name = "P")]
    phi: Option<f64>,

    /// Nucleus mass
    #[arg(long, value_name = "P")]
    top_p: Option<f64>,

    #[arg(long, value_name = "N")]
    max_new_tokens: Option<usize>,
}

// ---------------------------------------------------------------------------
// Per-command arguments
// ---------------------------------------------------------------------------

#[derive(Args)]
struct IngestArgs {
    /// Corpus JSONL: one {"id", "text"} object per line
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,

    /// Output document store (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Words per retrieval block
    #[arg(long, value_name = "N")]
    block_words: Option<usize>,
}

#[derive(Args)]
struct MineArgs {
    /// Document store from `ingest`
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    /// Output candidates JSONL
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Parser spans JSONL ({"doc_id", "spans": [{start, end, label}]});
    /// omitted → every in-block window becomes a candidate span
    #[arg(long, value_name = "FILE")]
    spans: Option<PathBuf>,

    /// IDF acceptance bands: the fixed reference table, or percentile
    /// trimming of the candidate population
    #[arg(long, value_enum, value_name = "MODE")]
    idf_mode: Option<IdfModeArg>,

    /// Percentile mode: fraction of low-IDF candidates trimmed per word count
    #[arg(long, value_name = "PCT")]
    drop_low_pct: Option<f64>,

    /// Percentile mode: fraction of high-IDF candidates trimmed per word count
    #[arg(long, value_name = "PCT")]
    drop_high_pct: Option<f64>,

    #[arg(long, value_name = "N")]
    min_words: Option<usize>,

    #[arg(long, value_name = "N")]
    max_words: Option<usize>,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    /// Candidates JSONL from `mine-phrases`
    #[arg(long, value_name = "FILE")]
    candidates: PathBuf,

    /// Output phrase table (binary; a JSON sidecar is written beside it)
    #[arg(long, value_name = "FILE")]
    out_table: PathBuf,

    /// Output resolved-candidates JSONL (per-document source matches)
    #[arg(long, value_name = "FILE")]
    out_resolved: PathBuf,

    /// Also save the initialized encoder as a checkpoint
    #[arg(long, value_name = "FILE")]
    save_model: Option<PathBuf>,

    /// BM25 shortlist size per lexical group
    #[arg(long, value_name = "N")]
    bm25_shortlist: Option<usize>,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long, value_name = "FILE")]
    table_a: PathBuf,

    #[arg(long, value_name = "FILE")]
    table_b: PathBuf,

    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Merge even if the tables were encoded by different frozen towers
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    allow_encoder_mismatch: Option<bool>,
}

#[derive(Args)]
struct MakeOracleArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    /// Resolved candidates JSONL from `build-index`
    #[arg(long, value_name = "FILE")]
    resolved: PathBuf,

    /// Output oracle paths JSONL
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Greedy tie-breaking rule
    #[arg(long, value_enum, value_name = "RULE")]
    rule: Option<RuleArg>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    /// Phrase table from `build-index` (token rows are re-synced after training)
    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Oracle paths JSONL from `make-oracle`
    #[arg(long, value_name = "FILE")]
    oracle: PathBuf,

    /// Resolved candidates JSONL (needed when self-reinforcement re-tiles)
    #[arg(long, value_name = "FILE")]
    resolved: PathBuf,

    /// Output trained checkpoint
    #[arg(long, value_name = "FILE")]
    out_model: PathBuf,

    /// Output re-synced phrase table
    #[arg(long, value_name = "FILE")]
    out_table: PathBuf,

    /// Per-epoch and per-round metrics JSONL
    #[arg(long, value_name = "FILE")]
    metrics: Option<PathBuf>,

    /// Oracle paths after the final self-reinforcement round
    #[arg(long, value_name = "FILE")]
    out_oracle: Option<PathBuf>,

    /// Token-LM weight α in the combined objective
    #[arg(long, value_name = "X")]
    alpha: Option<f64>,

    /// Minimum examples packed into a batch (whole documents)
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// Epochs per training phase
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,

    #[arg(long, value_name = "X")]
    learning_rate: Option<f64>,

    #[arg(long, value_name = "N")]
    warmup_steps: Option<usize>,

    /// Hard negatives retrieved per example
    #[arg(long, value_name = "N")]
    hard_negatives: Option<usize>,

    /// Self-reinforcement rounds between training phases
    #[arg(long, value_name = "N")]
    sr_rounds: Option<usize>,

    /// Retrieval depth when self-reinforcement rescores targets
    #[arg(long, value_name = "N")]
    sr_k: Option<usize>,

    /// Share each example's hard negatives across the whole batch
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    include_hard_in_batch: Option<bool>,

    /// Score driving self-reinforcement replacement
    #[arg(long, value_enum, value_name = "SCORE")]
    sr_score: Option<SrScoreArg>,

    /// Re-tiling rule when a replacement changes a step's length
    #[arg(long, value_enum, value_name = "RULE")]
    segment_rule: Option<RuleArg>,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Prompt text (may be empty: generation starts from the BOS context)
    #[arg(long, value_name = "TEXT")]
    prompt: String,

    /// Samples to draw (seeded master-seed + i)
    #[arg(long, value_name = "N")]
    count: Option<usize>,

    /// Output records JSONL; omitted → continuations print to stdout only
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    gen: GenArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct LikelihoodArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Text to score
    #[arg(long, value_name = "TEXT")]
    text: String,

    /// Conditioning prompt; scoring covers only the text positions
    #[arg(long, value_name = "TEXT")]
    prompt: Option<String>,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    dp: DpArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ScoreOptionsArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Prompt the options continue
    #[arg(long, value_name = "TEXT")]
    question: String,

    /// Candidate continuation (repeat; at least two)
    #[arg(long = "option", value_name = "TEXT")]
    options: Vec<String>,

    /// Rank by per-token instead of total log-likelihood
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    normalize: Option<bool>,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    dp: DpArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalMcArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Multiple-choice JSONL: {"question", "options", "answer"} per line
    #[arg(long, value_name = "FILE")]
    mc: PathBuf,

    /// Drop instances whose options are all single words
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    drop_single_word: Option<bool>,

    /// Rank by per-token instead of total log-likelihood
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    normalize: Option<bool>,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    dp: DpArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalGenArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    #[arg(long, value_name = "TEXT")]
    prompt: String,

    /// φ values to sweep, comma-separated
    #[arg(long, value_name = "LIST")]
    phis: Option<String>,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    gen: GenArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "FILE")]
    store: PathBuf,

    #[arg(long, value_name = "FILE")]
    table: PathBuf,

    /// Benchmark prompt (repeatable)
    #[arg(long = "prompt", value_name = "TEXT")]
    prompts: Vec<String>,

    /// File of prompts, one per line (blank lines skipped)
    #[arg(long, value_name = "FILE")]
    prompts_file: Option<PathBuf>,

    /// Unmeasured decodes before timing starts
    #[arg(long, value_name = "N")]
    warmup_runs: Option<usize>,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    gen: GenArgs,

    #[command(flatten)]
    search: SearchArgs,

    #[command(flatten)]
    model: ModelArgs,
}

// ---------------------------------------------------------------------------
// Flag-facing enum mirrors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum IdfModeArg {
    Table,
    Percentile,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    ScoreGreedy,
    LengthGreedy,
}

impl From<RuleArg> for SegmentRule {
    fn from(r: RuleArg) -> SegmentRule {
        match r {
            RuleArg::ScoreGreedy => SegmentRule::ScoreGreedy,
            RuleArg::LengthGreedy => SegmentRule::LengthGreedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SrScoreArg {
    Model,
    Frozen,
}

impl From<SrScoreArg> for SrScore {
    fn from(s: SrScoreArg) -> SrScore {
        match s {
            SrScoreArg::Model => SrScore::Model,
            SrScoreArg::Frozen => SrScore::Frozen,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FullVocab,
    TopkOnly,
}

impl From<ModeArg> for DpMode {
    fn from(m: ModeArg) -> DpMode {
        match m {
            ModeArg::FullVocab => DpMode::FullVocab,
            ModeArg::TopkOnly => DpMode::TopkOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DupArg {
    Sum,
    Max,
}

impl From<DupArg> for DupRule {
    fn from(d: DupArg) -> DupRule {
        match d {
            DupArg::Sum => DupRule::Sum,
            DupArg::Max => DupRule::Max,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry
// ---------------------------------------------------------------------------

/// Global options after resolution.
pub struct Globals {
    pub seed: u64,
    pub deterministic: bool,
}

fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.get("seed", cli.seed, 42)?;
    let threads = s.get("threads", cli.threads, 0)?;
    let deterministic = s.get("deterministic", cli.deterministic, false)?;
    let globals = Globals { seed, deterministic };

    if threads > 0 {
        // Fails only if a pool already exists, which only happens when tests
        // call run() twice in one process; the existing pool is fine then.
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }

    match cli.command {
        Command::Ingest(a) => cmd::ingest(a, &mut s),
        Command::MinePhrases(a) => cmd::mine_phrases(a, &mut s),
        Command::BuildIndex(a) => cmd::build_index(a, &mut s, &globals),
        Command::IndexMerge(a) => cmd::index_merge(a, &mut s),
        Command::MakeOracle(a) => cmd::make_oracle(a, &mut s),
        Command::Train(a) => cmd::train(a, &mut s, &globals),
        Command::Generate(a) => cmd::generate(a, &mut s, &globals),
        Command::Likelihood(a) => cmd::likelihood(a, &mut s, &globals),
        Command::ScoreOptions(a) => cmd::score_options(a, &mut s, &globals),
        Command::EvalMc(a) => cmd::eval_mc(a, &mut s, &globals),
        Command::EvalGen(a) => cmd::eval_gen(a, &mut s, &globals),
        Command::Bench(a) => cmd::bench(a, &mut s, &globals),
    }
}

fn main() -> ExitCode {
    // clap exits 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Resolve the mining threshold mode from its three flags.
fn idf_thresholds(
    s: &mut Settings,
    mode: Option<IdfModeArg>,
    low: Option<f64>,
    high: Option<f64>,
) -> Result<IdfThresholds> {
    match s.get_enum("idf-mode", mode, IdfModeArg::Table)? {
        IdfModeArg::Table => Ok(IdfThresholds::default_table()),
        IdfModeArg::Percentile => Ok(IdfThresholds::Percentile {
            drop_low_pct: s.get("drop-low-pct", low, 5.0)?,
            drop_high_pct: s.get("drop-high-pct", high, 5.0)?,
        }),
    }
}
