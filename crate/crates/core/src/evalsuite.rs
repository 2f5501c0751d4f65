//! Generation-quality metrics and decode benchmarking.
//!
//! Repetition and diversity follow the n-gram convention: rep-n is the
//! percentage of repeated n-grams, diversity the product over n ∈ {2,3,4} of
//! the unique fractions. Coherence is the mean negative log-likelihood of a
//! continuation given its prompt under the model's own token head (token
//! mode: the distribution ranges over the vocabulary only, so phrase
//! availability does not distort the number). Texts shorter than n have no
//! n-grams; rep-n is reported as 0 with a degenerate flag rather than a
//! division by zero.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, TokenId};
use crate::error::{Error, Result};
use crate::generator::{generate, Generation, GenerationConfig};
use crate::index::{PhraseTable, Searcher};
use crate::neural::{Model, TARGET_TOKEN_EMB};
use crate::trainer::loss;
use crate::util::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepN {
    pub rep: f64,
    /// True when the text was too short to contain any n-gram.
    pub degenerate: bool,
}

pub fn rep_n(tokens: &[TokenId], n: usize) -> RepN {
    assert!(n >= 1, "n-gram order must be positive");
    if tokens.len() < n {
        return RepN { rep: 0.0, degenerate: true };
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[TokenId]> = tokens.windows(n).collect();
    RepN { rep: 100.0 * (1.0 - unique.len() as f64 / total as f64), degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub value: f64,
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    pub degenerate: bool,
}

pub fn diversity(tokens: &[TokenId]) -> Diversity {
    let r2 = rep_n(tokens, 2);
    let r3 = rep_n(tokens, 3);
    let r4 = rep_n(tokens, 4);
    Diversity {
        value: (1.0 - r2.rep / 100.0) * (1.0 - r3.rep / 100.0) * (1.0 - r4.rep / 100.0),
        rep_2: r2.rep,
        rep_3: r3.rep,
        rep_4: r4.rep,
        degenerate: r2.degenerate || r3.degenerate || r4.degenerate,
    }
}

/// Mean token NLL of `continuation` given `prefix` under the model's token
/// head: −(1/n) Σ_i log p(x_i | prefix ‖ x_{<i}). The prefix tokens condition
/// the states but are not themselves scored.
pub fn coherence(model: &Model, prefix: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
    if continuation.is_empty() {
        return Err(Error::Invalid("coherence of an empty continuation is undefined".into()));
    }
    let dim = model.config.index_dim;
    let vocab = model.config.vocab_size;
    let emb = model.trainable.view(TARGET_TOKEN_EMB);
    let full: Vec<TokenId> = prefix.iter().chain(continuation).copied().collect();
    let mut total = 0.0;
    if full.len() + 1 <= model.config.max_prefix_len {
        let (_, qs) = model.prefix_forward_all(&full)?;
        for j in prefix.len()..full.len() {
            total += loss::token_loss(&qs[j], full[j], emb, vocab, dim).loss;
        }
    } else {
        for j in prefix.len()..full.len() {
            let q = model.encode_prefix(&full[..j]);
            total += loss::token_loss(&q, full[j], emb, vocab, dim).loss;
        }
    }
    Ok(total / continuation.len() as f64)
}

/// steps + Σ(step_tokens − 1) must equal the tokens produced; every decode
/// obeys this identity and violating it signals a broken step accounting.
pub fn step_identity_holds(gen: &Generation) -> bool {
    let extra: usize = gen.steps.iter().map(|s| s.tokens - 1).sum();
    gen.steps.len() + extra == gen.tokens.len()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenEval {
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    pub diversity: f64,
    pub coherence: f64,
    pub token_rate: f64,
    pub tokens: usize,
    pub steps: usize,
    pub degenerate: bool,
}

/// Metrics over one generation: n-gram statistics of the continuation, and
/// its coherence given the prompt it continued.
pub fn evaluate_generation(model: &Model, prompt: &[TokenId], gen: &Generation) -> Result<GenEval> {
    let d = diversity(&gen.tokens);
    Ok(GenEval {
        rep_2: d.rep_2,
        rep_3: d.rep_3,
        rep_4: d.rep_4,
        diversity: d.value,
        coherence: coherence(model, prompt, &gen.tokens)?,
        token_rate: gen.token_rate,
        tokens: gen.tokens.len(),
        steps: gen.steps.len(),
        degenerate: d.degenerate,
    })
}

// ---------------------------------------------------------------------------
// φ sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiPoint {
    pub phi: f64,
    /// Wall time of the decode; None when timing was off.
    pub seconds: Option<f64>,
    pub eval: GenEval,
}

/// Generate once per φ (same seed and budget) and evaluate, tracing how the
/// confidence threshold trades phrase copying against token fallback.
#[allow(clippy::too_many_arguments)]
pub fn phi_sweep(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    prompt: &[TokenId],
    base: &GenerationConfig,
    phis: &[f64],
    searcher: Searcher<'_>,
    measure_time: bool,
) -> Result<Vec<PhiPoint>> {
    let mut points = Vec::with_capacity(phis.len());
    for &phi in phis {
        let cfg = GenerationConfig { phi, ..base.clone() };
        let gen = generate(store, table, model, prompt, &cfg, searcher, measure_time)?;
        points.push(PhiPoint {
            phi,
            seconds: gen.wall_seconds,
            eval: evaluate_generation(model, prompt, &gen)?,
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Decode latency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRun {
    pub prompt_index: usize,
    pub seconds: f64,
    pub steps: usize,
    pub tokens: usize,
    pub token_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub warmup_runs: usize,
    pub runs: Vec<BenchRun>,
    pub mean_seconds: f64,
    pub p50_seconds: f64,
    pub p95_seconds: f64,
    pub mean_token_rate: f64,
    pub tokens_per_sec: f64,
}

/// Decode one continuation per prompt, strictly serialized on the calling
/// thread, and report per-continuation wall times. The first `warmup_runs`
/// decodes (cycling through the prompts) are executed but not measured.
pub fn bench_decode(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    prompts: &[Vec<TokenId>],
    cfg: &GenerationConfig,
    searcher: Searcher<'_>,
    warmup_runs: usize,
) -> Result<BenchReport> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::Invalid("benchmark needs at least one prompt".into()));
    }
    for w in 0..warmup_runs {
        generate(store, table, model, &prompts[w % prompts.len()], cfg, searcher, false)?;
    }
    let mut runs = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let gen = generate(store, table, model, prompt, cfg, searcher, true)?;
        runs.push(BenchRun {
            prompt_index: i,
            seconds: gen.wall_seconds.expect("timed decode records wall time"),
            steps: gen.steps.len(),
            tokens: gen.tokens.len(),
            token_rate: gen.token_rate,
        });
    }
    let mut secs: Vec<f64> = runs.iter().map(|r| r.seconds).collect();
    secs.sort_by(f64::total_cmp);
    let total_seconds: f64 = secs.iter().sum();
    let total_tokens: usize = runs.iter().map(|r| r.tokens).sum();
    Ok(BenchReport {
        warmup_runs,
        mean_seconds: total_seconds / runs.len() as f64,
        p50_seconds: percentile_sorted(&secs, 50.0),
        p95_seconds: percentile_sorted(&secs, 95.0),
        mean_token_rate: runs.iter().map(|r| r.token_rate).sum::<f64>() / runs.len() as f64,
        tokens_per_sec: total_tokens as f64 / total_seconds,
        runs,
    })
}
