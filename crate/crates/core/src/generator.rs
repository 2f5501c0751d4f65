//! Decoding and likelihood. Each step retrieves top-k entries for the
//! current prefix, softmaxes their raw scores, drops *phrase* candidates
//! below the φ confidence threshold (token candidates are never filtered,
//! and if filtering empties the set the unfiltered distribution is used),
//! renormalizes, and nucleus-samples. Emitting a phrase copies tokens from
//! its source span, so every generated span carries attribution; a phrase
//! that overshoots the budget is truncated and attributed to the truncated
//! span.
//!
//! Likelihood of a fixed text marginalizes over every segmentation with an
//! O(n²) forward lattice over the same per-position distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, TokenId};
use crate::error::{Error, Result};
use crate::index::{dot, EntryKind, Hit, PhraseTable, Searcher};
use crate::neural::Model;
use crate::oracle::SourceRef;
use crate::trainer::{entry_token_seqs, EntryTokens};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Top-k retrieved per step.
    pub k: usize,
    /// Phrase confidence threshold φ: phrase candidates with probability
    /// below it are dropped before sampling.
    pub phi: f64,
    /// Nucleus mass.
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn new(max_new_tokens: usize, seed: u64) -> Self {
        GenerationConfig { k: 128, phi: 0.4, top_p: 0.95, max_new_tokens, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::Config(format!("φ must lie in [0, 1], got {}", self.phi)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub entry_id: u32,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct StepDistribution {
    /// Normalized candidates, in retrieval (score-descending) order.
    pub candidates: Vec<Candidate>,
    /// True when every phrase fell below φ and no token was present, so the
    /// unfiltered distribution was kept.
    pub fell_back: bool,
}

/// Max-subtracted softmax over hit scores.
fn softmax_hits(hits: &[Hit]) -> Vec<Candidate> {
    let m = hits.iter().map(|h| h.score as f64).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = hits.iter().map(|h| ((h.score as f64) - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    hits.iter()
        .zip(exps)
        .map(|(h, e)| Candidate { entry_id: h.entry_id, prob: e / z })
        .collect()
}

/// Drop phrase candidates below φ, keep every token candidate, renormalize.
/// Falls back to the input distribution when nothing survives.
pub fn phi_filter(table: &PhraseTable, cands: Vec<Candidate>, phi: f64) -> (Vec<Candidate>, bool) {
    let kept: Vec<Candidate> = cands
        .iter()
        .copied()
        .filter(|c| table.is_token_entry(c.entry_id) || c.prob >= phi)
        .collect();
    if kept.is_empty() {
        return (cands, true);
    }
    let z: f64 = kept.iter().map(|c| c.prob).sum();
    (kept.into_iter().map(|c| Candidate { entry_id: c.entry_id, prob: c.prob / z }).collect(), false)
}

/// Smallest probability-sorted prefix with mass ≥ `top_p` (ties broken by
/// ascending entry id), renormalized.
pub fn nucleus(cands: &[Candidate], top_p: f64) -> Vec<Candidate> {
    let mut sorted: Vec<Candidate> = cands.to_vec();
    sorted.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.entry_id.cmp(&b.entry_id)));
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for c in sorted {
        kept.push(c);
        cum += c.prob;
        if cum >= top_p {
            break;
        }
    }
    let z: f64 = kept.iter().map(|c| c.prob).sum();
    kept.into_iter().map(|c| Candidate { entry_id: c.entry_id, prob: c.prob / z }).collect()
}

/// Draw one entry from a normalized candidate list.
pub fn sample_from(cands: &[Candidate], rng: &mut ChaCha8Rng) -> (u32, f64) {
    debug_assert!(!cands.is_empty());
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for c in cands {
        cum += c.prob;
        if u < cum {
            return (c.entry_id, c.prob);
        }
    }
    let last = cands.last().expect("non-empty candidates");
    (last.entry_id, last.prob)
}

/// The sampling distribution for one prefix query: retrieve, softmax, φ-filter.
pub fn next_distribution(
    table: &PhraseTable,
    searcher: Searcher<'_>,
    q: &[f64],
    k: usize,
    phi: f64,
) -> Result<StepDistribution> {
    let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
    let hits = searcher.search(table, &qf, k)?;
    if hits.is_empty() {
        return Err(Error::Invalid("retrieval returned no candidates (empty table?)".into()));
    }
    let cands = softmax_hits(&hits);
    let (candidates, fell_back) = phi_filter(table, cands, phi);
    Ok(StepDistribution { candidates, fell_back })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenStep {
    /// Offset of the step's first token within the generated continuation.
    pub position: usize,
    pub entry_id: u32,
    /// Text the step emitted (after any truncation).
    pub surface: String,
    /// Tokens the step emitted.
    pub tokens: usize,
    /// Source span for phrase steps (truncated along with the phrase).
    pub source: Option<SourceRef>,
    pub truncated: bool,
    /// Probability of the entry in the nucleus the step sampled from.
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generation {
    /// Generated continuation (prompt not included).
    pub tokens: Vec<TokenId>,
    pub steps: Vec<GenStep>,
    /// Fraction of generated tokens that came from single-token steps.
    pub token_rate: f64,
    /// Wall-clock seconds, absent in deterministic runs.
    pub wall_seconds: Option<f64>,
}

pub fn generate(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    searcher: Searcher<'_>,
    measure_time: bool,
) -> Result<Generation> {
    cfg.validate()?;
    let started = measure_time.then(std::time::Instant::now);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ctx: Vec<TokenId> = prompt.to_vec();
    let mut tokens: Vec<TokenId> = Vec::with_capacity(cfg.max_new_tokens);
    let mut steps: Vec<GenStep> = Vec::new();
    let mut token_step_tokens = 0usize;

    while tokens.len() < cfg.max_new_tokens {
        let q = model.encode_prefix(&ctx);
        let dist = next_distribution(table, searcher, &q, cfg.k, cfg.phi)?;
        let nuc = nucleus(&dist.candidates, cfg.top_p);
        let (entry_id, prob) = sample_from(&nuc, &mut rng);
        let position = tokens.len();
        let meta = table.meta(entry_id);
        match meta.kind.clone() {
            EntryKind::Token { token_id } => {
                tokens.push(token_id);
                ctx.push(token_id);
                token_step_tokens += 1;
                steps.push(GenStep {
                    position,
                    entry_id,
                    surface: meta.surface.clone(),
                    tokens: 1,
                    source: None,
                    truncated: false,
                    prob,
                });
            }
            EntryKind::Phrase { doc_id, start, end } => {
                let doc_idx = store
                    .doc_index(&doc_id)
                    .ok_or_else(|| Error::UnknownDocId { id: doc_id.clone() })?;
                let doc = store.doc(doc_idx);
                let len = end - start;
                let room = cfg.max_new_tokens - tokens.len();
                let take = len.min(room);
                let span = &doc.tokens[start..start + take];
                tokens.extend_from_slice(span);
                ctx.extend_from_slice(span);
                let surface = span
                    .iter()
                    .map(|&t| store.vocab.token(t))
                    .collect::<Vec<_>>()
                    .join(" ");
                steps.push(GenStep {
                    position,
                    entry_id,
                    surface,
                    tokens: take,
                    source: Some(SourceRef { doc_id, start, end: start + take }),
                    truncated: take < len,
                    prob,
                });
            }
        }
    }

    Ok(Generation {
        token_rate: token_step_tokens as f64 / tokens.len() as f64,
        tokens,
        steps,
        wall_seconds: started.map(|t| t.elapsed().as_secs_f64()),
    })
}

// ---------------------------------------------------------------------------
// Likelihood of a fixed text
// ---------------------------------------------------------------------------

/// What to do when several entries with the same surface match the same span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DupRule {
    /// Sum their probabilities (the event "this text continues" is a union).
    #[default]
    Sum,
    Max,
}

/// Which candidates each step distribution ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpMode {
    /// Top-k retrieval united with every vocabulary token entry, so every
    /// text has positive likelihood.
    #[default]
    FullVocab,
    /// Top-k retrieval only; texts outside it score −∞.
    TopkOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpConfig {
    pub k: usize,
    pub phi: f64,
    pub mode: DpMode,
    pub dup: DupRule,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig { k: 128, phi: 0.4, mode: DpMode::FullVocab, dup: DupRule::Sum }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpReport {
    pub log_likelihood: f64,
    pub tokens: usize,
    /// Step distributions constructed — grows linearly in the text length
    /// (the quadratic total cost hides in the per-step prefix encodings).
    pub distributions_built: usize,
}

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward lattice over `tokens[from..]`, conditioning every step on the full
/// prefix `tokens[..j]`. `L[j]` is the log-probability of reaching offset j;
/// edges are the token entry for `tokens[j]` plus every matching phrase.
fn dp_span(
    table: &PhraseTable,
    model: &Model,
    entries: &EntryTokens,
    tokens: &[TokenId],
    from: usize,
    cfg: &DpConfig,
    searcher: Searcher<'_>,
) -> Result<(f64, usize)> {
    let n = tokens.len();
    debug_assert!(from < n);
    let mut l = vec![f64::NEG_INFINITY; n + 1];
    l[from] = 0.0;
    let mut built = 0usize;

    for j in from..n {
        if l[j] == f64::NEG_INFINITY {
            continue;
        }
        let q = model.encode_prefix(&tokens[..j]);
        let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
        let mut hits = searcher.search(table, &qf, cfg.k)?;
        if cfg.mode == DpMode::FullVocab {
            let present: std::collections::HashSet<u32> =
                hits.iter().map(|h| h.entry_id).collect();
            for tid in 0..table.token_count {
                let id = table.token_entry_id(tid as TokenId);
                if !present.contains(&id) {
                    hits.push(Hit { entry_id: id, score: dot(table.embedding(id), &qf) });
                }
            }
        }
        let (cands, _) = phi_filter(table, softmax_hits(&hits), cfg.phi);
        built += 1;

        let token_edge = table.token_entry_id(tokens[j]);
        let mut phrase_mass: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for c in &cands {
            if c.entry_id == token_edge {
                l[j + 1] = lse(l[j + 1], l[j] + c.prob.ln());
                continue;
            }
            if table.is_token_entry(c.entry_id) {
                continue;
            }
            let seq = entries.of(c.entry_id);
            if seq.len() >= 2 && tokens[j..].starts_with(seq) {
                let m = phrase_mass.entry(seq.len()).or_insert(0.0);
                *m = match cfg.dup {
                    DupRule::Sum => *m + c.prob,
                    DupRule::Max => m.max(c.prob),
                };
            }
        }
        for (len, mass) in phrase_mass {
            l[j + len] = lse(l[j + len], l[j] + mass.ln());
        }
    }
    Ok((l[n], built))
}

/// Log-likelihood of `tokens`, marginalized over all segmentations.
pub fn dp_likelihood(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    tokens: &[TokenId],
    cfg: &DpConfig,
    searcher: Searcher<'_>,
) -> Result<DpReport> {
    if tokens.is_empty() {
        return Err(Error::Invalid("likelihood of an empty text is undefined".into()));
    }
    let entries = entry_token_seqs(table, &store.vocab);
    let (ll, built) = dp_span(table, model, &entries, tokens, 0, cfg, searcher)?;
    Ok(DpReport { log_likelihood: ll, tokens: tokens.len(), distributions_built: built })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionScore {
    pub log_likelihood: f64,
    pub per_token: f64,
    pub tokens: usize,
}

/// Score each option as the log-likelihood of `prompt ⊕ option` restricted to
/// the option's positions; returns (argmax, scores). Ranking uses per-token
/// scores when `normalize`, ties resolve to the lowest index.
#[allow(clippy::too_many_arguments)]
pub fn score_options(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    prompt: &[TokenId],
    options: &[Vec<TokenId>],
    cfg: &DpConfig,
    searcher: Searcher<'_>,
    normalize: bool,
) -> Result<(usize, Vec<OptionScore>)> {
    if options.is_empty() {
        return Err(Error::Invalid("no options to score".into()));
    }
    let entries = entry_token_seqs(table, &store.vocab);
    let mut scores = Vec::with_capacity(options.len());
    for (i, opt) in options.iter().enumerate() {
        if opt.is_empty() {
            return Err(Error::Invalid(format!("option {i} is empty")));
        }
        let mut full = prompt.to_vec();
        full.extend_from_slice(opt);
        let (ll, _) = dp_span(table, model, &entries, &full, prompt.len(), cfg, searcher)?;
        scores.push(OptionScore {
            log_likelihood: ll,
            per_token: ll / opt.len() as f64,
            tokens: opt.len(),
        });
    }
    let key = |s: &OptionScore| if normalize { s.per_token } else { s.log_likelihood };
    let mut best = 0;
    for i in 1..scores.len() {
        if key(&scores[i]) > key(&scores[best]) {
            best = i;
        }
    }
    Ok((best, scores))
}
