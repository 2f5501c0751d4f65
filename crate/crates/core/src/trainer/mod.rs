//! Training: InfoNCE over oracle targets plus a token-LM term, exact
//! gradients through the prefix tower, Adam with linear warmup, and the
//! iterative self-reinforcement loop (see [`sr`]).
//!
//! Only the prefix tower and the token-target matrix receive updates. Phrase
//! embeddings enter the loss as constants read from the table; token entries
//! enter as live rows of the trainable matrix, so their gradients flow.

pub mod loss;
pub mod sr;

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, TokenId, TokenVocab};
use crate::error::{Error, Result};
use crate::index::{search_exact, EntryKind, PhraseTable};
use crate::neural::{Arena, Model, TARGET_TOKEN_EMB};
use crate::oracle::{OraclePath, OracleStep, ResolvedDoc, SegmentRule};

pub use sr::{self_reinforce_round, SrOutcome, TopkCache};

/// Which score ranks valid candidates during self-reinforcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrScore {
    /// The model's own retrieval score (prefix · entry dot product).
    #[default]
    Model,
    /// Frozen phrase-encoder similarity between the matched training span and
    /// the entry. Spans that straddle a block boundary cannot be embedded and
    /// are treated as invalid.
    Frozen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the token-LM term in the combined objective.
    pub alpha: f64,
    /// Minimum examples per batch; batches are whole documents packed until
    /// they reach this count, so each document runs one forward pass per
    /// epoch.
    pub batch_size: usize,
    /// Epochs per training phase (phases are separated by SR rounds).
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub hard_negatives_per_example: usize,
    pub sr_rounds: usize,
    pub sr_k: usize,
    pub seed: u64,
    /// Share every example's hard negatives across the whole batch.
    pub include_hard_in_batch: bool,
    pub sr_score: SrScore,
    /// Rule used when SR re-tiles a path suffix.
    pub segment_rule: SegmentRule,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            alpha: 1.0,
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-3,
            warmup_steps: 100,
            hard_negatives_per_example: 8,
            sr_rounds: 2,
            sr_k: 128,
            seed,
            include_hard_in_batch: false,
            sr_score: SrScore::Model,
            segment_rule: SegmentRule::ScoreGreedy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.sr_k == 0 {
            return Err(Error::Config("sr_k must be ≥ 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be ≥ 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Entry surfaces as token sequences
// ---------------------------------------------------------------------------

/// Token-id sequences of every table entry, for token-aligned prefix checks
/// (false-negative removal and SR validity).
pub struct EntryTokens {
    seqs: Vec<Vec<TokenId>>,
}

pub fn entry_token_seqs(table: &PhraseTable, vocab: &TokenVocab) -> EntryTokens {
    let seqs = (0..table.len() as u32)
        .map(|id| {
            let meta = table.meta(id);
            match &meta.kind {
                EntryKind::Token { token_id } => vec![*token_id],
                EntryKind::Phrase { .. } => {
                    meta.surface.split(' ').map(|w| vocab.id_or_unk(w)).collect()
                }
            }
        })
        .collect();
    EntryTokens { seqs }
}

impl EntryTokens {
    pub fn of(&self, id: u32) -> &[TokenId] {
        &self.seqs[id as usize]
    }

    /// True iff the entry's surface is a token-aligned prefix of the
    /// continuation.
    pub fn is_prefix_of(&self, id: u32, continuation: &[TokenId]) -> bool {
        let seq = self.of(id);
        !seq.is_empty() && continuation.starts_with(seq)
    }
}

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

/// One training example: a step of an oracle path, with its target entry
/// resolved against the table.
#[derive(Debug, Clone)]
pub struct Example {
    pub path_idx: usize,
    pub doc_idx: usize,
    /// Prefix length in tokens; also the step's position.
    pub position: usize,
    pub target: u32,
    /// Next-token target: the text token at `position`.
    pub token_target: TokenId,
}

pub fn build_examples(
    store: &DocumentStore,
    table: &PhraseTable,
    oracles: &[OraclePath],
) -> Result<Vec<Example>> {
    let lookup = table.phrase_lookup();
    let mut examples = Vec::new();
    for (path_idx, path) in oracles.iter().enumerate() {
        let doc_idx = store
            .doc_index(&path.doc_id)
            .ok_or_else(|| Error::UnknownDocId { id: path.doc_id.clone() })?;
        let doc = store.doc(doc_idx);
        path.validate().map_err(|msg| {
            Error::Invalid(format!("oracle path for {}: {msg}", path.doc_id))
        })?;
        if path.text_len() != doc.tokens.len() {
            return Err(Error::Invalid(format!(
                "oracle path for {} covers {} of {} tokens",
                path.doc_id,
                path.text_len(),
                doc.tokens.len()
            )));
        }
        for (step_idx, step) in path.steps.iter().enumerate() {
            let target = match step {
                OracleStep::Phrase { source, .. } => lookup
                    .get(&(source.doc_id.as_str(), source.start, source.end))
                    .copied()
                    .ok_or_else(|| {
                        Error::Invalid(format!(
                            "oracle path for {} step {step_idx}: no table entry for {}:{}..{}",
                            path.doc_id, source.doc_id, source.start, source.end
                        ))
                    })?,
                OracleStep::Token { position, token_id, .. } => {
                    if doc.tokens.get(*position) != Some(token_id) {
                        return Err(Error::Invalid(format!(
                            "oracle path for {} step {step_idx}: token {} does not match the text",
                            path.doc_id, token_id
                        )));
                    }
                    if (*token_id as usize) >= table.token_count {
                        return Err(Error::Invalid(format!(
                            "oracle path for {} step {step_idx}: token {} outside the table vocabulary",
                            path.doc_id, token_id
                        )));
                    }
                    table.token_entry_id(*token_id)
                }
            };
            examples.push(Example {
                path_idx,
                doc_idx,
                position: step.position(),
                target,
                token_target: doc.tokens[step.position()],
            });
        }
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Negatives
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub in_batch: Vec<u32>,
    pub hard: Vec<u32>,
}

impl NegativeSet {
    pub fn is_empty(&self) -> bool {
        self.in_batch.is_empty() && self.hard.is_empty()
    }
}

/// Other batch examples' targets plus a seeded sample of the example's last
/// top-k retrieval, both purged of the target itself, of duplicates, and of
/// false negatives (entries whose surface is a token-aligned prefix of the
/// ground-truth continuation).
pub fn mine_negatives(
    target: u32,
    batch_targets: &[u32],
    last_topk: &[u32],
    continuation: &[TokenId],
    entries: &EntryTokens,
    hard_per_example: usize,
    rng: &mut ChaCha8Rng,
) -> NegativeSet {
    let false_neg = |id: u32| entries.is_prefix_of(id, continuation);
    let mut seen = HashSet::new();
    seen.insert(target);
    let mut in_batch = Vec::new();
    for &t in batch_targets {
        if seen.insert(t) && !false_neg(t) {
            in_batch.push(t);
        }
    }
    let eligible: Vec<u32> = last_topk
        .iter()
        .copied()
        .filter(|&id| !seen.contains(&id) && !false_neg(id))
        .collect();
    let hard = if eligible.len() <= hard_per_example {
        eligible
    } else {
        rand::seq::index::sample(rng, eligible.len(), hard_per_example)
            .iter()
            .map(|i| eligible[i])
            .collect()
    };
    NegativeSet { in_batch, hard }
}

// ---------------------------------------------------------------------------
// Batch loss and gradients — the one forward/backward path
// ---------------------------------------------------------------------------

/// One loss term of a batch: an example with its negatives already mined.
#[derive(Debug, Clone)]
pub struct BatchItem {
    /// Index into the sequence slice passed to [`batch_loss_grads`].
    pub seq: usize,
    pub position: usize,
    pub target: u32,
    pub negatives: Vec<u32>,
    pub token_target: TokenId,
}

/// Embedding of an entry as the loss sees it: token entries read the live
/// trainable row (so gradients flow), phrase entries read the frozen table.
pub(crate) fn entry_f64(table: &PhraseTable, model: &Model, id: u32) -> Vec<f64> {
    match &table.meta(id).kind {
        EntryKind::Token { token_id } => model.token_target(*token_id).to_vec(),
        EntryKind::Phrase { .. } => table.embedding(id).iter().map(|&v| v as f64).collect(),
    }
}

fn item_losses(
    model: &Model,
    table: &PhraseTable,
    q: &[f64],
    it: &BatchItem,
    alpha: f64,
    batch_n: f64,
    grads: Option<&mut Arena>,
) -> Result<(f64, f64, Option<Vec<f64>>)> {
    let dim = model.config.index_dim;
    let vocab = model.config.vocab_size;
    let s = entry_f64(table, model, it.target);
    let negs: Vec<Vec<f64>> = it.negatives.iter().map(|&id| entry_f64(table, model, id)).collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
    let nce = loss::infonce_loss(q, &s, &neg_refs)?;
    let tok =
        loss::token_loss(q, it.token_target, model.trainable.view(TARGET_TOKEN_EMB), vocab, dim);

    let dq = grads.map(|g| {
        let mut dq = vec![0.0; dim];
        for i in 0..dim {
            dq[i] = nce.dq[i] / batch_n + alpha * tok.dq[i] / batch_n;
        }
        let emb = g.view_mut(TARGET_TOKEN_EMB);
        if let EntryKind::Token { token_id } = &table.meta(it.target).kind {
            let row = &mut emb[*token_id as usize * dim..(*token_id as usize + 1) * dim];
            for i in 0..dim {
                row[i] += nce.ds[i] / batch_n;
            }
        }
        for (nid, dn) in it.negatives.iter().zip(&nce.dnegs) {
            if let EntryKind::Token { token_id } = &table.meta(*nid).kind {
                let row = &mut emb[*token_id as usize * dim..(*token_id as usize + 1) * dim];
                for i in 0..dim {
                    row[i] += dn[i] / batch_n;
                }
            }
        }
        for (v, &dl) in tok.dlogits.iter().enumerate() {
            if dl != 0.0 {
                let row = &mut emb[v * dim..(v + 1) * dim];
                let scale = alpha / batch_n * dl;
                for i in 0..dim {
                    row[i] += scale * q[i];
                }
            }
        }
        dq
    });
    Ok((nce.loss, tok.loss, dq))
}

/// Mean InfoNCE and token losses of a batch, plus (optionally) the gradient
/// arena. Sequences sharing the prefix window run one teacher-forced pass;
/// longer ones fall back to per-example windowed passes. Work is parallel per
/// sequence with an order-fixed reduction, so results are bit-reproducible.
pub fn batch_loss_grads(
    model: &Model,
    table: &PhraseTable,
    seqs: &[&[TokenId]],
    items: &[BatchItem],
    alpha: f64,
    with_grads: bool,
) -> Result<(f64, f64, Option<Arena>)> {
    if items.is_empty() {
        return Ok((0.0, 0.0, if with_grads { Some(model.trainable.zeros_like()) } else { None }));
    }
    let batch_n = items.len() as f64;
    let mpl = model.config.max_prefix_len;

    let mut by_seq: BTreeMap<usize, Vec<&BatchItem>> = BTreeMap::new();
    for it in items {
        by_seq.entry(it.seq).or_default().push(it);
    }
    let groups: Vec<(usize, Vec<&BatchItem>)> = by_seq.into_iter().collect();

    let partials: Result<Vec<(f64, f64, Option<Arena>)>> = groups
        .par_iter()
        .map(|(si, seq_items)| {
            let seq = seqs[*si];
            let mut grads = if with_grads { Some(model.trainable.zeros_like()) } else { None };
            let mut lp = 0.0;
            let mut lt = 0.0;
            if seq.len() + 1 <= mpl {
                let (cache, qs) = model.prefix_forward_all(seq)?;
                let mut dqs: Vec<(usize, Vec<f64>)> = Vec::new();
                for it in seq_items {
                    let (a, b, dq) =
                        item_losses(model, table, &qs[it.position], it, alpha, batch_n, grads.as_mut())?;
                    lp += a;
                    lt += b;
                    if let Some(dq) = dq {
                        dqs.push((it.position, dq));
                    }
                }
                if let Some(g) = grads.as_mut() {
                    model.prefix_backward_all(&cache, &dqs, g);
                }
            } else {
                for it in seq_items {
                    let (cache, q) = model.prefix_forward_window(&seq[..it.position]);
                    let (a, b, dq) =
                        item_losses(model, table, &q, it, alpha, batch_n, grads.as_mut())?;
                    lp += a;
                    lt += b;
                    if let (Some(g), Some(dq)) = (grads.as_mut(), dq) {
                        model.prefix_backward_all(&cache, &[(cache.t - 1, dq)], g);
                    }
                }
            }
            Ok((lp, lt, grads))
        })
        .collect();

    let mut lp_sum = 0.0;
    let mut lt_sum = 0.0;
    let mut grads = if with_grads { Some(model.trainable.zeros_like()) } else { None };
    for (lp, lt, part) in partials? {
        lp_sum += lp;
        lt_sum += lt;
        if let (Some(total), Some(part)) = (grads.as_mut(), part.as_ref()) {
            total.add_assign(part);
        }
    }
    Ok((lp_sum / batch_n, lt_sum / batch_n, grads))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with linear learning-rate warmup.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
}

impl Adam {
    pub fn new(len: usize, lr: f64, warmup: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let warm = if self.warmup == 0 {
            1.0
        } else {
            (self.t as f64 / self.warmup as f64).min(1.0)
        };
        let lr = self.lr * warm;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: usize,
    pub epoch: usize,
    pub l_p: f64,
    pub l_t: f64,
    pub combined: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrMetrics {
    pub round: usize,
    pub steps_seen: usize,
    pub replaced: usize,
    pub update_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub epoch_metrics: Vec<EpochMetrics>,
    pub sr_metrics: Vec<SrMetrics>,
    /// Oracles after the final SR round.
    pub oracles: Vec<OraclePath>,
}

fn mix64(a: u64, b: u64) -> u64 {
    (a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .rotate_left(23)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// One training phase over fixed oracles. Batches are whole documents packed
/// to at least `batch_size` examples; their composition is a seeded function
/// of (seed, phase) and does not vary between epochs, so a zero learning rate
/// reproduces identical losses every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_phase(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &mut Model,
    oracles: &[OraclePath],
    topk: Option<&TopkCache>,
    cfg: &TrainConfig,
    phase: usize,
    adam: &mut Adam,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let examples = build_examples(store, table, oracles)?;
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let entries = entry_token_seqs(table, &store.vocab);
    let seqs: Vec<&[TokenId]> = store.docs.iter().map(|d| d.tokens.as_slice()).collect();

    // Examples grouped per document, documents shuffled once per phase.
    let mut by_doc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_doc.entry(ex.doc_idx).or_default().push(i);
    }
    let mut doc_order: Vec<usize> = by_doc.keys().copied().collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, phase as u64 + 1));
        doc_order.shuffle(&mut rng);
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for d in doc_order {
        cur.extend_from_slice(&by_doc[&d]);
        if cur.len() >= cfg.batch_size {
            batches.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }

    let total = examples.len() as f64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut lp_weighted = 0.0;
        let mut lt_weighted = 0.0;
        for batch in &batches {
            let batch_targets: Vec<u32> = batch.iter().map(|&i| examples[i].target).collect();
            let mut items: Vec<BatchItem> = Vec::with_capacity(batch.len());
            let mut all_hard: Vec<u32> = Vec::new();
            for &i in batch {
                let ex = &examples[i];
                let continuation = &store.doc(ex.doc_idx).tokens[ex.position..];
                let last = topk
                    .and_then(|c| c.get(&(ex.path_idx, ex.position)))
                    .map(|v| v.as_slice())
                    .unwrap_or(&[]);
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix64(cfg.seed, mix64(phase as u64, i as u64 + 1)));
                let negs = mine_negatives(
                    ex.target,
                    &batch_targets,
                    last,
                    continuation,
                    &entries,
                    cfg.hard_negatives_per_example,
                    &mut rng,
                );
                if cfg.include_hard_in_batch {
                    all_hard.extend_from_slice(&negs.hard);
                }
                let mut negatives = negs.in_batch;
                negatives.extend_from_slice(&negs.hard);
                items.push(BatchItem {
                    seq: ex.doc_idx,
                    position: ex.position,
                    target: ex.target,
                    negatives,
                    token_target: ex.token_target,
                });
            }
            if cfg.include_hard_in_batch && !all_hard.is_empty() {
                for (bi, &i) in batch.iter().enumerate() {
                    let ex = &examples[i];
                    let continuation = &store.doc(ex.doc_idx).tokens[ex.position..];
                    let mut seen: HashSet<u32> =
                        items[bi].negatives.iter().copied().collect();
                    seen.insert(ex.target);
                    for &h in &all_hard {
                        if seen.insert(h) && !entries.is_prefix_of(h, continuation) {
                            items[bi].negatives.push(h);
                        }
                    }
                }
            }

            let (lp, lt, grads) =
                batch_loss_grads(model, table, &seqs, &items, cfg.alpha, true)?;
            let grads = grads.expect("gradients requested");
            adam.step(&mut model.trainable.data, &grads.data);
            lp_weighted += lp * items.len() as f64;
            lt_weighted += lt * items.len() as f64;
        }
        let l_p = lp_weighted / total;
        let l_t = lt_weighted / total;
        metrics.push(EpochMetrics {
            phase,
            epoch,
            l_p,
            l_t,
            combined: loss::combined(l_p, l_t, cfg.alpha),
            examples: examples.len(),
        });
    }
    Ok(metrics)
}

/// A single training phase with a fresh optimizer — the plain `train`
/// entry point when self-reinforcement is orchestrated elsewhere.
pub fn train(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &mut Model,
    oracles: &[OraclePath],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    let mut adam = Adam::new(model.trainable.len(), cfg.learning_rate, cfg.warmup_steps);
    train_phase(store, table, model, oracles, None, cfg, 0, &mut adam)
}

/// Full schedule: `sr_rounds + 1` training phases with an SR round between
/// consecutive phases. The optimizer persists across phases; token-entry
/// rows of the table are re-synced from the model before every SR round so
/// retrieval sees the current parameters.
pub fn train_with_sr(
    store: &DocumentStore,
    table: &mut PhraseTable,
    model: &mut Model,
    oracles: Vec<OraclePath>,
    resolved: &[ResolvedDoc],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut adam = Adam::new(model.trainable.len(), cfg.learning_rate, cfg.warmup_steps);
    let mut oracles = oracles;
    let mut topk: Option<TopkCache> = None;
    let mut epoch_metrics = Vec::new();
    let mut sr_metrics = Vec::new();
    let phases = cfg.sr_rounds + 1;
    for phase in 0..phases {
        let m = train_phase(store, table, model, &oracles, topk.as_ref(), cfg, phase, &mut adam)?;
        epoch_metrics.extend(m);
        table.sync_token_embeddings(model)?;
        if phase + 1 < phases {
            let out = self_reinforce_round(store, table, model, &oracles, resolved, cfg)?;
            sr_metrics.push(SrMetrics {
                round: phase + 1,
                steps_seen: out.steps_seen,
                replaced: out.replaced,
                update_rate: if out.steps_seen == 0 {
                    0.0
                } else {
                    out.replaced as f64 / out.steps_seen as f64
                },
            });
            oracles = out.oracles;
            topk = Some(out.topk);
        }
    }
    Ok(TrainOutcome { epoch_metrics, sr_metrics, oracles })
}

// ---------------------------------------------------------------------------
// Retrieval accuracy (held-out evaluation)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalAccuracy {
    /// Fraction of examples whose top-1 retrieval is the exact target entry.
    pub entry_top1: f64,
    /// Fraction whose top-1 retrieval shares the target's surface.
    pub surface_top1: f64,
    pub examples: usize,
}

pub fn retrieval_accuracy(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    oracles: &[OraclePath],
) -> Result<RetrievalAccuracy> {
    let examples = build_examples(store, table, oracles)?;
    if examples.is_empty() {
        return Ok(RetrievalAccuracy { entry_top1: 0.0, surface_top1: 0.0, examples: 0 });
    }
    let outcomes: Result<Vec<(bool, bool)>> = examples
        .par_iter()
        .map(|ex| {
            let doc = store.doc(ex.doc_idx);
            let q = model.encode_prefix(&doc.tokens[..ex.position]);
            let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
            let hits = search_exact(table, &qf, 1)?;
            let Some(h) = hits.first() else {
                return Ok((false, false));
            };
            let entry = h.entry_id == ex.target;
            let surface = table.meta(h.entry_id).surface == table.meta(ex.target).surface;
            Ok((entry, surface))
        })
        .collect();
    let outcomes = outcomes?;
    let n = outcomes.len() as f64;
    let entry = outcomes.iter().filter(|(e, _)| *e).count() as f64 / n;
    let surface = outcomes.iter().filter(|(_, s)| *s).count() as f64 / n;
    Ok(RetrievalAccuracy { entry_top1: entry, surface_top1: surface, examples: outcomes.len() })
}
