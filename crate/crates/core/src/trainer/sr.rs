//! Self-reinforcement: between training phases, each oracle path is rewritten
//! step by step. At every step the current model retrieves top-k entries for
//! the prefix; if any retrieved *phrase* entry is a token-aligned prefix of
//! the remaining continuation (and comes from a different document), the step
//! is replaced by the best such entry and the suffix is re-tiled with the
//! original resolved candidates. Otherwise the step is retained.
//!
//! The per-step top-k lists are returned so the following training phase can
//! mine hard negatives from exactly what the model just retrieved.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use super::{entry_token_seqs, EntryTokens, SrScore, TrainConfig};
use crate::corpus::DocumentStore;
use crate::error::{Error, Result};
use crate::index::{search_exact, EntryKind, PhraseTable};
use crate::neural::Model;
use crate::oracle::{segment_greedy_from, OraclePath, OracleStep, ResolvedDoc, SourceRef};

/// Top-k entry ids per (path index, step position) of the rewritten paths.
pub type TopkCache = HashMap<(usize, usize), Vec<u32>>;

#[derive(Debug)]
pub struct SrOutcome {
    pub oracles: Vec<OraclePath>,
    pub topk: TopkCache,
    /// Steps of the rewritten paths (each one was either replaced or retained).
    pub steps_seen: usize,
    pub replaced: usize,
}

struct Replacement {
    entry_id: u32,
    score: f64,
    len: usize,
    source: SourceRef,
}

fn better(a: &Replacement, b: &Replacement) -> bool {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.len.cmp(&b.len))
        .then_with(|| b.entry_id.cmp(&a.entry_id))
        == Ordering::Greater
}

#[allow(clippy::too_many_arguments)]
fn rewrite_path(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    entries: &EntryTokens,
    path: &OraclePath,
    path_idx: usize,
    candidates: &[crate::oracle::ResolvedCandidate],
    cfg: &TrainConfig,
) -> Result<(OraclePath, Vec<((usize, usize), Vec<u32>)>, usize, usize)> {
    let doc_idx = store
        .doc_index(&path.doc_id)
        .ok_or_else(|| Error::UnknownDocId { id: path.doc_id.clone() })?;
    let doc = store.doc(doc_idx);
    let tokens = &doc.tokens;
    let qs_all = if tokens.len() + 1 <= model.config.max_prefix_len {
        Some(model.prefix_forward_all(tokens)?.1)
    } else {
        None
    };

    let mut plan: Vec<OracleStep> = path.steps.clone();
    let mut plan_i = 0usize;
    let mut steps: Vec<OracleStep> = Vec::with_capacity(plan.len());
    let mut topk: Vec<((usize, usize), Vec<u32>)> = Vec::new();
    let mut pos = 0usize;
    let mut replaced = 0usize;
    let mut seen = 0usize;

    while pos < tokens.len() {
        seen += 1;
        let q = match &qs_all {
            Some(qs) => qs[pos].clone(),
            None => model.encode_prefix(&tokens[..pos]),
        };
        let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
        let hits = search_exact(table, &qf, cfg.sr_k)?;
        topk.push(((path_idx, pos), hits.iter().map(|h| h.entry_id).collect()));

        let continuation = &tokens[pos..];
        let mut best: Option<Replacement> = None;
        for h in &hits {
            let meta = table.meta(h.entry_id);
            let EntryKind::Phrase { doc_id, start, end } = &meta.kind else {
                continue;
            };
            if doc_id == &path.doc_id {
                continue;
            }
            let len = end - start;
            if len < 2 || !entries.is_prefix_of(h.entry_id, continuation) {
                continue;
            }
            let score = match cfg.sr_score {
                SrScore::Model => h.score as f64,
                SrScore::Frozen => {
                    // The matched training span must itself be embeddable.
                    let Ok(span) = model.encode_span_in_doc(store, doc_idx, pos, pos + len) else {
                        continue;
                    };
                    let row = table.embedding(h.entry_id);
                    span.iter().zip(row).map(|(a, &b)| a * b as f64).sum()
                }
            };
            let cand = Replacement {
                entry_id: h.entry_id,
                score,
                len,
                source: SourceRef { doc_id: doc_id.clone(), start: *start, end: *end },
            };
            match &best {
                Some(b) if !better(&cand, b) => {}
                _ => best = Some(cand),
            }
        }

        let cur = plan[plan_i].clone();
        debug_assert_eq!(cur.position(), pos, "plan out of alignment");
        match best {
            None => {
                pos += cur.length();
                steps.push(cur);
                plan_i += 1;
            }
            Some(r) => {
                let same = matches!(
                    &cur,
                    OracleStep::Phrase { length, source, .. }
                        if *length == r.len && *source == r.source
                );
                if same {
                    pos += r.len;
                    steps.push(cur);
                    plan_i += 1;
                } else {
                    replaced += 1;
                    let same_len = cur.length() == r.len;
                    pos += r.len;
                    steps.push(OracleStep::Phrase {
                        position: pos - r.len,
                        length: r.len,
                        source: r.source,
                        score: r.score,
                    });
                    if same_len {
                        plan_i += 1;
                    } else {
                        plan = segment_greedy_from(tokens, candidates, cfg.segment_rule, pos);
                        plan_i = 0;
                    }
                }
            }
        }
    }

    let new_path = OraclePath { doc_id: path.doc_id.clone(), steps };
    debug_assert!(new_path.validate().is_ok(), "rewritten path must tile");
    Ok((new_path, topk, seen, replaced))
}

/// One SR round over every oracle path. Deterministic: paths are processed
/// independently (in parallel) and nothing is sampled.
pub fn self_reinforce_round(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    oracles: &[OraclePath],
    resolved: &[ResolvedDoc],
    cfg: &TrainConfig,
) -> Result<SrOutcome> {
    let entries = entry_token_seqs(table, &store.vocab);
    let by_doc: HashMap<&str, &ResolvedDoc> =
        resolved.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let results: Result<Vec<_>> = oracles
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let candidates = by_doc
                .get(path.doc_id.as_str())
                .map(|d| d.candidates.as_slice())
                .unwrap_or(&[]);
            rewrite_path(store, table, model, &entries, path, i, candidates, cfg)
        })
        .collect();
    let mut outcome = SrOutcome {
        oracles: Vec::with_capacity(oracles.len()),
        topk: TopkCache::new(),
        steps_seen: 0,
        replaced: 0,
    };
    for (path, topk, seen, replaced) in results? {
        outcome.oracles.push(path);
        outcome.topk.extend(topk);
        outcome.steps_seen += seen;
        outcome.replaced += replaced;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentStore, WordTokenizer, DEFAULT_BLOCK_WORDS};
    use crate::index::{build_table, PhraseSpec, Provenance};
    use crate::neural::{Model, ModelConfig};
    use crate::oracle::ResolvedCandidate;

    fn prov() -> Provenance {
        Provenance { corpus_id: 0, encoder_seed: 0, encoder_checksum: 0 }
    }

    fn store2(block_words: usize) -> DocumentStore {
        DocumentStore::from_records(
            [
                ("d0".to_string(), "alpha beta gamma delta".to_string()),
                ("d1".to_string(), "beta gamma delta epsilon".to_string()),
            ],
            &WordTokenizer,
            block_words,
        )
        .unwrap()
    }

    fn all_token_path(store: &DocumentStore, doc: &str) -> OraclePath {
        let idx = store.doc_index(doc).unwrap();
        let steps = store
            .doc(idx)
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| OracleStep::Token { position: i, length: 1, token_id: t })
            .collect();
        OraclePath { doc_id: doc.to_string(), steps }
    }

    /// Table with two phrase entries sourced from d1 plus zero-embedded token
    /// entries; phrase rows are chosen by the caller.
    fn table_with_rows(store: &DocumentStore, rows: [Vec<f32>; 2], dim: usize) -> PhraseTable {
        let phrases = vec![
            PhraseSpec { doc_id: "d1".into(), start: 0, end: 2, surface: "beta gamma".into() },
            PhraseSpec { doc_id: "d1".into(), start: 0, end: 3, surface: "beta gamma delta".into() },
        ];
        let toks: Vec<String> = store.vocab.token_strings().to_vec();
        let tembs = vec![vec![0.0; dim]; toks.len()];
        build_table(phrases, rows.to_vec(), toks, tembs, dim, prov()).unwrap()
    }

    fn cfg() -> TrainConfig {
        let mut c = TrainConfig::new(7);
        c.sr_k = 16;
        c
    }

    #[test]
    fn replaces_token_run_with_aligned_phrase_and_retiles() {
        let store = store2(DEFAULT_BLOCK_WORDS);
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 3)).unwrap();
        let dim = model.config.index_dim;
        let d0 = store.doc(store.doc_index("d0").unwrap());
        // Query after "alpha": make the longer phrase the top hit.
        let q1: Vec<f32> = model.encode_prefix(&d0.tokens[..1]).iter().map(|&v| v as f32).collect();
        let half: Vec<f32> = q1.iter().map(|v| v * 0.5).collect();
        let table = table_with_rows(&store, [half, q1], dim);

        let oracles = vec![all_token_path(&store, "d0")];
        let out = self_reinforce_round(&store, &table, &model, &oracles, &[], &cfg()).unwrap();

        assert_eq!(out.replaced, 1);
        assert_eq!(out.steps_seen, 2); // token "alpha", then the phrase
        let steps = &out.oracles[0].steps;
        assert_eq!(steps.len(), 2);
        assert!(matches!(steps[0], OracleStep::Token { position: 0, .. }));
        match &steps[1] {
            OracleStep::Phrase { position, length, source, .. } => {
                assert_eq!((*position, *length), (1, 3));
                assert_eq!(source, &SourceRef { doc_id: "d1".into(), start: 0, end: 3 });
            }
            other => panic!("expected phrase step, got {other:?}"),
        }
        out.oracles[0].validate().unwrap();
        // Cache keys follow the rewritten path's positions.
        let mut keys: Vec<_> = out.topk.keys().copied().collect();
        keys.sort_unstable();
        assert_eq!(keys, vec![(0, 0), (0, 1)]);
        assert!(out.topk[&(0, 1)].len() <= 16 && !out.topk[&(0, 1)].is_empty());
    }

    #[test]
    fn no_aligned_phrase_retains_every_step() {
        let store = store2(DEFAULT_BLOCK_WORDS);
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 3)).unwrap();
        let dim = model.config.index_dim;
        // Phrase rows point along the queries, but the surfaces never align
        // with d1's continuations (both entries come from d1 itself).
        let q: Vec<f32> = model.encode_prefix(&[]).iter().map(|&v| v as f32).collect();
        let table = table_with_rows(&store, [q.clone(), q], dim);

        let oracles = vec![all_token_path(&store, "d1")];
        let out = self_reinforce_round(&store, &table, &model, &oracles, &[], &cfg()).unwrap();
        assert_eq!(out.replaced, 0);
        assert_eq!(out.steps_seen, 4);
        assert_eq!(out.oracles[0], oracles[0]);
        assert_eq!(out.topk.len(), 4);
    }

    #[test]
    fn shorter_replacement_retiles_suffix_with_resolved_candidates() {
        let store = DocumentStore::from_records(
            [
                ("d0".to_string(), "alpha beta gamma delta epsilon zeta".to_string()),
                ("d1".to_string(), "beta gamma delta epsilon".to_string()),
            ],
            &WordTokenizer,
            DEFAULT_BLOCK_WORDS,
        )
        .unwrap();
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 5)).unwrap();
        let dim = model.config.index_dim;
        let d0 = store.doc(store.doc_index("d0").unwrap());
        let q1: Vec<f32> = model.encode_prefix(&d0.tokens[..1]).iter().map(|&v| v as f32).collect();
        let neg: Vec<f32> = q1.iter().map(|v| -v).collect();
        // Only the two-word phrase scores above zero at position 1.
        let table = table_with_rows(&store, [q1, neg], dim);

        let resolved = vec![ResolvedDoc {
            doc_id: "d0".into(),
            candidates: vec![ResolvedCandidate {
                start: 3,
                end: 5,
                source: SourceRef { doc_id: "d1".into(), start: 2, end: 4 },
                score: 4.0,
            }],
        }];
        let oracles = vec![all_token_path(&store, "d0")];
        let out =
            self_reinforce_round(&store, &table, &model, &oracles, &resolved, &cfg()).unwrap();

        assert_eq!(out.replaced, 1);
        let steps = &out.oracles[0].steps;
        // alpha | beta gamma | delta epsilon | zeta
        assert_eq!(steps.len(), 4);
        match &steps[1] {
            OracleStep::Phrase { position: 1, length: 2, source, .. } => {
                assert_eq!(source, &SourceRef { doc_id: "d1".into(), start: 0, end: 2 });
            }
            other => panic!("unexpected second step {other:?}"),
        }
        // The re-tiled suffix is exactly what the greedy scan produces from 3.
        let expect = segment_greedy_from(
            &d0.tokens,
            &resolved[0].candidates,
            crate::oracle::SegmentRule::ScoreGreedy,
            3,
        );
        assert_eq!(&steps[2..], &expect[..]);
        out.oracles[0].validate().unwrap();
    }

    #[test]
    fn frozen_scoring_skips_spans_that_straddle_blocks() {
        // Two-word blocks: any span crossing an even offset cannot be embedded.
        let store = store2(2);
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 3)).unwrap();
        let dim = model.config.index_dim;
        let d0 = store.doc(store.doc_index("d0").unwrap());
        let q1: Vec<f32> = model.encode_prefix(&d0.tokens[..1]).iter().map(|&v| v as f32).collect();
        let half: Vec<f32> = q1.iter().map(|v| v * 0.5).collect();
        let table = table_with_rows(&store, [half, q1], dim);
        let oracles = vec![all_token_path(&store, "d0")];

        let mut model_cfg = cfg();
        model_cfg.sr_score = SrScore::Model;
        let out_model =
            self_reinforce_round(&store, &table, &model, &oracles, &[], &model_cfg).unwrap();
        assert_eq!(out_model.replaced, 1);

        let mut frozen_cfg = cfg();
        frozen_cfg.sr_score = SrScore::Frozen;
        // Spans 1..3 and 1..4 both straddle the block edge at 2, so frozen
        // scoring finds nothing valid and retains the token path.
        let out_frozen =
            self_reinforce_round(&store, &table, &model, &oracles, &[], &frozen_cfg).unwrap();
        assert_eq!(out_frozen.replaced, 0);
        assert_eq!(out_frozen.oracles[0], oracles[0]);
    }

    #[test]
    fn frozen_scoring_uses_span_entry_similarity() {
        let store = store2(DEFAULT_BLOCK_WORDS);
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 3)).unwrap();
        let dim = model.config.index_dim;
        let d0_idx = store.doc_index("d0").unwrap();
        let span = model.encode_span_in_doc(&store, d0_idx, 1, 4).unwrap();
        let span_f32: Vec<f32> = span.iter().map(|&v| v as f32).collect();
        let neg: Vec<f32> = span_f32.iter().map(|v| -v).collect();
        let table = table_with_rows(&store, [neg, span_f32.clone()], dim);

        let mut c = cfg();
        c.sr_score = SrScore::Frozen;
        let oracles = vec![all_token_path(&store, "d0")];
        let out = self_reinforce_round(&store, &table, &model, &oracles, &[], &c).unwrap();
        assert_eq!(out.replaced, 1);
        match &out.oracles[0].steps[1] {
            OracleStep::Phrase { length: 3, score, .. } => {
                let want: f64 = span.iter().zip(&span_f32).map(|(a, &b)| a * b as f64).sum();
                assert!((score - want).abs() < 1e-9, "{score} vs {want}");
            }
            other => panic!("unexpected step {other:?}"),
        }
    }

    #[test]
    fn rounds_are_deterministic() {
        let store = store2(DEFAULT_BLOCK_WORDS);
        let model = Model::new(ModelConfig::tiny(store.vocab.len(), 3)).unwrap();
        let dim = model.config.index_dim;
        let d0 = store.doc(store.doc_index("d0").unwrap());
        let q1: Vec<f32> = model.encode_prefix(&d0.tokens[..1]).iter().map(|&v| v as f32).collect();
        let half: Vec<f32> = q1.iter().map(|v| v * 0.5).collect();
        let table = table_with_rows(&store, [half, q1], dim);
        let oracles = vec![all_token_path(&store, "d0"), all_token_path(&store, "d1")];

        let a = self_reinforce_round(&store, &table, &model, &oracles, &[], &cfg()).unwrap();
        let b = self_reinforce_round(&store, &table, &model, &oracles, &[], &cfg()).unwrap();
        assert_eq!(a.oracles, b.oracles);
        assert_eq!(a.topk, b.topk);
        assert_eq!((a.steps_seen, a.replaced), (b.steps_seen, b.replaced));
    }
}
