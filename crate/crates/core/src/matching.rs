//! Source matching: pick the best supporting occurrence for a phrase step.
//!
//! Two stages, per the mining pipeline's design: BM25 over the occurrences'
//! block contexts produces a shortlist (default 10), then the frozen phrase
//! encoder's dot-product similarity picks the winner. BM25 never feeds the
//! final rank directly and the semantic score never widens the shortlist.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::corpus::{DocumentStore, TokenId};
use crate::error::{Error, Result};
use crate::mining::PhraseCandidate;
use crate::oracle::{ResolvedCandidate, ResolvedDoc, SourceRef};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_SHORTLIST: usize = 10;

/// One occurrence of a surface in the corpus. `doc_idx` indexes the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceOccurrence {
    pub doc_idx: usize,
    pub start: usize,
    pub end: usize,
}

impl SourceOccurrence {
    /// Tie-break key: (doc_id, start), lexicographic on the id.
    pub fn order_key<'a>(&self, store: &'a DocumentStore) -> (&'a str, usize) {
        (store.doc(self.doc_idx).id.as_str(), self.start)
    }
}

/// Winning source with both stage scores.
#[derive(Debug, Clone)]
pub struct BestSource {
    pub occ: SourceOccurrence,
    pub bm25: f64,
    pub semantic: f32,
}

/// Anything that can produce a phrase embedding for a span. Backed by the
/// frozen phrase encoder in the pipeline; tests substitute deterministic
/// stand-ins.
pub trait PhraseEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, store: &DocumentStore, occ: &SourceOccurrence) -> Result<Vec<f32>>;
}

/// The containing block of an occurrence, used as its BM25 context. The span
/// must not straddle a block boundary.
pub fn occurrence_context<'a>(
    store: &'a DocumentStore,
    occ: &SourceOccurrence,
) -> Result<&'a [TokenId]> {
    let doc = store.doc(occ.doc_idx);
    let (bstart, bend) = doc.block_of(occ.start).ok_or_else(|| Error::SpanOutOfRange {
        doc_id: doc.id.clone(),
        start: occ.start,
        end: occ.end,
        len: doc.tokens.len(),
    })?;
    if occ.end > bend || occ.start >= occ.end {
        return Err(Error::SpanOutOfRange {
            doc_id: doc.id.clone(),
            start: occ.start,
            end: occ.end,
            len: doc.tokens.len(),
        });
    }
    Ok(&doc.tokens[bstart..bend])
}

/// BM25 of each occurrence's context against the query context, top n.
///
/// Document frequencies and the average length are taken over the group's own
/// contexts (N = group size). Query tokens score with multiplicity. Returns
/// (occurrence, score) sorted by score descending, ties by (doc_id, start).
pub fn bm25_topn(
    store: &DocumentStore,
    query_context: &[TokenId],
    group: &[SourceOccurrence],
    n: usize,
) -> Result<Vec<(SourceOccurrence, f64)>> {
    if group.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    let contexts: Vec<&[TokenId]> = group
        .iter()
        .map(|occ| occurrence_context(store, occ))
        .collect::<Result<_>>()?;

    let total = contexts.len() as f64;
    let avgdl = contexts.iter().map(|c| c.len()).sum::<usize>() as f64 / total;

    // df per query term, counted over the group's contexts.
    let mut df: HashMap<TokenId, f64> = HashMap::new();
    for &t in query_context {
        df.entry(t).or_insert(0.0);
    }
    for ctx in &contexts {
        for (t, count) in df.iter_mut() {
            if ctx.contains(t) {
                *count += 1.0;
            }
        }
    }

    let mut scored: Vec<(SourceOccurrence, f64)> = group
        .iter()
        .zip(&contexts)
        .map(|(occ, ctx)| {
            let dl = ctx.len() as f64;
            let mut tf: HashMap<TokenId, f64> = HashMap::new();
            for &t in *ctx {
                *tf.entry(t).or_insert(0.0) += 1.0;
            }
            let mut score = 0.0;
            for &q in query_context {
                let f = tf.get(&q).copied().unwrap_or(0.0);
                if f == 0.0 {
                    continue;
                }
                let d = df[&q];
                let idf = ((total - d + 0.5) / (d + 0.5) + 1.0).ln();
                let denom = f + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl.max(f64::MIN_POSITIVE));
                score += idf * f * (BM25_K1 + 1.0) / denom;
            }
            (occ.clone(), score)
        })
        .collect();

    scored.sort_by(|(a, sa), (b, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.order_key(store).cmp(&b.order_key(store)))
    });
    scored.truncate(n);
    Ok(scored)
}

/// Dot product of two phrase embeddings, f32 accumulation (the same
/// convention the retrieval index uses, so scores are comparable).
pub fn semantic_sim(
    store: &DocumentStore,
    a: &SourceOccurrence,
    b: &SourceOccurrence,
    enc: &dyn PhraseEmbedder,
) -> Result<f32> {
    let ea = enc.embed(store, a)?;
    let eb = enc.embed(store, b)?;
    if ea.len() != eb.len() {
        return Err(Error::DimMismatch {
            expected: ea.len(),
            got: eb.len(),
            context: "semantic_sim embeddings".into(),
        });
    }
    Ok(dot_f32(&ea, &eb))
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Best source for a training occurrence: exclude occurrences inside the
/// training document, shortlist by BM25, then take the semantic argmax.
/// Ties by (doc_id, start). None when nothing survives the exclusion.
pub fn best_source(
    store: &DocumentStore,
    train_occ: &SourceOccurrence,
    group: &[SourceOccurrence],
    enc: &dyn PhraseEmbedder,
    shortlist: usize,
) -> Result<Option<BestSource>> {
    let eligible: Vec<SourceOccurrence> = group
        .iter()
        .filter(|occ| occ.doc_idx != train_occ.doc_idx)
        .cloned()
        .collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let query = occurrence_context(store, train_occ)?.to_vec();
    let shortlisted = bm25_topn(store, &query, &eligible, shortlist)?;

    let query_emb = enc.embed(store, train_occ)?;
    let mut best: Option<BestSource> = None;
    for (occ, bm25) in shortlisted {
        let cand_emb = enc.embed(store, &occ)?;
        if cand_emb.len() != query_emb.len() {
            return Err(Error::DimMismatch {
                expected: query_emb.len(),
                got: cand_emb.len(),
                context: "best_source embeddings".into(),
            });
        }
        let semantic = dot_f32(&query_emb, &cand_emb);
        if !semantic.is_finite() {
            return Err(Error::NonFinite(format!(
                "semantic score for occurrence in doc {}",
                store.doc(occ.doc_idx).id
            )));
        }
        let better = match &best {
            None => true,
            Some(cur) => {
                semantic > cur.semantic
                    || (semantic == cur.semantic
                        && occ.order_key(store) < cur.occ.order_key(store))
            }
        };
        if better {
            best = Some(BestSource { occ, bm25, semantic });
        }
    }
    Ok(best)
}

/// Resolve every candidate occurrence against its lexical group: for each
/// document, each of its candidates gets the best source copy from the other
/// documents (or none, making it unusable as a phrase step). Spans that
/// straddle a block boundary cannot be embedded or used as contexts and are
/// skipped. Returns one record per document, in store order.
pub fn resolve_candidates(
    store: &DocumentStore,
    groups: &BTreeMap<String, Vec<PhraseCandidate>>,
    enc: &(dyn PhraseEmbedder + Sync),
    shortlist: usize,
) -> Result<Vec<ResolvedDoc>> {
    // Occurrences per surface, restricted to in-block spans.
    let mut occs: BTreeMap<&str, Vec<SourceOccurrence>> = BTreeMap::new();
    let mut per_doc: Vec<Vec<(&str, usize, usize)>> = vec![Vec::new(); store.len()];
    for (surface, cands) in groups {
        let list = occs.entry(surface).or_default();
        for c in cands {
            let doc_idx = store
                .doc_index(&c.span.doc_id)
                .ok_or_else(|| Error::UnknownDocId { id: c.span.doc_id.clone() })?;
            if !store.doc(doc_idx).span_in_block(c.span.start, c.span.end) {
                continue;
            }
            list.push(SourceOccurrence { doc_idx, start: c.span.start, end: c.span.end });
            per_doc[doc_idx].push((surface, c.span.start, c.span.end));
        }
    }

    let resolved: Result<Vec<ResolvedDoc>> = (0..store.len())
        .into_par_iter()
        .map(|doc_idx| {
            let mut candidates = Vec::new();
            for &(surface, start, end) in &per_doc[doc_idx] {
                let train_occ = SourceOccurrence { doc_idx, start, end };
                let group = &occs[surface];
                if let Some(best) =
                    best_source(store, &train_occ, group, enc as &dyn PhraseEmbedder, shortlist)?
                {
                    let src_doc = store.doc(best.occ.doc_idx);
                    candidates.push(ResolvedCandidate {
                        start,
                        end,
                        source: SourceRef {
                            doc_id: src_doc.id.clone(),
                            start: best.occ.start,
                            end: best.occ.end,
                        },
                        score: best.semantic as f64,
                    });
                }
            }
            candidates.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
            Ok(ResolvedDoc { doc_id: store.doc(doc_idx).id.clone(), candidates })
        })
        .collect();
    resolved
}
