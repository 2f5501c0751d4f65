//! The phrase table and maximum-inner-product search over it.
//!
//! A table is an immutable array of entries — phrase entries first, then one
//! special entry per vocabulary token — each with a row in a flat f32
//! embedding matrix. Scores everywhere are raw dot products; ranking ties
//! break by ascending entry id so searches are total orders.

pub mod ivf;
pub mod io;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, TokenId};
use crate::error::{Error, Result};
use crate::neural::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    Phrase { doc_id: String, start: usize, end: usize },
    Token { token_id: TokenId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMeta {
    pub kind: EntryKind,
    pub surface: String,
}

impl EntryMeta {
    pub fn is_token(&self) -> bool {
        matches!(self.kind, EntryKind::Token { .. })
    }
}

/// Where a table's embeddings came from; merges and searches refuse to mix
/// incompatible encoders unless explicitly overridden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_id: u64,
    pub encoder_seed: u64,
    pub encoder_checksum: u64,
}

/// A phrase to install in the table; `surface` must be the span's tokens
/// joined by single spaces (checked against the corpus by
/// [`validate_against_store`]).
#[derive(Debug, Clone)]
pub struct PhraseSpec {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone)]
pub struct PhraseTable {
    pub dim: usize,
    pub phrase_count: usize,
    pub token_count: usize,
    /// Entry metadata, indexed by entry id.
    pub metas: Vec<EntryMeta>,
    /// Row-major [n × dim] embedding matrix, row = entry id.
    pub embeddings: Vec<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub entry_id: u32,
    pub score: f32,
}

/// Descending score, ties by ascending entry id (total order via f32 bits).
pub fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.entry_id.cmp(&b.entry_id))
    });
}

pub fn build_table(
    phrases: Vec<PhraseSpec>,
    phrase_embeddings: Vec<Vec<f32>>,
    token_surfaces: Vec<String>,
    token_embeddings: Vec<Vec<f32>>,
    dim: usize,
    provenance: Provenance,
) -> Result<PhraseTable> {
    if phrases.len() != phrase_embeddings.len() {
        return Err(Error::Table(format!(
            "{} phrases but {} embeddings",
            phrases.len(),
            phrase_embeddings.len()
        )));
    }
    if token_surfaces.len() != token_embeddings.len() {
        return Err(Error::Table(format!(
            "{} token surfaces but {} token embeddings",
            token_surfaces.len(),
            token_embeddings.len()
        )));
    }
    let n = phrases.len() + token_surfaces.len();
    let mut metas = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n * dim);
    for (i, (spec, emb)) in phrases.into_iter().zip(phrase_embeddings).enumerate() {
        if emb.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: emb.len(),
                context: format!("phrase entry {i} ({:?} {}..{})", spec.doc_id, spec.start, spec.end),
            });
        }
        if emb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of phrase entry {i}")));
        }
        metas.push(EntryMeta {
            kind: EntryKind::Phrase { doc_id: spec.doc_id, start: spec.start, end: spec.end },
            surface: spec.surface,
        });
        embeddings.extend_from_slice(&emb);
    }
    for (tid, (surface, emb)) in token_surfaces.into_iter().zip(token_embeddings).enumerate() {
        if emb.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: emb.len(),
                context: format!("token entry {tid} ({surface:?})"),
            });
        }
        if emb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of token entry {tid}")));
        }
        metas.push(EntryMeta {
            kind: EntryKind::Token { token_id: tid as TokenId },
            surface,
        });
        embeddings.extend_from_slice(&emb);
    }
    let phrase_count = n - metas.iter().filter(|m| m.is_token()).count();
    Ok(PhraseTable {
        dim,
        phrase_count,
        token_count: n - phrase_count,
        metas,
        embeddings,
        provenance,
    })
}

impl PhraseTable {
    pub fn len(&self) -> usize {
        self.metas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metas.is_empty()
    }

    pub fn embedding(&self, id: u32) -> &[f32] {
        let i = id as usize;
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn meta(&self, id: u32) -> &EntryMeta {
        &self.metas[id as usize]
    }

    /// Entry id of a vocabulary token's special entry.
    pub fn token_entry_id(&self, token_id: TokenId) -> u32 {
        debug_assert!((token_id as usize) < self.token_count);
        (self.phrase_count + token_id as usize) as u32
    }

    pub fn is_token_entry(&self, id: u32) -> bool {
        (id as usize) >= self.phrase_count
    }

    /// Lookup of phrase entries by source span.
    pub fn phrase_lookup(&self) -> HashMap<(&str, usize, usize), u32> {
        let mut map = HashMap::with_capacity(self.phrase_count);
        for (id, meta) in self.metas.iter().enumerate().take(self.phrase_count) {
            if let EntryKind::Phrase { doc_id, start, end } = &meta.kind {
                map.insert((doc_id.as_str(), *start, *end), id as u32);
            }
        }
        map
    }

    /// Overwrite token-entry rows with the model's current token-target
    /// embeddings. Call after training moves the token side.
    pub fn sync_token_embeddings(&mut self, model: &Model) -> Result<()> {
        if model.config.index_dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: model.config.index_dim,
                context: "sync_token_embeddings".into(),
            });
        }
        if model.config.vocab_size != self.token_count {
            return Err(Error::Table(format!(
                "table has {} token entries but model vocab is {}",
                self.token_count, model.config.vocab_size
            )));
        }
        for tid in 0..self.token_count {
            let id = (self.phrase_count + tid) as usize;
            let row = model.token_target(tid as TokenId);
            for (dst, &src) in self.embeddings[id * self.dim..(id + 1) * self.dim]
                .iter_mut()
                .zip(row)
            {
                *dst = src as f32;
            }
        }
        Ok(())
    }
}

/// f32 dot with sequential accumulation — the single scoring convention all
/// search paths share, so exact and IVF results are directly comparable.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Exact top-k by dot product over the whole table.
pub fn search_exact(table: &PhraseTable, query: &[f32], k: usize) -> Result<Vec<Hit>> {
    if query.len() != table.dim {
        return Err(Error::DimMismatch {
            expected: table.dim,
            got: query.len(),
            context: "search_exact query".into(),
        });
    }
    let mut hits: Vec<Hit> = (0..table.len() as u32)
        .map(|id| Hit { entry_id: id, score: dot(table.embedding(id), query) })
        .collect();
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(hits)
}

/// How a query is answered: exhaustively, or through an IVF index.
#[derive(Clone, Copy)]
pub enum Searcher<'a> {
    Exact,
    Ivf { index: &'a ivf::IvfIndex, nprobe: usize },
}

impl Searcher<'_> {
    pub fn search(&self, table: &PhraseTable, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        match self {
            Searcher::Exact => search_exact(table, query, k),
            Searcher::Ivf { index, nprobe } => ivf::search_ivf(table, index, query, k, *nprobe),
        }
    }
}

/// Concatenate two tables: a's phrases, then b's phrases (ids re-densified),
/// then a's token entries. Same dim required; same encoder checksum required
/// unless `allow_encoder_mismatch`.
pub fn merge_tables(a: &PhraseTable, b: &PhraseTable, allow_encoder_mismatch: bool) -> Result<PhraseTable> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch { expected: a.dim, got: b.dim, context: "merge_tables".into() });
    }
    if !allow_encoder_mismatch
        && a.provenance.encoder_checksum != b.provenance.encoder_checksum
    {
        return Err(Error::ChecksumMismatch {
            a: a.provenance.encoder_checksum,
            b: b.provenance.encoder_checksum,
        });
    }
    let n = a.phrase_count + b.phrase_count + a.token_count;
    let mut metas = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n * a.dim);
    for (table, count) in [(a, a.phrase_count), (b, b.phrase_count)] {
        metas.extend(table.metas[..count].iter().cloned());
        embeddings.extend_from_slice(&table.embeddings[..count * table.dim]);
    }
    metas.extend(a.metas[a.phrase_count..].iter().cloned());
    embeddings.extend_from_slice(&a.embeddings[a.phrase_count * a.dim..]);
    Ok(PhraseTable {
        dim: a.dim,
        phrase_count: a.phrase_count + b.phrase_count,
        token_count: a.token_count,
        metas,
        embeddings,
        provenance: a.provenance,
    })
}

/// Build a corpus's table: one phrase entry per distinct resolved source
/// span, embedded by the frozen phrase tower, plus one token entry per
/// vocabulary word from the trainable token-target matrix. Spans sharing a
/// block reuse one tower pass; blocks run in parallel with an order-fixed
/// collect, so the table is reproducible.
pub fn table_from_resolved(
    store: &DocumentStore,
    resolved: &[crate::oracle::ResolvedDoc],
    model: &Model,
) -> Result<PhraseTable> {
    use rayon::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    let mut sources: BTreeSet<(&str, usize, usize)> = BTreeSet::new();
    for doc in resolved {
        for c in &doc.candidates {
            sources.insert((c.source.doc_id.as_str(), c.source.start, c.source.end));
        }
    }
    // Group spans by their containing block; remember each span's rank so the
    // final ordering is the sorted source order regardless of scheduling.
    let mut by_block: BTreeMap<(usize, usize), Vec<(usize, usize, usize)>> = BTreeMap::new();
    let mut specs = vec![None; sources.len()];
    for (rank, (doc_id, start, end)) in sources.into_iter().enumerate() {
        let doc_idx = store
            .doc_index(doc_id)
            .ok_or_else(|| Error::UnknownDocId { id: doc_id.to_string() })?;
        let doc = store.doc(doc_idx);
        let (bstart, bend) = doc.block_of(start).ok_or_else(|| Error::SpanOutOfRange {
            doc_id: doc_id.to_string(),
            start,
            end,
            len: doc.tokens.len(),
        })?;
        if end > bend {
            return Err(Error::SpanOutOfRange {
                doc_id: doc_id.to_string(),
                start,
                end,
                len: bend,
            });
        }
        let surface = doc.tokens[start..end]
            .iter()
            .map(|&t| store.vocab.token(t))
            .collect::<Vec<_>>()
            .join(" ");
        specs[rank] = Some(PhraseSpec { doc_id: doc_id.to_string(), start, end, surface });
        by_block.entry((doc_idx, bstart)).or_default().push((rank, start, end));
    }
    let phrases: Vec<PhraseSpec> = specs.into_iter().map(|s| s.expect("every rank filled")).collect();

    let blocks: Vec<((usize, usize), Vec<(usize, usize, usize)>)> = by_block.into_iter().collect();
    let embedded: Result<Vec<Vec<(usize, Vec<f32>)>>> = blocks
        .par_iter()
        .map(|((doc_idx, bstart), spans)| {
            let doc = store.doc(*doc_idx);
            let (bs, be) = doc.block_of(*bstart).expect("block exists");
            let cache = model.encode_block(&doc.tokens[bs..be])?;
            spans
                .iter()
                .map(|&(rank, start, end)| {
                    let e = model.project_span(&cache, start - bs, end - bs)?;
                    Ok((rank, e.iter().map(|&v| v as f32).collect()))
                })
                .collect()
        })
        .collect();
    let mut pembs: Vec<Vec<f32>> = vec![Vec::new(); phrases.len()];
    for group in embedded? {
        for (rank, emb) in group {
            pembs[rank] = emb;
        }
    }

    let token_surfaces: Vec<String> = store.vocab.token_strings().to_vec();
    let token_embs: Vec<Vec<f32>> =
        (0..token_surfaces.len()).map(|t| model.token_target_f32(t as TokenId)).collect();
    build_table(
        phrases,
        pembs,
        token_surfaces,
        token_embs,
        model.config.index_dim,
        Provenance {
            corpus_id: crate::util::fnv1a64(store.corpus_id().as_bytes()),
            encoder_seed: model.config.seed,
            encoder_checksum: model.frozen_checksum(),
        },
    )
}

/// Attribution invariant: every phrase entry's surface must reproduce exactly
/// from its recorded source span, and every token entry must match its
/// vocabulary string.
pub fn validate_against_store(table: &PhraseTable, store: &DocumentStore) -> Result<()> {
    for (id, meta) in table.metas.iter().enumerate() {
        match &meta.kind {
            EntryKind::Phrase { doc_id, start, end } => {
                let doc_idx = store
                    .doc_index(doc_id)
                    .ok_or_else(|| Error::UnknownDocId { id: doc_id.clone() })?;
                let doc = store.doc(doc_idx);
                if *start >= *end || *end > doc.tokens.len() {
                    return Err(Error::SpanOutOfRange {
                        doc_id: doc_id.clone(),
                        start: *start,
                        end: *end,
                        len: doc.tokens.len(),
                    });
                }
                let text = doc.tokens[*start..*end]
                    .iter()
                    .map(|&t| store.vocab.token(t))
                    .collect::<Vec<_>>()
                    .join(" ");
                if text != meta.surface {
                    return Err(Error::Table(format!(
                        "entry {id}: surface {:?} does not match source span text {:?}",
                        meta.surface, text
                    )));
                }
            }
            EntryKind::Token { token_id } => {
                if *token_id as usize >= store.vocab.len() {
                    return Err(Error::Table(format!("entry {id}: token id {token_id} outside vocab")));
                }
                let text = store.vocab.token(*token_id);
                if text != meta.surface {
                    return Err(Error::Table(format!(
                        "entry {id}: token surface {:?} does not match vocab {:?}",
                        meta.surface, text
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentStore, WordTokenizer, DEFAULT_BLOCK_WORDS};
    use crate::neural::ModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prov() -> Provenance {
        Provenance { corpus_id: 1, encoder_seed: 2, encoder_checksum: 3 }
    }

    fn spec(doc: &str, start: usize, end: usize, surface: &str) -> PhraseSpec {
        PhraseSpec { doc_id: doc.into(), start, end, surface: surface.into() }
    }

    fn table_of(rows: Vec<Vec<f32>>) -> PhraseTable {
        let dim = rows[0].len();
        let phrases: Vec<PhraseSpec> = (0..rows.len())
            .map(|i| spec("d", i, i + 2, &format!("p{i} q{i}")))
            .collect();
        build_table(phrases, rows, vec![], vec![], dim, prov()).unwrap()
    }

    #[test]
    fn empty_phrase_side_keeps_token_entries() {
        let toks: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let embs: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32, 1.0]).collect();
        let t = build_table(vec![], vec![], toks, embs, 2, prov()).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.phrase_count, 0);
        assert_eq!(t.token_count, 5);
        assert!(t.metas.iter().all(|m| m.is_token()));
        assert_eq!(t.token_entry_id(3), 3);
    }

    #[test]
    fn duplicate_sources_are_both_kept() {
        let p = vec![spec("d", 0, 2, "a b"), spec("d", 0, 2, "a b")];
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let t = build_table(p, e, vec![], vec![], 2, prov()).unwrap();
        assert_eq!(t.phrase_count, 2);
        assert_eq!(t.meta(0).surface, t.meta(1).surface);
        assert_ne!(t.embedding(0), t.embedding(1));
    }

    #[test]
    fn dim_mismatch_names_the_entry() {
        let p = vec![spec("d", 0, 2, "a b"), spec("x", 3, 5, "c d")];
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0, 2.0]];
        match build_table(p, e, vec![], vec![], 2, prov()) {
            Err(Error::DimMismatch { context, .. }) => assert!(context.contains("entry 1")),
            other => panic!("expected dim mismatch, got {other:?}"),
        }
    }

    #[test]
    fn search_orthonormal_basis() {
        let t = table_of(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let hits = search_exact(&t, &[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry_id, 1);
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn k_larger_than_table_returns_everything() {
        let t = table_of(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let hits = search_exact(&t, &[1.0, 1.0], 10).unwrap();
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn ties_break_by_ascending_entry_id() {
        let t = table_of(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        let hits = search_exact(&t, &[1.0, 0.0], 3).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.entry_id).collect::<Vec<_>>(),
            vec![2, 0, 1]
        );
    }

    #[test]
    fn thousand_entry_search_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dim = 16;
        let rows: Vec<Vec<f32>> = (0..1000)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let t = table_of(rows.clone());
        let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let hits = search_exact(&t, &query, 50).unwrap();

        // Independent brute force: own scalar loop, own sort.
        let mut brute: Vec<(u32, f32)> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut s = 0f32;
                for (a, b) in row.iter().zip(&query) {
                    s += a * b;
                }
                (i as u32, s)
            })
            .collect();
        brute.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        brute.truncate(50);
        for (h, (id, s)) in hits.iter().zip(&brute) {
            assert_eq!(h.entry_id, *id);
            assert_eq!(h.score, *s);
        }
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let a = table_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let empty = build_table(vec![], vec![], vec![], vec![], 2, prov()).unwrap();
        let merged = merge_tables(&a, &empty, false).unwrap();
        assert_eq!(merged.metas, a.metas);
        assert_eq!(merged.embeddings, a.embeddings);
        assert_eq!(merged.provenance, a.provenance);
    }

    #[test]
    fn merge_is_order_insensitive_in_content() {
        let mk = |offset: usize| {
            let p = vec![spec(&format!("d{offset}"), 0, 2, "a b")];
            let e = vec![vec![offset as f32, 1.0]];
            let toks = vec!["t0".to_string()];
            let tembs = vec![vec![9.0, 9.0]];
            build_table(p, e, toks, tembs, 2, prov()).unwrap()
        };
        let a = mk(1);
        let b = mk(2);
        let ab = merge_tables(&a, &b, false).unwrap();
        let ba = merge_tables(&b, &a, false).unwrap();
        let multiset = |t: &PhraseTable| {
            let mut v: Vec<(String, Vec<u32>)> = t
                .metas
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    (format!("{:?}", m), t.embedding(i as u32).iter().map(|f| f.to_bits()).collect())
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(multiset(&ab), multiset(&ba));
        assert_eq!(ab.phrase_count, 2);
        assert_eq!(ab.token_count, 1);
    }

    #[test]
    fn merge_rejects_encoder_mismatch_unless_overridden() {
        let a = table_of(vec![vec![1.0, 0.0]]);
        let mut b = table_of(vec![vec![0.0, 1.0]]);
        b.provenance.encoder_checksum = 777;
        assert!(matches!(
            merge_tables(&a, &b, false),
            Err(Error::ChecksumMismatch { .. })
        ));
        assert!(merge_tables(&a, &b, true).is_ok());
    }

    #[test]
    fn merge_rejects_dim_mismatch() {
        let a = table_of(vec![vec![1.0, 0.0]]);
        let b = table_of(vec![vec![1.0, 0.0, 0.0]]);
        assert!(matches!(merge_tables(&a, &b, false), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn attribution_roundtrip_against_store() {
        let store = DocumentStore::from_records(
            [("d0".to_string(), "the moon rises tonight".to_string())],
            &WordTokenizer,
            DEFAULT_BLOCK_WORDS,
        )
        .unwrap();
        let phrases = vec![spec("d0", 1, 3, "moon rises")];
        let tok_surfaces: Vec<String> = store.vocab.token_strings().to_vec();
        let tok_embs: Vec<Vec<f32>> = (0..tok_surfaces.len()).map(|_| vec![0.0, 0.0]).collect();
        let t = build_table(phrases, vec![vec![1.0, 2.0]], tok_surfaces, tok_embs, 2, prov()).unwrap();
        validate_against_store(&t, &store).unwrap();

        let mut bad = t.clone();
        bad.metas[0].surface = "moon sets".into();
        assert!(validate_against_store(&bad, &store).is_err());
    }

    #[test]
    fn sync_token_embeddings_pulls_model_rows() {
        let model = crate::neural::Model::new(ModelConfig::tiny(6, 5)).unwrap();
        let toks: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let zero = vec![vec![0.0f32; model.config.index_dim]; 6];
        let mut t = build_table(vec![], vec![], toks, zero, model.config.index_dim, prov()).unwrap();
        t.sync_token_embeddings(&model).unwrap();
        for tid in 0..6u32 {
            let want = model.token_target_f32(tid);
            assert_eq!(t.embedding(t.token_entry_id(tid)), &want[..]);
        }
    }

    proptest! {
        #[test]
        fn exact_search_equals_bruteforce(
            n in 1usize..200,
            dim in 1usize..8,
            k in 1usize..32,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
                .collect();
            let t = table_of(rows.clone());
            let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let hits = search_exact(&t, &query, k).unwrap();
            let mut brute: Vec<(u32, f32)> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut s = 0f32;
                    for (a, b) in row.iter().zip(&query) { s += a * b; }
                    (i as u32, s)
                })
                .collect();
            brute.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
            brute.truncate(k);
            prop_assert_eq!(hits.len(), brute.len());
            for (h, (id, s)) in hits.iter().zip(&brute) {
                prop_assert_eq!(h.entry_id, *id);
                prop_assert_eq!(h.score, *s);
            }
        }
    }
}
