//! Phrase candidate mining: constituent spans, IDF filtering, lexical grouping.
//!
//! Candidates come from an external parser's span file or, absent one, from a
//! fallback chunker. A span survives filtering iff its label is not on the
//! drop list, its word count is in [2, 10], and its IDF over supporting-
//! document blocks falls inside the per-length threshold band.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentStore, TokenId};
use crate::error::{Error, Result};

/// Constituent labels dropped as trivial.
pub const DROP_LABELS: &[&str] = &[
    "X", "PRT", "CC", "DT", "EX", "FRAG", "GW", "HYPH", "IN", "INTJ", "LS", "LST", "MD", "NFP",
    "NML", "PDT", "POS", "PP", "PRP", "PRP$", "PPZ", "RB", "RBR", "RBS", "RP", "S", "SYM", "TO",
    "WDT", "WHADJP", "WHADVP", "WHNP", "WHPP", "WP", "WP$", "WRB", "#", "$", "\"", "``", "-LRB-",
    "-RRB-", ",", ".", ":",
];

/// Default per-word-count (min, max) IDF bands. Calibrated on Wikipedia-scale
/// block counts; override or use percentile mode on small corpora.
pub const DEFAULT_IDF_BANDS: &[(usize, (f64, f64))] = &[
    (2, (10.50, 14.08)),
    (3, (11.09, 14.08)),
    (4, (11.77, 14.30)),
    (5, (12.10, 14.30)),
    (6, (12.32, 14.30)),
    (7, (12.51, 14.59)),
    (8, (12.59, 14.59)),
    (9, (12.64, 14.59)),
    (10, (12.69, 14.59)),
];

pub const MIN_WORDS: usize = 2;
pub const MAX_WORDS: usize = 10;
pub const FALLBACK_LABEL: &str = "CHUNK";

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// A constituent span in a document, half-open over token offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstituentSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Block-level document frequencies. `df` counts blocks containing the
/// surface as a contiguous token subsequence; `idf = ln(N / df)`. Surfaces
/// with df = 0 are unindexable and excluded downstream.
#[derive(Debug, Clone)]
pub struct IdfTable {
    pub block_count: usize,
    doc_freq: HashMap<String, usize>,
}

impl IdfTable {
    /// Build from precomputed statistics, e.g. counts carried over from a
    /// larger corpus than the one being mined.
    pub fn from_counts<I>(block_count: usize, doc_freq: I) -> Self
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        IdfTable { block_count, doc_freq: doc_freq.into_iter().collect() }
    }

    pub fn df(&self, surface: &str) -> usize {
        self.doc_freq.get(surface).copied().unwrap_or(0)
    }

    /// None for unindexable surfaces (df = 0 or never counted).
    pub fn idf(&self, surface: &str) -> Option<f64> {
        let df = self.df(surface);
        if df == 0 {
            None
        } else {
            Some((self.block_count as f64 / df as f64).ln())
        }
    }
}

/// A filtered phrase candidate: a surviving span with its normalized surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhraseCandidate {
    pub span: ConstituentSpan,
    /// Single-space-joined token strings of the span, case-sensitive.
    pub surface: String,
    pub word_count: usize,
    pub idf_value: f64,
}

/// IDF acceptance bands, either fixed per word count or derived per word
/// count from the candidate population by trimming both tails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum IdfThresholds {
    /// word_count -> (min, max), inclusive on both ends.
    Table(BTreeMap<usize, (f64, f64)>),
    /// Drop the lowest `drop_low_pct` and highest `drop_high_pct` percent of
    /// candidate IDF values, separately per word count.
    Percentile { drop_low_pct: f64, drop_high_pct: f64 },
}

impl IdfThresholds {
    pub fn default_table() -> Self {
        IdfThresholds::Table(DEFAULT_IDF_BANDS.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub drop_labels: HashSet<String>,
    pub min_words: usize,
    pub max_words: usize,
    pub thresholds: IdfThresholds,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            drop_labels: DROP_LABELS.iter().map(|s| s.to_string()).collect(),
            min_words: MIN_WORDS,
            max_words: MAX_WORDS,
            thresholds: IdfThresholds::default_table(),
        }
    }
}

impl FilterConfig {
    /// Default drop list and lengths, but percentile IDF bands — the usual
    /// choice on desk-scale corpora where Wikipedia-calibrated bands are
    /// unreachable.
    pub fn percentile(drop_low_pct: f64, drop_high_pct: f64) -> Self {
        FilterConfig {
            thresholds: IdfThresholds::Percentile {
                drop_low_pct,
                drop_high_pct,
            },
            ..FilterConfig::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Span sources
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SpanFileRecord {
    doc_id: String,
    spans: Vec<SpanFileSpan>,
}

#[derive(Deserialize)]
struct SpanFileSpan {
    start: usize,
    end: usize,
    label: String,
}

/// Load parser output: one JSON record per line, `{"doc_id", "spans":
/// [{"start", "end", "label"}]}`, token offsets, half-open. Spans are
/// validated against document lengths.
pub fn load_spans(path: &Path, store: &DocumentStore) -> Result<Vec<ConstituentSpan>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanFileRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), lineno + 1, e.to_string()))?;
        let doc_idx = store
            .doc_index(&rec.doc_id)
            .ok_or_else(|| Error::UnknownDocId { id: rec.doc_id.clone() })?;
        let len = store.doc(doc_idx).tokens.len();
        for s in rec.spans {
            if s.start >= s.end || s.end > len {
                return Err(Error::SpanOutOfRange {
                    doc_id: rec.doc_id.clone(),
                    start: s.start,
                    end: s.end,
                    len,
                });
            }
            out.push(ConstituentSpan {
                doc_id: rec.doc_id.clone(),
                start: s.start,
                end: s.end,
                label: s.label,
            });
        }
    }
    Ok(out)
}

/// True for tokens made entirely of ASCII punctuation.
pub fn is_punctuation_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_punctuation())
}

/// Substitute spans when no parser output is available: every contiguous
/// window of 2–10 tokens that stays inside one block and contains no
/// punctuation token, labeled "CHUNK". A degraded stand-in for parsed
/// constituents; outputs carry the CHUNK label so downstream metadata shows
/// which mode produced them.
pub fn fallback_chunk(doc: &Document, store: &DocumentStore) -> Vec<ConstituentSpan> {
    let mut out = Vec::new();
    for &(bstart, bend) in &doc.block_bounds {
        for start in bstart..bend {
            for len in MIN_WORDS..=MAX_WORDS {
                let end = start + len;
                if end > bend {
                    break;
                }
                if doc.tokens[start..end]
                    .iter()
                    .any(|&t| is_punctuation_token(store.vocab.token(t)))
                {
                    // Longer windows from this start contain the same token.
                    break;
                }
                out.push(ConstituentSpan {
                    doc_id: doc.id.clone(),
                    start,
                    end,
                    label: FALLBACK_LABEL.to_string(),
                });
            }
        }
    }
    out.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
    out
}

// ---------------------------------------------------------------------------
// IDF
// ---------------------------------------------------------------------------

/// Surface string of a span: its token strings joined by single spaces.
pub fn span_surface(store: &DocumentStore, doc_idx: usize, start: usize, end: usize) -> String {
    let doc = store.doc(doc_idx);
    doc.tokens[start..end]
        .iter()
        .map(|&t| store.vocab.token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Count, for every surface, the number of blocks containing it as a
/// contiguous token subsequence. N is the total block count of the store.
pub fn compute_idf<'a, I>(store: &DocumentStore, surfaces: I) -> IdfTable
where
    I: IntoIterator<Item = &'a str>,
{
    // Resolve each surface to its token-id sequence; surfaces with any token
    // missing from the vocabulary can never match and stay at df = 0.
    let mut seqs: Vec<(String, Vec<TokenId>)> = Vec::new();
    let mut seen = HashSet::new();
    for s in surfaces {
        if !seen.insert(s.to_string()) {
            continue;
        }
        let ids: Option<Vec<TokenId>> = s.split(' ').map(|t| store.vocab.get(t)).collect();
        match ids {
            Some(ids) if !ids.is_empty() => seqs.push((s.to_string(), ids)),
            _ => seqs.push((s.to_string(), Vec::new())),
        }
    }

    // Index matchable sequences by first token.
    let mut by_first: HashMap<TokenId, Vec<usize>> = HashMap::new();
    for (i, (_, ids)) in seqs.iter().enumerate() {
        if let Some(&first) = ids.first() {
            by_first.entry(first).or_default().push(i);
        }
    }

    let mut df = vec![0usize; seqs.len()];
    let mut in_block: HashSet<usize> = HashSet::new();
    for doc in &store.docs {
        for &(bstart, bend) in &doc.block_bounds {
            in_block.clear();
            let block = &doc.tokens[bstart..bend];
            for (pos, &tok) in block.iter().enumerate() {
                let Some(cands) = by_first.get(&tok) else {
                    continue;
                };
                for &ci in cands {
                    if in_block.contains(&ci) {
                        continue;
                    }
                    let ids = &seqs[ci].1;
                    if pos + ids.len() <= block.len() && block[pos..pos + ids.len()] == ids[..] {
                        in_block.insert(ci);
                    }
                }
            }
            for &ci in &in_block {
                df[ci] += 1;
            }
        }
    }

    IdfTable {
        block_count: store.block_count(),
        doc_freq: seqs
            .into_iter()
            .zip(df)
            .map(|((s, _), d)| (s, d))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Filtering and grouping
// ---------------------------------------------------------------------------

/// Word count of a span: its non-punctuation tokens.
pub fn span_word_count(store: &DocumentStore, doc_idx: usize, start: usize, end: usize) -> usize {
    let doc = store.doc(doc_idx);
    doc.tokens[start..end]
        .iter()
        .filter(|&&t| !is_punctuation_token(store.vocab.token(t)))
        .count()
}

/// Resolve the IDF bands the filter will apply, per word count. For table
/// mode this is the configured table; for percentile mode the bands are the
/// trimmed range of the spans' own IDF values per word count (spans already
/// passing the label and length clauses).
pub fn resolve_idf_bands(
    store: &DocumentStore,
    spans: &[ConstituentSpan],
    idf: &IdfTable,
    config: &FilterConfig,
) -> BTreeMap<usize, (f64, f64)> {
    match &config.thresholds {
        IdfThresholds::Table(t) => t.clone(),
        IdfThresholds::Percentile {
            drop_low_pct,
            drop_high_pct,
        } => {
            let mut by_len: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for span in spans {
                if config.drop_labels.contains(&span.label) {
                    continue;
                }
                let Some(doc_idx) = store.doc_index(&span.doc_id) else {
                    continue;
                };
                let wc = span_word_count(store, doc_idx, span.start, span.end);
                if wc < config.min_words || wc > config.max_words {
                    continue;
                }
                let surface = span_surface(store, doc_idx, span.start, span.end);
                if let Some(v) = idf.idf(&surface) {
                    by_len.entry(wc).or_default().push(v);
                }
            }
            by_len
                .into_iter()
                .map(|(wc, mut vals)| {
                    vals.sort_by(f64::total_cmp);
                    let lo = crate::util::percentile_sorted(&vals, *drop_low_pct);
                    let hi = crate::util::percentile_sorted(&vals, 100.0 - *drop_high_pct);
                    (wc, (lo, hi))
                })
                .collect()
        }
    }
}

/// Keep a span iff (a) its label is not on the drop list, (b) its word count
/// is within [min_words, max_words], and (c) its IDF lies inside the band for
/// its word count. Unindexable surfaces (df = 0) are dropped. Output is
/// sorted by (doc_id, start, end).
pub fn filter_candidates(
    store: &DocumentStore,
    spans: &[ConstituentSpan],
    idf: &IdfTable,
    config: &FilterConfig,
) -> Vec<PhraseCandidate> {
    let bands = resolve_idf_bands(store, spans, idf, config);
    let mut out = Vec::new();
    for span in spans {
        if config.drop_labels.contains(&span.label) {
            continue;
        }
        let Some(doc_idx) = store.doc_index(&span.doc_id) else {
            continue;
        };
        let wc = span_word_count(store, doc_idx, span.start, span.end);
        if wc < config.min_words || wc > config.max_words {
            continue;
        }
        let surface = span_surface(store, doc_idx, span.start, span.end);
        let Some(idf_value) = idf.idf(&surface) else {
            continue;
        };
        let Some(&(lo, hi)) = bands.get(&wc) else {
            continue;
        };
        if idf_value < lo || idf_value > hi {
            continue;
        }
        out.push(PhraseCandidate {
            span: span.clone(),
            surface,
            word_count: wc,
            idf_value,
        });
    }
    out.sort_by(|a, b| {
        (&a.span.doc_id, a.span.start, a.span.end).cmp(&(&b.span.doc_id, b.span.start, b.span.end))
    });
    out
}

/// Group candidates by exact surface (case-sensitive, single-space joined).
pub fn group_lexical(candidates: &[PhraseCandidate]) -> BTreeMap<String, Vec<PhraseCandidate>> {
    let mut groups: BTreeMap<String, Vec<PhraseCandidate>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.surface.clone()).or_default().push(c.clone());
    }
    groups
}
