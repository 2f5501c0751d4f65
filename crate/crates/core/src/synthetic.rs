//! Synthetic corpus with planted structure, for end-to-end exercises where
//! the right answers are known by construction. Each document interleaves
//! filler runs with plants of the form `cue{i} go{i} p{i}a p{i}b p{i}c`: the
//! cue bigram deterministically announces which three-word phrase follows, so
//! a model that learns the corpus can complete any cue with the matching
//! phrase. Span annotations mark the plants (and some filler-bigram noise),
//! and the multiple-choice set asks exactly that completion question with
//! every phrase surface as an option.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{DocumentStore, Tokenizer};
use crate::error::{Error, Result};
use crate::mc::McInstance;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub docs: usize,
    /// Size of the filler word pool (`w0`, `w1`, ...).
    pub filler_vocab: usize,
    /// Number of distinct planted phrases (and cue bigrams).
    pub phrases: usize,
    pub plants_per_doc: usize,
    /// Filler run length range, inclusive.
    pub filler_run: (usize, usize),
    pub mc_instances: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(seed: u64) -> Self {
        SyntheticConfig {
            docs: 500,
            filler_vocab: 200,
            phrases: 16,
            plants_per_doc: 3,
            filler_run: (4, 8),
            mc_instances: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.docs == 0 || self.phrases == 0 || self.plants_per_doc == 0 {
            return Err(Error::Config("docs, phrases, and plants_per_doc must be positive".into()));
        }
        if self.filler_vocab < 2 {
            return Err(Error::Config("filler_vocab must be at least 2".into()));
        }
        if self.filler_run.0 < 2 || self.filler_run.0 > self.filler_run.1 {
            return Err(Error::Config(format!(
                "filler_run ({}, {}) must satisfy 2 <= lo <= hi",
                self.filler_run.0, self.filler_run.1
            )));
        }
        Ok(())
    }

    /// Longest document this config can produce, in words.
    pub fn max_doc_words(&self) -> usize {
        (self.plants_per_doc + 1) * self.filler_run.1 + self.plants_per_doc * 5
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// (doc_id, text) in document order.
    pub records: Vec<(String, String)>,
    /// Per document (parallel to `records`): (start, end, label) token spans.
    pub spans_by_doc: Vec<Vec<(usize, usize, String)>>,
    pub mc: Vec<McInstance>,
    /// Surface of phrase `i` at index `i`.
    pub phrase_surfaces: Vec<String>,
}

fn phrase_words(i: usize) -> [String; 3] {
    [format!("p{i}a"), format!("p{i}b"), format!("p{i}c")]
}

fn cue_words(i: usize) -> [String; 2] {
    [format!("cue{i}"), format!("go{i}")]
}

pub fn build(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool: Vec<String> = (0..config.filler_vocab).map(|j| format!("w{j}")).collect();
    let phrase_surfaces: Vec<String> =
        (0..config.phrases).map(|i| phrase_words(i).join(" ")).collect();

    let mut records = Vec::with_capacity(config.docs);
    let mut spans_by_doc = Vec::with_capacity(config.docs);
    for d in 0..config.docs {
        let mut words: Vec<String> = Vec::new();
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        let filler = |words: &mut Vec<String>, rng: &mut ChaCha8Rng| {
            let run = rng.random_range(config.filler_run.0..=config.filler_run.1);
            for _ in 0..run {
                words.push(pool[rng.random_range(0..pool.len())].clone());
            }
        };
        filler(&mut words, &mut rng);
        // Noise annotation over filler: almost always a unique word pair, so
        // IDF filtering has something to reject.
        spans.push((0, 2, "NP".to_string()));
        for plant in 0..config.plants_per_doc {
            // The first plant cycles through all phrases so every phrase is
            // guaranteed corpus presence; the rest are uniform.
            let i = if plant == 0 {
                d % config.phrases
            } else {
                rng.random_range(0..config.phrases)
            };
            let at = words.len();
            words.extend(cue_words(i));
            spans.push((at, at + 2, "NP".to_string()));
            let at = words.len();
            words.extend(phrase_words(i));
            spans.push((at, at + 3, "NP".to_string()));
            filler(&mut words, &mut rng);
        }
        records.push((format!("syn{d:04}"), words.join(" ")));
        spans_by_doc.push(spans);
    }

    let mut mc = Vec::with_capacity(config.mc_instances);
    for j in 0..config.mc_instances {
        let i = j % config.phrases;
        let prefix_len = rng.random_range(2..=4);
        let mut q: Vec<String> =
            (0..prefix_len).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
        q.extend(cue_words(i));
        let mut order: Vec<usize> = (0..config.phrases).collect();
        order.shuffle(&mut rng);
        let answer = order.iter().position(|&o| o == i).unwrap();
        mc.push(McInstance {
            question: q.join(" "),
            options: order.iter().map(|&o| phrase_surfaces[o].clone()).collect(),
            answer,
        });
    }

    Ok(SyntheticCorpus { records, spans_by_doc, mc, phrase_surfaces })
}

impl SyntheticCorpus {
    pub fn store(&self, tokenizer: &dyn Tokenizer, block_words: usize) -> Result<DocumentStore> {
        DocumentStore::from_records(self.records.iter().cloned(), tokenizer, block_words)
    }
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct SpanLine<'a> {
    doc_id: &'a str,
    spans: Vec<SpanLineSpan<'a>>,
}

#[derive(Serialize)]
struct SpanLineSpan<'a> {
    start: usize,
    end: usize,
    label: &'a str,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(f))
}

fn emit<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)
        .map_err(|e| Error::Invalid(format!("{}: serialization failed: {e}", path.display())))?;
    writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))
}

/// One `{"id", "text"}` record per line, the shape `corpus::ingest_corpus` reads.
pub fn write_corpus_jsonl(path: &Path, records: &[(String, String)]) -> Result<()> {
    let mut w = create(path)?;
    for (id, text) in records {
        emit(&mut w, path, &CorpusLine { id, text })?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// One `{"doc_id", "spans"}` record per line, the shape `mining::load_spans` reads.
pub fn write_spans_jsonl(
    path: &Path,
    records: &[(String, String)],
    spans_by_doc: &[Vec<(usize, usize, String)>],
) -> Result<()> {
    if records.len() != spans_by_doc.len() {
        return Err(Error::Invalid(format!(
            "{} documents but {} span lists",
            records.len(),
            spans_by_doc.len()
        )));
    }
    let mut w = create(path)?;
    for ((id, _), spans) in records.iter().zip(spans_by_doc) {
        let line = SpanLine {
            doc_id: id,
            spans: spans
                .iter()
                .map(|(s, e, l)| SpanLineSpan { start: *s, end: *e, label: l })
                .collect(),
        };
        emit(&mut w, path, &line)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// One multiple-choice instance per line, the shape `mc::load_mc` reads.
pub fn write_mc_jsonl(path: &Path, instances: &[McInstance]) -> Result<()> {
    let mut w = create(path)?;
    for inst in instances {
        emit(&mut w, path, inst)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{WordTokenizer, DEFAULT_BLOCK_WORDS};
    use crate::mc::load_mc;
    use crate::mining::load_spans;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            docs: 24,
            filler_vocab: 30,
            phrases: 4,
            plants_per_doc: 2,
            filler_run: (3, 5),
            mc_instances: 12,
            seed: 7,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build(&small()).unwrap();
        let b = build(&small()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.spans_by_doc, b.spans_by_doc);
        assert_eq!(a.mc, b.mc);
    }

    #[test]
    fn every_phrase_span_matches_its_surface() {
        let cfg = small();
        let corpus = build(&cfg).unwrap();
        let store = corpus.store(&WordTokenizer, DEFAULT_BLOCK_WORDS).unwrap();
        let mut seen = vec![0usize; cfg.phrases];
        for (doc_idx, spans) in corpus.spans_by_doc.iter().enumerate() {
            let doc = store.doc(doc_idx);
            for &(start, end, _) in spans {
                assert!(end <= doc.tokens.len());
                let surface: Vec<&str> =
                    doc.tokens[start..end].iter().map(|&t| store.vocab.token(t)).collect();
                let surface = surface.join(" ");
                if let Some(i) = corpus.phrase_surfaces.iter().position(|p| *p == surface) {
                    seen[i] += 1;
                }
            }
        }
        // Round-robin first plants guarantee every phrase appears.
        for (i, &n) in seen.iter().enumerate() {
            assert!(n > 0, "phrase {i} never planted");
        }
    }

    #[test]
    fn cue_bigram_always_precedes_its_phrase() {
        let cfg = small();
        let corpus = build(&cfg).unwrap();
        for (_, text) in &corpus.records {
            let words: Vec<&str> = text.split_whitespace().collect();
            for (j, w) in words.iter().enumerate() {
                if let Some(num) = w.strip_prefix("cue") {
                    let i: usize = num.parse().unwrap();
                    let expect = [
                        format!("go{i}"),
                        format!("p{i}a"),
                        format!("p{i}b"),
                        format!("p{i}c"),
                    ];
                    for (o, e) in expect.iter().enumerate() {
                        assert_eq!(words[j + 1 + o], e, "cue{i} not followed by its phrase");
                    }
                }
            }
        }
    }

    #[test]
    fn documents_fit_one_block() {
        let cfg = small();
        let corpus = build(&cfg).unwrap();
        let store = corpus.store(&WordTokenizer, DEFAULT_BLOCK_WORDS).unwrap();
        for d in 0..corpus.records.len() {
            let doc = store.doc(d);
            assert!(doc.tokens.len() <= cfg.max_doc_words());
            assert_eq!(doc.block_bounds.len(), 1, "doc {d} spans multiple blocks");
        }
    }

    #[test]
    fn mc_instances_are_valid_and_cover_all_phrases() {
        let cfg = small();
        let corpus = build(&cfg).unwrap();
        assert_eq!(corpus.mc.len(), cfg.mc_instances);
        let mut answered = vec![false; cfg.phrases];
        for (j, inst) in corpus.mc.iter().enumerate() {
            inst.validate().unwrap();
            assert_eq!(inst.options.len(), cfg.phrases);
            // The correct option is the phrase the question's cue names.
            let i = j % cfg.phrases;
            assert_eq!(inst.options[inst.answer], corpus.phrase_surfaces[i]);
            assert!(inst.question.ends_with(&cue_words(i).join(" ")));
            answered[i] = true;
        }
        assert!(answered.iter().all(|&a| a));
    }

    #[test]
    fn written_files_round_trip_through_their_readers() {
        let cfg = small();
        let corpus = build(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.jsonl");
        let spans_path = dir.path().join("spans.jsonl");
        let mc_path = dir.path().join("mc.jsonl");
        write_corpus_jsonl(&corpus_path, &corpus.records).unwrap();
        write_spans_jsonl(&spans_path, &corpus.records, &corpus.spans_by_doc).unwrap();
        write_mc_jsonl(&mc_path, &corpus.mc).unwrap();

        let store =
            crate::corpus::ingest_corpus(&corpus_path, &WordTokenizer, DEFAULT_BLOCK_WORDS)
                .unwrap();
        assert_eq!(store.docs.len(), corpus.records.len());
        assert_eq!(store.doc(0).id, corpus.records[0].0);

        let spans = load_spans(&spans_path, &store).unwrap();
        let expect: usize = corpus.spans_by_doc.iter().map(|s| s.len()).sum();
        assert_eq!(spans.len(), expect);

        let mc = load_mc(&mc_path).unwrap();
        assert_eq!(mc, corpus.mc);
    }
}
