//! Document ingestion, block splitting, tokenization, and the token vocabulary.
//!
//! Supporting documents are split into disjoint blocks of up to 128 words.
//! Block boundaries are computed over whitespace-delimited words of the raw
//! text, then expressed as half-open token intervals, so a block never splits
//! a word's tokens apart.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const UNK: TokenId = 1;

pub const BOS_STR: &str = "<bos>";
pub const UNK_STR: &str = "<unk>";

pub const DEFAULT_BLOCK_WORDS: usize = 128;

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Splits raw text into token strings. Implementations must be pure:
/// identical input gives identical output across runs.
pub trait Tokenizer: Send + Sync {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Default word-level tokenizer: split on whitespace, then detach leading and
/// trailing ASCII punctuation as separate single-character tokens. Interior
/// punctuation (e.g. the apostrophe in "don't") stays attached.
#[derive(Debug, Clone, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            split_word(word, &mut out);
        }
        out
    }
}

fn split_word(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut lo = 0;
    let mut hi = chars.len();
    let mut leading = Vec::new();
    while lo < hi && chars[lo].is_ascii_punctuation() {
        leading.push(chars[lo].to_string());
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && chars[hi - 1].is_ascii_punctuation() {
        trailing.push(chars[hi - 1].to_string());
        hi -= 1;
    }
    out.extend(leading);
    if lo < hi {
        out.push(chars[lo..hi].iter().collect());
    }
    out.extend(trailing.into_iter().rev());
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// The token vocabulary V: a bijection between token ids and strings, with
/// reserved BOS and UNK entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenVocab {
    token_strings: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, TokenId>,
}

impl TokenVocab {
    pub fn new() -> Self {
        let mut v = TokenVocab {
            token_strings: Vec::new(),
            lookup: HashMap::new(),
        };
        v.add(BOS_STR);
        v.add(UNK_STR);
        debug_assert_eq!(v.get(BOS_STR), Some(BOS));
        debug_assert_eq!(v.get(UNK_STR), Some(UNK));
        v
    }

    /// Insert a token string if absent; return its id either way.
    pub fn add(&mut self, s: &str) -> TokenId {
        if let Some(&id) = self.lookup.get(s) {
            return id;
        }
        let id = self.token_strings.len() as TokenId;
        self.token_strings.push(s.to_string());
        self.lookup.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<TokenId> {
        self.lookup.get(s).copied()
    }

    pub fn id_or_unk(&self, s: &str) -> TokenId {
        self.get(s).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.token_strings[id as usize]
    }

    pub fn len(&self) -> usize {
        self.token_strings.len()
    }

    pub fn is_empty(&self) -> bool {
        false // BOS and UNK are always present
    }

    pub fn token_strings(&self) -> &[String] {
        &self.token_strings
    }

    /// Rebuild the reverse lookup after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.lookup = self
            .token_strings
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
    }

    /// Decode a token id sequence to space-joined text.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Map token strings to ids; unknown words map to UNK.
pub fn tokenize(text: &str, vocab: &TokenVocab, tokenizer: &dyn Tokenizer) -> Vec<TokenId> {
    tokenizer
        .split(text)
        .iter()
        .map(|s| vocab.id_or_unk(s))
        .collect()
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

/// One supporting or training document: raw text, its token ids, and the
/// half-open token intervals of its blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub block_bounds: Vec<(usize, usize)>,
}

impl Document {
    /// The block interval containing token offset `pos`, if any.
    pub fn block_of(&self, pos: usize) -> Option<(usize, usize)> {
        // Blocks are sorted and disjoint.
        let idx = self.block_bounds.partition_point(|&(_, end)| end <= pos);
        self.block_bounds
            .get(idx)
            .copied()
            .filter(|&(start, end)| start <= pos && pos < end)
    }

    /// True iff the half-open span lies inside a single block.
    pub fn span_in_block(&self, start: usize, end: usize) -> bool {
        match self.block_of(start) {
            Some((_, bend)) => end <= bend && start < end,
            None => false,
        }
    }
}

/// Compute block intervals over the words of `text`, each holding at most
/// `max_words` whitespace-delimited words, expressed as token intervals.
pub fn split_blocks(
    text: &str,
    tokenizer: &dyn Tokenizer,
    max_words: usize,
) -> Result<Vec<(usize, usize)>> {
    if max_words < 1 {
        return Err(Error::Config(format!(
            "block size must be at least 1 word, got {max_words}"
        )));
    }
    let mut bounds = Vec::new();
    let mut block_start_tok = 0usize;
    let mut words_in_block = 0usize;
    let mut tok_count = 0usize;
    for word in text.split_whitespace() {
        let word_tokens = tokenizer.split(word).len();
        if words_in_block == max_words {
            bounds.push((block_start_tok, tok_count));
            block_start_tok = tok_count;
            words_in_block = 0;
        }
        tok_count += word_tokens;
        words_in_block += 1;
    }
    if tok_count > block_start_tok {
        bounds.push((block_start_tok, tok_count));
    }
    Ok(bounds)
}

// ---------------------------------------------------------------------------
// Document store
// ---------------------------------------------------------------------------

/// An immutable collection of tokenized documents sharing one vocabulary.
/// Built once by a single writer; safe for concurrent reads afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentStore {
    pub vocab: TokenVocab,
    pub docs: Vec<Document>,
    #[serde(skip)]
    id_index: HashMap<String, usize>,
    pub block_words: usize,
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
}

impl DocumentStore {
    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn doc(&self, index: usize) -> &Document {
        &self.docs[index]
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Total number of blocks across all documents.
    pub fn block_count(&self) -> usize {
        self.docs.iter().map(|d| d.block_bounds.len()).sum()
    }

    pub fn rebuild_index(&mut self) {
        self.id_index = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        self.vocab.rebuild_lookup();
    }

    /// Build a store from (id, text) pairs, growing the vocabulary as needed.
    pub fn from_records<I>(records: I, tokenizer: &dyn Tokenizer, block_words: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut vocab = TokenVocab::new();
        let mut docs = Vec::new();
        let mut id_index = HashMap::new();
        for (id, text) in records {
            if id_index.contains_key(&id) {
                return Err(Error::DuplicateDocId { id });
            }
            let tokens: Vec<TokenId> = tokenizer.split(&text).iter().map(|s| vocab.add(s)).collect();
            let block_bounds = split_blocks(&text, tokenizer, block_words)?;
            debug_assert_eq!(
                block_bounds.last().map(|&(_, e)| e).unwrap_or(0),
                tokens.len()
            );
            id_index.insert(id.clone(), docs.len());
            docs.push(Document {
                id,
                text,
                tokens,
                block_bounds,
            });
        }
        Ok(DocumentStore {
            vocab,
            docs,
            id_index,
            block_words,
        })
    }

    /// A stable fingerprint of the corpus content, recorded as table provenance.
    pub fn corpus_id(&self) -> String {
        let mut h = crate::util::Fnv1a64::new();
        for d in &self.docs {
            h.update(d.id.as_bytes());
            h.update(&[0]);
            h.update(d.text.as_bytes());
            h.update(&[0]);
        }
        format!("{:016x}", h.finish())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)
            .map_err(|e| Error::Invalid(format!("store serialization failed: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut store: DocumentStore = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
        store.rebuild_index();
        Ok(store)
    }
}

/// Ingest a line-delimited corpus file: one JSON record per line with string
/// fields `id` and `text`. Document order follows file order.
pub fn ingest_corpus(path: &Path, tokenizer: &dyn Tokenizer, block_words: usize) -> Result<DocumentStore> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), lineno + 1, e.to_string()))?;
        records.push((rec.id, rec.text));
    }
    DocumentStore::from_records(records, tokenizer, block_words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn store_of(texts: &[(&str, &str)]) -> DocumentStore {
        DocumentStore::from_records(
            texts.iter().map(|(i, t)| (i.to_string(), t.to_string())),
            &WordTokenizer,
            DEFAULT_BLOCK_WORDS,
        )
        .unwrap()
    }

    #[test]
    fn tokenize_empty() {
        let vocab = TokenVocab::new();
        assert!(tokenize("", &vocab, &WordTokenizer).is_empty());
    }

    #[test]
    fn tokenize_whitespace_split() {
        let mut vocab = TokenVocab::new();
        for w in ["The", "moon", "rises"] {
            vocab.add(w);
        }
        let ids = tokenize("The moon rises", &vocab, &WordTokenizer);
        assert_eq!(ids.len(), 3);
        assert_eq!(vocab.token(ids[0]), "The");
    }

    #[test]
    fn tokenize_detaches_punctuation() {
        let toks = WordTokenizer.split("rises.");
        assert_eq!(toks, vec!["rises", "."]);
        let toks = WordTokenizer.split("(hello),");
        assert_eq!(toks, vec!["(", "hello", ")", ","]);
        let toks = WordTokenizer.split("don't");
        assert_eq!(toks, vec!["don't"]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let vocab = TokenVocab::new();
        let ids = tokenize("never seen", &vocab, &WordTokenizer);
        assert_eq!(ids, vec![UNK, UNK]);
    }

    #[test]
    fn vocab_lookup_roundtrip() {
        let mut vocab = TokenVocab::new();
        let id = vocab.add("moon");
        assert_eq!(vocab.get(vocab.token(id)), Some(id));
        assert_eq!(vocab.get(BOS_STR), Some(BOS));
        assert_eq!(vocab.get(UNK_STR), Some(UNK));
    }

    #[test]
    fn split_blocks_arithmetic() {
        let words: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let bounds = split_blocks(&text, &WordTokenizer, 128).unwrap();
        let lens: Vec<usize> = bounds.iter().map(|&(s, e)| e - s).collect();
        assert_eq!(lens, vec![128, 128, 44]);
    }

    #[test]
    fn split_blocks_empty_and_boundary() {
        assert!(split_blocks("", &WordTokenizer, 128).unwrap().is_empty());
        let words: Vec<String> = (0..128).map(|i| format!("w{i}")).collect();
        let bounds = split_blocks(&words.join(" "), &WordTokenizer, 128).unwrap();
        assert_eq!(bounds, vec![(0, 128)]);
    }

    #[test]
    fn split_blocks_bad_config() {
        assert!(matches!(
            split_blocks("a b", &WordTokenizer, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn blocks_never_split_a_word() {
        // One word tokenizes to two tokens ("x." -> ["x", "."]); both land in
        // the same block even at the boundary.
        let words: Vec<String> = (0..5).map(|i| format!("w{i}.")).collect();
        let bounds = split_blocks(&words.join(" "), &WordTokenizer, 2).unwrap();
        assert_eq!(bounds, vec![(0, 4), (4, 8), (8, 10)]);
    }

    #[test]
    fn ingest_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.flush().unwrap();
        let store = ingest_corpus(f.path(), &WordTokenizer, 128).unwrap();
        assert_eq!(store.len(), 0);
    }

    #[test]
    fn ingest_duplicate_id_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id": "a", "text": "one"}}"#).unwrap();
        writeln!(f, r#"{{"id": "a", "text": "two"}}"#).unwrap();
        let err = ingest_corpus(f.path(), &WordTokenizer, 128).unwrap_err();
        match err {
            Error::DuplicateDocId { id } => assert_eq!(id, "a"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn ingest_malformed_record_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id": "a", "text": "one"}}"#).unwrap();
        writeln!(f, r#"not json"#).unwrap();
        let err = ingest_corpus(f.path(), &WordTokenizer, 128).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn ingest_preserves_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..29 {
            writeln!(f, r#"{{"id": "d{i}", "text": "doc number {i}"}}"#).unwrap();
        }
        let store = ingest_corpus(f.path(), &WordTokenizer, 128).unwrap();
        assert_eq!(store.len(), 29);
        for i in 0..29 {
            assert_eq!(store.doc(i).id, format!("d{i}"));
            assert_eq!(store.doc_index(&format!("d{i}")), Some(i));
        }
    }

    #[test]
    fn store_save_load_roundtrip() {
        let store = store_of(&[("a", "the moon rises."), ("b", "the sun sets")]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        store.save(&path).unwrap();
        let loaded = DocumentStore::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.doc(0).tokens, store.doc(0).tokens);
        assert_eq!(loaded.doc_index("b"), Some(1));
        assert_eq!(loaded.vocab.get("moon"), store.vocab.get("moon"));
    }

    proptest! {
        #[test]
        fn tokenize_is_pure(text in "[ -~]{0,80}") {
            let a = WordTokenizer.split(&text);
            let b = WordTokenizer.split(&text);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tokenize_idempotent_on_joined_tokens(text in "[ -~]{0,80}") {
            let once = WordTokenizer.split(&text);
            let joined = once.join(" ");
            let twice = WordTokenizer.split(&joined);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn blocks_tile_the_token_sequence(
            words in proptest::collection::vec("[a-z]{1,6}\\.?", 0..300),
            max_words in 1usize..140,
        ) {
            let text = words.join(" ");
            let tokens = WordTokenizer.split(&text);
            let bounds = split_blocks(&text, &WordTokenizer, max_words).unwrap();
            // Consecutive, disjoint, covering.
            let mut pos = 0;
            for &(s, e) in &bounds {
                prop_assert_eq!(s, pos);
                prop_assert!(e > s);
                pos = e;
            }
            prop_assert_eq!(pos, tokens.len());
        }

        #[test]
        fn vocab_bijection(words in proptest::collection::vec("[a-z]{1,8}", 0..40)) {
            let mut vocab = TokenVocab::new();
            for w in &words {
                vocab.add(w);
            }
            for id in 0..vocab.len() as TokenId {
                prop_assert_eq!(vocab.get(vocab.token(id)), Some(id));
            }
        }
    }
}
