//! The dual encoder. A trainable causal prefix tower produces query vectors
//! E_p(prefix); a frozen bidirectional phrase tower produces E_c(span) for
//! phrase-table entries; a trainable token-target matrix holds E_c(token) for
//! single tokens acting as special phrases. All scoring downstream is the raw
//! (unnormalized) dot product in the shared index space.

pub mod arena;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod transformer;

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arena::{Arena, TensorSpec};
pub use transformer::{TowerCache, TowerConfig};

use crate::corpus::{DocumentStore, TokenId, BOS};
use crate::error::{Error, Result};
use crate::matching::{PhraseEmbedder, SourceOccurrence};

/// Seed offset separating the frozen tower's draw stream from the trainable
/// side, so the two halves never share initialization noise.
const FROZEN_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub const TARGET_TOKEN_EMB: &str = "target.tok_emb";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Shared matching-space dimensionality (the index dimension).
    pub index_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_prefix_len: usize,
    /// Longest block (in tokens) the phrase tower accepts.
    pub max_block_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale reference shape: trainable in minutes on a CPU.
    pub fn reference(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 128,
            index_dim: 64,
            layers: 2,
            heads: 4,
            max_prefix_len: 256,
            max_block_len: 512,
            seed,
        }
    }

    /// Miniature shape for tests.
    pub fn tiny(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 16,
            index_dim: 8,
            layers: 1,
            heads: 2,
            max_prefix_len: 32,
            max_block_len: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("index_dim", self.index_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("max_prefix_len", self.max_prefix_len),
            ("max_block_len", self.max_block_len),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

pub struct Model {
    pub config: ModelConfig,
    /// Prefix tower, its projection head, and the token-target matrix.
    pub trainable: Arena,
    /// Phrase tower and its projection head; never updated by training.
    pub frozen: Arena,
    prefix_cfg: TowerConfig,
    phrase_cfg: TowerConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let prefix_cfg = TowerConfig {
            name: "prefix".to_string(),
            vocab: config.vocab_size,
            d_model: config.d_model,
            layers: config.layers,
            heads: config.heads,
            max_pos: config.max_prefix_len,
            hidden: 4 * config.d_model,
            proj_in: config.d_model,
            proj_out: config.index_dim,
        };
        let phrase_cfg = TowerConfig {
            name: "phrase".to_string(),
            vocab: config.vocab_size,
            d_model: config.d_model,
            layers: config.layers,
            heads: config.heads,
            max_pos: config.max_block_len,
            hidden: 4 * config.d_model,
            proj_in: 2 * config.d_model,
            proj_out: config.index_dim,
        };
        let mut trainable = transformer::declare_tower(Arena::builder(), &prefix_cfg)
            .tensor(TARGET_TOKEN_EMB, &[config.vocab_size, config.index_dim])
            .build();
        let mut frozen = transformer::declare_tower(Arena::builder(), &phrase_cfg).build();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        transformer::init_arena(&mut trainable, &mut rng);
        let mut frozen_rng = ChaCha8Rng::seed_from_u64(config.seed ^ FROZEN_SEED_SALT);
        transformer::init_arena(&mut frozen, &mut frozen_rng);

        Ok(Model {
            config,
            trainable,
            frozen,
            prefix_cfg,
            phrase_cfg,
        })
    }

    pub fn prefix_cfg(&self) -> &TowerConfig {
        &self.prefix_cfg
    }

    pub fn phrase_cfg(&self) -> &TowerConfig {
        &self.phrase_cfg
    }

    /// BOS-prepended, windowed input for a prefix: the most recent
    /// `max_prefix_len` positions.
    pub fn prefix_input(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        if input.len() > self.config.max_prefix_len {
            let cut = input.len() - self.config.max_prefix_len;
            input.drain(..cut);
        }
        input
    }

    /// E_p of one prefix (empty prefix = BOS alone).
    pub fn encode_prefix(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.prefix_forward_window(prefix).1
    }

    /// One windowed prefix pass, keeping the cache so the caller can run the
    /// backward pass. The query lives at the cache's final position.
    pub fn prefix_forward_window(&self, prefix: &[TokenId]) -> (TowerCache, Vec<f64>) {
        let input = self.prefix_input(prefix);
        let cache = transformer::tower_forward(&self.trainable, &self.prefix_cfg, &input, true);
        let dm = self.config.d_model;
        let last = &cache.states[(cache.t - 1) * dm..cache.t * dm];
        let q = transformer::project_forward(&self.trainable, &self.prefix_cfg, last);
        (cache, q)
    }

    /// Teacher-forced pass over `[BOS] ‖ tokens`: the cache plus, for every
    /// position j, the query vector of the prefix tokens[..j]. Errors if the
    /// input exceeds the prefix window (no sliding here — training and
    /// likelihood want aligned positions).
    pub fn prefix_forward_all(&self, tokens: &[TokenId]) -> Result<(TowerCache, Vec<Vec<f64>>)> {
        if tokens.len() + 1 > self.config.max_prefix_len {
            return Err(Error::Config(format!(
                "sequence of {} tokens exceeds max_prefix_len {}",
                tokens.len() + 1,
                self.config.max_prefix_len
            )));
        }
        let mut input = Vec::with_capacity(tokens.len() + 1);
        input.push(BOS);
        input.extend_from_slice(tokens);
        let cache = transformer::tower_forward(&self.trainable, &self.prefix_cfg, &input, true);
        let dm = self.config.d_model;
        let qs = (0..cache.t)
            .map(|j| {
                transformer::project_forward(
                    &self.trainable,
                    &self.prefix_cfg,
                    &cache.states[j * dm..(j + 1) * dm],
                )
            })
            .collect();
        Ok((cache, qs))
    }

    /// Backward companion of [`Model::prefix_forward_all`] (also valid for a
    /// cache produced any other way through the prefix tower): each `(j, dq)`
    /// is the loss gradient w.r.t. the query at cache position `j`. Parameter
    /// gradients accumulate into `grads`, which must share the trainable
    /// arena's layout.
    pub fn prefix_backward_all(&self, cache: &TowerCache, dqs: &[(usize, Vec<f64>)], grads: &mut Arena) {
        let dm = self.config.d_model;
        let mut dstates = vec![0.0; cache.t * dm];
        for (j, dq) in dqs {
            debug_assert!(*j < cache.t);
            let h = &cache.states[j * dm..(j + 1) * dm];
            let dx = transformer::project_backward(&self.trainable, &self.prefix_cfg, h, dq, grads);
            for (a, b) in dstates[j * dm..(j + 1) * dm].iter_mut().zip(dx) {
                *a += b;
            }
        }
        transformer::tower_backward(&self.trainable, &self.prefix_cfg, cache, true, &dstates, grads);
    }

    /// Bidirectional states of one block (the phrase tower's unit of work).
    pub fn encode_block(&self, block_tokens: &[TokenId]) -> Result<TowerCache> {
        if block_tokens.is_empty() {
            return Err(Error::Invalid("cannot encode an empty block".into()));
        }
        if block_tokens.len() > self.config.max_block_len {
            return Err(Error::Config(format!(
                "block of {} tokens exceeds max_block_len {}",
                block_tokens.len(),
                self.config.max_block_len
            )));
        }
        Ok(transformer::tower_forward(&self.frozen, &self.phrase_cfg, block_tokens, false))
    }

    /// E_c of a span given its block's states: W_c · concat(h_start, h_end−1).
    /// Offsets are relative to the block start.
    pub fn project_span(&self, block: &TowerCache, start: usize, end: usize) -> Result<Vec<f64>> {
        if start >= end || end > block.t {
            return Err(Error::Invalid(format!(
                "span {start}..{end} outside block of {} tokens",
                block.t
            )));
        }
        let dm = self.config.d_model;
        let mut concat = Vec::with_capacity(2 * dm);
        concat.extend_from_slice(&block.states[start * dm..(start + 1) * dm]);
        concat.extend_from_slice(&block.states[(end - 1) * dm..end * dm]);
        Ok(transformer::project_forward(&self.frozen, &self.phrase_cfg, &concat))
    }

    /// E_c of a span in one shot (encodes the whole block; prefer
    /// [`Model::encode_block`] + [`Model::project_span`] for batches).
    pub fn encode_phrase(&self, block_tokens: &[TokenId], start: usize, end: usize) -> Result<Vec<f64>> {
        let cache = self.encode_block(block_tokens)?;
        self.project_span(&cache, start, end)
    }

    /// E_c of a span addressed in store coordinates (doc index + token span).
    pub fn encode_span_in_doc(
        &self,
        store: &DocumentStore,
        doc_idx: usize,
        start: usize,
        end: usize,
    ) -> Result<Vec<f64>> {
        let doc = store.doc(doc_idx);
        let (bstart, bend) = doc
            .block_of(start)
            .filter(|&(_, bend)| start < end && end <= bend)
            .ok_or(Error::SpanOutOfRange {
                doc_id: doc.id.clone(),
                start,
                end,
                len: doc.tokens.len(),
            })?;
        let cache = self.encode_block(&doc.tokens[bstart..bend])?;
        self.project_span(&cache, start - bstart, end - bstart)
    }

    /// Target-side embedding of one token (row of the token matrix).
    pub fn token_target(&self, tok: TokenId) -> &[f64] {
        let d = self.config.index_dim;
        let all = self.trainable.view(TARGET_TOKEN_EMB);
        &all[tok as usize * d..(tok as usize + 1) * d]
    }

    pub fn token_target_f32(&self, tok: TokenId) -> Vec<f32> {
        self.token_target(tok).iter().map(|&v| v as f32).collect()
    }

    pub fn frozen_checksum(&self) -> u64 {
        self.frozen.checksum()
    }

    pub fn trainable_checksum(&self) -> u64 {
        self.trainable.checksum()
    }
}

/// Phrase embedder backed by the frozen tower, caching block states so many
/// spans of one block share a single forward pass.
pub struct StorePhraseEmbedder<'a> {
    pub model: &'a Model,
    cache: Mutex<HashMap<(usize, usize), TowerCache>>,
}

impl<'a> StorePhraseEmbedder<'a> {
    pub fn new(model: &'a Model) -> Self {
        StorePhraseEmbedder { model, cache: Mutex::new(HashMap::new()) }
    }
}

impl PhraseEmbedder for StorePhraseEmbedder<'_> {
    fn dim(&self) -> usize {
        self.model.config.index_dim
    }

    fn embed(&self, store: &DocumentStore, occ: &SourceOccurrence) -> Result<Vec<f32>> {
        let doc = store.doc(occ.doc_idx);
        let (bstart, bend) = doc
            .block_of(occ.start)
            .filter(|&(_, bend)| occ.start < occ.end && occ.end <= bend)
            .ok_or(Error::SpanOutOfRange {
                doc_id: doc.id.clone(),
                start: occ.start,
                end: occ.end,
                len: doc.tokens.len(),
            })?;
        let mut cache = self.cache.lock().expect("embedder cache lock");
        let key = (occ.doc_idx, bstart);
        if !cache.contains_key(&key) {
            let states = self.model.encode_block(&doc.tokens[bstart..bend])?;
            cache.insert(key, states);
        }
        let block = &cache[&key];
        let emb = self.model.project_span(block, occ.start - bstart, occ.end - bstart)?;
        Ok(emb.into_iter().map(|v| v as f32).collect())
    }
}
