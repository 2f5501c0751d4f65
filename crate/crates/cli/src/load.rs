//! Artifact loading shared by the subcommands: document stores, phrase
//! tables with their sidecars, and encoders (fresh or from checkpoints),
//! with the cross-checks that keep a mismatched trio from silently
//! producing garbage scores.

use std::path::{Path, PathBuf};

use phraselm_core::corpus::{tokenize, DocumentStore, TokenId, WordTokenizer};
use phraselm_core::index::ivf::{build_ivf, IvfIndex};
use phraselm_core::index::{self, validate_against_store, PhraseTable, Searcher};
use phraselm_core::neural::{checkpoint, Model, ModelConfig};
use phraselm_core::{Error, Result};

use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::{ModelArgs, SearchArgs};

/// A phrase table's JSON sidecar lives beside it: `<table>.json`.
pub fn sidecar_path(table: &Path) -> PathBuf {
    let mut name = table.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    table.with_file_name(name)
}

pub fn load_store(path: &Path, manifest: &mut Manifest) -> Result<DocumentStore> {
    manifest.input(path)?;
    DocumentStore::load(path)
}

pub fn load_table_at(path: &Path, manifest: &mut Manifest) -> Result<PhraseTable> {
    let sidecar = sidecar_path(path);
    manifest.input(path)?;
    manifest.input(&sidecar)?;
    index::io::load_table(path, &sidecar)
}

pub fn save_table_at(table: &PhraseTable, path: &Path) -> Result<()> {
    index::io::save_table(table, path, &sidecar_path(path))
}

/// Load a checkpoint, or initialize fresh reference-shaped weights with any
/// per-dimension overrides applied. Fresh weights are seeded by
/// `--model-seed` (default: the master seed).
pub fn resolve_model(
    args: &ModelArgs,
    s: &mut Settings,
    store: &DocumentStore,
    master_seed: u64,
    manifest: &mut Manifest,
) -> Result<Model> {
    let vocab = store.vocab.len();
    let ckpt = args.checkpoint.clone().or_else(|| s.file_path("checkpoint"));
    if let Some(path) = ckpt {
        s.note("checkpoint", path.display());
        manifest.input(&path)?;
        let model = checkpoint::load(&path)?;
        if model.config.vocab_size != vocab {
            return Err(Error::Config(format!(
                "checkpoint vocab size {} does not match store vocab size {vocab}",
                model.config.vocab_size
            )));
        }
        return Ok(model);
    }

    let seed = s.get("model-seed", args.model_seed, master_seed)?;
    let reference = ModelConfig::reference(vocab, seed);
    let config = ModelConfig {
        vocab_size: vocab,
        d_model: s.get("d-model", args.d_model, reference.d_model)?,
        index_dim: s.get("index-dim", args.index_dim, reference.index_dim)?,
        layers: s.get("layers", args.layers, reference.layers)?,
        heads: s.get("heads", args.heads, reference.heads)?,
        max_prefix_len: s.get("max-prefix-len", args.max_prefix_len, reference.max_prefix_len)?,
        max_block_len: s.get("max-block-len", args.max_block_len, reference.max_block_len)?,
        seed,
    };
    Model::new(config)
}

/// Everything an inference command needs, loaded and cross-checked: the
/// table's surfaces must exist in the store, its token rows must cover the
/// vocabulary, and its phrases must have been encoded by this model's frozen
/// tower.
pub struct Engine {
    pub store: DocumentStore,
    pub table: PhraseTable,
    pub model: Model,
    ivf: Option<IvfIndex>,
    nprobe: usize,
}

impl Engine {
    pub fn load(
        store_path: &Path,
        table_path: &Path,
        margs: &ModelArgs,
        sargs: &SearchArgs,
        s: &mut Settings,
        master_seed: u64,
        manifest: &mut Manifest,
    ) -> Result<Engine> {
        let store = load_store(store_path, manifest)?;
        let table = load_table_at(table_path, manifest)?;
        let model = resolve_model(margs, s, &store, master_seed, manifest)?;

        validate_against_store(&table, &store)?;
        if table.token_count != store.vocab.len() {
            return Err(Error::Config(format!(
                "table holds {} token entries but the store vocabulary has {}",
                table.token_count,
                store.vocab.len()
            )));
        }
        if table.provenance.encoder_checksum != model.frozen_checksum() {
            return Err(Error::Config(
                "table was encoded by a different frozen tower than this model; \
                 rebuild the index or pass the matching checkpoint"
                    .into(),
            ));
        }

        let nlist = s.get("ivf-nlist", sargs.ivf_nlist, 0)?;
        let (ivf, nprobe) = if nlist == 0 {
            (None, 0)
        } else {
            let nprobe = s.get("ivf-nprobe", sargs.ivf_nprobe, nlist)?;
            (Some(build_ivf(&table, nlist, master_seed)?), nprobe)
        };
        Ok(Engine { store, table, model, ivf, nprobe })
    }

    pub fn searcher(&self) -> Searcher<'_> {
        match &self.ivf {
            Some(index) => Searcher::Ivf { index, nprobe: self.nprobe },
            None => Searcher::Exact,
        }
    }

    /// Tokenize prompt text against the store vocabulary (unknown words map
    /// to UNK). Empty text is allowed — the model scores it as BOS alone.
    pub fn tokens(&self, text: &str) -> Vec<TokenId> {
        tokenize(text, &self.store.vocab, &WordTokenizer)
    }

    /// Tokenize text that must be non-empty to make sense (scoring targets).
    pub fn tokens_required(&self, text: &str, what: &str) -> Result<Vec<TokenId>> {
        let tokens = self.tokens(text);
        if tokens.is_empty() {
            return Err(Error::Config(format!("{what} tokenizes to nothing: {text:?}")));
        }
        Ok(tokens)
    }
}
