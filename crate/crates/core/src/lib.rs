//! Text generation by retrieving context-aware phrases from supporting documents.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] ingests line-delimited documents, splits them into blocks of
//!    up to 128 words, and maintains the token vocabulary.
//! 2. [`mining`] extracts phrase candidates from constituent spans (or a
//!    fallback chunker) and filters them by label, length, and IDF band.
//! 3. [`matching`] resolves each training-text phrase occurrence to its best
//!    source occurrence via BM25 shortlisting and embedding similarity.
//! 4. [`oracle`] segments each training text into a generation path of phrase
//!    and token steps.
//! 5. [`neural`] is the dual encoder: a trainable causal prefix encoder, a
//!    frozen bidirectional phrase encoder, and token output embeddings, all
//!    with exact analytic gradients.
//! 6. [`index`] is the phrase table plus exact and IVF maximum inner product
//!    search, persistence, and table merging.
//! 7. [`trainer`] runs InfoNCE + token-LM training with in-batch and hard
//!    negatives, and the iterative self-reinforcement loop.
//! 8. [`generator`] decodes with mixed phrase/token steps under nucleus
//!    sampling, and scores text likelihood by dynamic programming over all
//!    segmentation paths.
//! 9. [`evalsuite`] computes rep-n / diversity / coherence and decode-latency
//!    benchmarks; [`mc`] loads multiple-choice tasks for option scoring.

pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod generator;
pub mod index;
pub mod matching;
pub mod mc;
pub mod mining;
pub mod neural;
pub mod oracle;
pub mod synthetic;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
