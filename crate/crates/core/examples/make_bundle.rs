//! Regenerates the bundled synthetic corpus under data/synthetic/. The output
//! is deterministic; a checked-in copy that matches means nobody edited the
//! data by hand.
//!
//!     cargo run -p phraselm-core --example make_bundle -- data/synthetic

use std::path::PathBuf;

use phraselm_core::synthetic::{self, SyntheticConfig};

pub const BUNDLE_SEED: u64 = 42;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".to_string());
    let dir = PathBuf::from(dir);
    std::fs::create_dir_all(&dir).expect("create output directory");
    let corpus = synthetic::build(&SyntheticConfig::new(BUNDLE_SEED)).expect("build corpus");
    synthetic::write_corpus_jsonl(&dir.join("corpus.jsonl"), &corpus.records).expect("corpus");
    synthetic::write_spans_jsonl(&dir.join("spans.jsonl"), &corpus.records, &corpus.spans_by_doc)
        .expect("spans");
    synthetic::write_mc_jsonl(&dir.join("mc.jsonl"), &corpus.mc).expect("mc");
    println!(
        "wrote {} documents, {} multiple-choice instances to {}",
        corpus.records.len(),
        corpus.mc.len(),
        dir.display()
    );
}
