//! Binary interface behavior: exit codes, option precedence, manifests, and
//! the artifact cross-checks — everything a caller observes besides the math.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use phraselm_core::util::fnv1a64;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_phraselm")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(exe()).current_dir(dir).args(args).output().expect("spawn phraselm")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 60-document corpus with a mined index and saved encoder, built once and
/// shared by the tests that need real artifacts.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/corpus.jsonl");
        let corpus: String = std::fs::read_to_string(bundled)
            .unwrap()
            .lines()
            .take(60)
            .flat_map(|l| [l, "\n"])
            .collect();
        std::fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();

        for args in [
            vec!["ingest", "--corpus", "corpus.jsonl", "--out", "store.json"],
            // No span file: every in-block window is a candidate.
            vec![
                "mine-phrases",
                "--store",
                "store.json",
                "--idf-mode",
                "percentile",
                "--out",
                "cand.jsonl",
            ],
            vec![
                "build-index",
                "--store",
                "store.json",
                "--candidates",
                "cand.jsonl",
                "--out-table",
                "table.phrt",
                "--out-resolved",
                "resolved.jsonl",
                "--save-model",
                "model.plmc",
                "--d-model",
                "32",
                "--index-dim",
                "16",
                "--layers",
                "1",
                "--heads",
                "2",
            ],
        ] {
            let out = run_in(dir.path(), &args);
            assert!(out.status.success(), "fixture step {args:?} failed: {}", stderr_of(&out));
        }
        Fixture { dir }
    })
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for sub in ["ingest", "mine-phrases", "build-index", "train", "generate", "eval-mc"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = run_in(tmp.path(), &["ingest", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(2), "unknown flag: {}", stderr_of(&unknown));
    let missing = run_in(tmp.path(), &["ingest"]);
    assert_eq!(missing.status.code(), Some(2), "missing required args");
    let bad_enum = run_in(
        tmp.path(),
        &["mine-phrases", "--store", "x", "--out", "y", "--idf-mode", "bogus"],
    );
    assert_eq!(bad_enum.status.code(), Some(2), "invalid enum value");
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["ingest", "--corpus", "missing.jsonl", "--out", "store.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).starts_with("error:"),
        "runtime failures report on stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn score_options_requires_at_least_two() {
    let f = fixture();
    let out = run_in(
        f.dir.path(),
        &[
            "score-options",
            "--store",
            "store.json",
            "--table",
            "table.phrt",
            "--checkpoint",
            "model.plmc",
            "--question",
            "w1 w2",
            "--option",
            "only one",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("two"), "got: {}", stderr_of(&out));
}

// ---------------------------------------------------------------------------
// Option precedence and manifests
// ---------------------------------------------------------------------------

#[test]
fn flags_beat_config_file_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/corpus.jsonl");
    std::fs::copy(&bundled, tmp.path().join("corpus.jsonl")).unwrap();
    std::fs::write(tmp.path().join("run.conf"), "block-words = 64\n").unwrap();

    let resolved_block_words = |args: &[&str]| -> String {
        let out = run_in(tmp.path(), args);
        assert!(out.status.success(), "{}", stderr_of(&out));
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("store.json.manifest.json")).unwrap(),
        )
        .unwrap();
        manifest["config"]["block-words"].as_str().unwrap().to_string()
    };

    // Config file fills in when no flag is given...
    let from_file = resolved_block_words(&[
        "ingest",
        "--config",
        "run.conf",
        "--corpus",
        "corpus.jsonl",
        "--out",
        "store.json",
    ]);
    assert_eq!(from_file, "64");

    // ...and an explicit flag wins over the file.
    let from_flag = resolved_block_words(&[
        "ingest",
        "--config",
        "run.conf",
        "--block-words",
        "32",
        "--corpus",
        "corpus.jsonl",
        "--out",
        "store.json",
    ]);
    assert_eq!(from_flag, "32");
}

#[test]
fn manifests_record_command_inputs_and_outputs() {
    let f = fixture();
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(f.path("store.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["outputs"][0], "store.json");

    // The recorded input checksum is the fnv-1a/64 of the corpus bytes.
    let bytes = std::fs::read(f.path("corpus.jsonl")).unwrap();
    let want = format!("{:016x}", fnv1a64(&bytes));
    assert_eq!(manifest["inputs"]["corpus.jsonl"], serde_json::Value::String(want));

    // No timestamps or host fields: the manifest is exactly these four keys.
    let keys: Vec<&String> = manifest.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["command", "config", "inputs", "outputs"]);

    // Multi-output commands leave the same manifest beside each artifact.
    let at_table = std::fs::read(f.path("table.phrt.manifest.json")).unwrap();
    let at_resolved = std::fs::read(f.path("resolved.jsonl.manifest.json")).unwrap();
    let at_model = std::fs::read(f.path("model.plmc.manifest.json")).unwrap();
    assert_eq!(at_table, at_resolved);
    assert_eq!(at_table, at_model);
}

// ---------------------------------------------------------------------------
// Artifact cross-checks
// ---------------------------------------------------------------------------

#[test]
fn mismatched_encoder_is_rejected() {
    let f = fixture();
    // A fresh model from a different seed has a different frozen tower than
    // the one the table's rows were encoded with.
    let out = run_in(
        f.dir.path(),
        &[
            "likelihood",
            "--store",
            "store.json",
            "--table",
            "table.phrt",
            "--model-seed",
            "99",
            "--d-model",
            "32",
            "--index-dim",
            "16",
            "--layers",
            "1",
            "--heads",
            "2",
            "--text",
            "w1 w2 w3",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("frozen tower"),
        "expected the encoder cross-check to fire: {}",
        stderr_of(&out)
    );
}

#[test]
fn generate_writes_records_and_prints_text() {
    let f = fixture();
    let out = run_in(
        f.dir.path(),
        &[
            "generate",
            "--store",
            "store.json",
            "--table",
            "table.phrt",
            "--checkpoint",
            "model.plmc",
            "--prompt",
            "",
            "--count",
            "2",
            "--max-new-tokens",
            "8",
            "--out",
            "gen.jsonl",
            "--deterministic",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(!String::from_utf8_lossy(&out.stdout).trim().is_empty(), "no text on stdout");

    let body = std::fs::read_to_string(f.path("gen.jsonl")).unwrap();
    let records: Vec<serde_json::Value> =
        body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["prompt"], "");
        assert_eq!(r["seed"].as_u64().unwrap(), 42 + i as u64);
        assert!(r["text"].is_string());
        assert!(r["tokens"].as_array().map(|a| !a.is_empty()).unwrap_or(false));
        assert!(r["steps"].is_array());
        // Deterministic mode turns wall-clock timing off.
        assert!(r["wall_seconds"].is_null(), "timing leaked into a deterministic run");
    }
    assert!(f.path("gen.jsonl.manifest.json").exists());
}
