//! The subcommand implementations. Each resolves its options (flag >
//! config file > default), loads and cross-checks its input artifacts,
//! delegates the actual work to the library, writes its outputs, and leaves
//! a manifest beside each of them.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use phraselm_core::corpus::{ingest_corpus, WordTokenizer};
use phraselm_core::evalsuite::{bench_decode, phi_sweep};
use phraselm_core::generator::{
    dp_likelihood, generate as decode, score_options as rank_options, DpConfig, Generation,
    GenerationConfig,
};
use phraselm_core::index::{merge_tables, table_from_resolved};
use phraselm_core::matching::resolve_candidates;
use phraselm_core::mc::{drop_single_word_answers, evaluate_mc, load_mc};
use phraselm_core::mining::{
    compute_idf, fallback_chunk, filter_candidates, group_lexical, load_spans, span_surface,
    FilterConfig, PhraseCandidate,
};
use phraselm_core::neural::{checkpoint, StorePhraseEmbedder};
use phraselm_core::oracle::{read_oracle, read_resolved, segment_greedy, write_oracle, write_resolved};
use phraselm_core::trainer::{train_with_sr, TrainConfig};
use phraselm_core::{Error, Result};

use crate::load::{load_store, load_table_at, resolve_model, save_table_at, sidecar_path, Engine};
use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::{
    idf_thresholds, BenchArgs, BuildIndexArgs, DpArgs, EvalGenArgs, EvalMcArgs, GenArgs,
    GenerateArgs, Globals, IngestArgs, LikelihoodArgs, MakeOracleArgs, MergeArgs, MineArgs,
    RuleArg, ScoreOptionsArgs, SrScoreArg, TrainArgs,
};

// ---------------------------------------------------------------------------
// Small shared pieces
// ---------------------------------------------------------------------------

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut body = String::new();
    for item in items {
        body.push_str(
            &serde_json::to_string(item).map_err(|e| Error::Config(format!("encode: {e}")))?,
        );
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .map_err(|e| Error::parse(path.display().to_string(), lineno + 1, e.to_string()))?;
        items.push(item);
    }
    Ok(items)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("encode: {e}")))?;
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn dp_config(s: &mut Settings, a: &DpArgs) -> Result<DpConfig> {
    let d = DpConfig::default();
    Ok(DpConfig {
        k: s.get("k", a.k, d.k)?,
        phi: s.get("phi", a.phi, d.phi)?,
        mode: s.get_enum("mode", a.mode, crate::ModeArg::FullVocab)?.into(),
        dup: s.get_enum("dup", a.dup, crate::DupArg::Sum)?.into(),
    })
}

fn gen_config(s: &mut Settings, a: &GenArgs, seed: u64) -> Result<GenerationConfig> {
    let d = GenerationConfig::new(64, seed);
    Ok(GenerationConfig {
        k: s.get("k", a.k, d.k)?,
        phi: s.get("phi", a.phi, d.phi)?,
        top_p: s.get("top-p", a.top_p, d.top_p)?,
        max_new_tokens: s.get("max-new-tokens", a.max_new_tokens, d.max_new_tokens)?,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Corpus and index construction
// ---------------------------------------------------------------------------

pub fn ingest(a: IngestArgs, s: &mut Settings) -> Result<()> {
    let mut manifest = Manifest::new("ingest");
    let block_words = s.get("block-words", a.block_words, 128)?;
    manifest.input(&a.corpus)?;

    let store = ingest_corpus(&a.corpus, &WordTokenizer, block_words)?;
    ensure_parent(&a.out)?;
    store.save(&a.out)?;

    manifest.output(&a.out);
    manifest.write(&a.out, s.resolved())?;
    println!(
        "{} documents, {} blocks, vocab {} -> {}",
        store.len(),
        store.block_count(),
        store.vocab.len(),
        a.out.display()
    );
    Ok(())
}

pub fn mine_phrases(a: MineArgs, s: &mut Settings) -> Result<()> {
    let mut manifest = Manifest::new("mine-phrases");
    let store = load_store(&a.store, &mut manifest)?;

    let defaults = FilterConfig::default();
    let config = FilterConfig {
        min_words: s.get("min-words", a.min_words, defaults.min_words)?,
        max_words: s.get("max-words", a.max_words, defaults.max_words)?,
        thresholds: idf_thresholds(s, a.idf_mode, a.drop_low_pct, a.drop_high_pct)?,
        ..defaults
    };

    let spans = match &a.spans {
        Some(path) => {
            manifest.input(path)?;
            load_spans(path, &store)?
        }
        None => {
            let mut all = Vec::new();
            for i in 0..store.len() {
                all.extend(fallback_chunk(store.doc(i), &store));
            }
            all
        }
    };

    // IDF over the distinct surfaces occurring among the spans.
    let mut surfaces = BTreeSet::new();
    for sp in &spans {
        if let Some(idx) = store.doc_index(&sp.doc_id) {
            let doc = store.doc(idx);
            if sp.start < sp.end && sp.end <= doc.tokens.len() {
                surfaces.insert(span_surface(&store, idx, sp.start, sp.end));
            }
        }
    }
    let idf = compute_idf(&store, surfaces.iter().map(|x| x.as_str()));

    let kept = filter_candidates(&store, &spans, &idf, &config);
    let groups = group_lexical(&kept);
    write_jsonl(&kept, &a.out)?;

    manifest.output(&a.out);
    manifest.write(&a.out, s.resolved())?;
    println!(
        "{} spans -> {} candidates ({} distinct surfaces) -> {}",
        spans.len(),
        kept.len(),
        groups.len(),
        a.out.display()
    );
    Ok(())
}

pub fn build_index(a: BuildIndexArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("build-index");
    let store = load_store(&a.store, &mut manifest)?;
    let model = resolve_model(&a.model, s, &store, g.seed, &mut manifest)?;
    manifest.input(&a.candidates)?;
    let candidates: Vec<PhraseCandidate> = read_jsonl(&a.candidates)?;
    let shortlist = s.get("bm25-shortlist", a.bm25_shortlist, 10)?;

    let groups = group_lexical(&candidates);
    let embedder = StorePhraseEmbedder::new(&model);
    let resolved = resolve_candidates(&store, &groups, &embedder, shortlist)?;
    ensure_parent(&a.out_resolved)?;
    write_resolved(&resolved, &a.out_resolved)?;

    let table = table_from_resolved(&store, &resolved, &model)?;
    ensure_parent(&a.out_table)?;
    save_table_at(&table, &a.out_table)?;

    manifest.output(&a.out_table);
    manifest.output(&sidecar_path(&a.out_table));
    manifest.output(&a.out_resolved);
    let mut outputs: Vec<&Path> = vec![&a.out_table, &a.out_resolved];
    if let Some(model_out) = &a.save_model {
        ensure_parent(model_out)?;
        checkpoint::save(&model, model_out, true)?;
        manifest.output(model_out);
        outputs.push(model_out);
    }
    manifest.write_all(&outputs, s.resolved())?;
    println!(
        "resolved {} documents; table: {} phrases + {} token entries (dim {}) -> {}",
        resolved.len(),
        table.phrase_count,
        table.token_count,
        table.dim,
        a.out_table.display()
    );
    Ok(())
}

pub fn index_merge(a: MergeArgs, s: &mut Settings) -> Result<()> {
    let mut manifest = Manifest::new("index-merge");
    let table_a = load_table_at(&a.table_a, &mut manifest)?;
    let table_b = load_table_at(&a.table_b, &mut manifest)?;
    let allow = s.get("allow-encoder-mismatch", a.allow_encoder_mismatch, false)?;

    let merged = merge_tables(&table_a, &table_b, allow)?;
    ensure_parent(&a.out)?;
    save_table_at(&merged, &a.out)?;

    manifest.output(&a.out);
    manifest.output(&sidecar_path(&a.out));
    manifest.write(&a.out, s.resolved())?;
    println!(
        "{} + {} phrases -> {} entries -> {}",
        table_a.phrase_count,
        table_b.phrase_count,
        merged.len(),
        a.out.display()
    );
    Ok(())
}

pub fn make_oracle(a: MakeOracleArgs, s: &mut Settings) -> Result<()> {
    let mut manifest = Manifest::new("make-oracle");
    let store = load_store(&a.store, &mut manifest)?;
    manifest.input(&a.resolved)?;
    let resolved = read_resolved(&a.resolved)?;
    let rule = s.get_enum("rule", a.rule, RuleArg::ScoreGreedy)?.into();

    let mut paths = Vec::with_capacity(resolved.len());
    for rd in &resolved {
        let idx = store
            .doc_index(&rd.doc_id)
            .ok_or_else(|| Error::UnknownDocId { id: rd.doc_id.clone() })?;
        let doc = store.doc(idx);
        paths.push(segment_greedy(&rd.doc_id, &doc.tokens, &rd.candidates, rule));
    }
    ensure_parent(&a.out)?;
    write_oracle(&paths, &a.out)?;

    let steps: usize = paths.iter().map(|p| p.steps.len()).sum();
    let phrase_steps: usize =
        paths.iter().map(|p| p.steps.iter().filter(|st| st.is_phrase()).count()).sum();
    manifest.output(&a.out);
    manifest.write(&a.out, s.resolved())?;
    println!(
        "{} paths, {} steps ({} phrase) -> {}",
        paths.len(),
        steps,
        phrase_steps,
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

pub fn train(a: TrainArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("train");
    let store = load_store(&a.store, &mut manifest)?;
    let mut table = load_table_at(&a.table, &mut manifest)?;
    let mut model = resolve_model(&a.model, s, &store, g.seed, &mut manifest)?;
    if table.provenance.encoder_checksum != model.frozen_checksum() {
        return Err(Error::Config(
            "table was encoded by a different frozen tower than this model; \
             rebuild the index or pass the matching checkpoint"
                .into(),
        ));
    }
    manifest.input(&a.oracle)?;
    manifest.input(&a.resolved)?;
    let oracles = read_oracle(&a.oracle)?;
    let resolved = read_resolved(&a.resolved)?;

    let d = TrainConfig::new(g.seed);
    let cfg = TrainConfig {
        alpha: s.get("alpha", a.alpha, d.alpha)?,
        batch_size: s.get("batch-size", a.batch_size, d.batch_size)?,
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        learning_rate: s.get("learning-rate", a.learning_rate, d.learning_rate)?,
        warmup_steps: s.get("warmup-steps", a.warmup_steps, d.warmup_steps)?,
        hard_negatives_per_example: s.get(
            "hard-negatives",
            a.hard_negatives,
            d.hard_negatives_per_example,
        )?,
        sr_rounds: s.get("sr-rounds", a.sr_rounds, d.sr_rounds)?,
        sr_k: s.get("sr-k", a.sr_k, d.sr_k)?,
        seed: g.seed,
        include_hard_in_batch: s.get(
            "include-hard-in-batch",
            a.include_hard_in_batch,
            d.include_hard_in_batch,
        )?,
        sr_score: s.get_enum("sr-score", a.sr_score, SrScoreArg::Model)?.into(),
        segment_rule: s.get_enum("segment-rule", a.segment_rule, RuleArg::ScoreGreedy)?.into(),
    };

    let outcome = train_with_sr(&store, &mut table, &mut model, oracles, &resolved, &cfg)?;

    let phases = outcome.epoch_metrics.iter().map(|m| m.phase).max().unwrap_or(0) + 1;
    for phase in 0..phases {
        for m in outcome.epoch_metrics.iter().filter(|m| m.phase == phase) {
            println!(
                "phase {} epoch {:>3}  L_p {:.4}  L_t {:.4}  combined {:.4}",
                m.phase, m.epoch, m.l_p, m.l_t, m.combined
            );
        }
        if let Some(sr) = outcome.sr_metrics.iter().find(|r| r.round == phase + 1) {
            println!(
                "sr round {}: replaced {}/{} steps ({:.2}% update rate)",
                sr.round,
                sr.replaced,
                sr.steps_seen,
                100.0 * sr.update_rate
            );
        }
    }

    ensure_parent(&a.out_model)?;
    checkpoint::save(&model, &a.out_model, true)?;
    ensure_parent(&a.out_table)?;
    save_table_at(&table, &a.out_table)?;
    manifest.output(&a.out_model);
    manifest.output(&a.out_table);
    manifest.output(&sidecar_path(&a.out_table));
    let mut outputs: Vec<&Path> = vec![&a.out_model, &a.out_table];

    if let Some(path) = &a.metrics {
        let mut lines = Vec::new();
        for m in &outcome.epoch_metrics {
            let mut v = serde_json::to_value(m).map_err(|e| Error::Config(e.to_string()))?;
            v.as_object_mut().expect("metrics object").insert("kind".into(), "epoch".into());
            lines.push(v);
        }
        for m in &outcome.sr_metrics {
            let mut v = serde_json::to_value(m).map_err(|e| Error::Config(e.to_string()))?;
            v.as_object_mut().expect("metrics object").insert("kind".into(), "sr".into());
            lines.push(v);
        }
        write_jsonl(&lines, path)?;
        manifest.output(path);
        outputs.push(path);
    }
    if let Some(path) = &a.out_oracle {
        ensure_parent(path)?;
        write_oracle(&outcome.oracles, path)?;
        manifest.output(path);
        outputs.push(path);
    }
    manifest.write_all(&outputs, s.resolved())?;

    let final_loss = outcome.epoch_metrics.last().map_or(f64::NAN, |m| m.combined);
    println!(
        "trained {} phases ({} epochs total), final combined loss {:.4} -> {}",
        phases,
        outcome.epoch_metrics.len(),
        final_loss,
        a.out_model.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Decoding and scoring
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenRecord {
    prompt: String,
    seed: u64,
    text: String,
    #[serde(flatten)]
    generation: Generation,
}

pub fn generate(a: GenerateArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("generate");
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;
    let prompt = engine.tokens(&a.prompt);
    let count = s.get("count", a.count, 1usize)?;
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let base = gen_config(s, &a.gen, g.seed)?;

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let cfg = GenerationConfig { seed: g.seed.wrapping_add(i as u64), ..base.clone() };
        let generation = decode(
            &engine.store,
            &engine.table,
            &engine.model,
            &prompt,
            &cfg,
            engine.searcher(),
            !g.deterministic,
        )?;
        let text = engine.store.vocab.detokenize(&generation.tokens);
        println!("{text}");
        records.push(GenRecord { prompt: a.prompt.clone(), seed: cfg.seed, text, generation });
    }

    if let Some(out) = &a.out {
        write_jsonl(&records, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LikelihoodReport {
    log_likelihood: f64,
    tokens: usize,
    per_token_avg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    distributions_built: Option<usize>,
}

pub fn likelihood(a: LikelihoodArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("likelihood");
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;
    let text = engine.tokens_required(&a.text, "--text")?;
    let cfg = dp_config(s, &a.dp)?;

    let prompt = a.prompt.as_deref().map(|p| engine.tokens(p)).unwrap_or_default();
    let report = if prompt.is_empty() {
        let r = dp_likelihood(
            &engine.store,
            &engine.table,
            &engine.model,
            &text,
            &cfg,
            engine.searcher(),
        )?;
        LikelihoodReport {
            log_likelihood: r.log_likelihood,
            tokens: r.tokens,
            per_token_avg: r.log_likelihood / r.tokens as f64,
            distributions_built: Some(r.distributions_built),
        }
    } else {
        let (_, scores) = rank_options(
            &engine.store,
            &engine.table,
            &engine.model,
            &prompt,
            std::slice::from_ref(&text),
            &cfg,
            engine.searcher(),
            false,
        )?;
        let score = &scores[0];
        LikelihoodReport {
            log_likelihood: score.log_likelihood,
            tokens: score.tokens,
            per_token_avg: score.per_token,
            distributions_built: None,
        }
    };

    println!(
        "log-likelihood {:.6} over {} tokens ({:.6}/token)",
        report.log_likelihood, report.tokens, report.per_token_avg
    );
    if let Some(out) = &a.out {
        write_json(&report, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptionReport {
    text: String,
    log_likelihood: f64,
    tokens: usize,
    per_token_avg: f64,
}

#[derive(Serialize)]
struct ScoreReport {
    chosen: usize,
    normalized: bool,
    options: Vec<OptionReport>,
}

pub fn score_options(a: ScoreOptionsArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("score-options");
    if a.options.len() < 2 {
        return Err(Error::Config("at least two --option values are required".into()));
    }
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;
    let prompt = engine.tokens_required(&a.question, "--question")?;
    let options = a
        .options
        .iter()
        .map(|o| engine.tokens_required(o, "--option"))
        .collect::<Result<Vec<_>>>()?;
    let normalize = s.get("normalize", a.normalize, false)?;
    let cfg = dp_config(s, &a.dp)?;

    let (chosen, scores) = rank_options(
        &engine.store,
        &engine.table,
        &engine.model,
        &prompt,
        &options,
        &cfg,
        engine.searcher(),
        normalize,
    )?;

    let report = ScoreReport {
        chosen,
        normalized: normalize,
        options: a
            .options
            .iter()
            .zip(&scores)
            .map(|(text, sc)| OptionReport {
                text: text.clone(),
                log_likelihood: sc.log_likelihood,
                tokens: sc.tokens,
                per_token_avg: sc.per_token,
            })
            .collect(),
    };
    for (i, o) in report.options.iter().enumerate() {
        let marker = if i == chosen { '*' } else { ' ' };
        println!(
            "{marker} [{i}] {:>12.4} total  {:>9.4}/token  {}",
            o.log_likelihood, o.per_token_avg, o.text
        );
    }
    if let Some(out) = &a.out {
        write_json(&report, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct McCliReport {
    dropped: usize,
    #[serde(flatten)]
    report: phraselm_core::mc::McReport,
}

pub fn eval_mc(a: EvalMcArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("eval-mc");
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;
    manifest.input(&a.mc)?;
    let instances = load_mc(&a.mc)?;

    let drop = s.get("drop-single-word", a.drop_single_word, false)?;
    let (instances, dropped) =
        if drop { drop_single_word_answers(instances) } else { (instances, 0) };
    let normalize = s.get("normalize", a.normalize, false)?;
    let cfg = dp_config(s, &a.dp)?;

    let report = evaluate_mc(
        &engine.store,
        &engine.table,
        &engine.model,
        &instances,
        &WordTokenizer,
        &cfg,
        engine.searcher(),
        normalize,
    )?;
    println!(
        "accuracy {:.4} ({}/{} correct, {} dropped)",
        report.accuracy, report.correct, report.total, dropped
    );
    if let Some(out) = &a.out {
        write_json(&McCliReport { dropped, report }, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}

pub fn eval_gen(a: EvalGenArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("eval-gen");
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;
    let prompt = engine.tokens(&a.prompt);
    let base = gen_config(s, &a.gen, g.seed)?;

    let phis_raw = s.get("phis", a.phis.clone(), "0,0.2,0.4,0.6,0.8".to_string())?;
    let phis = phis_raw
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--phis: cannot parse {:?}", p.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if phis.is_empty() {
        return Err(Error::Config("--phis must name at least one value".into()));
    }

    let points = phi_sweep(
        &engine.store,
        &engine.table,
        &engine.model,
        &prompt,
        &base,
        &phis,
        engine.searcher(),
        !g.deterministic,
    )?;

    println!(
        "{:>5}  {:>10}  {:>6}  {:>6}  {:>6}  {:>9}  {:>9}  {:>5}  {:>6}  {:>8}",
        "phi", "token_rate", "rep2", "rep3", "rep4", "diversity", "coherence", "steps", "tokens", "seconds"
    );
    for pt in &points {
        let seconds =
            pt.seconds.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string());
        let degenerate = if pt.eval.degenerate { "  (degenerate)" } else { "" };
        println!(
            "{:>5.2}  {:>10.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>9.4}  {:>9.4}  {:>5}  {:>6}  {:>8}{}",
            pt.phi,
            pt.eval.token_rate,
            pt.eval.rep_2,
            pt.eval.rep_3,
            pt.eval.rep_4,
            pt.eval.diversity,
            pt.eval.coherence,
            pt.eval.steps,
            pt.eval.tokens,
            seconds,
            degenerate
        );
    }
    if let Some(out) = &a.out {
        write_json(&points, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}

pub fn bench(a: BenchArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let mut manifest = Manifest::new("bench");
    let engine = Engine::load(&a.store, &a.table, &a.model, &a.search, s, g.seed, &mut manifest)?;

    let mut prompt_texts = a.prompts.clone();
    if let Some(path) = &a.prompts_file {
        manifest.input(path)?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        prompt_texts.extend(
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string),
        );
    }
    if prompt_texts.is_empty() {
        return Err(Error::Config(
            "no prompts: pass --prompt (repeatable) or --prompts-file".into(),
        ));
    }
    let prompts: Vec<_> = prompt_texts.iter().map(|p| engine.tokens(p)).collect();

    let warmup_runs = s.get("warmup-runs", a.warmup_runs, 1usize)?;
    let cfg = gen_config(s, &a.gen, g.seed)?;
    let report = bench_decode(
        &engine.store,
        &engine.table,
        &engine.model,
        &prompts,
        &cfg,
        engine.searcher(),
        warmup_runs,
    )?;

    for run in &report.runs {
        println!(
            "prompt {:>3}  {:.4}s  {:>4} steps  {:>4} tokens  token rate {:.3}",
            run.prompt_index, run.seconds, run.steps, run.tokens, run.token_rate
        );
    }
    println!(
        "{} runs (+{} warmup)  mean {:.4}s  p50 {:.4}s  p95 {:.4}s  mean token rate {:.3}  {:.1} tokens/s",
        report.runs.len(),
        report.warmup_runs,
        report.mean_seconds,
        report.p50_seconds,
        report.p95_seconds,
        report.mean_token_rate,
        report.tokens_per_sec
    );
    if let Some(out) = &a.out {
        write_json(&report, out)?;
        manifest.output(out);
        manifest.write(out, s.resolved())?;
    }
    Ok(())
}
