//! Multiple-choice evaluation: each instance is a question (used as the
//! prompt) and a list of answer options; the model picks the option whose
//! continuation likelihood is highest. Instances score independently and run
//! in parallel; results collect in instance order, so reports are stable.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, DocumentStore, Tokenizer};
use crate::error::{Error, Result};
use crate::generator::{score_options, DpConfig};
use crate::index::{PhraseTable, Searcher};
use crate::neural::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McInstance {
    pub question: String,
    pub options: Vec<String>,
    pub answer: usize,
}

impl McInstance {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.options.len() < 2 {
            return Err(format!("{} options; at least 2 required", self.options.len()));
        }
        if let Some(i) = self.options.iter().position(|o| o.trim().is_empty()) {
            return Err(format!("option {i} is empty"));
        }
        if self.answer >= self.options.len() {
            return Err(format!(
                "answer index {} out of range for {} options",
                self.answer,
                self.options.len()
            ));
        }
        Ok(())
    }
}

/// One instance per line, as JSON. Malformed lines report their 1-based line
/// number.
pub fn load_mc(path: &Path) -> Result<Vec<McInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: McInstance = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        inst.validate()
            .map_err(|msg| Error::parse(path.display().to_string(), i + 1, msg))?;
        out.push(inst);
    }
    Ok(out)
}

/// Drop instances where *every* option is a single word — those never
/// exercise phrase retrieval. Returns the kept instances and the drop count.
pub fn drop_single_word_answers(instances: Vec<McInstance>) -> (Vec<McInstance>, usize) {
    let before = instances.len();
    let kept: Vec<McInstance> = instances
        .into_iter()
        .filter(|inst| inst.options.iter().any(|o| o.split_whitespace().count() >= 2))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McOutcome {
    pub chosen: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub outcomes: Vec<McOutcome>,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_mc(
    store: &DocumentStore,
    table: &PhraseTable,
    model: &Model,
    instances: &[McInstance],
    tokenizer: &dyn Tokenizer,
    cfg: &DpConfig,
    searcher: Searcher<'_>,
    normalize: bool,
) -> Result<McReport> {
    if instances.is_empty() {
        return Err(Error::Invalid("no multiple-choice instances to evaluate".into()));
    }
    let outcomes: Result<Vec<McOutcome>> = instances
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| {
            let prompt = tokenize(&inst.question, &store.vocab, tokenizer);
            let options: Vec<Vec<crate::corpus::TokenId>> = inst
                .options
                .iter()
                .map(|o| tokenize(o, &store.vocab, tokenizer))
                .collect();
            if let Some(i) = options.iter().position(|o| o.is_empty()) {
                return Err(Error::Invalid(format!(
                    "instance {idx}: option {i} tokenizes to nothing"
                )));
            }
            let (chosen, _) =
                score_options(store, table, model, &prompt, &options, cfg, searcher, normalize)?;
            Ok(McOutcome { chosen, correct: chosen == inst.answer })
        })
        .collect();
    let outcomes = outcomes?;
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(McReport {
        total: outcomes.len(),
        correct,
        accuracy: correct as f64 / outcomes.len() as f64,
        outcomes,
    })
}
