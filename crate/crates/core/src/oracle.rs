//! Training oracles: each training text is segmented into a generation path
//! of phrase and token steps. Phrase steps carry a source copy — the (doc_id,
//! start, end) of an occurrence in a supporting document — and the match
//! score that picked it. Paths and the resolved candidates they were built
//! from are persisted as line-delimited records.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// A copied span in a supporting document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

/// One step of a generation path. Steps tile the training text: each starts
/// where the previous one ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleStep {
    Phrase { position: usize, length: usize, source: SourceRef, score: f64 },
    Token { position: usize, length: usize, token_id: TokenId },
}

impl OracleStep {
    pub fn position(&self) -> usize {
        match self {
            OracleStep::Phrase { position, .. } | OracleStep::Token { position, .. } => *position,
        }
    }

    pub fn length(&self) -> usize {
        match self {
            OracleStep::Phrase { length, .. } | OracleStep::Token { length, .. } => *length,
        }
    }

    pub fn end(&self) -> usize {
        self.position() + self.length()
    }

    pub fn is_phrase(&self) -> bool {
        matches!(self, OracleStep::Phrase { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePath {
    pub doc_id: String,
    pub steps: Vec<OracleStep>,
}

impl OraclePath {
    /// Number of tokens the path covers.
    pub fn text_len(&self) -> usize {
        self.steps.last().map(|s| s.end()).unwrap_or(0)
    }

    /// Structural invariants: steps tile contiguously from 0, token steps
    /// have length 1, phrase steps have length ≥ 2, a finite score, and a
    /// source span of the same length.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut expected = 0usize;
        for (i, step) in self.steps.iter().enumerate() {
            if step.position() != expected {
                return Err(format!(
                    "step {i} starts at {} but the previous step ended at {expected}",
                    step.position()
                ));
            }
            match step {
                OracleStep::Token { length, .. } if *length != 1 => {
                    return Err(format!("step {i}: token step of length {length}"));
                }
                OracleStep::Phrase { length, source, score, .. } => {
                    if *length < 2 {
                        return Err(format!("step {i}: phrase step of length {length}"));
                    }
                    if source.end - source.start != *length {
                        return Err(format!(
                            "step {i}: source span {}..{} does not cover {length} tokens",
                            source.start, source.end
                        ));
                    }
                    if !score.is_finite() {
                        return Err(format!("step {i}: non-finite score"));
                    }
                }
                _ => {}
            }
            expected += step.length();
        }
        Ok(())
    }
}

/// A phrase candidate of the training text with its chosen source and match
/// score — the unit segment_greedy chooses among.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCandidate {
    pub start: usize,
    pub end: usize,
    pub source: SourceRef,
    pub score: f64,
}

/// All resolved candidates of one training document (persisted so later
/// re-tiling can reuse them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDoc {
    pub doc_id: String,
    pub candidates: Vec<ResolvedCandidate>,
}

/// How the greedy scan ranks candidates that start at the same position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentRule {
    /// Highest match score; ties to the longer span, then the smaller
    /// (doc_id, start) source.
    #[default]
    ScoreGreedy,
    /// Longest span; ties to the higher score, then the smaller source.
    LengthGreedy,
}

fn pick<'a>(
    best: &'a ResolvedCandidate,
    challenger: &'a ResolvedCandidate,
    rule: SegmentRule,
) -> &'a ResolvedCandidate {
    let primary = match rule {
        SegmentRule::ScoreGreedy => challenger
            .score
            .total_cmp(&best.score)
            .then_with(|| (challenger.end - challenger.start).cmp(&(best.end - best.start))),
        SegmentRule::LengthGreedy => (challenger.end - challenger.start)
            .cmp(&(best.end - best.start))
            .then_with(|| challenger.score.total_cmp(&best.score)),
    };
    // Final tie: the lexicographically smaller source wins.
    let ord = primary.then_with(|| {
        (&best.source.doc_id, best.source.start, best.source.end).cmp(&(
            &challenger.source.doc_id,
            challenger.source.start,
            challenger.source.end,
        ))
    });
    if ord == Ordering::Greater {
        challenger
    } else {
        best
    }
}

/// Greedy left-to-right segmentation: at each position take the best resolved
/// candidate starting there, else a token step.
pub fn segment_greedy(
    doc_id: &str,
    tokens: &[TokenId],
    resolved: &[ResolvedCandidate],
    rule: SegmentRule,
) -> OraclePath {
    OraclePath { doc_id: doc_id.to_string(), steps: segment_greedy_from(tokens, resolved, rule, 0) }
}

/// The same scan started mid-text (used when re-tiling a path suffix).
/// Candidates that fall outside the text or are shorter than two tokens are
/// ignored.
pub fn segment_greedy_from(
    tokens: &[TokenId],
    resolved: &[ResolvedCandidate],
    rule: SegmentRule,
    from: usize,
) -> Vec<OracleStep> {
    let n = tokens.len();
    let mut by_start: Vec<Vec<&ResolvedCandidate>> = vec![Vec::new(); n];
    for cand in resolved {
        let well_formed = cand.start < cand.end && cand.end <= n && cand.end - cand.start >= 2;
        debug_assert!(well_formed, "malformed resolved candidate {}..{}", cand.start, cand.end);
        if well_formed {
            by_start[cand.start].push(cand);
        }
    }
    let mut steps = Vec::new();
    let mut pos = from;
    while pos < n {
        let best = by_start[pos].iter().copied().reduce(|b, c| pick(b, c, rule));
        match best {
            Some(c) => {
                steps.push(OracleStep::Phrase {
                    position: pos,
                    length: c.end - c.start,
                    source: c.source.clone(),
                    score: c.score,
                });
                pos = c.end;
            }
            None => {
                steps.push(OracleStep::Token { position: pos, length: 1, token_id: tokens[pos] });
                pos += 1;
            }
        }
    }
    steps
}

pub fn write_oracle(paths: &[OraclePath], path: &Path) -> Result<()> {
    let ctx = |e| Error::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(ctx)?);
    for p in paths {
        let line = serde_json::to_string(p)
            .map_err(|e| Error::Invalid(format!("oracle serialization: {e}")))?;
        writeln!(w, "{line}").map_err(ctx)?;
    }
    w.flush().map_err(ctx)?;
    Ok(())
}

pub fn read_oracle(path: &Path) -> Result<Vec<OraclePath>> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?);
    let mut paths = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: OraclePath = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), lineno + 1, e.to_string()))?;
        p.validate()
            .map_err(|msg| Error::parse(path.display().to_string(), lineno + 1, msg))?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn write_resolved(docs: &[ResolvedDoc], path: &Path) -> Result<()> {
    let ctx = |e| Error::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(ctx)?);
    for d in docs {
        let line = serde_json::to_string(d)
            .map_err(|e| Error::Invalid(format!("candidate serialization: {e}")))?;
        writeln!(w, "{line}").map_err(ctx)?;
    }
    w.flush().map_err(ctx)?;
    Ok(())
}

pub fn read_resolved(path: &Path) -> Result<Vec<ResolvedDoc>> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?);
    let mut docs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: ResolvedDoc = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), lineno + 1, e.to_string()))?;
        for c in &d.candidates {
            if c.start >= c.end || !c.score.is_finite() {
                return Err(Error::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("malformed candidate {}..{}", c.start, c.end),
                ));
            }
        }
        docs.push(d);
    }
    Ok(docs)
}
