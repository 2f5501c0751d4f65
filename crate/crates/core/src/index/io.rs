//! Table persistence: a fixed-layout binary file plus a line-delimited
//! metadata sidecar. The binary holds the numeric truth (counts, spans,
//! embedding bits); the sidecar holds strings (surfaces, doc ids) in the same
//! entry order. Load cross-checks the two.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EntryKind, EntryMeta, PhraseTable, Provenance};
use crate::error::{Error, Result};
use crate::util::{read_f32, read_u32, read_u64, write_f32, write_u32, write_u64};

pub const MAGIC: &[u8; 4] = b"PHRT";
pub const VERSION: u32 = 1;

const KIND_PHRASE: u8 = 0;
const KIND_TOKEN: u8 = 1;

#[derive(Serialize, Deserialize)]
struct SidecarRecord {
    surface: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_id: Option<u32>,
}

pub fn save_table(table: &PhraseTable, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
    let ctx = |e| Error::io(bin_path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(bin_path).map_err(ctx)?);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, table.dim as u32)?;
        write_u64(&mut w, table.phrase_count as u64)?;
        write_u64(&mut w, table.token_count as u64)?;
        write_u64(&mut w, table.provenance.corpus_id)?;
        write_u64(&mut w, table.provenance.encoder_seed)?;
        write_u64(&mut w, table.provenance.encoder_checksum)?;
        for meta in &table.metas {
            match &meta.kind {
                EntryKind::Phrase { start, end, .. } => {
                    w.write_all(&[KIND_PHRASE])?;
                    write_u32(&mut w, 0)?;
                    write_u64(&mut w, *start as u64)?;
                    write_u64(&mut w, *end as u64)?;
                }
                EntryKind::Token { token_id } => {
                    w.write_all(&[KIND_TOKEN])?;
                    write_u32(&mut w, *token_id)?;
                    write_u64(&mut w, 0)?;
                    write_u64(&mut w, 0)?;
                }
            }
        }
        for &v in &table.embeddings {
            write_f32(&mut w, v)?;
        }
        w.flush()
    })()
    .map_err(ctx)?;

    let mut sw = BufWriter::new(
        File::create(sidecar_path).map_err(|e| Error::io(sidecar_path.display().to_string(), e))?,
    );
    for meta in &table.metas {
        let rec = match &meta.kind {
            EntryKind::Phrase { doc_id, start, end } => SidecarRecord {
                surface: meta.surface.clone(),
                doc_id: Some(doc_id.clone()),
                start: Some(*start),
                end: Some(*end),
                token_id: None,
            },
            EntryKind::Token { token_id } => SidecarRecord {
                surface: meta.surface.clone(),
                doc_id: None,
                start: None,
                end: None,
                token_id: Some(*token_id),
            },
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Table(format!("sidecar serialization: {e}")))?;
        writeln!(sw, "{line}").map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
    }
    sw.flush()
        .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
    Ok(())
}

pub fn load_table(bin_path: &Path, sidecar_path: &Path) -> Result<PhraseTable> {
    let bad = |msg: String| Error::Table(format!("{}: {msg}", bin_path.display()));
    let mut r = BufReader::new(
        File::open(bin_path).map_err(|e| Error::io(bin_path.display().to_string(), e))?,
    );

    let mut magic = [0u8; 4];
    let header = (|| -> std::io::Result<(u32, u32, u64, u64, Provenance)> {
        r.read_exact(&mut magic)?;
        let version = read_u32(&mut r)?;
        let dim = read_u32(&mut r)?;
        let phrase_count = read_u64(&mut r)?;
        let token_count = read_u64(&mut r)?;
        let provenance = Provenance {
            corpus_id: read_u64(&mut r)?,
            encoder_seed: read_u64(&mut r)?,
            encoder_checksum: read_u64(&mut r)?,
        };
        Ok((version, dim, phrase_count, token_count, provenance))
    })()
    .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let (version, dim, phrase_count, token_count, provenance) = header;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dim = dim as usize;
    let n = (phrase_count + token_count) as usize;

    struct BinRecord {
        kind: u8,
        token_id: u32,
        start: u64,
        end: u64,
    }
    let mut records = Vec::with_capacity(n);
    let mut embeddings = vec![0.0f32; n * dim];
    (|| -> std::io::Result<()> {
        for _ in 0..n {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            records.push(BinRecord {
                kind: kind[0],
                token_id: read_u32(&mut r)?,
                start: read_u64(&mut r)?,
                end: read_u64(&mut r)?,
            });
        }
        for v in embeddings.iter_mut() {
            *v = read_f32(&mut r)?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(|e| Error::io(bin_path.display().to_string(), e))? != 0 {
        return Err(bad("trailing bytes after embeddings".into()));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{}: embedding matrix", bin_path.display())));
    }

    // Sidecar: strings in the same order.
    let sr = BufReader::new(
        File::open(sidecar_path).map_err(|e| Error::io(sidecar_path.display().to_string(), e))?,
    );
    let mut metas = Vec::with_capacity(n);
    for (lineno, line) in sr.lines().enumerate() {
        let line = line.map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarRecord = serde_json::from_str(&line).map_err(|e| {
            Error::parse(sidecar_path.display().to_string(), lineno + 1, e.to_string())
        })?;
        let i = metas.len();
        if i >= n {
            return Err(Error::Table(format!(
                "{}: more sidecar records than the {n} entries in the binary",
                sidecar_path.display()
            )));
        }
        let bin = &records[i];
        let meta = match bin.kind {
            KIND_PHRASE => {
                let (Some(doc_id), Some(start), Some(end)) = (rec.doc_id, rec.start, rec.end) else {
                    return Err(Error::Table(format!(
                        "{}: entry {i} is a phrase in the binary but lacks a source in the sidecar",
                        sidecar_path.display()
                    )));
                };
                if start as u64 != bin.start || end as u64 != bin.end {
                    return Err(Error::Table(format!(
                        "{}: entry {i} span {}..{} disagrees with binary {}..{}",
                        sidecar_path.display(),
                        start,
                        end,
                        bin.start,
                        bin.end
                    )));
                }
                EntryMeta { kind: EntryKind::Phrase { doc_id, start, end }, surface: rec.surface }
            }
            KIND_TOKEN => {
                let Some(token_id) = rec.token_id else {
                    return Err(Error::Table(format!(
                        "{}: entry {i} is a token in the binary but has no token_id in the sidecar",
                        sidecar_path.display()
                    )));
                };
                if token_id != bin.token_id {
                    return Err(Error::Table(format!(
                        "{}: entry {i} token id {token_id} disagrees with binary {}",
                        sidecar_path.display(),
                        bin.token_id
                    )));
                }
                EntryMeta { kind: EntryKind::Token { token_id }, surface: rec.surface }
            }
            other => return Err(bad(format!("entry {i}: unknown kind byte {other}"))),
        };
        metas.push(meta);
    }
    if metas.len() != n {
        return Err(Error::Table(format!(
            "{}: {} sidecar records for {n} binary entries",
            sidecar_path.display(),
            metas.len()
        )));
    }
    let token_entries = metas.iter().filter(|m| m.is_token()).count();
    if token_entries != token_count as usize {
        return Err(bad(format!(
            "header claims {token_count} token entries, records contain {token_entries}"
        )));
    }

    Ok(PhraseTable {
        dim,
        phrase_count: phrase_count as usize,
        token_count: token_count as usize,
        metas,
        embeddings,
        provenance,
    })
}
