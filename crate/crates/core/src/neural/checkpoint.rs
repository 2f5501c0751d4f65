//! Model checkpoints: magic "PLMC", a version, the config, then every
//! parameter tensor in declaration order — trainable half first, frozen half
//! second — as little-endian f32 (or f64 when the header's precision flag is
//! set).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::util::{read_f32, read_f64, read_u32, read_u64, write_f32, write_f64, write_u32, write_u64};

pub const MAGIC: &[u8; 4] = b"PLMC";
pub const VERSION: u32 = 1;

pub fn save(model: &Model, path: &Path, double_precision: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w, double_precision)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_checkpoint(model: &Model, w: &mut impl Write, double_precision: bool) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[u8::from(double_precision)])?;
    let c = &model.config;
    for v in [
        c.vocab_size,
        c.d_model,
        c.index_dim,
        c.layers,
        c.heads,
        c.max_prefix_len,
        c.max_block_len,
    ] {
        write_u64(w, v as u64)?;
    }
    write_u64(w, c.seed)?;
    for half in [&model.trainable, &model.frozen] {
        for &v in &half.data {
            if double_precision {
                write_f64(w, v)?;
            } else {
                write_f32(w, v as f32)?;
            }
        }
    }
    w.flush()
}

pub fn load(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    read_checkpoint(&mut r).map_err(|e| match e {
        ReadError::Io(io) => Error::io(path.display().to_string(), io),
        ReadError::Format(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        ReadError::Model(err) => err,
    })
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
    Model(Error),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn read_checkpoint(r: &mut impl Read) -> std::result::Result<Model, ReadError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ReadError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(ReadError::Format(format!("unsupported version {version}")));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let double_precision = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(ReadError::Format(format!("bad precision flag {other}"))),
    };
    let mut dims = [0u64; 7];
    for d in dims.iter_mut() {
        *d = read_u64(r)?;
    }
    let seed = read_u64(r)?;
    let config = ModelConfig {
        vocab_size: dims[0] as usize,
        d_model: dims[1] as usize,
        index_dim: dims[2] as usize,
        layers: dims[3] as usize,
        heads: dims[4] as usize,
        max_prefix_len: dims[5] as usize,
        max_block_len: dims[6] as usize,
        seed,
    };
    let mut model = Model::new(config).map_err(ReadError::Model)?;
    for half in [&mut model.trainable, &mut model.frozen] {
        for v in half.data.iter_mut() {
            *v = if double_precision {
                read_f64(r)?
            } else {
                read_f32(r)? as f64
            };
        }
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(model),
        _ => Err(ReadError::Format("trailing bytes after parameters".into())),
    }
}
