//! Run manifests. Every command that writes an artifact leaves a
//! `<output>.manifest.json` beside its primary output recording the command
//! name, the fully resolved configuration, a checksum of every input file,
//! and the list of files written. Manifests carry no timestamps or host
//! details: identical runs must produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use phraselm_core::util::fnv1a64;
use phraselm_core::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    /// Input path → FNV-1a 64 checksum of the file bytes, zero-padded hex.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        Manifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.inputs
            .insert(path.display().to_string(), format!("{:016x}", fnv1a64(&bytes)));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write `<primary>.manifest.json`, adopting the resolved configuration.
    pub fn write(
        self,
        primary: &Path,
        config: &BTreeMap<String, String>,
    ) -> Result<PathBuf> {
        let path = manifest_path(primary);
        self.write_all(&[primary], config)?;
        Ok(path)
    }

    /// Write the same manifest beside each named output.
    pub fn write_all(
        mut self,
        primaries: &[&Path],
        config: &BTreeMap<String, String>,
    ) -> Result<()> {
        self.config = config.clone();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::Config(format!("manifest: {e}")))?;
        for primary in primaries {
            let path = manifest_path(primary);
            std::fs::write(&path, &json)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
