//! Option resolution: command-line flag beats config file beats built-in
//! default, and every winner is recorded so the manifest can state the full
//! configuration a run actually used.
//!
//! Config files are plain `key = value` lines (the keys match the long flag
//! names without `--`); blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use phraselm_core::{Error, Result};

pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key = value, got {line:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings { file, resolved: BTreeMap::new() })
    }

    /// Resolve one option by precedence and record the winning value.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|_| {
                    Error::Config(format!("config key {key}: cannot parse {raw:?}"))
                })?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// [`Settings::get`] for clap value enums, parsed by their kebab-case
    /// names.
    pub fn get_enum<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: ValueEnum,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => <T as ValueEnum>::from_str(raw, false)
                    .map_err(|e| Error::Config(format!("config key {key}: {e}")))?,
                None => default,
            },
        };
        if let Some(pv) = value.to_possible_value() {
            self.resolved.insert(key.to_string(), pv.get_name().to_string());
        }
        Ok(value)
    }

    /// A path-valued key from the config file (used for keys whose flag is a
    /// path, e.g. `checkpoint`).
    pub fn file_path(&self, key: &str) -> Option<PathBuf> {
        self.file.get(key).map(PathBuf::from)
    }

    /// Record a value that was decided outside [`Settings::get`].
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn settings(body: &str) -> Settings {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        Settings::load(Some(f.path())).unwrap()
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = settings("k = 64\n");
        assert_eq!(s.get("k", Some(32usize), 128).unwrap(), 32);
        let mut s = settings("k = 64\n");
        assert_eq!(s.get("k", None::<usize>, 128).unwrap(), 64);
        let mut s = settings("");
        assert_eq!(s.get("k", None::<usize>, 128).unwrap(), 128);
    }

    #[test]
    fn resolved_records_the_winner() {
        let mut s = settings("phi = 0.7\n# comment\n\n");
        s.get("phi", None::<f64>, 0.4).unwrap();
        s.get("top-p", None::<f64>, 0.95).unwrap();
        assert_eq!(s.resolved().get("phi").unwrap(), "0.7");
        assert_eq!(s.resolved().get("top-p").unwrap(), "0.95");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"just words\n").unwrap();
        let err = Settings::load(Some(f.path())).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn unparseable_value_is_rejected() {
        let mut s = settings("k = banana\n");
        assert!(s.get("k", None::<usize>, 128).is_err());
    }
}
