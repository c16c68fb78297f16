//! Line-based configuration files: `key = value` with dotted key
//! prefixes and `#` comments. Command-line `--set key=value` pairs are
//! parsed with the same grammar and override file entries.

use fbptf_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Parsed key/value table; keys keep their dotted form.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn from_file(path: &Path) -> Result<ConfigMap> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let mut map = ConfigMap::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: name.clone(),
                line: lineno + 1,
                column: 1,
                detail: format!("expected `key = value`, got {raw:?}"),
            })?;
            map.insert_checked(key, value, &name, lineno + 1)?;
        }
        Ok(map)
    }

    /// Applies `key=value` override pairs (from CLI flags) on top.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for (i, pair) in pairs.iter().enumerate() {
            let (key, value) = pair.split_once('=').ok_or_else(|| Error::Invalid {
                op: "config override",
                detail: format!("--set argument {} must look like key=value, got {pair:?}", i + 1),
            })?;
            self.insert_checked(key, value, "--set", i + 1)?;
        }
        Ok(())
    }

    fn insert_checked(&mut self, key: &str, value: &str, source: &str, line: usize) -> Result<()> {
        let key = key.trim();
        let ok = !key.is_empty()
            && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "._-".contains(c));
        if !ok {
            return Err(Error::Parse {
                path: source.to_string(),
                line,
                column: 1,
                detail: format!("invalid configuration key {key:?}"),
            });
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|v| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Invalid {
                op: "config",
                detail: format!("{key} = {v:?} is not {what}"),
            }),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse(key, "a number")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse(key, "a non-negative integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse(key, "a non-negative integer")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse(key, "true or false")
    }

    /// Comma-separated float list.
    pub fn get_vec_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Invalid {
                        op: "config",
                        detail: format!("{key} = {v:?} is not a comma-separated number list"),
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Errors on any key outside `known`, catching typos early.
    pub fn reject_unknown_keys(&self, known: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Invalid {
                    op: "config",
                    detail: format!("unknown configuration key {key:?}"),
                });
            }
        }
        Ok(())
    }
}
