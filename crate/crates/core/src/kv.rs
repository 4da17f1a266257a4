//! Flat `key=value` text files, shared by manifests and experiment configs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are rejected.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            key: line.to_string(),
            reason: format!("line {} is not key=value", lineno + 1),
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config {
                key,
                reason: format!("empty key on line {}", lineno + 1),
            });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config {
                key,
                reason: "duplicate key".into(),
            });
        }
    }
    Ok(out)
}

/// Typed accessor that consumes keys so leftovers can be reported as unknown.
pub struct Fields(BTreeMap<String, String>);

impl Fields {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Self(map)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn require_str(&mut self, key: &str) -> Result<String> {
        self.take_str(key).ok_or_else(|| Error::Config {
            key: key.into(),
            reason: "missing required key".into(),
        })
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config {
                key: key.into(),
                reason: format!("cannot parse `{v}`"),
            }),
        }
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Config {
            key: key.into(),
            reason: "missing required key".into(),
        })
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.0.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(Error::Config {
                key,
                reason: "unknown key".into(),
            }),
        }
    }
}
