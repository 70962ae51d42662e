//! Plain-text `key=value` run configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}={value}`: {reason}")]
    Value { key: String, value: String, reason: String },
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. } | ConfigError::Duplicate { line, .. } => Some(*line),
            ConfigError::Value { .. } => None,
        }
    }
}

/// Ordered key-value settings. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_owned() });
            };
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_owned() });
            }
            if values.insert(key.clone(), v.trim().to_owned()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key });
            }
        }
        Ok(RunConfig { values })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_owned(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Keep only `keys`, filling absent ones from `defaults`.
    pub fn restricted(&self, defaults: &[(&str, &str)]) -> RunConfig {
        let values = defaults
            .iter()
            .map(|(k, d)| (k.to_string(), self.get(k).unwrap_or(d).to_owned()))
            .collect();
        RunConfig { values }
    }

    fn value_error(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value { key: key.to_owned(), value: self.get(key).unwrap_or("").to_owned(), reason: reason.into() }
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.get(key).ok_or_else(|| self.value_error(key, "missing"))?;
        raw.parse().map_err(|_| self.value_error(key, "cannot parse"))
    }

    /// Empty or `none` reads as `None`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None | Some("") | Some("none") => Ok(None),
            Some(_) => self.parse_value(key).map(Some),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            None | Some("") | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some(_) => Err(self.value_error(key, "expected true or false")),
        }
    }

    /// Comma-separated list; empty reads as an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let raw = self.get(key).unwrap_or("");
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| self.value_error(key, format!("cannot parse `{s}`"))))
            .collect()
    }

    /// Choose among fixed labels.
    pub fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
        let raw = self.get(key).unwrap_or("");
        options.iter().find(|(label, _)| *label == raw).map(|(_, v)| *v).ok_or_else(|| {
            let labels: Vec<&str> = options.iter().map(|(l, _)| *l).collect();
            self.value_error(key, format!("expected one of {}", labels.join(", ")))
        })
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 over the settings except `skip`, followed by the
    /// contents of each named input.
    pub fn digest(&self, skip: &[&str], inputs: &[(String, Vec<u8>)]) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.iter().filter(|(k, _)| !skip.contains(k)) {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        for (name, bytes) in inputs {
            h.update(format!("input {name} {}\n", bytes.len()).as_bytes());
            h.update(bytes);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
