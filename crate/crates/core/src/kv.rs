//! Flat `key = value` text files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys are
//! dotted paths such as `plane.0.albedo` or `lm.max_outer`. A later entry for
//! the same key overrides an earlier one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("key `{key}`: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| KvError::Syntax {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(KvError::Syntax {
                    line: i + 1,
                    msg: format!("invalid key {key:?}"),
                });
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses the value for `key` if present.
    pub fn parse_opt<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::BadValue {
                key: key.into(),
                value: v.clone(),
                expected,
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, KvError> {
        Ok(self.parse_opt(key, "number")?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, KvError> {
        Ok(self.parse_opt(key, "non-negative integer")?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, KvError> {
        Ok(self.parse_opt(key, "non-negative integer")?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, KvError> {
        match self.entries.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(KvError::BadValue {
                key: key.into(),
                value: v.into(),
                expected: "boolean",
            }),
        }
    }

    /// Whitespace-separated list of numbers.
    pub fn floats(&self, key: &str) -> Result<Option<Vec<f64>>, KvError> {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| KvError::BadValue {
                key: key.into(),
                value: v.clone(),
                expected: "list of numbers",
            })
    }

    pub fn triple(&self, key: &str) -> Result<Option<[f64; 3]>, KvError> {
        match self.floats(key)? {
            None => Ok(None),
            Some(v) if v.len() == 3 => Ok(Some([v[0], v[1], v[2]])),
            Some(_) => Err(KvError::BadValue {
                key: key.into(),
                value: self.entries[key].clone(),
                expected: "three numbers",
            }),
        }
    }

    /// Triple that may also be given as a single scalar (`0.5` means `0.5 0.5 0.5`).
    pub fn color(&self, key: &str) -> Result<Option<[f64; 3]>, KvError> {
        match self.floats(key)? {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some([v[0]; 3])),
            Some(v) if v.len() == 3 => Ok(Some([v[0], v[1], v[2]])),
            Some(_) => Err(KvError::BadValue {
                key: key.into(),
                value: self.entries[key].clone(),
                expected: "one or three numbers",
            }),
        }
    }

    /// Sorted, de-duplicated integer indices `i` for keys of the form `prefix.i.*`.
    pub fn indices(&self, prefix: &str) -> Vec<usize> {
        let lead = format!("{prefix}.");
        let mut out: Vec<usize> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix(&lead))
            .filter_map(|rest| rest.split('.').next()?.parse().ok())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl fmt::Display for KvFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
