//! Flat `key = value` experiment files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys
//! must come from the caller's list of known keys and may appear once.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `text`, rejecting keys outside `known`.
    pub fn parse(text: &str, known: &[&str]) -> Result<Self> {
        let mut cfg = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
            let key = normalize(key.trim());
            let value = value.trim();
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", idx + 1)));
            }
            if cfg.get(&key).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", idx + 1)));
            }
            if value.is_empty() {
                return Err(Error::Config(format!("line {}: empty value for '{key}'", idx + 1)));
            }
            cfg.entries.push((key, value.to_string()));
        }
        Ok(cfg)
    }

    /// Reads the pairs recorded in a CSV header written by [`crate::report`].
    pub fn from_csv_header(text: &str, known: &[&str]) -> Result<Self> {
        let body: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| l.strip_prefix(crate::report::CONFIG_PREFIX))
            .map(|l| format!("{l}\n"))
            .collect();
        Self::parse(&body, known)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces a value, keeping the original position.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let key = normalize(key);
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    /// Values of `other` win.
    pub fn overlay(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.set(k, v.clone());
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
        raw.parse().map_err(|_| Error::Config(format!("bad value '{raw}' for '{key}'")))
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
        parse_usize_list(raw).map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
        parse_f64_list(raw).map_err(|e| Error::Config(format!("{key}: {e}")))
    }
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

/// `"4"`, `"2,4,8"` or an inclusive range `"2..8"`.
pub fn parse_usize_list(raw: &str) -> std::result::Result<Vec<usize>, String> {
    if let Some((a, b)) = raw.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
        let hi: usize = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
        if lo > hi {
            return Err(format!("empty range {raw}"));
        }
        return Ok((lo..=hi).collect());
    }
    raw.split(',').map(|s| s.trim().parse().map_err(|_| format!("bad integer '{s}'"))).collect()
}

/// Comma-separated reals.
pub fn parse_f64_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(',')
        .map(|s| {
            let v: f64 = s.trim().parse().map_err(|_| format!("bad number '{s}'"))?;
            if v.is_nan() {
                return Err("NaN not allowed".into());
            }
            Ok(v)
        })
        .collect()
}

/// Buffer sizes in bytes; `inf` means unbounded.
pub fn parse_buffer_list(raw: &str) -> std::result::Result<Vec<Option<u64>>, String> {
    raw.split(',')
        .map(|s| match s.trim() {
            "inf" | "none" => Ok(None),
            v => v.parse().map(Some).map_err(|_| format!("bad buffer size '{v}'")),
        })
        .collect()
}
