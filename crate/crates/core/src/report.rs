//! CSV output with a self-describing comment header.
//!
//! ```text
//! # rpslab 0.1.0
//! # command mixing
//! # config n = 2..8
//! # config seed = 0
//! n,p,...
//! ```
//! Feeding the header back as a config file reproduces the body.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::KvConfig;

pub const CONFIG_PREFIX: &str = "# config ";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub command: String,
    pub config: KvConfig,
    /// Extra `# key value` notes such as a computed learning rate.
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(command: &str, config: KvConfig, columns: &[&str]) -> Self {
        Self {
            command: command.to_string(),
            config,
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn header(&self) -> String {
        let mut out = format!("# rpslab {}\n# command {}\n", env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in self.config.entries() {
            let _ = writeln!(out, "{CONFIG_PREFIX}{k} = {v}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k} {v}");
        }
        out
    }

    pub fn body(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        self.header() + &self.body()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Lines after the comment header.
pub fn strip_header(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest
}
