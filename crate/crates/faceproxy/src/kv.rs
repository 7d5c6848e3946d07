//! Line-based `key = value ...` text, shared by parameter, camera and
//! config files. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{format_err, io_err, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    pub entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format_err(path, format!("line {}: expected `key = value`", n + 1)));
            };
            let k = k.trim();
            if k.is_empty() || entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(format_err(path, format!("line {}: empty or duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn floats(&self, key: &str, path: &Path) -> Result<Vec<f64>> {
        let v = self
            .get(key)
            .ok_or_else(|| format_err(path, format!("missing key `{key}`")))?;
        parse_floats(v).ok_or_else(|| format_err(path, format!("bad numbers for `{key}`")))
    }
}

pub fn parse_floats(v: &str) -> Option<Vec<f64>> {
    v.split_whitespace().map(|s| s.parse::<f64>().ok()).collect()
}

/// Space-separated values using the shortest round-tripping representation.
pub fn format_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}
