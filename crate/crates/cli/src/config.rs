//! Flat `key = value` run files with `[section]` headers.
//!
//! ```text
//! # comment
//! [problem]
//! catalog = test1
//! angle = 3
//! ```
//!
//! Keys are addressed as `section.key`; entries before the first header
//! have no prefix. Only keys listed in the command schema are accepted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    schema: Vec<&'static str>,
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn empty(schema: &[&'static str]) -> Self {
        RunConfig {
            values: BTreeMap::new(),
            schema: schema.to_vec(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn parse(text: &str, schema: &[&'static str]) -> Result<Self> {
        let mut cfg = Self::empty(schema);
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", n + 1))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    bail!("line {}: bad section name '{name}'", n + 1);
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                bail!("line {}: empty key", n + 1);
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if cfg.values.contains_key(&key) {
                bail!("line {}: duplicate key '{key}'", n + 1);
            }
            cfg.set(&key, v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path, schema: &[&'static str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::parse(&text, schema).with_context(|| format!("in {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.schema.contains(&key) {
            bail!("unknown key '{key}' (accepted: {})", self.schema.join(", "));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}.");
        self.values.keys().any(|k| k.starts_with(&prefix))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("bad value '{v}' for {key}: {e}")))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| anyhow!("missing required key '{key}'"))
    }

    /// A path value resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("bad list entry '{s}': {e}")))
        .collect()
}
