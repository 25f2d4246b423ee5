//! Run configuration: a TOML file merged with dotted `section.key=value`
//! overrides. Every key has a default and unknown keys are rejected with the
//! nearest valid spelling.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Path of `manifest.jsonl`, relative to the working directory.
    pub manifest: PathBuf,
    /// Use only the first `n` training rows; 0 keeps all.
    pub max_train: usize,
    /// Use only the first `n` dev rows; 0 keeps all.
    pub max_dev: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: PathBuf::from("data/manifest.jsonl"),
            max_train: 0,
            max_dev: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelConfig::small")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::small(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn normalize(k: &str) -> String {
    k.trim().replace('-', "_").to_lowercase()
}

fn schema() -> Table {
    Table::try_from(RunConfig::default()).expect("default config serializes")
}

fn all_keys(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let full = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(sub) => all_keys(sub, &full, out),
            _ => out.push(full),
        }
    }
}

/// Every settable dotted key, in declaration order.
pub fn known_keys() -> Vec<String> {
    let mut out = Vec::new();
    all_keys(&schema(), "", &mut out);
    out
}

fn unknown_key(key: &str) -> Error {
    let keys = known_keys();
    let want = normalize(key);
    let best = keys
        .iter()
        .map(|k| (strsim::levenshtein(&normalize(k), &want), k))
        .min_by_key(|(d, _)| *d);
    match best {
        Some((d, k)) if d <= want.len().max(3) / 2 + 1 => {
            Error::Config(format!("unknown key '{key}'; did you mean '{k}'?"))
        }
        _ => Error::Config(format!("unknown key '{key}'; valid keys: {}", keys.join(", "))),
    }
}

/// Resolves `dotted` against the schema, matching case-insensitively with
/// `-` read as `_`. Returns the canonical path segments.
fn resolve(dotted: &str) -> Result<Vec<String>> {
    resolve_as(dotted, false)
}

fn resolve_as(dotted: &str, section: bool) -> Result<Vec<String>> {
    let mut node = schema();
    let mut path = Vec::new();
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let want = normalize(part);
        let Some((k, v)) = node.iter().find(|(k, _)| normalize(k) == want).map(|(k, v)| (k.clone(), v.clone())) else {
            return Err(unknown_key(dotted));
        };
        path.push(k);
        match v {
            Value::Table(sub) if i + 1 < parts.len() => node = sub,
            Value::Table(_) if !section => return Err(Error::Config(format!("'{dotted}' is a section, not a key"))),
            Value::Table(_) => {}
            _ if i + 1 < parts.len() || section => return Err(unknown_key(dotted)),
            _ => {}
        }
    }
    Ok(path)
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set(table: &mut Table, path: &[String], v: Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("schema sections are tables");
    }
    node.insert(last.clone(), v);
}

/// Rewrites every key of a parsed file to its canonical spelling, rejecting
/// unknown ones.
fn canonicalize(src: &Table, prefix: &str, out: &mut Table) -> Result<()> {
    for (k, v) in src {
        let full = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(sub) => {
                resolve_as(&full, true)?;
                canonicalize(sub, &full, out)?;
            }
            _ => set(out, &resolve(&full)?, v.clone()),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `overrides`, each `key=value` with a
    /// dotted key. Values use TOML syntax; bare words are read as strings.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let parsed: Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut table = Table::new();
        canonicalize(&parsed, "", &mut table)?;
        for (k, raw) in overrides {
            set(&mut table, &resolve(k)?, parse_value(raw));
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides).map_err(|e| match (path, e) {
            (Some(p), Error::Config(m)) => Error::Config(format!("{}: {m}", p.display())),
            (_, e) => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_with("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn file_and_overrides_merge() {
        let text = "[model]\nH = 8\ncross_groups = 2\n[train]\nmax_epochs = 3\n";
        let c = RunConfig::from_toml_with(text, &[ov("train.max-epochs", "0"), ov("MODEL.heads", "4"), ov("data.manifest", "x/m.jsonl")])
            .unwrap();
        assert_eq!(c.model.h, 8);
        assert_eq!(c.model.heads, 4);
        assert_eq!(c.train.max_epochs, 0);
        assert_eq!(c.data.manifest, PathBuf::from("x/m.jsonl"));
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_suggest_nearest() {
        let e = RunConfig::from_toml_with("", &[ov("modle.H", "4")]).unwrap_err().to_string();
        assert!(e.contains("did you mean 'model.H'"), "{e}");
        let e = RunConfig::from_toml_with("[train]\nmax_epoch = 3\n", &[]).unwrap_err().to_string();
        assert!(e.contains("train.max_epochs"), "{e}");
    }

    #[test]
    fn array_and_type_errors() {
        let c = RunConfig::from_toml_with("", &[ov("train.betas", "[0.8, 0.99]")]).unwrap();
        assert_eq!(c.train.betas, [0.8, 0.99]);
        assert!(RunConfig::from_toml_with("", &[ov("model.H", "many")]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::from_toml_with("", &[ov("model.B", "3")]).unwrap();
        assert_eq!(RunConfig::from_toml_with(&c.to_toml().unwrap(), &[]).unwrap(), c);
    }
}
