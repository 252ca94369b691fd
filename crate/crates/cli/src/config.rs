//! Flat `key = value` configuration.
//!
//! One entry per line, `#` starts a comment, lists are written `[a, b, c]`.
//! Keys must come from [`KNOWN_KEYS`]; a key may appear once.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{CliError, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "activation",
    "algo",
    "batch_size",
    "block_dim",
    "blobs_classes",
    "blobs_dim",
    "blobs_n",
    "blobs_separation",
    "blocks",
    "code_iters",
    "code_lr",
    "coupling",
    "data_dir",
    "dataset",
    "ensemble",
    "epochs",
    "eval_every",
    "eval_train",
    "fault",
    "hidden",
    "instances",
    "iterations",
    "lambda",
    "lr",
    "model",
    "mu",
    "mu_increment",
    "mu_max",
    "mu_multiplier",
    "noise",
    "pool",
    "preset",
    "problem_seed",
    "radius",
    "rnn_hidden",
    "seed",
    "sgd_decay",
    "split_seed",
    "test_path",
    "test_size",
    "train_path",
    "train_size",
    "val_fraction",
    "weight_iters",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    One(String),
    List(Vec<String>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::One(s) => f.write_str(s),
            Value::List(items) => write!(f, "[{}]", items.join(", ")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, Value>,
}

fn check_token(s: &str, line: usize) -> Result<()> {
    if s.is_empty() {
        return Err(CliError::Parse { line, msg: "empty value".into() });
    }
    if s.contains(['[', ']', ',', ';', '=']) {
        return Err(CliError::Parse {
            line,
            msg: format!("unexpected character in value {s:?}"),
        });
    }
    Ok(())
}

fn parse_value(raw: &str, line: usize) -> Result<Value> {
    let raw = raw.trim();
    if let Some(body) = raw.strip_prefix('[') {
        let body = body.strip_suffix(']').ok_or_else(|| CliError::Parse {
            line,
            msg: "unterminated list".into(),
        })?;
        if body.trim().is_empty() {
            return Err(CliError::Parse { line, msg: "empty list".into() });
        }
        let items: Vec<String> = body.split(',').map(|s| s.trim().to_string()).collect();
        for it in &items {
            check_token(it, line)?;
        }
        Ok(Value::List(items))
    } else {
        check_token(raw, line)?;
        Ok(Value::One(raw.to_string()))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| CliError::Parse {
                line,
                msg: format!("expected `key = value`, found {content:?}"),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Parse {
                    line,
                    msg: format!("unknown key {key:?}"),
                });
            }
            let value = parse_value(value, line)?;
            if cfg.entries.insert(key.to_string(), value).is_some() {
                return Err(CliError::Parse {
                    line,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(cfg)
    }

    /// Sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The canonical form folded onto one `# config: …` line.
    pub fn comment_line(&self) -> String {
        let body: Vec<String> = self.entries.iter().map(|(k, v)| format!("{k} = {v}")).collect();
        format!("# config: {}", body.join("; "))
    }

    /// Inverse of [`RunConfig::comment_line`].
    pub fn from_comment_line(line: &str) -> Result<Self> {
        let body = line.strip_prefix("# config:").ok_or_else(|| CliError::Parse {
            line: 1,
            msg: "missing `# config:` prefix".into(),
        })?;
        RunConfig::parse(&body.split(';').collect::<Vec<_>>().join("\n"))
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_one(&mut self, key: &str, value: impl ToString) -> Result<()> {
        self.set(key, Value::One(value.to_string()))
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        self.entries.remove(key)
    }

    /// Entries of `other` replace entries of `self`.
    pub fn overlay(&mut self, other: &RunConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// List-valued entries in key order.
    pub fn lists(&self) -> Vec<(&str, &[String])> {
        self.entries
            .iter()
            .filter_map(|(k, v)| match v {
                Value::List(items) => Some((k.as_str(), items.as_slice())),
                Value::One(_) => None,
            })
            .collect()
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(Value::One(s)) => Ok(Some(s)),
            Some(Value::List(_)) => Err(CliError::config(format!(
                "{key} is a list; lists are only accepted by gridsearch"
            ))),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.str(key)?
            .ok_or_else(|| CliError::config(format!("missing required key {key:?}")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.str(key)?
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::config(format!("{key} = {s}: {e}")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }
}
