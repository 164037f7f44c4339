//! Run configuration: a flat `key = value` file plus command-line
//! overrides, covering `model.*`, `train.*` and `data.*` keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{DEFAULT_MAX_WORDS, DEFAULT_MIN_COUNT};
use crate::error::{Error, Result};
use crate::model::{parse_usize, ModelConfig};
use crate::train::TrainConfig;

const DATA_KEYS: [&str; 2] = ["data.min_count", "data.max_words"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `model.*` entries as given; resolved once the data fixes `V` and `D`.
    model: BTreeMap<String, String>,
    pub train: TrainConfig,
    pub min_count: usize,
    pub max_words: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: BTreeMap::new(),
            train: TrainConfig::default(),
            min_count: DEFAULT_MIN_COUNT,
            max_words: DEFAULT_MAX_WORDS,
        }
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub fn keys() -> Vec<String> {
        let mut keys = ModelConfig::keys();
        keys.extend(TrainConfig::keys());
        keys.extend(DATA_KEYS.iter().map(|k| k.to_string()));
        keys
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if key.starts_with("model.") {
            if !ModelConfig::keys().iter().any(|k| k == key) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            self.model.insert(key.to_owned(), value.to_owned());
            return Ok(());
        }
        match key {
            "data.min_count" => self.min_count = parse_usize(key, value)?,
            "data.max_words" => self.max_words = parse_usize(key, value)?,
            k if k.starts_with("train.") => self.train.set(k, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `model.*` entries exactly as set.
    pub fn model_overrides(&self) -> &BTreeMap<String, String> {
        &self.model
    }

    /// Checks that the `model.*` entries combine into a valid model and
    /// that the training settings are usable.
    pub fn validate(&self) -> Result<()> {
        let mut pairs = self.model.clone();
        pairs.entry("model.vocab_size".into()).or_insert_with(|| "4".into());
        pairs.entry("model.feature_dim".into()).or_insert_with(|| "1".into());
        ModelConfig::from_pairs(&pairs)?;
        self.train.validate()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    /// Resolves the model configuration for data with `vocab_size` tokens
    /// and `feature_dim`-wide features. Explicit `model.vocab_size` or
    /// `model.feature_dim` entries must agree with the data.
    pub fn model_config(&self, vocab_size: usize, feature_dim: usize) -> Result<ModelConfig> {
        let mut pairs = self.model.clone();
        for (key, actual) in [("model.vocab_size", vocab_size), ("model.feature_dim", feature_dim)] {
            match pairs.get(key) {
                Some(v) if parse_usize(key, v)? != actual => {
                    return Err(Error::Checkpoint(format!("{key} = {v} but the data gives {actual}")));
                }
                _ => {
                    pairs.insert(key.to_owned(), actual.to_string());
                }
            }
        }
        ModelConfig::from_pairs(&pairs)
    }

    /// The fully resolved configuration as `key = value` text, sorted by key.
    pub fn effective_text(&self, model: &ModelConfig) -> String {
        let mut all: BTreeMap<String, String> = model.to_pairs().into_iter().collect();
        all.extend(self.train.to_pairs());
        all.insert("data.min_count".into(), self.min_count.to_string());
        all.insert("data.max_words".into(), self.max_words.to_string());
        let mut out = String::new();
        for (k, v) in all {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
