use std::collections::BTreeMap;

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::lang_cnn::{Activation, HistoryMode, LangCnnConfig};

/// Architectural hyperparameters of a [`super::CaptionerModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Word embedding and image projection width `K`.
    pub embed_dim: usize,
    /// Recurrent state width `d`.
    pub hidden_dim: usize,
    /// Raw image feature width `D`.
    pub feature_dim: usize,
    pub cell: CellKind,
    pub cell_layers: usize,
    /// When off, the history encoder and its fusion layer are removed.
    pub use_cnn_l: bool,
    pub lang_cnn: LangCnnConfig,
    /// Dropout rate on the fused vector and on the top recurrent output.
    pub dropout: f64,
}

pub const DEFAULT_WIDTH: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.5;

impl ModelConfig {
    /// `K = d = 512`, 16-word history encoder, simple RNN.
    pub fn new(vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: DEFAULT_WIDTH,
            hidden_dim: DEFAULT_WIDTH,
            feature_dim,
            cell: CellKind::SimpleRnn,
            cell_layers: 1,
            use_cnn_l: true,
            lang_cnn: LangCnnConfig::standard(DEFAULT_WIDTH),
            dropout: DEFAULT_DROPOUT,
        }
    }

    /// Sets `K` (keeping the encoder in sync) and `d`.
    pub fn with_widths(mut self, embed_dim: usize, hidden_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.lang_cnn.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 4, got {}",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 || self.cell_layers == 0 {
            return Err(Error::Config("widths and layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.use_cnn_l {
            if self.lang_cnn.embed_dim != self.embed_dim {
                return Err(Error::Config(format!(
                    "history encoder width {} differs from embedding width {}",
                    self.lang_cnn.embed_dim, self.embed_dim
                )));
            }
            self.lang_cnn.validate()?;
        }
        Ok(())
    }

    /// Flat `key = value` view, keys prefixed with `model.`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let kernels = self
            .lang_cnn
            .layers
            .iter()
            .map(|l| l.kernel_size.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let activation = match self.lang_cnn.layers.first().map(|l| l.activation) {
            Some(Activation::Sigmoid) => "sigmoid",
            _ => "relu",
        };
        let history = match self.lang_cnn.mode {
            HistoryMode::Conv => "conv",
            HistoryMode::Average => "average",
        };
        [
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("cell", self.cell.to_string()),
            ("cell_layers", self.cell_layers.to_string()),
            ("use_cnn_l", self.use_cnn_l.to_string()),
            ("window", self.lang_cnn.window.to_string()),
            ("kernels", kernels),
            ("conv_activation", activation.to_string()),
            ("max_pool", self.lang_cnn.max_pool_variant.to_string()),
            ("history", history.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    /// Keys recognised by [`ModelConfig::from_pairs`].
    pub fn keys() -> Vec<String> {
        Self::new(4, 1).to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Rebuilds a configuration from `model.*` keys. Missing keys fall back
    /// to the defaults of [`ModelConfig::new`]; `model.vocab_size` and
    /// `model.feature_dim` must be present.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| pairs.get(&format!("model.{k}")).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| Error::Config(format!("missing key `model.{k}`")));
        let vocab_size = parse_usize("model.vocab_size", need("vocab_size")?)?;
        let feature_dim = parse_usize("model.feature_dim", need("feature_dim")?)?;
        let mut cfg = Self::new(vocab_size, feature_dim);
        let k = get("embed_dim")
            .map(|v| parse_usize("model.embed_dim", v))
            .transpose()?
            .unwrap_or(cfg.embed_dim);
        let d = get("hidden_dim")
            .map(|v| parse_usize("model.hidden_dim", v))
            .transpose()?
            .unwrap_or(cfg.hidden_dim);
        cfg = cfg.with_widths(k, d);
        if let Some(v) = get("cell") {
            cfg.cell = v.parse()?;
        }
        if let Some(v) = get("cell_layers") {
            cfg.cell_layers = parse_usize("model.cell_layers", v)?;
        }
        if let Some(v) = get("use_cnn_l") {
            cfg.use_cnn_l = parse_bool("model.use_cnn_l", v)?;
        }
        let window = get("window").map(|v| parse_usize("model.window", v)).transpose()?;
        let kernels = get("kernels").map(parse_kernels).transpose()?;
        let mut lang = match (window, kernels) {
            (Some(w), Some(ks)) => LangCnnConfig::new(w, k, &ks),
            (Some(w), None) => LangCnnConfig::window_preset(w, k)?,
            (None, Some(ks)) => LangCnnConfig::new(cfg.lang_cnn.window, k, &ks),
            (None, None) => LangCnnConfig::standard(k),
        };
        if let Some(v) = get("conv_activation") {
            let act = match v {
                "relu" => Activation::Relu,
                "sigmoid" => Activation::Sigmoid,
                other => return Err(Error::Config(format!("unknown activation `{other}`"))),
            };
            lang.layers.iter_mut().for_each(|l| l.activation = act);
        }
        if let Some(v) = get("max_pool") {
            lang.max_pool_variant = parse_bool("model.max_pool", v)?;
        }
        if let Some(v) = get("history") {
            lang.mode = match v {
                "conv" => HistoryMode::Conv,
                "average" => HistoryMode::Average,
                other => return Err(Error::Config(format!("unknown history mode `{other}`"))),
            };
        }
        cfg.lang_cnn = lang;
        if let Some(v) = get("dropout") {
            cfg.dropout = parse_f64("model.dropout", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got `{v}`")))
}

pub(crate) fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{v}`")))
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

fn parse_kernels(v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|k| parse_usize("model.kernels", k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::new(100, 35).with_widths(16, 24);
        cfg.cell = CellKind::Rhn;
        cfg.cell_layers = 2;
        cfg.lang_cnn = LangCnnConfig::new(6, 16, &[3, 2]);
        cfg.dropout = 0.25;
        let map: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
        assert_eq!(ModelConfig::from_pairs(&map).unwrap(), cfg);

        cfg.lang_cnn = LangCnnConfig::averaging(16, 16);
        let map: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
        let back = ModelConfig::from_pairs(&map).unwrap();
        assert_eq!(back.lang_cnn.mode, HistoryMode::Average);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::new(3, 4).validate().is_err());
        let mut cfg = ModelConfig::new(10, 4);
        cfg.embed_dim = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(10, 4);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn window_key_selects_preset() {
        let mut map = BTreeMap::new();
        map.insert("model.vocab_size".to_owned(), "10".to_owned());
        map.insert("model.feature_dim".to_owned(), "4".to_owned());
        map.insert("model.embed_dim".to_owned(), "8".to_owned());
        map.insert("model.window".to_owned(), "4".to_owned());
        let cfg = ModelConfig::from_pairs(&map).unwrap();
        assert_eq!(cfg.lang_cnn.stage_lengths().unwrap(), vec![4, 2, 1]);
    }
}
