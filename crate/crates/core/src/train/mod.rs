//! Minibatch training with Adam, warm restarts, global-norm clipping and
//! early stopping on validation CIDEr.

mod adam;
mod schedule;

pub use adam::{adam_update, AdamState, BETA1, BETA2, EPSILON};
pub use schedule::{RestartSchedule, DEFAULT_FLOOR_RATIO, DEFAULT_PERIOD, DEFAULT_PERIOD_MULT};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{normalize, FeatureStore, RawCaption, Split, Vocabulary};
use crate::decode::{beam_search, greedy_decode};
use crate::error::{Error, Result};
use crate::metrics::{bleu, cider, Sentence};
use crate::model::CaptionerModel;
use crate::params::ParamStore;

pub const DEFAULT_LR: f64 = 4e-4;
pub const SMALL_CORPUS_LR: f64 = 2e-4;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Upper bound on the number of epochs.
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm bound; `0` disables clipping.
    pub clip_norm: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub eval_beam: usize,
    pub max_len: usize,
    pub seed: u64,
    pub restart_period: f64,
    pub restart_mult: f64,
    /// Schedule floor as a fraction of `base_lr`.
    pub floor_ratio: f64,
    /// Load the best-CIDEr parameters back into the model when done.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: DEFAULT_LR,
            epochs: 50,
            batch_size: DEFAULT_BATCH,
            clip_norm: DEFAULT_CLIP,
            patience: 5,
            eval_beam: crate::decode::DEFAULT_BEAM,
            max_len: crate::decode::DEFAULT_MAX_LEN,
            seed: 0,
            restart_period: DEFAULT_PERIOD,
            restart_mult: DEFAULT_PERIOD_MULT,
            floor_ratio: DEFAULT_FLOOR_RATIO,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> RestartSchedule {
        RestartSchedule {
            base_lr: self.base_lr,
            period: self.restart_period,
            period_mult: self.restart_mult,
            floor_lr: self.base_lr * self.floor_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.eval_beam == 0 {
            return Err(Error::Config(
                "epochs, batch_size, patience and eval_beam must be positive".into(),
            ));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 || !(0.0..=1.0).contains(&self.floor_ratio) {
            return Err(Error::Config("clip_norm must be >= 0 and floor_ratio in [0, 1]".into()));
        }
        self.schedule().validate()
    }

    /// Flat `key = value` view, keys prefixed with `train.`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("lr", format!("{:?}", self.base_lr)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("patience", self.patience.to_string()),
            ("eval_beam", self.eval_beam.to_string()),
            ("max_len", self.max_len.to_string()),
            ("seed", self.seed.to_string()),
            ("restart_period", format!("{:?}", self.restart_period)),
            ("restart_mult", format!("{:?}", self.restart_mult)),
            ("floor_ratio", format!("{:?}", self.floor_ratio)),
            ("restore_best", self.restore_best.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect()
    }

    pub fn keys() -> Vec<String> {
        Self::default().to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Applies one `train.*` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        use crate::model::{parse_bool, parse_f64, parse_usize};
        let name = key.strip_prefix("train.").unwrap_or(key);
        match name {
            "lr" => self.base_lr = parse_f64(key, value)?,
            "epochs" => self.epochs = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "clip_norm" => self.clip_norm = parse_f64(key, value)?,
            "patience" => self.patience = parse_usize(key, value)?,
            "eval_beam" => self.eval_beam = parse_usize(key, value)?,
            "max_len" => self.max_len = parse_usize(key, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got `{value}`")))?
            }
            "restart_period" => self.restart_period = parse_f64(key, value)?,
            "restart_mult" => self.restart_mult = parse_f64(key, value)?,
            "floor_ratio" => self.floor_ratio = parse_f64(key, value)?,
            "restore_best" => self.restore_best = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Training examples, vocabulary and validation references built from
/// caption, feature and split files.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub train: Vec<TrainExample>,
    /// `(image_id, features, normalized references)` per validation image.
    pub val: Vec<(String, Vec<f64>, Vec<Sentence>)>,
}

impl PreparedData {
    pub fn validator(&self, beam: usize, max_len: usize) -> CaptionValidator {
        CaptionValidator {
            images: self.val.iter().map(|(_, f, r)| (f.clone(), r.clone())).collect(),
            vocab: self.vocab.clone(),
            beam,
            max_len,
        }
    }
}

/// Builds the vocabulary from training captions only. Images missing from
/// `splits` count as training images; test images are left out.
pub fn prepare_data(
    captions: &[RawCaption],
    features: &FeatureStore,
    splits: &BTreeMap<String, Split>,
    min_count: usize,
    max_words: usize,
) -> Result<PreparedData> {
    let split_of = |id: &str| splits.get(id).copied().unwrap_or(Split::Train);
    let train_caps: Vec<&RawCaption> = captions
        .iter()
        .filter(|c| split_of(&c.image_id) == Split::Train)
        .collect();
    let texts: Vec<&str> = train_caps.iter().map(|c| c.text.as_str()).collect();
    let vocab = Vocabulary::build(&texts, min_count)?;
    let train = train_caps
        .iter()
        .map(|c| {
            Ok(TrainExample {
                tokens: vocab.encode(&c.text, max_words),
                features: features.get(&c.image_id)?.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut refs: BTreeMap<&str, Vec<Sentence>> = BTreeMap::new();
    for c in captions.iter().filter(|c| split_of(&c.image_id) == Split::Val) {
        let mut words = normalize(&c.text);
        words.truncate(max_words);
        refs.entry(&c.image_id).or_default().push(words);
    }
    let val = refs
        .into_iter()
        .map(|(id, r)| Ok((id.to_owned(), features.get(id)?.to_vec(), r)))
        .collect::<Result<Vec<_>>>()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(format!(
            "need non-empty training and validation splits, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    Ok(PreparedData { vocab, train, val })
}

/// One teacher-forced training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub tokens: Vec<usize>,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScores {
    pub cider: f64,
    pub bleu4: f64,
}

pub trait Validator {
    fn validate(&self, model: &CaptionerModel) -> Result<ValScores>;
}

/// Decodes each validation image and scores it against its references.
pub struct CaptionValidator {
    pub images: Vec<(Vec<f64>, Vec<Sentence>)>,
    pub vocab: Vocabulary,
    pub beam: usize,
    pub max_len: usize,
}

impl Validator for CaptionValidator {
    fn validate(&self, model: &CaptionerModel) -> Result<ValScores> {
        let cands = self
            .images
            .par_iter()
            .map(|(feat, _)| {
                let h = if self.beam == 1 {
                    greedy_decode(model, feat, self.max_len)?
                } else {
                    beam_search(model, feat, self.beam, self.max_len)?.swap_remove(0)
                };
                Ok(self
                    .vocab
                    .decode(&h.tokens)
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect())
            })
            .collect::<Result<Vec<Sentence>>>()?;
        let refs: Vec<Vec<Sentence>> = self.images.iter().map(|(_, r)| r.clone()).collect();
        Ok(ValScores {
            cider: cider(&cands, &refs)?,
            bleu4: bleu(&cands, &refs, 4)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-token training cross-entropy over the epoch.
    pub train_loss: f64,
    pub val_cider: f64,
    pub val_bleu4: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_cider: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch<TAB>lr<TAB>train_loss<TAB>val_CIDEr<TAB>val_BLEU4` per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
                e.epoch, e.lr, e.train_loss, e.val_cider, e.val_bleu4
            );
        }
        out
    }
}

/// Scales all accumulated gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .tensors()
        .iter()
        .filter_map(|t| t.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in store.tensors_mut() {
            if let (_, Some(g)) = t.data_and_grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

/// Trains `model` in place. `on_epoch` sees each log line as it is made.
pub fn train(
    model: &mut CaptionerModel,
    examples: &[TrainExample],
    validator: &dyn Validator,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Contract("no training examples".into()));
    }
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut best = model.params().clone();
    let mut best_cider = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let n_batches = examples.len().div_ceil(cfg.batch_size);
    let use_dropout = model.config().dropout > 0.0;

    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = schedule.lr_at(epoch as f64);
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let results = {
                let m = &*model;
                batch
                    .par_iter()
                    .zip(&seeds)
                    .map(|(&i, &seed)| {
                        let ex = &examples[i];
                        m.example_gradients(&ex.tokens, &ex.features, use_dropout.then_some(seed))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let store = model.params_mut();
            store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for ((loss, grads), &i) in results.iter().zip(batch) {
                if !loss.is_finite() {
                    model.params_mut().copy_values_from(&best)?;
                    return Err(Error::Divergence {
                        epoch: epoch + 1,
                        loss: *loss,
                    });
                }
                loss_sum += loss;
                token_count += examples[i].tokens.len();
                let scaled: Vec<Option<Vec<f64>>> = grads
                    .iter()
                    .map(|g| g.as_ref().map(|g| g.iter().map(|x| x * scale).collect()))
                    .collect();
                model.params_mut().accumulate(&scaled)?;
            }
            clip_global_norm(model.params_mut(), cfg.clip_norm);
            let lr = schedule.lr_at(epoch as f64 + b as f64 / n_batches as f64);
            if let Err(e) = adam_update(model.params_mut(), &mut adam, lr) {
                model.params_mut().copy_values_from(&best)?;
                return Err(e);
            }
        }
        model.params_mut().zero_grad();

        let val = validator.validate(model)?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr: epoch_lr,
            train_loss: loss_sum / token_count as f64,
            val_cider: val.cider,
            val_bleu4: val.bleu4,
        };
        on_epoch(&log);
        logs.push(log);
        if val.cider > best_cider {
            best_cider = val.cider;
            best_epoch = epoch + 1;
            best.copy_values_from(model.params())?;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    if cfg.restore_best {
        model.params_mut().copy_values_from(&best)?;
    }
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        best_cider,
        stopped_early,
    })
}
