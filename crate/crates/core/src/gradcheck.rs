//! Central finite differences for checking backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::CellKind;
use crate::data::{END_ID, START_ID};
use crate::error::Result;
use crate::lang_cnn::LangCnnConfig;
use crate::model::{CaptionerModel, ModelConfig};

/// Step used by every gradient check in this crate.
pub const FD_STEP: f64 = 1e-5;

/// Maximum tolerated relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Magnitudes below this are compared absolutely, so gradients that are
/// zero up to round-off do not blow up the ratio.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Largest relative error within one named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
}

/// The small model used by the command-line check: `V = 20`, `K = d = 8`,
/// a 6-word history with kernels `[3, 2]`, dropout off.
pub fn small_config(cell: CellKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(20, 10).with_widths(8, 8);
    cfg.cell = cell;
    cfg.lang_cnn = LangCnnConfig::new(6, 8, &[3, 2]);
    cfg.dropout = 0.0;
    cfg
}

/// A random caption (`<START>`, `words` interior tokens, `<END>`) and
/// feature vector for `model`.
pub fn random_example(model: &CaptionerModel, words: usize, seed: u64) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.vocab_size();
    let mut tokens = vec![START_ID];
    tokens.extend((0..words).map(|_| rng.gen_range(3..v)));
    tokens.push(END_ID);
    let feats = (0..model.config().feature_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    (tokens, feats)
}

/// Half-width used by [`randomize_parameters`].
pub const PROBE_RANGE: f64 = 0.3;

/// Redraws every parameter, biases included, uniformly from
/// `±PROBE_RANGE`. Zero biases put ReLU inputs of zero-padded windows
/// exactly on the kink, where central differences are meaningless.
pub fn randomize_parameters(model: &mut CaptionerModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-PROBE_RANGE..PROBE_RANGE));
    }
}

/// Compares backpropagated gradients of the sequence loss against central
/// differences for every scalar parameter.
pub fn check_model(model: &CaptionerModel, tokens: &[usize], features: &[f64]) -> Result<Vec<BlockError>> {
    let (_, analytic) = model.example_gradients(tokens, features, None)?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = model.params().get(id).numel();
        let zeros = vec![0.0; n];
        let a = analytic[id.index()].as_deref().unwrap_or(&zeros);
        let mut worst: f64 = 0.0;
        for (i, &grad) in a.iter().enumerate() {
            let orig = model.params().get(id).data()[i];
            probe.params_mut().get_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = probe.sequence_loss(tokens, features)?;
            probe.params_mut().get_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = probe.sequence_loss(tokens, features)?;
            probe.params_mut().get_mut(id).data_mut()[i] = orig;
            worst = worst.max(relative_error(grad, (plus - minus) / (2.0 * FD_STEP)));
        }
        out.push(BlockError {
            name: model.params().name(id).to_owned(),
            max_rel_err: worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let g = numeric_gradient(&[2.0, -1.0], FD_STEP, |x| x[0].powi(3) + 4.0 * x[1]);
        assert!(relative_error(12.0, g[0]) < 1e-9);
        assert!(relative_error(4.0, g[1]) < 1e-9);
    }

    #[test]
    fn floor_keeps_tiny_gradients_comparable() {
        assert!(relative_error(1e-12, -1e-12) < 1e-8);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
