//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// Applies one update using the gradients accumulated in `store`.
/// Parameters are left untouched if any gradient is non-finite.
pub fn adam_update(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        if let Some(g) = store.get(id).grad() {
            if let Some((index, &value)) = g.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: store.name(id).to_owned(),
                    index,
                    value,
                });
            }
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    for ((t, m), v) in store.tensors_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let (data, grad) = t.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store_with(vec![1.0, -2.0]);
        let mut st = AdamState::new(&s);
        s.accumulate(&[Some(vec![0.0, 0.0])]).unwrap();
        adam_update(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.tensors()[0].data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr_sign() {
        let mut s = store_with(vec![0.0, 0.0]);
        let mut st = AdamState::new(&s);
        let lr = 1e-3;
        let mut prev = vec![0.0, 0.0];
        for _ in 0..2000 {
            s.zero_grad();
            s.accumulate(&[Some(vec![0.3, -7.0])]).unwrap();
            adam_update(&mut s, &mut st, lr).unwrap();
            let now = s.tensors()[0].data().to_vec();
            let step: Vec<f64> = now.iter().zip(&prev).map(|(a, b)| a - b).collect();
            assert!((step[0] + lr).abs() < 1e-6 * lr + 1e-9);
            assert!((step[1] - lr).abs() < 1e-6 * lr + 1e-9);
            prev = now;
        }
        assert_eq!(st.step, 2000);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(vec![1.0, 1.0]);
        let mut st = AdamState::new(&s);
        s.accumulate(&[Some(vec![0.0, f64::NAN])]).unwrap();
        match adam_update(&mut s, &mut st, 0.1) {
            Err(Error::NonFiniteGradient { param, index, .. }) => {
                assert_eq!(param, "w");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.tensors()[0].data(), &[1.0, 1.0]);
        assert_eq!(st.step, 0);
    }
}
