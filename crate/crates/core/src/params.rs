//! Named parameter storage and the per-pass binding of parameters to a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Half-width of the uniform weight initialization interval.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of trainable tensors. Registration order is the
/// serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.requiring_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut impl Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        self.add(name, Tensor::new(shape, data).expect("positive shape"))
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, Tensor::new(shape, vec![value; n]).expect("positive shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds per-parameter gradient buffers (as returned by
    /// [`Session::param_grads`]) into the accumulators.
    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>]) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            if let Some(g) = g {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Copies parameter values (not gradients) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::dim("copy_values_from", dst.shape(), src.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// One forward pass: a tape plus lazily bound parameter leaves and an
/// optional dropout source.
pub struct Session<'a> {
    pub tape: Tape<'a>,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a> Session<'a> {
    /// Evaluation session: dropout disabled.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            dropout: None,
        }
    }

    /// Training session with inverted dropout at `rate`, masks drawn from
    /// a generator seeded with `seed`.
    pub fn training(store: &'a ParamStore, rate: f64, seed: u64) -> Self {
        let mut s = Self::new(store);
        if rate > 0.0 {
            s.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        }
        s
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Tape handle for a parameter, recorded on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - *rate;
        let n = self.tape.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let shape = self.tape.shape(x).to_vec();
        let m = self.tape.constant(Tensor::new(&shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Gradients for every parameter bound in this session, indexed like
    /// the store; unbound parameters get `None`.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Vec<f64>>> {
        self.bound
            .iter()
            .map(|b| b.map(|v| grads.get_or_zeros(v).into_owned()))
            .collect()
    }
}

/// Affine map `x · W + b` with `W: [in×out]`, applied to a vector or to
/// every row of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::with_bias(store, name, fan_in, fan_out, 0.0, rng)
    }

    pub fn with_bias(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.uniform(format!("{name}.w"), &[fan_in, fan_out], rng);
        let bias = store.filled(format!("{name}.b"), &[fan_out], bias);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.p(self.weight);
        let b = s.p(self.bias);
        let xw = s.tape.matmul(x, w)?;
        s.tape.add(xw, b)
    }

    pub fn numel(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_binds_each_param_once() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Affine::new(&mut store, "lin", 3, 2, &mut rng);
        let mut s = Session::new(&store);
        let x = s.tape.constant_vec(vec![1.0, 2.0, 3.0]);
        let y1 = lin.forward(&mut s, x).unwrap();
        let y2 = lin.forward(&mut s, x).unwrap();
        let a = s.tape.add(y1, y2).unwrap();
        let loss = s.tape.sum(a);
        let g = s.tape.backward(loss).unwrap();
        let pg = s.param_grads(&g);
        // d/dW of 2·(x·W) summed over outputs is 2·x in every column.
        assert_eq!(pg[0].as_ref().unwrap(), &vec![2.0, 2.0, 4.0, 4.0, 6.0, 6.0]);
        assert_eq!(pg[1].as_ref().unwrap(), &vec![2.0, 2.0]);
    }

    #[test]
    fn dropout_only_in_training() {
        let store = ParamStore::new();
        let mut s = Session::new(&store);
        let x = s.tape.constant_vec(vec![1.0; 100]);
        assert_eq!(s.dropout(x).unwrap(), x);

        let mut s = Session::training(&store, 0.5, 3);
        let x = s.tape.constant_vec(vec![1.0; 100]);
        let y = s.dropout(x).unwrap();
        assert!(s.tape.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(s.tape.value(y).contains(&0.0));
    }

    #[test]
    fn uniform_init_range() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let id = store.uniform("w", &[10, 10], &mut rng);
        assert!(store.get(id).data().iter().all(|x| x.abs() <= INIT_RANGE));
        assert_eq!(store.numel(), 100);
        assert_eq!(store.find("w"), Some(id));
    }
}
