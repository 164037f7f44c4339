use std::borrow::Cow;

use super::{check_shape, scaled_tanh, sigmoid, Tensor, SCALED_TANH_A, SCALED_TANH_B};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    ScaledTanh,
    OneMinus,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `bcast` marks a row vector broadcast over the rows of `a`.
    Add {
        a: Var,
        b: Var,
        bcast: bool,
    },
    Sub(Var, Var),
    Mul {
        a: Var,
        b: Var,
        bcast: bool,
    },
    Scale(Var, f64),
    Unary(Unary, Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        index: usize,
    },
    ConcatRows(Vec<Var>),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    Unfold {
        src: Var,
        kernel: usize,
    },
    MaxPool {
        src: Var,
        argmax: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order; a node can only refer to nodes
/// recorded before it, so the node list is always topologically sorted.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss through differentiable operations.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`], but unreachable values report zeros.
    pub fn get_or_zeros(&self, v: Var) -> Cow<'_, [f64]> {
        match self.get(v) {
            Some(g) => Cow::Borrowed(g),
            None => Cow::Owned(vec![0.0; self.sizes[v.0]]),
        }
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (0, 0),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a borrowed leaf; it receives gradients iff the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, needs)
    }

    /// Records an owned leaf that takes part in differentiation.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, true)
    }

    /// Records an owned leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.to_vec()).expect("node shapes are validated on record")
    }

    /// `a · b` for `a: [m×k]` (or a row vector `[k]`) and `b: [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = rows_cols(sa);
        let ok = matches!(sa.len(), 1 | 2) && sb.len() == 2 && sb[0] == k;
        if !ok {
            return Err(Error::dim("matmul", sa, sb));
        }
        let n = sb[1];
        let out_shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(out_shape, Cow::Owned(out), Op::MatMul(a, b), needs))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            Ok(true)
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    /// Elementwise sum; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_kind("add", a, b)?;
        let out = binary_raw(self.value(a), self.value(b), bcast, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), Op::Add { a, b, bcast }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("sub", self.shape(a), self.shape(b)));
        }
        let out = binary_raw(self.value(a), self.value(b), false, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), Op::Sub(a, b), needs))
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_kind("mul", a, b)?;
        let out = binary_raw(self.value(a), self.value(b), bcast, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), Op::Mul { a, b, bcast }, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a]);
        self.push(shape, Cow::Owned(out), Op::Scale(a, c), needs)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::ScaledTanh => scaled_tanh,
            Unary::OneMinus => |x| 1.0 - x,
        };
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a]);
        self.push(shape, Cow::Owned(out), Op::Unary(kind, a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    /// `1.7159 · tanh(2x/3)`.
    pub fn scaled_tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::ScaledTanh, a)
    }

    /// `1 − x`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(Unary::OneMinus, a)
    }

    /// `−log softmax(logits)[target]` for a logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 1 {
            return Err(Error::dim("softmax_cross_entropy", shape, &[]));
        }
        let v = shape[0];
        if target >= v {
            return Err(Error::Index {
                what: "softmax target",
                index: target,
                len: v,
            });
        }
        let probs = super::softmax(self.value(logits));
        let loss = -super::log_softmax(self.value(logits))[target];
        let needs = self.grad_of(&[logits]);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            Op::CrossEntropy { logits, target, probs },
            needs,
        ))
    }

    /// Row `index` of a `[V×K]` table, as a `[K]` vector.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::dim("embedding", shape, &[]));
        }
        let (v, k) = (shape[0], shape[1]);
        if index >= v {
            return Err(Error::Index {
                what: "embedding table",
                index,
                len: v,
            });
        }
        let row = self.value(table)[index * k..(index + 1) * k].to_vec();
        let needs = self.grad_of(&[table]);
        Ok(self.push(vec![k], Cow::Owned(row), Op::Embedding { table, index }, needs))
    }

    /// Stacks `[K]` vectors and `[r×K]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of an empty list".into()))?;
        let cols = *self.shape(first).last().unwrap();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() > 2 || *s.last().unwrap() != cols {
                return Err(Error::dim("concat_rows", self.shape(first), s));
            }
            rows += rows_cols(s).0;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let needs = self.grad_of(parts);
        Ok(self.push(vec![rows, cols], Cow::Owned(out), Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of an empty list".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dim("concat", self.shape(p), &[]));
            }
            out.extend_from_slice(self.value(p));
        }
        let needs = self.grad_of(parts);
        Ok(self.push(vec![out.len()], Cow::Owned(out), Op::Concat(parts.to_vec()), needs))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::dim("slice", s, &[start, len]));
        }
        let out = self.value(src)[start..start + len].to_vec();
        let needs = self.grad_of(&[src]);
        Ok(self.push(vec![len], Cow::Owned(out), Op::Slice { src, start }, needs))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(src).len() {
            return Err(Error::dim("reshape", self.shape(src), shape));
        }
        let out = self.value(src).to_vec();
        let needs = self.grad_of(&[src]);
        Ok(self.push(shape.to_vec(), Cow::Owned(out), Op::Reshape(src), needs))
    }

    /// Sliding windows over the rows of `[M×K]`: row `i` of the `[(M−k+1)×(k·K)]`
    /// result is rows `i..i+k` of the input laid end to end.
    pub fn unfold_rows(&mut self, src: Var, kernel: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 || kernel == 0 || kernel > s[0] {
            return Err(Error::dim("unfold_rows", s, &[kernel]));
        }
        let (m, k) = (s[0], s[1]);
        let out_rows = m - kernel + 1;
        let width = kernel * k;
        let x = self.value(src);
        let mut out = Vec::with_capacity(out_rows * width);
        for i in 0..out_rows {
            out.extend_from_slice(&x[i * k..i * k + width]);
        }
        let needs = self.grad_of(&[src]);
        Ok(self.push(
            vec![out_rows, width],
            Cow::Owned(out),
            Op::Unfold { src, kernel },
            needs,
        ))
    }

    /// Temporal max-pooling over rows with window `kernel` and stride `kernel`.
    /// Trailing rows that do not fill a window are dropped. Ties pick the
    /// earliest row.
    pub fn max_pool_rows(&mut self, src: Var, kernel: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 || kernel == 0 || kernel > s[0] {
            return Err(Error::dim("max_pool_rows", s, &[kernel]));
        }
        let (m, k) = (s[0], s[1]);
        let out_rows = m / kernel;
        let x = self.value(src);
        let mut out = Vec::with_capacity(out_rows * k);
        let mut argmax = Vec::with_capacity(out_rows * k);
        for i in 0..out_rows {
            for c in 0..k {
                let mut best = i * kernel;
                for r in i * kernel + 1..(i + 1) * kernel {
                    if x[r * k + c] > x[best * k + c] {
                        best = r;
                    }
                }
                out.push(x[best * k + c]);
                argmax.push(best * k + c);
            }
        }
        let needs = self.grad_of(&[src]);
        Ok(self.push(vec![out_rows, k], Cow::Owned(out), Op::MaxPool { src, argmax }, needs))
    }

    /// Column means of `[M×K]`, giving `[K]`.
    pub fn mean_rows(&mut self, src: Var) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(Error::dim("mean_rows", s, &[]));
        }
        let (m, k) = (s[0], s[1]);
        let x = self.value(src);
        let mut out = vec![0.0; k];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(&x[r * k..(r + 1) * k]) {
                *o += v;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let needs = self.grad_of(&[src]);
        Ok(self.push(vec![k], Cow::Owned(out), Op::MeanRows(src), needs))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let total: f64 = self.value(src).iter().sum();
        let needs = self.grad_of(&[src]);
        self.push(vec![1], Cow::Owned(vec![total]), Op::Sum(src), needs)
    }

    /// Sum of several one-element nodes, accumulated left to right.
    pub fn add_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter();
        let mut acc = *iter
            .next()
            .ok_or_else(|| Error::Contract("add_scalars of an empty list".into()))?;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 || ln.shape.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        if ln.needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only leaves and nodes that actually require gradients are reported.
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, sizes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(self.shape(*a));
                let n = self.shape(*b)[1];
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(grads, *a, &mut |ga| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let brow = &bv[c * n..(c + 1) * n];
                            ga[r * k + c] += dot(grow, brow);
                        }
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let s = av[r * k + c];
                            if s != 0.0 {
                                axpy(s, grow, &mut gb[c * n..(c + 1) * n]);
                            }
                        }
                    }
                });
            }
            Op::Add { a, b, bcast } => {
                acc(grads, *a, &mut |ga| axpy(1.0, g, ga));
                acc(grads, *b, &mut |gb| {
                    if *bcast {
                        for row in g.chunks(gb.len()) {
                            axpy(1.0, row, gb);
                        }
                    } else {
                        axpy(1.0, g, gb);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &mut |ga| axpy(1.0, g, ga));
                acc(grads, *b, &mut |gb| axpy(-1.0, g, gb));
            }
            Op::Mul { a, b, bcast } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(grads, *a, &mut |ga| {
                    for (j, x) in ga.iter_mut().enumerate() {
                        let bj = if *bcast { bv[j % bv.len()] } else { bv[j] };
                        *x += g[j] * bj;
                    }
                });
                acc(grads, *b, &mut |gb| {
                    let w = gb.len();
                    for (j, (gj, aj)) in g.iter().zip(av.iter()).enumerate() {
                        gb[j % w] += gj * aj;
                    }
                });
            }
            Op::Scale(a, c) => acc(grads, *a, &mut |ga| axpy(*c, g, ga)),
            Op::Unary(kind, a) => {
                let y = &node.value;
                let x = self.value(*a);
                acc(grads, *a, &mut |ga| {
                    for j in 0..ga.len() {
                        let d = match kind {
                            Unary::Sigmoid => y[j] * (1.0 - y[j]),
                            Unary::Tanh => 1.0 - y[j] * y[j],
                            Unary::Relu => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::ScaledTanh => {
                                let t = (SCALED_TANH_B * x[j]).tanh();
                                SCALED_TANH_A * SCALED_TANH_B * (1.0 - t * t)
                            }
                            Unary::OneMinus => -1.0,
                        };
                        ga[j] += g[j] * d;
                    }
                });
            }
            Op::CrossEntropy { logits, target, probs } => acc(grads, *logits, &mut |gl| {
                for (j, p) in probs.iter().enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    gl[j] += g[0] * (p - onehot);
                }
            }),
            Op::Embedding { table, index } => {
                let k = g.len();
                acc(grads, *table, &mut |gt| {
                    axpy(1.0, g, &mut gt[index * k..(index + 1) * k]);
                });
            }
            Op::ConcatRows(parts) | Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    acc(grads, *p, &mut |gp| axpy(1.0, &g[off..off + len], gp));
                    off += len;
                }
            }
            Op::Slice { src, start } => {
                acc(grads, *src, &mut |gs| {
                    axpy(1.0, g, &mut gs[*start..*start + g.len()]);
                });
            }
            Op::Reshape(src) => acc(grads, *src, &mut |gs| axpy(1.0, g, gs)),
            Op::Unfold { src, kernel } => {
                let k = self.shape(*src)[1];
                let width = kernel * k;
                acc(grads, *src, &mut |gs| {
                    for (i, row) in g.chunks(width).enumerate() {
                        axpy(1.0, row, &mut gs[i * k..i * k + width]);
                    }
                });
            }
            Op::MaxPool { src, argmax } => acc(grads, *src, &mut |gs| {
                for (gj, &j) in g.iter().zip(argmax) {
                    gs[j] += gj;
                }
            }),
            Op::MeanRows(src) => {
                let m = self.shape(*src)[0];
                let inv = 1.0 / m as f64;
                acc(grads, *src, &mut |gs| {
                    for row in gs.chunks_mut(g.len()) {
                        axpy(inv, g, row);
                    }
                });
            }
            Op::Sum(src) => acc(grads, *src, &mut |gs| gs.iter_mut().for_each(|x| *x += g[0])),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let s = a[r * k + c];
            if s != 0.0 {
                axpy(s, &b[c * n..(c + 1) * n], orow);
            }
        }
    }
    out
}

fn binary_raw(a: &[f64], b: &[f64], bcast: bool, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if bcast {
        let w = b.len();
        a.iter().enumerate().map(|(j, &x)| f(x, b[j % w])).collect()
    } else {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(tape: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        tape.variable(Tensor::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i = var(&mut t, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = var(&mut t, &[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let p = t.matmul(i, b).unwrap();
        assert_eq!(t.value(p), &[3.0, 4.0, 5.0, 6.0]);

        let a = var(&mut t, &[1, 2], &[1.0, 2.0]);
        let c = var(&mut t, &[2, 1], &[3.0, 4.0]);
        let p = t.matmul(a, c).unwrap();
        assert_eq!(t.shape(p), &[1, 1]);
        assert_eq!(t.value(p), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.zeros(&[2, 3]);
        let b = t.zeros(&[2, 3]);
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn sum_gives_ones_and_square_gives_twice() {
        let mut t = Tape::new();
        let x = var(&mut t, &[3], &[1.0, -2.0, 0.5]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = var(&mut t, &[3], &[1.0, -2.0, 0.5]);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn unreachable_leaf_reports_zero() {
        let mut t = Tape::new();
        let x = var(&mut t, &[2], &[1.0, 2.0]);
        let y = var(&mut t, &[2], &[3.0, 4.0]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(&*g.get_or_zeros(y), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = var(&mut t, &[2], &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let x = var(&mut t, &[3], &[0.0, 1.5, -1.0]);
        let st = t.scaled_tanh(x);
        assert_eq!(t.value(st)[0], 0.0);
        assert_eq!(t.value(st)[1], 1.7159 * 1.0f64.tanh());
        let sg = t.sigmoid(x);
        assert_eq!(t.value(sg)[0], 0.5);
        let r = t.relu(x);
        assert_eq!(t.value(r), &[0.0, 1.5, 0.0]);
    }

    #[test]
    fn broadcast_rules() {
        let mut t = Tape::new();
        let m = var(&mut t, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let v = var(&mut t, &[2], &[10.0, 20.0]);
        let s = t.add(m, v).unwrap();
        assert_eq!(t.value(s), &[11.0, 22.0, 13.0, 24.0]);
        let w = var(&mut t, &[3], &[1.0, 1.0, 1.0]);
        assert!(matches!(t.add(m, w), Err(Error::Dimension { .. })));
        assert!(t.add(v, m).is_err());
        let total = t.sum(s);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(v).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_values_and_errors() {
        let mut t = Tape::new();
        let l = var(&mut t, &[4], &[0.3; 4]);
        let ce = t.softmax_cross_entropy(l, 2).unwrap();
        assert!((t.item(ce) - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(t.softmax_cross_entropy(l, 4), Err(Error::Index { .. })));
    }

    #[test]
    fn embedding_scatter_only_touches_row() {
        let mut t = Tape::new();
        let table = var(&mut t, &[3, 3], &[0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 1.0, 2.0, 3.0]);
        let row = t.embedding(table, 2).unwrap();
        assert_eq!(t.value(row), &[1.0, 2.0, 3.0]);
        let s = t.sum(row);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(table).unwrap(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(t.embedding(table, 3).is_err());
    }

    #[test]
    fn concat_rows_stacks_and_checks_columns() {
        let mut t = Tape::new();
        let a = var(&mut t, &[2], &[1.0, 2.0]);
        let b = var(&mut t, &[2], &[3.0, 4.0]);
        let c = t.concat_rows(&[a, b]).unwrap();
        assert_eq!(t.shape(c), &[2, 2]);
        assert_eq!(t.value(c), &[1.0, 2.0, 3.0, 4.0]);
        let single = t.concat_rows(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        let odd = var(&mut t, &[3], &[0.0; 3]);
        assert!(t.concat_rows(&[a, odd]).is_err());
    }

    #[test]
    fn unfold_and_pool_shapes() {
        let mut t = Tape::new();
        let x = var(&mut t, &[4, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let u = t.unfold_rows(x, 3).unwrap();
        assert_eq!(t.shape(u), &[2, 6]);
        assert_eq!(
            t.value(u),
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        );
        let p = t.max_pool_rows(x, 2).unwrap();
        assert_eq!(t.value(p), &[3.0, 4.0, 7.0, 8.0]);
        assert!(t.unfold_rows(x, 5).is_err());
    }

    #[test]
    fn shared_use_accumulates() {
        let mut t = Tape::new();
        let x = var(&mut t, &[2], &[1.0, 3.0]);
        let a = t.scale(x, 2.0);
        let b = t.scale(x, 5.0);
        let s = t.add(a, b).unwrap();
        let total = t.sum(s);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(x).unwrap(), &[7.0, 7.0]);
    }
}
