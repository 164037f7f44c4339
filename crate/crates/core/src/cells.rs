//! Recurrent transition functions: simple RNN, LSTM, GRU and RHN.
//!
//! All cells use the row-vector convention `x · W`. Stacked weight
//! matrices are sliced gate by gate in the order given on each step
//! function.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    SimpleRnn,
    Lstm,
    Gru,
    Rhn,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::SimpleRnn, CellKind::Lstm, CellKind::Gru, CellKind::Rhn];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::SimpleRnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Rhn => "rhn",
        }
    }

    pub fn has_memory(self) -> bool {
        self == CellKind::Lstm
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" | "simple_rnn" => Ok(CellKind::SimpleRnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "rhn" => Ok(CellKind::Rhn),
            other => Err(Error::Config(format!(
                "unknown cell kind `{other}` (expected rnn, lstm, gru or rhn)"
            ))),
        }
    }
}

/// Recurrent state recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellState {
    pub hidden: Var,
    /// LSTM memory cell; `None` for the other kinds.
    pub memory: Option<Var>,
}

/// Recurrent state as plain values, for carrying across tapes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateValues {
    pub hidden: Vec<f64>,
    pub memory: Option<Vec<f64>>,
}

impl StateValues {
    pub fn zeros(kind: CellKind, d: usize) -> Self {
        Self {
            hidden: vec![0.0; d],
            memory: kind.has_memory().then(|| vec![0.0; d]),
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>) -> CellState {
        CellState {
            hidden: tape.constant_vec(self.hidden.clone()),
            memory: self.memory.as_ref().map(|m| tape.constant_vec(m.clone())),
        }
    }

    pub fn read(tape: &Tape<'_>, state: &CellState) -> Self {
        Self {
            hidden: tape.value(state.hidden).to_vec(),
            memory: state.memory.map(|m| tape.value(m).to_vec()),
        }
    }
}

/// `z^[t] = [m^[t]; x^[t−1]]`.
pub fn make_input_z(tape: &mut Tape<'_>, fused: Var, prev_word: Var) -> Result<Var> {
    if tape.shape(fused) != tape.shape(prev_word) || tape.shape(fused).len() != 1 {
        return Err(Error::dim("make_input_z", tape.shape(fused), tape.shape(prev_word)));
    }
    tape.concat(&[fused, prev_word])
}

fn affine2(tape: &mut Tape<'_>, a: Var, wa: Var, b: Var, wb: Var, bias: Var) -> Result<Var> {
    let x = tape.matmul(a, wa)?;
    let y = tape.matmul(b, wb)?;
    let s = tape.add(x, y)?;
    tape.add(s, bias)
}

/// `r = tanh(r_prev · W_r + z · W_z + b)`.
pub fn rnn_step(tape: &mut Tape<'_>, r_prev: Var, z: Var, w_r: Var, w_z: Var, b: Var) -> Result<Var> {
    let pre = affine2(tape, r_prev, w_r, z, w_z, b)?;
    Ok(tape.tanh(pre))
}

/// Gates `[i, f, o, g]` from `z · W_x + h · W_h + b` (each `d` wide);
/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn lstm_step(
    tape: &mut Tape<'_>,
    h_prev: Var,
    c_prev: Var,
    z: Var,
    w_x: Var,
    w_h: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let d = tape.shape(h_prev)[0];
    let pre = affine2(tape, z, w_x, h_prev, w_h, b)?;
    if tape.shape(pre) != [4 * d] {
        return Err(Error::dim("lstm_step", tape.shape(pre), &[4 * d]));
    }
    let i = tape.slice(pre, 0, d)?;
    let f = tape.slice(pre, d, d)?;
    let o = tape.slice(pre, 2 * d, d)?;
    let g = tape.slice(pre, 3 * d, d)?;
    let (i, f, o, g) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o), tape.tanh(g));
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Update gate `u` and reset gate `s` from `z · W_x[:, ..2d] + h · W_hg + b[..2d]`;
/// candidate `h̃ = tanh(z · W_x[:, 2d..] + (s ⊙ h) · W_hc + b[2d..])`;
/// `h' = (1 − u) ⊙ h + u ⊙ h̃`.
pub fn gru_step(tape: &mut Tape<'_>, h_prev: Var, z: Var, w_x: Var, w_hg: Var, w_hc: Var, b: Var) -> Result<Var> {
    let d = tape.shape(h_prev)[0];
    let zx = tape.matmul(z, w_x)?;
    let zx = tape.add(zx, b)?;
    if tape.shape(zx) != [3 * d] {
        return Err(Error::dim("gru_step", tape.shape(zx), &[3 * d]));
    }
    let gates_x = tape.slice(zx, 0, 2 * d)?;
    let cand_x = tape.slice(zx, 2 * d, d)?;
    let gates_h = tape.matmul(h_prev, w_hg)?;
    let gates = tape.add(gates_x, gates_h)?;
    let u = tape.slice(gates, 0, d)?;
    let s = tape.slice(gates, d, d)?;
    let (u, s) = (tape.sigmoid(u), tape.sigmoid(s));
    let sh = tape.mul(s, h_prev)?;
    let cand_h = tape.matmul(sh, w_hc)?;
    let cand = tape.add(cand_x, cand_h)?;
    let cand = tape.tanh(cand);
    let carry = tape.one_minus(u);
    let a = tape.mul(carry, h_prev)?;
    let b = tape.mul(u, cand)?;
    tape.add(a, b)
}

/// `(t, c, h) = (σ, σ, tanh)` of the three `d`-wide slices of
/// `[r_prev; z] · M + b`; `r = h ⊙ t + c ⊙ r_prev`.
pub fn rhn_step(tape: &mut Tape<'_>, r_prev: Var, z: Var, m: Var, b: Var) -> Result<Var> {
    let d = tape.shape(r_prev)[0];
    let rz = tape.concat(&[r_prev, z])?;
    let pre = tape.matmul(rz, m)?;
    let pre = tape.add(pre, b)?;
    if tape.shape(pre) != [3 * d] {
        return Err(Error::dim("rhn_step", tape.shape(pre), &[3 * d]));
    }
    let t = tape.slice(pre, 0, d)?;
    let c = tape.slice(pre, d, d)?;
    let h = tape.slice(pre, 2 * d, d)?;
    let (t, c, h) = (tape.sigmoid(t), tape.sigmoid(c), tape.tanh(h));
    let transform = tape.mul(h, t)?;
    let carry = tape.mul(c, r_prev)?;
    tape.add(transform, carry)
}

/// Initial LSTM forget-gate bias.
pub const LSTM_FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
enum CellParams {
    SimpleRnn {
        w_r: ParamId,
        w_z: ParamId,
        b: ParamId,
    },
    Lstm {
        w_x: ParamId,
        w_h: ParamId,
        b: ParamId,
    },
    Gru {
        w_x: ParamId,
        w_hg: ParamId,
        w_hc: ParamId,
        b: ParamId,
    },
    Rhn {
        m: ParamId,
        b: ParamId,
    },
}

/// One recurrent layer with its parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    params: CellParams,
}

impl Cell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (n, d) = (input_dim, hidden_dim);
        let params = match kind {
            CellKind::SimpleRnn => CellParams::SimpleRnn {
                w_r: store.uniform(format!("{name}.w_r"), &[d, d], rng),
                w_z: store.uniform(format!("{name}.w_z"), &[n, d], rng),
                b: store.filled(format!("{name}.b"), &[d], 0.0),
            },
            CellKind::Lstm => {
                let w_x = store.uniform(format!("{name}.w_x"), &[n, 4 * d], rng);
                let w_h = store.uniform(format!("{name}.w_h"), &[d, 4 * d], rng);
                let mut bias = vec![0.0; 4 * d];
                bias[d..2 * d].iter_mut().for_each(|x| *x = LSTM_FORGET_BIAS);
                let b = store.add(format!("{name}.b"), crate::autograd::Tensor::vector(bias));
                CellParams::Lstm { w_x, w_h, b }
            }
            CellKind::Gru => CellParams::Gru {
                w_x: store.uniform(format!("{name}.w_x"), &[n, 3 * d], rng),
                w_hg: store.uniform(format!("{name}.w_hg"), &[d, 2 * d], rng),
                w_hc: store.uniform(format!("{name}.w_hc"), &[d, d], rng),
                b: store.filled(format!("{name}.b"), &[3 * d], 0.0),
            },
            CellKind::Rhn => CellParams::Rhn {
                m: store.uniform(format!("{name}.m"), &[d + n, 3 * d], rng),
                b: store.filled(format!("{name}.b"), &[3 * d], 0.0),
            },
        };
        Self {
            kind,
            input_dim,
            hidden_dim,
            params,
        }
    }

    pub fn zero_state(&self) -> StateValues {
        StateValues::zeros(self.kind, self.hidden_dim)
    }

    pub fn step(&self, s: &mut Session<'_>, state: &CellState, input: Var) -> Result<CellState> {
        if s.tape.shape(input) != [self.input_dim] {
            return Err(Error::dim("cell input", s.tape.shape(input), &[self.input_dim]));
        }
        if s.tape.shape(state.hidden) != [self.hidden_dim] {
            return Err(Error::dim("cell state", s.tape.shape(state.hidden), &[self.hidden_dim]));
        }
        match self.params {
            CellParams::SimpleRnn { w_r, w_z, b } => {
                let (w_r, w_z, b) = (s.p(w_r), s.p(w_z), s.p(b));
                let h = rnn_step(&mut s.tape, state.hidden, input, w_r, w_z, b)?;
                Ok(CellState {
                    hidden: h,
                    memory: None,
                })
            }
            CellParams::Lstm { w_x, w_h, b } => {
                let (w_x, w_h, b) = (s.p(w_x), s.p(w_h), s.p(b));
                let c_prev = state
                    .memory
                    .ok_or_else(|| Error::Contract("LSTM state without memory cell".into()))?;
                let (h, c) = lstm_step(&mut s.tape, state.hidden, c_prev, input, w_x, w_h, b)?;
                Ok(CellState {
                    hidden: h,
                    memory: Some(c),
                })
            }
            CellParams::Gru { w_x, w_hg, w_hc, b } => {
                let (w_x, w_hg, w_hc, b) = (s.p(w_x), s.p(w_hg), s.p(w_hc), s.p(b));
                let h = gru_step(&mut s.tape, state.hidden, input, w_x, w_hg, w_hc, b)?;
                Ok(CellState {
                    hidden: h,
                    memory: None,
                })
            }
            CellParams::Rhn { m, b } => {
                let (m, b) = (s.p(m), s.p(b));
                let h = rhn_step(&mut s.tape, state.hidden, input, m, b)?;
                Ok(CellState {
                    hidden: h,
                    memory: None,
                })
            }
        }
    }

    /// Scalar parameter count of this layer.
    pub fn numel(&self) -> usize {
        let (n, d) = (self.input_dim, self.hidden_dim);
        match self.kind {
            CellKind::SimpleRnn => d * d + n * d + d,
            CellKind::Lstm => 4 * (n * d + d * d + d),
            CellKind::Gru => 3 * n * d + 3 * d * d + 3 * d,
            CellKind::Rhn => (d + n) * 3 * d + 3 * d,
        }
    }
}
