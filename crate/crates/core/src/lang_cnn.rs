//! History encoder over previously generated words.
//!
//! The last `window` word embeddings are stacked into a `[window × K]`
//! matrix, passed through a stack of valid (unpadded, stride 1) temporal
//! convolutions with no pooling, flattened, projected back to `K`, and
//! finally sent through a highway layer.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Affine, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kernel_size: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn relu(kernel_size: usize) -> Self {
        Self {
            kernel_size,
            activation: Activation::Relu,
        }
    }
}

/// How the history window is summarized before projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryMode {
    /// Temporal convolution stack.
    Conv,
    /// Plain mean of the history embeddings (ablation baseline).
    Average,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LangCnnConfig {
    /// Maximum number of history words seen (`L_L`).
    pub window: usize,
    pub embed_dim: usize,
    pub layers: Vec<ConvLayerSpec>,
    /// Replace the 2nd and 4th convolutions by max-pooling (kernel 2, stride 2).
    pub max_pool_variant: bool,
    pub mode: HistoryMode,
}

/// Default kernel sizes of the 16-word stack.
pub const DEFAULT_KERNELS: [usize; 5] = [5, 5, 3, 3, 3];
pub const DEFAULT_WINDOW: usize = 16;

impl LangCnnConfig {
    pub fn new(window: usize, embed_dim: usize, kernels: &[usize]) -> Self {
        Self {
            window,
            embed_dim,
            layers: kernels.iter().map(|&k| ConvLayerSpec::relu(k)).collect(),
            max_pool_variant: false,
            mode: HistoryMode::Conv,
        }
    }

    /// 16 words, kernels `[5, 5, 3, 3, 3]`.
    pub fn standard(embed_dim: usize) -> Self {
        Self::new(DEFAULT_WINDOW, embed_dim, &DEFAULT_KERNELS)
    }

    /// Window-size ablation presets. Shorter windows use shallower stacks
    /// that reduce to a single position.
    pub fn window_preset(words: usize, embed_dim: usize) -> Result<Self> {
        let kernels: &[usize] = match words {
            2 => &[2],
            4 => &[3, 2],
            8 => &[5, 3, 2],
            16 => &DEFAULT_KERNELS,
            other => {
                return Err(Error::Config(format!(
                    "no window preset for {other} words (expected 2, 4, 8 or 16)"
                )))
            }
        };
        Ok(Self::new(words, embed_dim, kernels))
    }

    pub fn with_max_pool(mut self) -> Self {
        self.max_pool_variant = true;
        self
    }

    pub fn averaging(window: usize, embed_dim: usize) -> Self {
        Self {
            window,
            embed_dim,
            layers: Vec::new(),
            max_pool_variant: false,
            mode: HistoryMode::Average,
        }
    }

    /// The effective stage sequence. In the max-pool variant layers 2 and 4
    /// become pooling stages, and a later convolution whose kernel no longer
    /// fits is narrowed to the remaining length.
    pub fn stages(&self) -> Result<Vec<Stage>> {
        if self.mode == HistoryMode::Average {
            return Ok(Vec::new());
        }
        let mut len = self.window;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let stage = if self.max_pool_variant && (i == 1 || i == 3) {
                if len < 2 {
                    return Err(self.too_short(i, 2, len));
                }
                Stage::Pool { kernel: 2 }
            } else {
                let k = if self.max_pool_variant {
                    layer.kernel_size.min(len)
                } else {
                    layer.kernel_size
                };
                if k == 0 || k > len {
                    return Err(self.too_short(i, layer.kernel_size, len));
                }
                Stage::Conv {
                    kernel: k,
                    activation: layer.activation,
                }
            };
            len = stage.output_len(len);
            out.push(stage);
        }
        Ok(out)
    }

    fn too_short(&self, layer: usize, kernel: usize, len: usize) -> Error {
        Error::Config(format!(
            "layer {layer}: kernel {kernel} exceeds temporal length {len} (window {})",
            self.window
        ))
    }

    /// Temporal length after each stage, starting with the window itself.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![self.window];
        for st in self.stages()? {
            lens.push(st.output_len(*lens.last().unwrap()));
        }
        Ok(lens)
    }

    /// Width of the flattened encoder output fed to the projection.
    pub fn flat_width(&self) -> Result<usize> {
        Ok(match self.mode {
            HistoryMode::Average => self.embed_dim,
            HistoryMode::Conv => *self.stage_lengths()?.last().unwrap() * self.embed_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.embed_dim == 0 {
            return Err(Error::Config("window and embedding width must be positive".into()));
        }
        if self.mode == HistoryMode::Conv && self.layers.is_empty() {
            return Err(Error::Config("convolutional history needs at least one layer".into()));
        }
        self.stages().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv { kernel: usize, activation: Activation },
    Pool { kernel: usize },
}

impl Stage {
    pub fn output_len(self, len: usize) -> usize {
        match self {
            Stage::Conv { kernel, .. } => len - kernel + 1,
            Stage::Pool { kernel } => len / kernel,
        }
    }
}

/// Assembles the `[window × K]` encoder input for time step `t`.
///
/// With `t ≥ window` the last `window` embeddings are used. Otherwise the
/// `t` embeddings are followed by padding rows: copies of the image vector
/// when `t = 0`, zero rows when `t > 0`.
pub fn build_input_window(tape: &mut Tape<'_>, history: &[Var], image: Var, window: usize) -> Result<Var> {
    let k = tape.shape(image)[0];
    if tape.shape(image).len() != 1 {
        return Err(Error::dim("build_input_window", tape.shape(image), &[k]));
    }
    for &h in history {
        if tape.shape(h) != [k] {
            return Err(Error::dim("build_input_window", tape.shape(h), &[k]));
        }
    }
    let t = history.len();
    if t >= window {
        return tape.concat_rows(&history[t - window..]);
    }
    let mut rows = history.to_vec();
    if t == 0 {
        rows.resize(window, image);
    } else {
        let pad = tape.zeros(&[window - t, k]);
        rows.push(pad);
    }
    tape.concat_rows(&rows)
}

/// One temporal convolution: output row `i` is `σ(W · flat(x[i..i+k]) + b)`.
pub fn temporal_conv_forward(
    tape: &mut Tape<'_>,
    input: Var,
    kernel: usize,
    activation: Activation,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let patches = tape.unfold_rows(input, kernel)?;
    let lin = tape.matmul(patches, weight)?;
    let pre = tape.add(lin, bias)?;
    Ok(activation.apply(tape, pre))
}

/// `g ⊙ relu(x·W_H + b_H) + (1 − g) ⊙ x` with `g = sigmoid(x·W_T + b_T)`.
pub fn highway_forward(tape: &mut Tape<'_>, x: Var, w_t: Var, b_t: Var, w_h: Var, b_h: Var) -> Result<Var> {
    let gate_pre = tape.matmul(x, w_t)?;
    let gate_pre = tape.add(gate_pre, b_t)?;
    let gate = tape.sigmoid(gate_pre);
    let cand_pre = tape.matmul(x, w_h)?;
    let cand_pre = tape.add(cand_pre, b_h)?;
    let cand = tape.relu(cand_pre);
    let carry = tape.one_minus(gate);
    let a = tape.mul(gate, cand)?;
    let b = tape.mul(carry, x)?;
    tape.add(a, b)
}

/// Initial transform-gate bias: the highway starts close to the identity.
pub const HIGHWAY_GATE_BIAS: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Highway {
    pub transform: Affine,
    pub candidate: Affine,
}

impl Highway {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            transform: Affine::with_bias(store, &format!("{name}.gate"), dim, dim, HIGHWAY_GATE_BIAS, rng),
            candidate: Affine::new(store, &format!("{name}.cand"), dim, dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (wt, bt) = (s.p(self.transform.weight), s.p(self.transform.bias));
        let (wh, bh) = (s.p(self.candidate.weight), s.p(self.candidate.bias));
        highway_forward(&mut s.tape, x, wt, bt, wh, bh)
    }

    pub fn numel(&self) -> usize {
        self.transform.numel() + self.candidate.numel()
    }
}

/// Parameters of the history encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LangCnn {
    pub config: LangCnnConfig,
    stages: Vec<Stage>,
    /// One entry per convolution stage, in order.
    convs: Vec<Affine>,
    pub projection: Affine,
    pub highway: Highway,
}

impl LangCnn {
    pub fn new(config: LangCnnConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let k = config.embed_dim;
        let stages = config.stages()?;
        let mut convs = Vec::new();
        for (i, st) in stages.iter().enumerate() {
            if let Stage::Conv { kernel, .. } = st {
                convs.push(Affine::new(store, &format!("cnn.conv{i}"), kernel * k, k, rng));
            }
        }
        let projection = Affine::new(store, "cnn.proj", config.flat_width()?, k, rng);
        let highway = Highway::new(store, "cnn.highway", k, rng);
        Ok(Self {
            config,
            stages,
            convs,
            projection,
            highway,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// `y^[t]` from a window built by [`build_input_window`]. `history_len`
    /// is the number of real words the window was built from; only the
    /// averaging mode looks at it.
    pub fn encode(&self, s: &mut Session<'_>, window: Var, history_len: usize) -> Result<Var> {
        let k = self.config.embed_dim;
        let expected = [self.config.window, k];
        if s.tape.shape(window) != expected {
            return Err(Error::dim("encode_history", s.tape.shape(window), &expected));
        }
        let flat = match self.config.mode {
            HistoryMode::Average => {
                let rows = if history_len == 0 {
                    self.config.window
                } else {
                    history_len.min(self.config.window)
                };
                let used = if rows == self.config.window {
                    window
                } else {
                    let v = s.tape.reshape(window, &[self.config.window * k])?;
                    let v = s.tape.slice(v, 0, rows * k)?;
                    s.tape.reshape(v, &[rows, k])?
                };
                s.tape.mean_rows(used)?
            }
            HistoryMode::Conv => {
                let mut x = window;
                let mut convs = self.convs.iter();
                for st in &self.stages {
                    x = match *st {
                        Stage::Conv { kernel, activation } => {
                            let c = convs.next().expect("one affine per conv stage");
                            let (w, b) = (s.p(c.weight), s.p(c.bias));
                            temporal_conv_forward(&mut s.tape, x, kernel, activation, w, b)?
                        }
                        Stage::Pool { kernel } => s.tape.max_pool_rows(x, kernel)?,
                    };
                }
                let n = s.tape.value(x).len();
                s.tape.reshape(x, &[n])?
            }
        };
        let proj = self.projection.forward(s, flat)?;
        let proj = s.tape.relu(proj);
        self.highway.forward(s, proj)
    }

    pub fn numel(&self) -> usize {
        self.convs.iter().map(Affine::numel).sum::<usize>() + self.projection.numel() + self.highway.numel()
    }
}
