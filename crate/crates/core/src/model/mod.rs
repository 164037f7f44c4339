//! The full captioner: image projection, history encoder, multimodal
//! fusion, recurrent layers and the softmax output layer.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, PARAMS_FILE, VOCAB_FILE};
pub use config::ModelConfig;
pub(crate) use config::{parse_bool, parse_f64, parse_usize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{log_softmax, Tape, Var};
use crate::cells::{make_input_z, Cell, CellState, StateValues};
use crate::data::START_ID;
use crate::error::{Error, Result};
use crate::lang_cnn::{build_input_window, LangCnn};
use crate::params::{Affine, ParamId, ParamStore, Session};

/// `scaled_tanh(y · W_Y + b_Y + V · W_V + b_V)`.
pub fn multimodal_fuse(
    tape: &mut Tape<'_>,
    words: Var,
    image: Var,
    w_y: Var,
    b_y: Var,
    w_v: Var,
    b_v: Var,
) -> Result<Var> {
    let fv = tape.matmul(image, w_v)?;
    let fv = tape.add(fv, b_v)?;
    fuse_with_image_term(tape, words, fv, w_y, b_y)
}

fn fuse_with_image_term(tape: &mut Tape<'_>, words: Var, image_term: Var, w_y: Var, b_y: Var) -> Result<Var> {
    let fy = tape.matmul(words, w_y)?;
    let fy = tape.add(fy, b_y)?;
    let sum = tape.add(fy, image_term)?;
    Ok(tape.scaled_tanh(sum))
}

/// Per-sequence values shared by every step.
#[derive(Clone, Copy, Debug)]
pub struct SequenceContext {
    /// Projected image vector `V`, width `K`.
    pub image: Var,
    /// `g_v(V)`.
    pub image_term: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionerModel {
    config: ModelConfig,
    store: ParamStore,
    embedding: ParamId,
    image_proj: Affine,
    lang_cnn: Option<LangCnn>,
    fuse_words: Option<Affine>,
    fuse_image: Affine,
    cells: Vec<Cell>,
    output: Affine,
}

impl CaptionerModel {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (v, k, d) = (config.vocab_size, config.embed_dim, config.hidden_dim);

        let embedding = store.uniform("embedding", &[v, k], &mut rng);
        let image_proj = Affine::new(&mut store, "image_proj", config.feature_dim, k, &mut rng);
        let (lang_cnn, fuse_words) = if config.use_cnn_l {
            let cnn = LangCnn::new(config.lang_cnn.clone(), &mut store, &mut rng)?;
            let fy = Affine::new(&mut store, "fuse.words", k, k, &mut rng);
            (Some(cnn), Some(fy))
        } else {
            (None, None)
        };
        let fuse_image = Affine::new(&mut store, "fuse.image", k, k, &mut rng);
        let mut cells = Vec::with_capacity(config.cell_layers);
        for layer in 0..config.cell_layers {
            let input = if layer == 0 { 2 * k } else { d };
            cells.push(Cell::new(
                &mut store,
                &format!("cell{layer}"),
                config.cell,
                input,
                d,
                &mut rng,
            ));
        }
        let output = Affine::new(&mut store, "output", d, v, &mut rng);
        Ok(Self {
            config,
            store,
            embedding,
            image_proj,
            lang_cnn,
            fuse_words,
            fuse_image,
            cells,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn lang_cnn(&self) -> Option<&LangCnn> {
        self.lang_cnn.as_ref()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn parameter_count(&self) -> usize {
        self.store.numel()
    }

    /// Parameter counts per component, in registration order.
    pub fn parameter_report(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![
            ("embedding", self.config.vocab_size * self.config.embed_dim),
            ("image_proj", self.image_proj.numel()),
        ];
        if let (Some(cnn), Some(fy)) = (&self.lang_cnn, &self.fuse_words) {
            out.push(("lang_cnn", cnn.numel()));
            out.push(("multimodal", fy.numel() + self.fuse_image.numel()));
        } else {
            out.push(("multimodal", self.fuse_image.numel()));
        }
        out.push(("recurrent", self.cells.iter().map(Cell::numel).sum()));
        out.push(("output", self.output.numel()));
        out
    }

    pub fn initial_state(&self) -> Vec<StateValues> {
        self.cells.iter().map(Cell::zero_state).collect()
    }

    /// Projects the image features and precomputes the fusion image term.
    pub fn begin(&self, s: &mut Session<'_>, features: &[f64]) -> Result<SequenceContext> {
        if features.len() != self.config.feature_dim {
            return Err(Error::dim(
                "image features",
                &[features.len()],
                &[self.config.feature_dim],
            ));
        }
        let raw = s.tape.constant_vec(features.to_vec());
        let image = self.image_proj.forward(s, raw)?;
        let image_term = self.fuse_image.forward(s, image)?;
        Ok(SequenceContext { image, image_term })
    }

    pub fn embed(&self, s: &mut Session<'_>, token: usize) -> Result<Var> {
        let table = s.p(self.embedding);
        s.tape.embedding(table, token)
    }

    /// One time step. `history` holds the embeddings of all previous words;
    /// `state` has one entry per recurrent layer.
    pub fn step_on(
        &self,
        s: &mut Session<'_>,
        ctx: &SequenceContext,
        history: &[Var],
        state: &[CellState],
    ) -> Result<(Var, Vec<CellState>)> {
        if state.len() != self.cells.len() {
            return Err(Error::Contract(format!(
                "expected {} recurrent states, got {}",
                self.cells.len(),
                state.len()
            )));
        }
        let k = self.config.embed_dim;
        let t = history.len();
        let fused = match (&self.lang_cnn, &self.fuse_words) {
            (Some(cnn), Some(fy)) => {
                let window = build_input_window(&mut s.tape, history, ctx.image, cnn.config.window)?;
                let y = cnn.encode(s, window, t)?;
                let (w_y, b_y) = (s.p(fy.weight), s.p(fy.bias));
                let m = fuse_with_image_term(&mut s.tape, y, ctx.image_term, w_y, b_y)?;
                s.dropout(m)?
            }
            // Recurrent-only baseline: the image enters once, at t = 0.
            _ if t == 0 => ctx.image_term,
            _ => s.tape.zeros(&[k]),
        };
        let prev = match history.last() {
            Some(&x) => x,
            None => s.tape.zeros(&[k]),
        };
        let mut input = make_input_z(&mut s.tape, fused, prev)?;
        let mut next = Vec::with_capacity(self.cells.len());
        for (cell, st) in self.cells.iter().zip(state) {
            let ns = cell.step(s, st, input)?;
            input = ns.hidden;
            next.push(ns);
        }
        let top = s.dropout(input)?;
        let logits = self.output.forward(s, top)?;
        Ok((logits, next))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                len: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Teacher-forced negative log-likelihood of `tokens` (which must start
    /// with `<START>` and hold at least two entries), summed over every
    /// position including the `<START>` prediction at `t = 0`.
    pub fn sequence_loss_on(&self, s: &mut Session<'_>, tokens: &[usize], features: &[f64]) -> Result<Var> {
        if tokens.len() < 2 {
            return Err(Error::Contract(format!(
                "sequence loss needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        self.check_tokens(tokens)?;
        let ctx = self.begin(s, features)?;
        let mut state: Vec<CellState> = self.initial_state().iter().map(|v| v.record(&mut s.tape)).collect();
        let mut history = Vec::with_capacity(tokens.len());
        let mut terms = Vec::with_capacity(tokens.len());
        for (t, &target) in tokens.iter().enumerate() {
            if t > 0 {
                history.push(self.embed(s, tokens[t - 1])?);
            }
            let (logits, next) = self.step_on(s, &ctx, &history, &state)?;
            terms.push(s.tape.softmax_cross_entropy(logits, target)?);
            state = next;
        }
        s.tape.add_scalars(&terms)
    }

    /// Loss value with dropout disabled.
    pub fn sequence_loss(&self, tokens: &[usize], features: &[f64]) -> Result<f64> {
        let mut s = Session::new(&self.store);
        let loss = self.sequence_loss_on(&mut s, tokens, features)?;
        Ok(s.tape.item(loss))
    }

    /// Loss and per-parameter gradients for one example. `dropout_seed`
    /// switches on training-mode dropout.
    pub fn example_gradients(
        &self,
        tokens: &[usize],
        features: &[f64],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut s = match dropout_seed {
            Some(seed) => Session::training(&self.store, self.config.dropout, seed),
            None => Session::new(&self.store),
        };
        let loss = self.sequence_loss_on(&mut s, tokens, features)?;
        let grads = s.tape.backward(loss)?;
        Ok((s.tape.item(loss), s.param_grads(&grads)))
    }

    /// Evaluation-mode step on fresh tape: logits for position
    /// `history.len()` and the updated recurrent state.
    pub fn step(
        &self,
        history: &[usize],
        features: &[f64],
        state: &[StateValues],
    ) -> Result<(Vec<f64>, Vec<StateValues>)> {
        self.check_tokens(history)?;
        let mut s = Session::new(&self.store);
        let ctx = self.begin(&mut s, features)?;
        let emb = history
            .iter()
            .map(|&tok| self.embed(&mut s, tok))
            .collect::<Result<Vec<_>>>()?;
        let recorded: Vec<CellState> = state.iter().map(|v| v.record(&mut s.tape)).collect();
        let (logits, next) = self.step_on(&mut s, &ctx, &emb, &recorded)?;
        let next = next.iter().map(|c| StateValues::read(&s.tape, c)).collect();
        Ok((s.tape.value(logits).to_vec(), next))
    }

    /// Mean per-token cross-entropy over a set of `(tokens, features)` pairs.
    pub fn mean_token_loss<'r>(&self, examples: impl IntoIterator<Item = (&'r [usize], &'r [f64])>) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (tokens, feats) in examples {
            total += self.sequence_loss(tokens, feats)?;
            count += tokens.len();
        }
        if count == 0 {
            return Err(Error::Contract("mean_token_loss over no examples".into()));
        }
        Ok(total / count as f64)
    }
}

/// Decoder-facing view of a model.
pub trait Decodable {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// State after the `t = 0` step, ready to continue from `[<START>]`.
    fn start_state(&self, image: &[f64]) -> Result<Self::State>;

    /// Log-probabilities for the token after `history` and the new state.
    fn next_log_probs(&self, image: &[f64], history: &[usize], state: &Self::State) -> Result<(Vec<f64>, Self::State)>;
}

impl Decodable for CaptionerModel {
    type State = Vec<StateValues>;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn start_state(&self, image: &[f64]) -> Result<Self::State> {
        let (_, state) = self.step(&[], image, &self.initial_state())?;
        Ok(state)
    }

    fn next_log_probs(&self, image: &[f64], history: &[usize], state: &Self::State) -> Result<(Vec<f64>, Self::State)> {
        debug_assert_eq!(history.first(), Some(&START_ID));
        let (logits, next) = self.step(history, image, state)?;
        Ok((log_softmax(&logits), next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::lang_cnn::LangCnnConfig;

    fn small(cell: CellKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 4,
            hidden_dim: 5,
            feature_dim: 3,
            cell,
            cell_layers: 1,
            use_cnn_l: true,
            lang_cnn: LangCnnConfig::new(6, 4, &[3, 2]),
            dropout: 0.0,
        }
    }

    #[test]
    fn logits_width_is_vocab_for_all_cells() {
        for cell in CellKind::ALL {
            let m = CaptionerModel::new(small(cell), 1).unwrap();
            let (logits, st) = m.step(&[0, 3, 4], &[0.1, 0.2, 0.3], &m.initial_state()).unwrap();
            assert_eq!(logits.len(), 12);
            assert_eq!(st[0].hidden.len(), 5);
            assert_eq!(st[0].memory.is_some(), cell == CellKind::Lstm);
        }
    }

    #[test]
    fn registered_parameters_match_report() {
        for cell in CellKind::ALL {
            for use_cnn_l in [true, false] {
                let mut cfg = small(cell);
                cfg.use_cnn_l = use_cnn_l;
                cfg.cell_layers = 2;
                let m = CaptionerModel::new(cfg, 3).unwrap();
                let total: usize = m.parameter_report().iter().map(|(_, n)| n).sum();
                assert_eq!(total, m.parameter_count());
            }
        }
    }

    #[test]
    fn uniform_output_gives_n_ln_v() {
        let mut m = CaptionerModel::new(small(CellKind::SimpleRnn), 5).unwrap();
        let out_w = m.params().find("output.w").unwrap();
        m.params_mut()
            .get_mut(out_w)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        let tokens = [0, 4, 5, 1];
        let loss = m.sequence_loss(&tokens, &[1.0, 0.0, 0.0]).unwrap();
        assert!((loss - 4.0 * 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_short_records_and_bad_tokens() {
        let m = CaptionerModel::new(small(CellKind::Gru), 5).unwrap();
        assert!(matches!(m.sequence_loss(&[0], &[0.0; 3]), Err(Error::Contract(_))));
        assert!(matches!(
            m.sequence_loss(&[0, 99, 1], &[0.0; 3]),
            Err(Error::Index { .. })
        ));
        assert!(m.sequence_loss(&[0, 1], &[0.0; 2]).is_err());
    }

    #[test]
    fn fusion_zero_params_and_bound() {
        let mut tape = Tape::new();
        let y = tape.constant_vec(vec![5.0, -3.0]);
        let v = tape.constant_vec(vec![2.0, 7.0]);
        let zero_w = tape.zeros(&[2, 2]);
        let zero_b = tape.zeros(&[2]);
        let m = multimodal_fuse(&mut tape, y, v, zero_w, zero_b, zero_w, zero_b).unwrap();
        assert_eq!(tape.value(m), &[0.0, 0.0]);
        let big = tape.constant(crate::autograd::Tensor::matrix(2, 2, vec![100.0; 4]).unwrap());
        let m = multimodal_fuse(&mut tape, y, v, big, zero_b, big, zero_b).unwrap();
        assert!(tape.value(m).iter().all(|x| x.abs() <= 1.7159));
    }
}
