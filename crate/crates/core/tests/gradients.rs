use lcnn::autograd::{Tape, Tensor, Var};
use lcnn::cells::{gru_step, lstm_step, rhn_step, rnn_step, CellKind};
use lcnn::gradcheck::{
    check_model, max_relative_error, numeric_gradient, random_example, randomize_parameters, small_config, FD_STEP,
    FD_TOLERANCE,
};
use lcnn::lang_cnn::{build_input_window, highway_forward, temporal_conv_forward, Activation, LangCnnConfig};
use lcnn::model::{multimodal_fuse, CaptionerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    // Keep values away from zero so ReLU and max-pool stay differentiable
    // under the finite-difference probe.
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Builds a scalar by weighting every output element with a fixed random
/// coefficient, then checks the gradient of each input.
fn check<F>(shapes: &[&[usize]], seed: u64, build: F)
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let weight_seed: u64 = rng.gen();

    let eval = |values: &[Vec<f64>], with_grad: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .zip(shapes)
            .map(|(v, s)| {
                let t = Tensor::new(s, v.clone()).unwrap();
                if with_grad {
                    tape.variable(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let out = build(&mut tape, &vars);
        let n = tape.value(out).len();
        let mut wr = ChaCha8Rng::seed_from_u64(weight_seed);
        let w: Vec<f64> = (0..n).map(|_| wr.gen_range(-1.0..1.0)).collect();
        let w = tape.constant(Tensor::new(tape.shape(out), w).unwrap());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.item(loss);
        let grads = with_grad.then(|| {
            let g = tape.backward(loss).unwrap();
            vars.iter().map(|&v| g.get_or_zeros(v).into_owned()).collect::<Vec<_>>()
        });
        (value, grads)
    };

    let values: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
    let (_, analytic) = eval(&values, true);
    let analytic = analytic.unwrap();
    for (i, a) in analytic.iter().enumerate() {
        let numeric = numeric_gradient(&values[i], FD_STEP, |x| {
            let mut probe = values.clone();
            probe[i] = x.to_vec();
            eval(&probe, false).0
        });
        let err = max_relative_error(a, &numeric);
        assert!(err < FD_TOLERANCE, "input {i}: relative error {err:e}");
    }
}

#[test]
fn matmul_matrix_and_row_vector() {
    check(&[&[3, 4], &[4, 2]], 1, |t, v| t.matmul(v[0], v[1]).unwrap());
    check(&[&[4], &[4, 5]], 2, |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn elementwise_binary_with_broadcast() {
    check(&[&[3, 4], &[3, 4]], 3, |t, v| t.add(v[0], v[1]).unwrap());
    check(&[&[3, 4], &[4]], 4, |t, v| t.add(v[0], v[1]).unwrap());
    check(&[&[5], &[5]], 5, |t, v| t.sub(v[0], v[1]).unwrap());
    check(&[&[3, 4], &[3, 4]], 6, |t, v| t.mul(v[0], v[1]).unwrap());
    check(&[&[3, 4], &[4]], 7, |t, v| t.mul(v[0], v[1]).unwrap());
}

#[test]
fn unary_ops() {
    check(&[&[6]], 8, |t, v| t.scale(v[0], -2.5));
    check(&[&[6]], 9, |t, v| t.sigmoid(v[0]));
    check(&[&[6]], 10, |t, v| t.tanh(v[0]));
    check(&[&[6]], 11, |t, v| t.relu(v[0]));
    check(&[&[6]], 12, |t, v| t.scaled_tanh(v[0]));
    check(&[&[6]], 13, |t, v| t.one_minus(v[0]));
}

#[test]
fn cross_entropy_and_embedding() {
    check(&[&[7]], 14, |t, v| t.softmax_cross_entropy(v[0], 3).unwrap());
    check(&[&[5, 3]], 15, |t, v| {
        let a = t.embedding(v[0], 4).unwrap();
        let b = t.embedding(v[0], 4).unwrap();
        let c = t.embedding(v[0], 0).unwrap();
        t.concat(&[a, b, c]).unwrap()
    });
}

#[test]
fn structural_ops() {
    check(&[&[3], &[2, 3], &[3]], 16, |t, v| t.concat_rows(v).unwrap());
    check(&[&[3], &[5]], 17, |t, v| t.concat(v).unwrap());
    check(&[&[8]], 18, |t, v| t.slice(v[0], 2, 4).unwrap());
    check(&[&[2, 6]], 19, |t, v| t.reshape(v[0], &[3, 4]).unwrap());
    check(&[&[6, 3]], 20, |t, v| t.unfold_rows(v[0], 3).unwrap());
    check(&[&[7, 3]], 21, |t, v| t.max_pool_rows(v[0], 2).unwrap());
    check(&[&[4, 3]], 22, |t, v| t.mean_rows(v[0]).unwrap());
    check(&[&[4, 3]], 23, |t, v| t.sum(v[0]));
    check(&[&[1], &[1], &[1]], 24, |t, v| t.add_scalars(v).unwrap());
}

#[test]
fn recurrent_steps() {
    let (n, d) = (6, 4);
    check(&[&[d], &[n], &[d, d], &[n, d], &[d]], 30, |t, v| {
        rnn_step(t, v[0], v[1], v[2], v[3], v[4]).unwrap()
    });
    check(&[&[d], &[d], &[n], &[n, 4 * d], &[d, 4 * d], &[4 * d]], 31, |t, v| {
        let (h, c) = lstm_step(t, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
        t.concat(&[h, c]).unwrap()
    });
    check(
        &[&[d], &[n], &[n, 3 * d], &[d, 2 * d], &[d, d], &[3 * d]],
        32,
        |t, v| gru_step(t, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap(),
    );
    check(&[&[d], &[n], &[d + n, 3 * d], &[3 * d]], 33, |t, v| {
        rhn_step(t, v[0], v[1], v[2], v[3]).unwrap()
    });
}

#[test]
fn two_steps_through_time() {
    let (n, d) = (3, 3);
    check(&[&[d], &[n], &[n], &[d + n, 3 * d], &[3 * d]], 34, |t, v| {
        let r1 = rhn_step(t, v[0], v[1], v[3], v[4]).unwrap();
        rhn_step(t, r1, v[2], v[3], v[4]).unwrap()
    });
}

#[test]
fn history_encoder_pieces() {
    let k = 3;
    check(&[&[6, k], &[3 * k, k], &[k]], 40, |t, v| {
        temporal_conv_forward(t, v[0], 3, Activation::Relu, v[1], v[2]).unwrap()
    });
    check(&[&[6, k], &[2 * k, k], &[k]], 41, |t, v| {
        temporal_conv_forward(t, v[0], 2, Activation::Sigmoid, v[1], v[2]).unwrap()
    });
    check(&[&[k], &[k, k], &[k], &[k, k], &[k]], 42, |t, v| {
        highway_forward(t, v[0], v[1], v[2], v[3], v[4]).unwrap()
    });
    check(&[&[k], &[k], &[k]], 43, |t, v| {
        build_input_window(t, &v[..2], v[2], 4).unwrap()
    });
    check(&[&[k]], 44, |t, v| build_input_window(t, &[], v[0], 3).unwrap());
}

#[test]
fn multimodal_fusion() {
    let k = 4;
    check(&[&[k], &[k], &[k, k], &[k], &[k, k], &[k]], 50, |t, v| {
        multimodal_fuse(t, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    });
}

fn assert_model_gradients(cfg: lcnn::model::ModelConfig, seed: u64) {
    let mut model = CaptionerModel::new(cfg, seed).unwrap();
    randomize_parameters(&mut model, seed);
    let (tokens, feats) = random_example(&model, 7, seed);
    for block in check_model(&model, &tokens, &feats).unwrap() {
        assert!(
            block.max_rel_err < FD_TOLERANCE,
            "{}: relative error {:e}",
            block.name,
            block.max_rel_err
        );
    }
}

#[test]
fn full_model_every_cell() {
    for cell in CellKind::ALL {
        assert_model_gradients(small_config(cell), 3);
    }
}

#[test]
fn full_model_variants() {
    let mut stacked = small_config(CellKind::Lstm);
    stacked.cell_layers = 2;
    assert_model_gradients(stacked, 4);

    let mut pooled = small_config(CellKind::Gru);
    pooled.lang_cnn = LangCnnConfig::new(8, 8, &[3, 2, 2, 2]).with_max_pool();
    assert_model_gradients(pooled, 5);

    let mut averaged = small_config(CellKind::SimpleRnn);
    averaged.lang_cnn = LangCnnConfig::averaging(6, 8);
    assert_model_gradients(averaged, 6);

    let mut recurrent_only = small_config(CellKind::Rhn);
    recurrent_only.use_cnn_l = false;
    assert_model_gradients(recurrent_only, 7);
}

#[test]
fn history_longer_than_window() {
    let model = {
        let mut m = CaptionerModel::new(small_config(CellKind::SimpleRnn), 8).unwrap();
        randomize_parameters(&mut m, 8);
        m
    };
    let (tokens, feats) = random_example(&model, 10, 8);
    for block in check_model(&model, &tokens, &feats).unwrap() {
        assert!(
            block.max_rel_err < FD_TOLERANCE,
            "{}: {:e}",
            block.name,
            block.max_rel_err
        );
    }
}
