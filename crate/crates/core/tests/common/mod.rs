#![allow(dead_code)]

use ncd_core::autodiff::{Parameters, Tape, Tensor, Var};
use ncd_core::losses::taped;
use ncd_core::model::{forward_tape, init_model, BatchOutput, ModelDims, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LOSS_TERMS: [&str; 6] = ["kl_div", "skl_pair", "inter_class", "intra_class", "cross_entropy", "mse"];

/// A random small model plus two input batches and a soft target matrix.
pub struct GradCase {
    pub params: ModelParams,
    pub x: Tensor,
    pub x_view: Tensor,
    pub target: Tensor,
}

pub fn grad_case(seed: u64) -> GradCase {
    let dims = ModelDims { encoder_widths: vec![8, 8], hidden_dim: 8, tau: 0.5, ..ModelDims::new(8, 3, 3) };
    let mut params = init_model(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut biases: Vec<&mut Tensor> = params.encoder.iter_mut().map(|l| &mut l.bias).collect();
    biases.push(&mut params.head_h.bias);
    biases.push(&mut params.head_g.hidden.bias);
    biases.push(&mut params.head_g.out.bias);
    for b in biases {
        for v in b.data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    let mut batch = |rows: usize, cols: usize| {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect())
    };
    let x = batch(4, 8);
    let x_view = batch(4, 8);
    let mut target = batch(4, 6);
    for i in 0..4 {
        let row: Vec<f64> = target.row(i).iter().map(|v| v.exp()).collect();
        let s: f64 = row.iter().sum();
        for (j, v) in row.iter().enumerate() {
            target.data_mut()[i * 6 + j] = v / s;
        }
    }
    GradCase { params, x, x_view, target }
}

fn term(tape: &Tape, name: &str, a: &BatchOutput, b: &BatchOutput, target: Var) -> Var {
    match name {
        "kl_div" => taped::kl_div_mean(tape, a.p, b.p).unwrap(),
        "skl_pair" => taped::skl_mean(tape, a.p, b.p).unwrap(),
        "inter_class" => taped::inter_class(tape, a.p, b.p).unwrap(),
        "intra_class" => taped::intra_class(tape, Some((a.p_h, b.p_h)), Some((a.p_g, b.p_g))).unwrap(),
        "cross_entropy" => taped::cross_entropy_mean(tape, a.p, target).unwrap(),
        "mse" => taped::mse_intra(tape, Some((a.p_h, b.p_h)), Some((a.p_g, b.p_g))).unwrap(),
        other => panic!("unknown term {other}"),
    }
}

fn loss_and_grads(case: &GradCase, params: &ModelParams, name: &str) -> (f64, Vec<Tensor>) {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let tau = params.dims.tau;
    let a = forward_tape(&bound, &tape, tape.constant(case.x.clone()), tau).unwrap();
    let b = forward_tape(&bound, &tape, tape.constant(case.x_view.clone()), tau).unwrap();
    let loss = term(&tape, name, &a, &b, tape.constant(case.target.clone()));
    let grads = tape.backward(loss).unwrap().collect(bound.vars());
    (tape.scalar_value(loss).unwrap(), grads.tensors().to_vec())
}

/// Norm-wise relative error between analytic and central-difference gradients
/// over every model parameter.
pub fn gradient_error(case: &GradCase, name: &str, step: f64) -> f64 {
    let (_, analytic) = loss_and_grads(case, &case.params, name);
    let mut diff2 = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = case.params.clone();
            plus.tensors_mut()[t].data_mut()[k] += step;
            let mut minus = case.params.clone();
            minus.tensors_mut()[t].data_mut()[k] -= step;
            let numeric = (loss_and_grads(case, &plus, name).0 - loss_and_grads(case, &minus, name).0) / (2.0 * step);
            let a = grad.data()[k];
            diff2 += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
    }
    let scale = norm_a.sqrt() + norm_n.sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}

/// A model that classifies by nearest class mean: the encoder is the
/// identity, `h` scores labelled means and `g` scores unlabelled means.
pub fn nearest_mean_model(means: &[Vec<f64>], c_l: usize, tau: f64) -> ModelParams {
    let d = means[0].len();
    let c_u = means.len() - c_l;
    let dims = ModelDims { encoder_widths: vec![d], hidden_dim: 2 * d, tau, ..ModelDims::new(d, c_l, c_u) };
    let mut params = init_model(dims, 0).unwrap();
    params.encoder[0].weight = Tensor::identity(d);
    params.encoder[0].bias = Tensor::zeros(&[d]);
    // score_c(x) = m_c·x − |m_c|²/2, larger for the nearer mean
    let scorer = |ms: &[Vec<f64>]| {
        let mut w = vec![0.0; d * ms.len()];
        for (c, m) in ms.iter().enumerate() {
            for j in 0..d {
                w[j * ms.len() + c] = m[j];
            }
        }
        let b: Vec<f64> = ms.iter().map(|m| -0.5 * m.iter().map(|v| v * v).sum::<f64>()).collect();
        (Tensor::matrix(d, ms.len(), w), Tensor::vector(b))
    };
    let (wh, bh) = scorer(&means[..c_l]);
    params.head_h.weight = wh;
    params.head_h.bias = bh;
    // hidden layer [I, −I] keeps x through the ReLU as relu(x) − relu(−x)
    let mut hidden = vec![0.0; d * 2 * d];
    for j in 0..d {
        hidden[j * 2 * d + j] = 1.0;
        hidden[j * 2 * d + d + j] = -1.0;
    }
    params.head_g.hidden.weight = Tensor::matrix(d, 2 * d, hidden);
    params.head_g.hidden.bias = Tensor::zeros(&[2 * d]);
    let (wg, bg) = scorer(&means[c_l..]);
    let mut out = vec![0.0; 2 * d * c_u];
    for j in 0..d {
        for c in 0..c_u {
            out[j * c_u + c] = wg.get(j, c);
            out[(d + j) * c_u + c] = -wg.get(j, c);
        }
    }
    params.head_g.out.weight = Tensor::matrix(2 * d, c_u, out);
    params.head_g.out.bias = bg;
    params
}
