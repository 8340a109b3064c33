//! Shared encoder with a labelled head `h` and an unlabelled head `g`.
//!
//! The encoder is a perceptron stack with ReLU between layers. Head `h` is a
//! single linear layer with `C^l` outputs; head `g` is a hidden ReLU layer
//! followed by a linear layer with `C^u` outputs. Optional over-clustering
//! heads mirror `g` with `C^u · over_factor` outputs. Concatenated logits
//! always place the `h` logits first.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_tau, Parameters, Tape, Tensor, Var};
use crate::error::{NcdError, Result};

/// Shape metadata of a model; also the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    /// Output widths of the encoder layers; the last entry is the feature width.
    pub encoder_widths: Vec<usize>,
    pub hidden_dim: usize,
    pub c_l: usize,
    pub c_u: usize,
    pub over_factor: usize,
    pub num_over_heads: usize,
    pub tau: f64,
}

impl ModelDims {
    /// Default desk-scale geometry: `input_dim → 64 → 32`, head hidden 32, τ = 0.1.
    pub fn new(input_dim: usize, c_l: usize, c_u: usize) -> Self {
        Self {
            input_dim,
            encoder_widths: vec![64, 32],
            hidden_dim: 32,
            c_l,
            c_u,
            over_factor: 3,
            num_over_heads: 0,
            tau: 0.1,
        }
    }

    pub fn feat_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn num_outputs(&self) -> usize {
        self.c_l + self.c_u
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_l < 2 || self.c_u < 2 {
            return Err(NcdError::Config(format!(
                "need at least two classes per side, got C^l={} C^u={}",
                self.c_l, self.c_u
            )));
        }
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.encoder_widths.is_empty()
            || self.encoder_widths.contains(&0)
        {
            return Err(NcdError::Config("model dimensions must be positive".into()));
        }
        if self.num_over_heads > 0 && self.over_factor == 0 {
            return Err(NcdError::Config("over_factor must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(NcdError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Affine layer `x·W + b` with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = glorot_bound(fan_in, fan_out);
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Uniform initialisation bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A `g`-style head: hidden ReLU layer then a linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Vec<Linear>,
    pub head_h: Linear,
    pub head_g: MlpHead,
    pub over_heads: Vec<MlpHead>,
}

/// Builds a model with uniform Glorot weights and zero biases.
pub fn init_model(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = Vec::with_capacity(dims.encoder_widths.len());
    let mut fan_in = dims.input_dim;
    for &w in &dims.encoder_widths {
        encoder.push(Linear::init(fan_in, w, &mut rng));
        fan_in = w;
    }
    let feat = dims.feat_dim();
    let head_h = Linear::init(feat, dims.c_l, &mut rng);
    let mut mlp = |out: usize| MlpHead {
        hidden: Linear::init(feat, dims.hidden_dim, &mut rng),
        out: Linear::init(dims.hidden_dim, out, &mut rng),
    };
    let head_g = mlp(dims.c_u);
    let over_heads = (0..dims.num_over_heads).map(|_| mlp(dims.c_u * dims.over_factor)).collect();
    Ok(ModelParams { dims, encoder, head_h, head_g, over_heads })
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head_h.weight);
        out.push(&self.head_h.bias);
        for head in std::iter::once(&self.head_g).chain(&self.over_heads) {
            out.extend([&head.hidden.weight, &head.hidden.bias, &head.out.weight, &head.out.bias]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_h.weight);
        out.push(&mut self.head_h.bias);
        for head in std::iter::once(&mut self.head_g).chain(&mut self.over_heads) {
            out.push(&mut head.hidden.weight);
            out.push(&mut head.hidden.bias);
            out.push(&mut head.out.weight);
            out.push(&mut head.out.bias);
        }
        out
    }
}

/// Parameter handles registered on one tape, in [`Parameters::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    encoder: Vec<(Var, Var)>,
    head_h: (Var, Var),
    heads: Vec<[Var; 4]>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ModelParams {
    /// Registers every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    fn bind_with(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut vars = Vec::new();
        let lin = |l: &Linear, vars: &mut Vec<Var>| {
            let (w, b) = (put(&l.weight), put(&l.bias));
            vars.push(w);
            vars.push(b);
            (w, b)
        };
        let encoder = self.encoder.iter().map(|l| lin(l, &mut vars)).collect();
        let head_h = lin(&self.head_h, &mut vars);
        let heads = std::iter::once(&self.head_g)
            .chain(&self.over_heads)
            .map(|h| {
                let (hw, hb) = lin(&h.hidden, &mut vars);
                let (ow, ob) = lin(&h.out, &mut vars);
                [hw, hb, ow, ob]
            })
            .collect();
        BoundParams { vars, encoder, head_h, heads }
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors().len()
    }
}

/// Taped outputs for a batch of inputs, one row per sample.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub features: Var,
    pub l_h: Var,
    pub l_g: Var,
    /// `[l_h | l_g]`.
    pub l: Var,
    /// Temperature softmax of `l`.
    pub p: Var,
    pub p_h: Var,
    pub p_g: Var,
    /// Raw logits of the over-clustering heads.
    pub over_logits: Vec<Var>,
}

fn affine(tape: &Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Taped forward pass of a `batch × input_dim` matrix.
pub fn forward_tape(bound: &BoundParams, tape: &Tape, x: Var, tau: f64) -> Result<BatchOutput> {
    let mut h = x;
    for (i, &layer) in bound.encoder.iter().enumerate() {
        h = affine(tape, h, layer)?;
        if i + 1 < bound.encoder.len() {
            h = tape.relu(h);
        }
    }
    let features = h;
    let l_h = affine(tape, features, bound.head_h)?;
    let mlp = |[hw, hb, ow, ob]: [Var; 4]| -> Result<Var> {
        let hidden = tape.relu(affine(tape, features, (hw, hb))?);
        affine(tape, hidden, (ow, ob))
    };
    let l_g = mlp(bound.heads[0])?;
    let over_logits = bound.heads[1..].iter().map(|&h| mlp(h)).collect::<Result<_>>()?;
    let l = tape.concat_cols(l_h, l_g)?;
    Ok(BatchOutput {
        features,
        l_h,
        l_g,
        l,
        p: tape.softmax_rows(l, tau)?,
        p_h: tape.softmax_rows(l_h, tau)?,
        p_g: tape.softmax_rows(l_g, tau)?,
        over_logits,
    })
}

/// Per-sample forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub l_h: Vec<f64>,
    pub l_g: Vec<f64>,
    pub l: Vec<f64>,
    pub p: Vec<f64>,
    pub p_h: Vec<f64>,
    pub p_g: Vec<f64>,
}

impl ModelOutput {
    fn from_logits(l_h: Vec<f64>, l_g: Vec<f64>, tau: f64) -> Result<Self> {
        let l: Vec<f64> = l_h.iter().chain(&l_g).copied().collect();
        Ok(Self {
            p: softmax_tau(&l, tau)?,
            p_h: softmax_tau(&l_h, tau)?,
            p_g: softmax_tau(&l_g, tau)?,
            l_h,
            l_g,
            l,
        })
    }
}

impl ModelParams {
    /// Untaped forward pass of one sample.
    pub fn forward(&self, x: &[f64], tau: f64) -> Result<ModelOutput> {
        Ok(self.forward_batch(&[x.to_vec()], tau)?.remove(0))
    }

    /// Row-wise forward; an empty batch yields an empty list.
    pub fn forward_batch(&self, xs: &[Vec<f64>], tau: f64) -> Result<Vec<ModelOutput>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != self.dims.input_dim) {
            return Err(NcdError::Shape(format!(
                "input has {} features, model expects {}",
                bad.len(),
                self.dims.input_dim
            )));
        }
        if !(tau > 0.0) {
            return Err(NcdError::Parameter(format!("temperature must be positive, got {tau}")));
        }
        let tape = Tape::new();
        let bound = self.bind_with(&tape, false);
        let x = tape.constant(Tensor::from_rows(xs)?);
        let out = forward_tape(&bound, &tape, x, tau)?;
        let (lh, lg) = (tape.value(out.l_h), tape.value(out.l_g));
        (0..xs.len())
            .map(|i| ModelOutput::from_logits(lh.row(i).to_vec(), lg.row(i).to_vec(), tau))
            .collect()
    }
}

const CHECKPOINT_FORMAT: &str = "ncd-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    manifest: ModelDims,
    tensors: Vec<TensorRecord>,
}

impl ModelParams {
    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        names.push("head_h.weight".into());
        names.push("head_h.bias".into());
        for k in 0..=self.over_heads.len() {
            let prefix = if k == 0 { "head_g".to_string() } else { format!("over_head.{}", k - 1) };
            for part in ["hidden.weight", "hidden.bias", "out.weight", "out.bias"] {
                names.push(format!("{prefix}.{part}"));
            }
        }
        names
    }

    /// Writes a JSON checkpoint: a dimension manifest plus every tensor.
    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let tensors = self
            .tensor_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(name, t)| TensorRecord { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            manifest: self.dims.clone(),
            tensors,
        };
        serde_json::to_writer_pretty(writer, &ckpt).map_err(|e| NcdError::Io(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| NcdError::Format(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NcdError::Format(format!("unknown checkpoint format {:?}", ckpt.format)));
        }
        let mut params = init_model(ckpt.manifest, 0)?;
        let names = params.tensor_names();
        if names.len() != ckpt.tensors.len() {
            return Err(NcdError::Format(format!(
                "manifest implies {} tensors, file has {}",
                names.len(),
                ckpt.tensors.len()
            )));
        }
        for ((slot, name), rec) in params.tensors_mut().into_iter().zip(&names).zip(ckpt.tensors) {
            if &rec.name != name || rec.shape != slot.shape() {
                return Err(NcdError::Format(format!(
                    "tensor {} {:?} does not match manifest entry {name} {:?}",
                    rec.name,
                    rec.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(rec.shape, rec.data).map_err(|e| NcdError::Format(e.to_string()))?;
        }
        Ok(params)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> ModelDims {
        ModelDims {
            input_dim: 4,
            encoder_widths: vec![6, 5],
            hidden_dim: 4,
            c_l: 3,
            c_u: 2,
            over_factor: 3,
            num_over_heads: 1,
            tau: 0.1,
        }
    }

    fn zeroed(dims: ModelDims) -> ModelParams {
        let mut m = init_model(dims, 1).unwrap();
        for t in m.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_model(small_dims(), 42).unwrap();
        let b = init_model(small_dims(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_model(small_dims(), 43).unwrap();
        assert_ne!(a, c);
        let lin = a.encoder.iter().chain([&a.head_h]).chain(
            std::iter::once(&a.head_g).chain(&a.over_heads).flat_map(|h| [&h.hidden, &h.out]),
        );
        for l in lin {
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
            let bound = glorot_bound(l.fan_in(), l.fan_out());
            assert!(l.weight.data().iter().all(|v| v.abs() <= bound));
        }
        assert_eq!(a.over_heads[0].out.fan_out(), 6);
    }

    #[test]
    fn init_rejects_single_class_sides() {
        let mut d = small_dims();
        d.c_u = 1;
        assert!(matches!(init_model(d, 0), Err(NcdError::Config(_))));
        let mut d = small_dims();
        d.c_l = 1;
        assert!(matches!(init_model(d, 0), Err(NcdError::Config(_))));
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = zeroed(small_dims());
        let out = m.forward(&[1.0, -2.0, 0.5, 3.0], 0.1).unwrap();
        assert!(out.p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let outs = m.forward_batch(&vec![vec![0.3; 4]; 4], 0.1).unwrap();
        assert_eq!(outs.len(), 4);
        for o in outs {
            assert!(o.p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn output_layout_and_normalisation() {
        let m = init_model(small_dims(), 7).unwrap();
        let out = m.forward(&[0.5, -1.0, 2.0, 0.1], 0.5).unwrap();
        assert_eq!(out.l[..3], out.l_h[..]);
        assert_eq!(out.l[3..], out.l_g[..]);
        for p in [&out.p, &out.p_h, &out.p_g] {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // the labelled block of p carries less than unit mass, p_h is its own softmax
        let mass: f64 = out.p[..3].iter().sum();
        assert!(mass < 1.0 - 1e-6);
        assert!(out.p[..3].iter().zip(&out.p_h).any(|(a, b)| (a - b).abs() > 1e-6));
        // renormalising the block recovers p_h when both use the same temperature
        let renorm: Vec<f64> = out.p[..3].iter().map(|v| v / mass).collect();
        assert!(renorm.iter().zip(&out.p_h).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn batch_matches_single_and_permutes() {
        let m = init_model(small_dims(), 3).unwrap();
        let xs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.0, 1.0, 2.0], vec![3.0, 1.0, -2.0, 0.0]];
        let single = m.forward(&xs[1], 0.1).unwrap();
        let batch = m.forward_batch(&xs[1..2], 0.1).unwrap();
        assert_eq!(batch[0], single);
        let all = m.forward_batch(&xs, 0.1).unwrap();
        let rev: Vec<_> = xs.iter().rev().cloned().collect();
        let all_rev = m.forward_batch(&rev, 0.1).unwrap();
        for (i, o) in all.iter().enumerate() {
            assert_eq!(o, &all_rev[2 - i]);
        }
        assert!(m.forward_batch(&[], 0.1).unwrap().is_empty());
        assert!(matches!(m.forward(&[1.0], 0.1), Err(NcdError::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = init_model(small_dims(), 11).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = ModelParams::load(buf.as_slice()).unwrap();
        assert_eq!(m, back);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(ModelParams::load(&b"{}"[..]), Err(NcdError::Format(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.2, 0.2]), 0);
    }
}
