//! Supervised pretraining, joint discovery fine-tuning and the ablation runner.
//!
//! The discovery objective per mini-batch is
//! `CE − α·inter + β·intra`, where CE runs over originals and every view
//! with zero-padded targets (one-hot for labelled samples, swapped
//! Sinkhorn-Knopp assignments for unlabelled samples), the inter-class term
//! compares original-view full distributions of the two sides, and the
//! intra-class term compares each original with each of its views on the
//! head that owns its side.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameters, Sgd, Tape, Tensor, Var};
use crate::error::{NcdError, Result};
use crate::losses::{taped, LossBreakdown};
use crate::metrics::{evaluate_labelled, evaluate_task_aware, MetricsReport};
use crate::model::{argmax, forward_tape, init_model, BatchOutput, ModelDims, ModelParams};
use crate::pseudo_label::{sinkhorn_knopp, SinkhornConfig};
use crate::synth_data::{make_batches, mix_seed, AugmentConfig, BatchEntry, DatasetSplit, LabelledSample};

type PairTerm<'a> = dyn Fn(Option<(Var, Var)>, Option<(Var, Var)>) -> Result<Var> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntraMode {
    Skld,
    Mse,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub pretrain_epochs: usize,
    pub discover_epochs: usize,
    pub batch_size: usize,
    pub intra_mode: IntraMode,
    pub inter_enabled: bool,
    pub sinkhorn: SinkhornConfig,
    pub augment: AugmentConfig,
    /// Epoch interval for labelled-test metric snapshots; 0 disables them.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.01,
            tau: 0.1,
            lr: 0.005,
            momentum: 0.9,
            pretrain_epochs: 100,
            discover_epochs: 200,
            batch_size: 128,
            intra_mode: IntraMode::Skld,
            inter_enabled: true,
            sinkhorn: SinkhornConfig::default(),
            augment: AugmentConfig::default(),
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NcdError::Config(m));
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return fail(format!("alpha and beta must be >= 0, got {} and {}", self.alpha, self.beta));
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        self.sinkhorn.validate()?;
        self.augment.validate()
    }

    fn inter_active(&self) -> bool {
        self.inter_enabled && self.alpha > 0.0
    }

    fn intra_active(&self) -> bool {
        self.intra_mode != IntraMode::Off && self.beta > 0.0
    }

    fn check_model(&self, params: &ModelParams, split: &DatasetSplit) -> Result<()> {
        self.validate()?;
        let d = &params.dims;
        if d.c_l != split.c_l || d.c_u != split.c_u {
            return Err(NcdError::Config(format!(
                "model has C^l={} C^u={}, data has C^l={} C^u={}",
                d.c_l, d.c_u, split.c_l, split.c_u
            )));
        }
        if split.input_dim() != d.input_dim {
            return Err(NcdError::Config(format!(
                "model expects {} features, data has {}",
                d.input_dim,
                split.input_dim()
            )));
        }
        if d.tau != self.tau {
            return Err(NcdError::Config(format!("model temperature {} differs from config {}", d.tau, self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Discover,
}

/// Mean L2 norm of the logits a head produces for the other side's samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossHeadNorms {
    pub labelled_on_g: f64,
    pub unlabelled_on_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub steps: usize,
    pub losses: LossBreakdown,
    pub cross_head_norms: CrossHeadNorms,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub snapshots: Vec<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Every optimisation step, in order.
    pub steps: Vec<LossBreakdown>,
}

impl TrainLog {
    /// One JSON object per epoch, newline terminated.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }
}

fn mean_breakdown(steps: &[LossBreakdown], alpha: f64, beta: f64) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let mse = if steps.iter().all(|s| s.mse.is_some()) && !steps.is_empty() {
        Some(steps.iter().map(|s| s.mse.unwrap_or(0.0)).sum::<f64>() / n)
    } else {
        None
    };
    LossBreakdown { ce: avg(|s| s.ce), inter: avg(|s| s.inter), intra: avg(|s| s.intra), mse, total: avg(|s| s.total), alpha, beta }
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

fn labelled_targets(labels: &[usize], c_l: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * width];
    for (i, &c) in labels.iter().enumerate() {
        debug_assert!(c < c_l);
        data[i * width + c] = 1.0;
    }
    Tensor::matrix(labels.len(), width, data)
}

/// Places `M × C` soft assignments after `offset` zero columns.
fn padded_soft_targets(q: &Tensor, offset: usize) -> Tensor {
    let (m, c) = (q.rows(), q.cols());
    let width = offset + c;
    let mut data = vec![0.0; m * width];
    for i in 0..m {
        data[i * width + offset..(i + 1) * width].copy_from_slice(q.row(i));
    }
    Tensor::matrix(m, width, data)
}

fn mean_tensors(ts: &[&Tensor]) -> Tensor {
    let mut out = ts[0].clone();
    for t in &ts[1..] {
        for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    let k = ts.len() as f64;
    out.data_mut().iter_mut().for_each(|v| *v /= k);
    out
}

/// Swapped targets for one original and `V` views: view `v` is supervised by
/// the mean assignment of the other views, the original by all views.
fn swapped_targets(view_logits: &[Tensor], cfg: &SinkhornConfig) -> Result<(Tensor, Vec<Tensor>)> {
    let assignments: Vec<Tensor> = view_logits
        .iter()
        .map(|l| Ok(sinkhorn_knopp(l, cfg)?.into_tensor()))
        .collect::<Result<_>>()?;
    let all: Vec<&Tensor> = assignments.iter().collect();
    let original = mean_tensors(&all);
    let per_view = (0..assignments.len())
        .map(|v| {
            let others: Vec<&Tensor> = assignments.iter().enumerate().filter(|(u, _)| *u != v).map(|(_, t)| t).collect();
            mean_tensors(&others)
        })
        .collect();
    Ok((original, per_view))
}

fn row_norm_mean(t: &Tensor) -> f64 {
    let n = t.rows();
    (0..n).map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / n as f64
}

/// Accuracy of head `h` argmax on labelled samples.
pub fn labelled_accuracy(params: &ModelParams, samples: &[LabelledSample], tau: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(NcdError::Usage("no labelled samples to score".into()));
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let outs = params.forward_batch(&xs, tau)?;
    let hits = outs.iter().zip(samples).filter(|(o, s)| argmax(&o.p_h) == s.class).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Labelled-test metrics every `eval_every` epochs. Only labelled ground
/// truth is touched.
fn labelled_snapshot(params: &ModelParams, split: &DatasetSplit, cfg: &TrainConfig, epoch: usize) -> Result<Vec<MetricsReport>> {
    if cfg.eval_every == 0 || !(epoch + 1).is_multiple_of(cfg.eval_every) || split.labelled_test.is_empty() {
        return Ok(Vec::new());
    }
    Ok(vec![evaluate_labelled(params, &split.labelled_test, cfg.tau)?])
}

/// Minimises cross-entropy of head `h` on the labelled training pool only.
/// Head `g` receives no gradient.
pub fn pretrain(params: &ModelParams, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    if split.labelled_train.is_empty() {
        return Err(NcdError::Usage("pretraining needs labelled training samples".into()));
    }
    cfg.check_model(params, split)?;
    let mut params = params.clone();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut log = TrainLog::default();
    let c_l = params.dims.c_l;
    let mut order: Vec<usize> = (0..split.labelled_train.len()).collect();

    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 100, epoch as u64])));
        let mut steps = Vec::new();
        let mut norm_g = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| split.labelled_train[i].features.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| split.labelled_train[i].class).collect();
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let out = forward_tape(&bound, &tape, tape.constant(rows_tensor(&xs)?), cfg.tau)?;
            let y = tape.constant(labelled_targets(&labels, c_l, c_l));
            let ce = taped::cross_entropy_mean(&tape, out.p_h, y)?;
            let grads = tape.backward(ce)?.collect(bound.vars());
            opt.step(&mut params, &grads)?;
            let ce_v = tape.scalar_value(ce)?;
            norm_g += row_norm_mean(&tape.value(out.l_g));
            steps.push(LossBreakdown { ce: ce_v, inter: 0.0, intra: 0.0, mse: None, total: ce_v, alpha: 0.0, beta: 0.0 });
        }
        let n_steps = steps.len();
        let snapshots = labelled_snapshot(&params, split, cfg, epoch)?;
        log.epochs.push(EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            steps: n_steps,
            losses: mean_breakdown(&steps, 0.0, 0.0),
            cross_head_norms: CrossHeadNorms { labelled_on_g: norm_g / n_steps as f64, unlabelled_on_h: 0.0 },
            snapshots,
        });
        log.steps.extend(steps);
    }
    Ok((params, log))
}

/// Objective terms evaluated on the tape for one batch.
struct BatchLosses {
    total: Var,
    ce: Var,
    inter: Option<Var>,
    intra: Option<Var>,
    mse: Option<Var>,
    norms: CrossHeadNorms,
}

struct Group {
    orig: BatchOutput,
    views: Vec<BatchOutput>,
}

fn forward_group(
    tape: &Tape,
    bound: &crate::model::BoundParams,
    entries: &[BatchEntry],
    tau: f64,
) -> Result<Option<Group>> {
    if entries.is_empty() {
        return Ok(None);
    }
    let originals: Vec<Vec<f64>> = entries.iter().map(|e| e.original.clone()).collect();
    let orig = forward_tape(bound, tape, tape.constant(rows_tensor(&originals)?), tau)?;
    let n_views = entries[0].views.len();
    let views = (0..n_views)
        .map(|v| {
            let xs: Vec<Vec<f64>> = entries.iter().map(|e| e.views[v].clone()).collect();
            forward_tape(bound, tape, tape.constant(rows_tensor(&xs)?), tau)
        })
        .collect::<Result<_>>()?;
    Ok(Some(Group { orig, views }))
}

/// Sum of per-row cross-entropies of every member of a group against its
/// targets. `probs` picks which distribution of the output to use.
fn group_ce_sum(
    tape: &Tape,
    group: &Group,
    orig_target: &Tensor,
    view_targets: &[Tensor],
    probs: &dyn Fn(&BatchOutput) -> Result<Var>,
) -> Result<Var> {
    let mut total = taped::cross_entropy_sum(tape, probs(&group.orig)?, tape.constant(orig_target.clone()))?;
    for (view, t) in group.views.iter().zip(view_targets) {
        let term = taped::cross_entropy_sum(tape, probs(view)?, tape.constant(t.clone()))?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

fn batch_losses(
    tape: &Tape,
    params: &ModelParams,
    bound: &crate::model::BoundParams,
    batch: &crate::synth_data::MiniBatch,
    cfg: &TrainConfig,
    ce_only: bool,
) -> Result<BatchLosses> {
    let dims = &params.dims;
    let (c_l, c_u) = (dims.c_l, dims.c_u);
    let lab = forward_group(tape, bound, &batch.labelled, cfg.tau)?;
    let unl = forward_group(tape, bound, &batch.unlabelled, cfg.tau)?;
    let n_views = cfg.augment.views_per_sample;
    let rows = (batch.n_labelled() + batch.n_unlabelled()) * (1 + n_views);
    let labels: Vec<usize> = batch.labelled.iter().map(|e| e.label.expect("labelled entry")).collect();

    // heads: 0 is g, 1.. are over-clustering heads; each concatenated after h
    let n_heads = 1 + dims.num_over_heads;
    let mut ce_total: Option<Var> = None;
    for head in 0..n_heads {
        let width_u = if head == 0 { c_u } else { c_u * dims.over_factor };
        let probs = move |o: &BatchOutput| -> Result<Var> {
            if head == 0 {
                Ok(o.p)
            } else {
                let l = tape.concat_cols(o.l_h, o.over_logits[head - 1])?;
                tape.softmax_rows(l, cfg.tau)
            }
        };
        let mut head_sum: Option<Var> = None;
        if let Some(g) = &lab {
            let y = labelled_targets(&labels, c_l, c_l + width_u);
            let ys = vec![y.clone(); g.views.len()];
            head_sum = Some(group_ce_sum(tape, g, &y, &ys, &probs)?);
        }
        if let Some(g) = &unl {
            let logits_of = |o: &BatchOutput| if head == 0 { o.l_g } else { o.over_logits[head - 1] };
            let view_logits: Vec<Tensor> = g.views.iter().map(|v| tape.value(logits_of(v))).collect();
            let (q_orig, q_views) = swapped_targets(&view_logits, &cfg.sinkhorn)?;
            let y = padded_soft_targets(&q_orig, c_l);
            let ys: Vec<Tensor> = q_views.iter().map(|q| padded_soft_targets(q, c_l)).collect();
            let s = group_ce_sum(tape, g, &y, &ys, &probs)?;
            head_sum = Some(match head_sum {
                Some(h) => tape.add(h, s)?,
                None => s,
            });
        }
        let head_ce = tape.scale(head_sum.expect("non-empty batch"), 1.0 / rows as f64);
        ce_total = Some(match ce_total {
            Some(t) => tape.add(t, head_ce)?,
            None => head_ce,
        });
    }
    let mut ce = ce_total.expect("at least one head");
    if n_heads > 1 {
        ce = tape.scale(ce, 1.0 / n_heads as f64);
    }

    let mut norms = CrossHeadNorms::default();
    if let Some(g) = &lab {
        norms.labelled_on_g = row_norm_mean(&tape.value(g.orig.l_g));
    }
    if let Some(g) = &unl {
        norms.unlabelled_on_h = row_norm_mean(&tape.value(g.orig.l_h));
    }
    if ce_only {
        return Ok(BatchLosses { total: ce, ce, inter: None, intra: None, mse: None, norms });
    }

    let inter = match (&lab, &unl) {
        (Some(l), Some(u)) => Some(taped::inter_class(tape, l.orig.p, u.orig.p)?),
        _ => None,
    };
    let view_pairs = |v: usize| {
        (
            lab.as_ref().map(|g| (g.orig.p_h, g.views[v].p_h)),
            unl.as_ref().map(|g| (g.orig.p_g, g.views[v].p_g)),
        )
    };
    let average_over_views = |f: &PairTerm<'_>| -> Result<Var> {
        let mut acc: Option<Var> = None;
        for v in 0..n_views {
            let (a, b) = view_pairs(v);
            let term = f(a, b)?;
            acc = Some(match acc {
                Some(x) => tape.add(x, term)?,
                None => term,
            });
        }
        Ok(tape.scale(acc.expect("at least two views"), 1.0 / n_views as f64))
    };
    let intra = average_over_views(&|a, b| taped::intra_class(tape, a, b))?;
    let mse = if cfg.intra_mode == IntraMode::Mse {
        Some(average_over_views(&|a, b| taped::mse_intra(tape, a, b))?)
    } else {
        None
    };

    let mut total = ce;
    if cfg.inter_active() {
        if let Some(i) = inter {
            total = tape.sub(total, tape.scale(i, cfg.alpha))?;
        }
    }
    if cfg.intra_active() {
        let reg = if cfg.intra_mode == IntraMode::Mse { mse.expect("mse computed") } else { intra };
        total = tape.add(total, tape.scale(reg, cfg.beta))?;
    }
    Ok(BatchLosses { total, ce, inter, intra: Some(intra), mse, norms })
}

/// Joint fine-tuning on mixed labelled/unlabelled mini-batches.
pub fn discover(params: &ModelParams, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    discover_impl(params, split, cfg, false)
}

/// Discovery with the objective reduced to cross-entropy: no sKLD or MSE
/// terms are built at all.
pub fn discover_ce_only(params: &ModelParams, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    discover_impl(params, split, cfg, true)
}

fn discover_impl(
    params: &ModelParams,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    ce_only: bool,
) -> Result<(ModelParams, TrainLog)> {
    if split.labelled_train.is_empty() || split.unlabelled_train.is_empty() {
        return Err(NcdError::Usage("discovery needs labelled and unlabelled training samples".into()));
    }
    cfg.check_model(params, split)?;
    let mut params = params.clone();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut log = TrainLog::default();
    let (alpha, beta) = (if cfg.inter_enabled { cfg.alpha } else { 0.0 }, if cfg.intra_mode == IntraMode::Off { 0.0 } else { cfg.beta });

    for epoch in 0..cfg.discover_epochs {
        let batches = make_batches(split, cfg.batch_size, &cfg.augment, mix_seed(&[cfg.seed, 200, epoch as u64]))?;
        let mut steps = Vec::with_capacity(batches.len());
        let mut norms = CrossHeadNorms::default();
        for batch in &batches {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let losses = batch_losses(&tape, &params, &bound, batch, cfg, ce_only)?;
            let grads = tape.backward(losses.total)?.collect(bound.vars());
            opt.step(&mut params, &grads)?;
            let value = |v: Option<Var>| -> Result<f64> { v.map_or(Ok(0.0), |v| tape.scalar_value(v)) };
            steps.push(LossBreakdown {
                ce: tape.scalar_value(losses.ce)?,
                inter: value(losses.inter)?,
                intra: value(losses.intra)?,
                mse: losses.mse.map(|v| tape.scalar_value(v)).transpose()?,
                total: tape.scalar_value(losses.total)?,
                alpha,
                beta,
            });
            norms.labelled_on_g += losses.norms.labelled_on_g;
            norms.unlabelled_on_h += losses.norms.unlabelled_on_h;
        }
        let n = steps.len() as f64;
        norms.labelled_on_g /= n;
        norms.unlabelled_on_h /= n;
        let snapshots = labelled_snapshot(&params, split, cfg, epoch)?;
        log.epochs.push(EpochRecord {
            phase: Phase::Discover,
            epoch,
            steps: steps.len(),
            losses: mean_breakdown(&steps, alpha, beta),
            cross_head_norms: norms,
            snapshots,
        });
        log.steps.extend(steps);
    }
    debug_assert!(params.tensors().iter().all(|t| t.is_finite()));
    Ok((params, log))
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub inter_enabled: bool,
    pub intra_mode: IntraMode,
}

impl Variant {
    fn new(name: &str, inter_enabled: bool, intra_mode: IntraMode) -> Self {
        Self { name: name.into(), inter_enabled, intra_mode }
    }

    /// baseline, inter, intra, full, mse, in that order.
    pub fn canonical() -> Vec<Variant> {
        vec![
            Variant::new("baseline", false, IntraMode::Off),
            Variant::new("inter", true, IntraMode::Off),
            Variant::new("intra", false, IntraMode::Skld),
            Variant::new("full", true, IntraMode::Skld),
            Variant::new("mse", false, IntraMode::Mse),
        ]
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { inter_enabled: self.inter_enabled, intra_mode: self.intra_mode, ..base.clone() }
    }
}

/// Task-aware scores of one variant over every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub acc: Vec<f64>,
    pub nmi: Vec<f64>,
    pub ari: Vec<f64>,
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn acc_mean(&self) -> f64 {
        mean_std(&self.acc).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == name)
    }

    /// `variant,seed_count,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed_count,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std\n");
        for r in &self.rows {
            let (am, asd) = mean_std(&r.acc);
            let (nm, nsd) = mean_std(&r.nmi);
            let (rm, rsd) = mean_std(&r.ari);
            out.push_str(&format!("{},{},{am},{asd},{nm},{nsd},{rm},{rsd}\n", r.variant, r.seeds.len()));
        }
        out
    }
}

/// Model geometry used for a split with the default desk-scale shape.
pub fn default_dims(split: &DatasetSplit, tau: f64) -> ModelDims {
    ModelDims { tau, ..ModelDims::new(split.input_dim(), split.c_l, split.c_u) }
}

/// Initialises from `seed`, pretrains, then discovers.
pub fn train_full(dims: &ModelDims, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog, TrainLog)> {
    let init = init_model(dims.clone(), cfg.seed)?;
    let (pre, pre_log) = pretrain(&init, split, cfg)?;
    let (post, disc_log) = discover(&pre, split, cfg)?;
    Ok((post, pre_log, disc_log))
}

/// Trains every variant on every seed and tabulates task-aware scores.
/// Each seed is pretrained once and shared across variants; runs execute in
/// parallel but every run is independent, so results are order-free.
pub fn run_ablation(
    split: &DatasetSplit,
    dims: &ModelDims,
    base_cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(NcdError::Usage("ablation needs at least one variant".into()));
    }
    if seeds.is_empty() {
        return Err(NcdError::Usage("ablation needs at least one seed".into()));
    }
    base_cfg.validate()?;
    let pretrained: Vec<ModelParams> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base_cfg.clone() };
            let init = init_model(dims.clone(), seed)?;
            Ok(pretrain(&init, split, &cfg)?.0)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..seeds.len()).map(move |s| (v, s))).collect();
    let reports: Vec<MetricsReport> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let cfg = TrainConfig { seed: seeds[s], ..variants[v].apply(base_cfg) };
            let (params, _) = discover(&pretrained[s], split, &cfg)?;
            evaluate_task_aware(&params, split, cfg.tau)
        })
        .collect::<Result<_>>()?;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let rs = &reports[v * seeds.len()..(v + 1) * seeds.len()];
            AblationRow {
                variant: variant.name.clone(),
                seeds: seeds.to_vec(),
                acc: rs.iter().map(|r| r.acc).collect(),
                nmi: rs.iter().map(|r| r.nmi).collect(),
                ari: rs.iter().map(|r| r.ari).collect(),
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{generate, SyntheticSpec};

    fn tiny() -> (DatasetSplit, ModelDims) {
        let spec = SyntheticSpec { input_dim: 6, n_classes: 5, n_labelled_classes: 2, samples_per_class: 20, separation: 5.0, ..Default::default() };
        let split = generate(&spec).unwrap();
        let dims = ModelDims { encoder_widths: vec![8, 6], hidden_dim: 6, ..default_dims(&split, 0.1) };
        (split, dims)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { pretrain_epochs: 3, discover_epochs: 3, batch_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (split, dims) = tiny();
        let init = init_model(dims, 1).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..quick_cfg() };
        let (after, log) = pretrain(&init, &split, &cfg).unwrap();
        assert_eq!(after, init);
        assert_eq!(log.epochs.len(), 3);
        let (after, _) = discover(&init, &split, &cfg).unwrap();
        assert_eq!(after, init);
    }

    #[test]
    fn pretraining_touches_only_encoder_and_h() {
        let (split, dims) = tiny();
        let init = init_model(dims, 6).unwrap();
        let (after, log) = pretrain(&init, &split, &quick_cfg()).unwrap();
        assert_eq!(after.head_g, init.head_g);
        assert_ne!(after.head_h, init.head_h);
        assert_ne!(after.encoder, init.encoder);
        assert!(log.steps.iter().all(|s| s.total == s.ce && s.inter == 0.0));
        let empty = DatasetSplit::new(Vec::new(), split.unlabelled_train.clone(), Vec::new(), Vec::new(), 2, 3);
        assert!(matches!(pretrain(&init, &empty, &quick_cfg()), Err(NcdError::Usage(_))));
    }

    #[test]
    fn discover_is_deterministic_and_blind() {
        let (split, dims) = tiny();
        let init = init_model(dims, 2).unwrap();
        let cfg = quick_cfg();
        let (a, log_a) = discover(&init, &split, &cfg).unwrap();
        let (b, log_b) = discover(&init, &split, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a.to_jsonl(), log_b.to_jsonl());
        assert_eq!(split.truth_reads(), 0);
        assert_eq!(log_a.to_jsonl().lines().count(), 3);

        let cfg = TrainConfig { eval_every: 2, ..cfg };
        let (_, log) = discover(&init, &split, &cfg).unwrap();
        let counts: Vec<usize> = log.epochs.iter().map(|e| e.snapshots.len()).collect();
        assert_eq!(counts, [0, 1, 0]);
        assert_eq!(split.truth_reads(), 0);
    }

    #[test]
    fn reduced_objective_equals_ce() {
        let (split, dims) = tiny();
        let init = init_model(dims, 3).unwrap();
        let cfg = TrainConfig { alpha: 0.0, beta: 0.0, intra_mode: IntraMode::Off, ..quick_cfg() };
        let (a, log) = discover(&init, &split, &cfg).unwrap();
        assert!(log.steps.iter().all(|s| s.total.to_bits() == s.ce.to_bits()));
        let (b, _) = discover_ce_only(&init, &split, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn over_clustering_heads_train() {
        let (split, mut dims) = tiny();
        dims.num_over_heads = 2;
        let init = init_model(dims, 4).unwrap();
        let (after, log) = discover(&init, &split, &quick_cfg()).unwrap();
        assert_ne!(after.over_heads, init.over_heads);
        assert!(log.steps.iter().all(|s| s.total.is_finite()));
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let (split, dims) = tiny();
        let init = init_model(dims, 5).unwrap();
        let cfg = TrainConfig { tau: 0.5, ..quick_cfg() };
        assert!(matches!(discover(&init, &split, &cfg), Err(NcdError::Config(_))));
        let other = init_model(ModelDims { c_u: 2, ..init.dims.clone() }, 0).unwrap();
        assert!(matches!(pretrain(&other, &split, &quick_cfg()), Err(NcdError::Config(_))));
    }

    #[test]
    fn ablation_shapes() {
        let (split, dims) = tiny();
        let table = run_ablation(&split, &dims, &quick_cfg(), &Variant::canonical(), &[1, 2]).unwrap();
        let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["baseline", "inter", "intra", "full", "mse"]);
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(table.rows.iter().all(|r| r.acc.len() == 2));
        assert!(run_ablation(&split, &dims, &quick_cfg(), &[], &[1]).is_err());
    }

    #[test]
    fn mean_std_sample_convention() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
