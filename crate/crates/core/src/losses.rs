//! Divergence, consistency and cross-entropy losses.
//!
//! Plain functions operate on probability slices and are used for reporting;
//! the [`taped`] module builds the same quantities on a [`Tape`] over whole
//! mini-batch matrices so that they can be differentiated. Every logarithm is
//! natural and every distribution is floored at [`PROB_FLOOR`] and
//! renormalised before a logarithm is taken.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{shape_err, NcdError, Result};

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-8;

/// A distribution over a fixed number of outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Accepts nonnegative finite values summing to 1 within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return shape_err("empty distribution");
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(NcdError::Input("distribution has negative or non-finite entries".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(NcdError::Input(format!("distribution sums to {total}")));
        }
        Ok(Self(values))
    }

    /// Floors every entry at [`PROB_FLOOR`] and renormalises.
    pub fn clamped(values: &[f64]) -> Self {
        Self(clamp_prob(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Which half of the concatenated output a target lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Labelled,
    Unlabelled,
}

/// A target over `C^l + C^u` outputs, zero on the other side's block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddedTarget {
    pub(crate) values: Vec<f64>,
    pub(crate) side: Side,
}

impl PaddedTarget {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn side(&self) -> Side {
        self.side
    }
}

/// Per-step (or epoch-mean) values of every objective term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub inter: f64,
    pub intra: f64,
    pub mse: Option<f64>,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn clamp_prob(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|v| v.max(PROB_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return shape_err(format!("distribution lengths {} vs {}", p.len(), q.len()));
    }
    Ok(())
}

/// `Σ_k p(k) ln(p(k)/q(k))` after flooring both arguments.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Symmetric KL: `½(KL(p‖q) + KL(q‖p))`.
pub fn skl_pair(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(0.5 * (kl_div(p, q)? + kl_div(q, p)?))
}

fn check_width(lists: &[&[Vec<f64>]]) -> Result<()> {
    let mut width = None;
    for v in lists.iter().flat_map(|l| l.iter()) {
        match width {
            None => width = Some(v.len()),
            Some(w) if w != v.len() => return shape_err(format!("mixed vector lengths {w} and {}", v.len())),
            _ => {}
        }
    }
    Ok(())
}

/// Mean symmetric KL over every (labelled, unlabelled) pair; 0 when a side is empty.
pub fn inter_class_loss(labelled: &[Vec<f64>], unlabelled: &[Vec<f64>]) -> Result<f64> {
    check_width(&[labelled, unlabelled])?;
    if labelled.is_empty() || unlabelled.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in labelled {
        for q in unlabelled {
            total += skl_pair(p, q)?;
        }
    }
    Ok(total / (labelled.len() * unlabelled.len()) as f64)
}

fn mean_aligned(a: &[Vec<f64>], b: &[Vec<f64>], f: impl Fn(&[f64], &[f64]) -> Result<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return shape_err(format!("misaligned lists of {} and {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += f(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// View-consistency term: labelled samples on head `h` plus unlabelled
/// samples on head `g`; an empty side contributes 0.
pub fn intra_class_loss(
    labelled_h: &[Vec<f64>],
    labelled_h_view: &[Vec<f64>],
    unlabelled_g: &[Vec<f64>],
    unlabelled_g_view: &[Vec<f64>],
) -> Result<f64> {
    Ok(mean_aligned(labelled_h, labelled_h_view, skl_pair)?
        + mean_aligned(unlabelled_g, unlabelled_g_view, skl_pair)?)
}

/// `−(1/n) Σ_i Σ_k y_i(k) ln p_i(k)` with `p` floored.
pub fn cross_entropy_padded(probs: &[Vec<f64>], targets: &[PaddedTarget]) -> Result<f64> {
    if probs.len() != targets.len() {
        return shape_err(format!("{} predictions for {} targets", probs.len(), targets.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(targets) {
        same_len(p, &y.values)?;
        let p = clamp_prob(p);
        total -= y.values.iter().zip(&p).map(|(t, q)| t * q.ln()).sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

/// Mean over samples of the mean squared coordinate difference.
pub fn mse_consistency(probs: &[Vec<f64>], probs_view: &[Vec<f64>]) -> Result<f64> {
    mean_aligned(probs, probs_view, |p, q| {
        same_len(p, q)?;
        Ok(p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64)
    })
}

/// `ce − α·inter + β·intra`.
pub fn total_objective(ce: f64, inter: f64, intra: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(NcdError::Config(format!("alpha and beta must be >= 0, got {alpha}, {beta}")));
    }
    Ok(ce - alpha * inter + beta * intra)
}

/// Batched versions of the losses on a [`Tape`]. Inputs are `rows × K`
/// probability matrices; targets are constant matrices.
pub mod taped {
    use super::*;
    use crate::autodiff::Var;

    /// Floors at [`PROB_FLOOR`] and renormalises every row.
    pub fn clamp(tape: &Tape, p: Var) -> Var {
        let c = tape.clamp_min(p, PROB_FLOOR);
        tape.row_normalize(c)
    }

    /// Sum over rows of `KL(p_i ‖ q_i)`.
    fn kl_rows_sum(tape: &Tape, p: Var, q: Var) -> Result<Var> {
        let (p, q) = (clamp(tape, p), clamp(tape, q));
        let diff = tape.sub(tape.log(p), tape.log(q))?;
        Ok(tape.sum(tape.mul(p, diff)?))
    }

    fn rows(tape: &Tape, v: Var) -> f64 {
        tape.value(v).rows() as f64
    }

    /// Mean over aligned rows of `KL(p_i ‖ q_i)`.
    pub fn kl_div_mean(tape: &Tape, p: Var, q: Var) -> Result<Var> {
        let s = kl_rows_sum(tape, p, q)?;
        Ok(tape.scale(s, 1.0 / rows(tape, p)))
    }

    /// Mean over aligned rows of the symmetric KL.
    pub fn skl_mean(tape: &Tape, p: Var, q: Var) -> Result<Var> {
        let (cp, cq) = (clamp(tape, p), clamp(tape, q));
        // ½ Σ (p − q)(ln p − ln q) equals the symmetric KL
        let dp = tape.sub(cp, cq)?;
        let dl = tape.sub(tape.log(cp), tape.log(cq))?;
        let s = tape.sum(tape.mul(dp, dl)?);
        Ok(tape.scale(s, 0.5 / rows(tape, p)))
    }

    /// Mean symmetric KL over all `N·M` row pairs of `labelled` and `unlabelled`.
    pub fn inter_class(tape: &Tape, labelled: Var, unlabelled: Var) -> Result<Var> {
        let (n, m) = (rows(tape, labelled), rows(tape, unlabelled));
        let p = clamp(tape, labelled);
        let q = clamp(tape, unlabelled);
        let (lp, lq) = (tape.log(p), tape.log(q));
        // Σ_ij Σ_k (p_ik − q_jk)(lp_ik − lq_jk) expanded into row and cross terms
        let self_p = tape.scale(tape.sum(tape.mul(p, lp)?), m);
        let self_q = tape.scale(tape.sum(tape.mul(q, lq)?), n);
        let cross_pq = tape.sum(tape.matmul(p, tape.transpose(lq))?);
        let cross_qp = tape.sum(tape.matmul(q, tape.transpose(lp))?);
        let selfs = tape.add(self_p, self_q)?;
        let crosses = tape.add(cross_pq, cross_qp)?;
        let total = tape.sub(selfs, crosses)?;
        Ok(tape.scale(total, 0.5 / (n * m)))
    }

    /// Labelled-head plus unlabelled-head view consistency; `None` sides contribute 0.
    pub fn intra_class(tape: &Tape, labelled: Option<(Var, Var)>, unlabelled: Option<(Var, Var)>) -> Result<Var> {
        let mut total = tape.constant(crate::autodiff::Tensor::scalar(0.0));
        for (a, b) in labelled.into_iter().chain(unlabelled) {
            let term = skl_mean(tape, a, b)?;
            total = tape.add(total, term)?;
        }
        Ok(total)
    }

    /// Sum over rows of `−Σ_k y(k) ln p(k)`; `targets` is a constant matrix.
    pub fn cross_entropy_sum(tape: &Tape, probs: Var, targets: Var) -> Result<Var> {
        let lp = tape.log(clamp(tape, probs));
        let s = tape.sum(tape.mul(targets, lp)?);
        Ok(tape.scale(s, -1.0))
    }

    pub fn cross_entropy_mean(tape: &Tape, probs: Var, targets: Var) -> Result<Var> {
        let s = cross_entropy_sum(tape, probs, targets)?;
        Ok(tape.scale(s, 1.0 / rows(tape, probs)))
    }

    /// Mean over samples and coordinates of `(p − p̂)²`.
    pub fn mse_mean(tape: &Tape, p: Var, q: Var) -> Result<Var> {
        let d = tape.sub(p, q)?;
        Ok(tape.mean(tape.mul(d, d)?))
    }

    /// MSE counterpart of [`intra_class`].
    pub fn mse_intra(tape: &Tape, labelled: Option<(Var, Var)>, unlabelled: Option<(Var, Var)>) -> Result<Var> {
        let mut total = tape.constant(crate::autodiff::Tensor::scalar(0.0));
        for (a, b) in labelled.into_iter().chain(unlabelled) {
            let term = mse_mean(tape, a, b)?;
            total = tape.add(total, term)?;
        }
        Ok(total)
    }
}
