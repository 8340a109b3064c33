//! Balanced soft pseudo-labels for unlabelled samples.
//!
//! [`sinkhorn_knopp`] turns a batch of `g`-head logits into an assignment
//! whose rows are distributions and whose columns share the batch mass
//! equally. The iteration runs in the log domain so that small `epsilon`
//! values cannot underflow whole columns.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, NcdError, Result};
use crate::losses::{PaddedTarget, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub n_iters: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, n_iters: 3 }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(NcdError::Config(format!("sinkhorn epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_iters == 0 {
            return Err(NcdError::Config("sinkhorn needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// `M × C^u` soft assignment; rows sum to 1, columns to `M / C^u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    q: Tensor,
}

impl AssignmentMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.q
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.q.to_rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.q.row(i)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.q.rows()).map(|i| self.q.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.q.cols()];
        for i in 0..self.q.rows() {
            for (s, v) in sums.iter_mut().zip(self.q.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn into_tensor(self) -> Tensor {
        self.q
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic balanced assignment `Q ∝ exp(logits / ε)`, alternating column
/// then row normalisation for `n_iters` rounds.
pub fn sinkhorn_knopp(logits: &Tensor, config: &SinkhornConfig) -> Result<AssignmentMatrix> {
    config.validate()?;
    if !logits.is_finite() {
        return Err(NcdError::Input("sinkhorn logits must be finite".into()));
    }
    let (m, c) = (logits.rows(), logits.cols());
    let mut log_q: Vec<f64> = logits.data().iter().map(|l| l / config.epsilon).collect();
    let log_col_mass = (m as f64 / c as f64).ln();
    for _ in 0..config.n_iters {
        for j in 0..c {
            let lse = log_sum_exp((0..m).map(|i| log_q[i * c + j]));
            for i in 0..m {
                log_q[i * c + j] += log_col_mass - lse;
            }
        }
        for row in log_q.chunks_mut(c) {
            let lse = log_sum_exp(row.iter().copied());
            row.iter_mut().for_each(|v| *v -= lse);
        }
    }
    let q = log_q.into_iter().map(f64::exp).collect();
    Ok(AssignmentMatrix { q: Tensor::matrix(m, c, q) })
}

/// Swapped prediction: each view is supervised by the assignment computed
/// from the other view. The returned targets are plain values and carry no
/// gradient.
pub fn swapped_pseudo_labels(
    logits_view1: &Tensor,
    logits_view2: &Tensor,
    config: &SinkhornConfig,
) -> Result<(AssignmentMatrix, AssignmentMatrix)> {
    if logits_view1.shape() != logits_view2.shape() {
        return shape_err(format!(
            "view logits shapes {:?} vs {:?}",
            logits_view1.shape(),
            logits_view2.shape()
        ));
    }
    Ok((sinkhorn_knopp(logits_view2, config)?, sinkhorn_knopp(logits_view1, config)?))
}

/// Places a side-local target into the `C^l + C^u` output layout.
pub fn zero_pad_target(t: &[f64], side: Side, c_l: usize, c_u: usize) -> Result<PaddedTarget> {
    let expected = match side {
        Side::Labelled => c_l,
        Side::Unlabelled => c_u,
    };
    if t.len() != expected {
        return shape_err(format!("{side:?} target has length {}, expected {expected}", t.len()));
    }
    let mut values = vec![0.0; c_l + c_u];
    let offset = if side == Side::Labelled { 0 } else { c_l };
    values[offset..offset + expected].copy_from_slice(t);
    Ok(PaddedTarget { values, side })
}

/// Zero-padded one-hot target for labelled class `class`.
pub fn labelled_target(class: usize, c_l: usize, c_u: usize) -> Result<PaddedTarget> {
    if class >= c_l {
        return shape_err(format!("labelled class {class} out of range 0..{c_l}"));
    }
    let mut onehot = vec![0.0; c_l];
    onehot[class] = 1.0;
    zero_pad_target(&onehot, Side::Labelled, c_l, c_u)
}
