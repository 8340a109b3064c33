//! Novel class discovery on synthetic Gaussian data.
//!
//! A shared encoder feeds a head for the known (labelled) classes and a head
//! for the novel classes. Training runs supervised pretraining on labelled
//! data followed by joint discovery with swapped Sinkhorn-Knopp
//! pseudo-labels, a symmetric-KL term that pushes labelled and unlabelled
//! predictions apart and a symmetric-KL term that keeps augmented views
//! consistent. Evaluation matches clusters to classes with the Hungarian
//! algorithm.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pseudo_label;
pub mod synth_data;
pub mod trainer;

pub use autodiff::{GradientMap, Parameters, Sgd, Tape, Tensor, Var};
pub use error::{NcdError, Result};
pub use losses::{LossBreakdown, PaddedTarget, ProbVector, Side, PROB_FLOOR};
pub use metrics::{EvalSubset, MetricsReport, Protocol};
pub use model::{init_model, ModelDims, ModelOutput, ModelParams};
pub use pseudo_label::{AssignmentMatrix, SinkhornConfig};
pub use synth_data::{AugmentConfig, DatasetSplit, LabelledSample, Subset, SyntheticSpec, UnlabelledSample};
pub use trainer::{IntraMode, TrainConfig, TrainLog, Variant};
