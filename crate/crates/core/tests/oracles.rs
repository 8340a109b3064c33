mod common;

use common::nearest_mean_model;
use ncd_core::metrics::{clustering_accuracy, evaluate_task_agnostic, evaluate_task_aware, EvalSubset};
use ncd_core::model::{init_model, ModelDims};
use ncd_core::synth_data::{class_means, generate};
use ncd_core::trainer::{labelled_accuracy, pretrain};
use ncd_core::{Parameters, Subset, SyntheticSpec, TrainConfig};

fn nearest(means: &[Vec<f64>], x: &[f64]) -> usize {
    let d = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (0..means.len()).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap()
}

#[test]
fn wide_separation_is_solved_by_nearest_mean() {
    let spec = SyntheticSpec { separation: 8.0, ..SyntheticSpec::default() };
    let split = generate(&spec).unwrap();
    let means = class_means(&spec).unwrap();
    let unl = &means[spec.c_l()..];
    let pool = split.unlabelled(Subset::Train);
    let preds: Vec<usize> = pool.iter().map(|s| nearest(unl, &s.features)).collect();
    let acc = clustering_accuracy(&split.unlabelled_truth(Subset::Train), &preds).unwrap();
    assert!(acc >= 0.99, "raw nearest-mean accuracy {acc}");

    let model = nearest_mean_model(&means, spec.c_l(), 0.1);
    let report = evaluate_task_aware(&model, &split, 0.1).unwrap();
    assert!(report.acc >= 0.99, "model accuracy {}", report.acc);
    assert!((report.acc - acc).abs() < 1e-12);
}

#[test]
fn perfect_model_scores_one_everywhere() {
    let spec = SyntheticSpec { n_classes: 4, n_labelled_classes: 2, separation: 40.0, samples_per_class: 30, ..SyntheticSpec::default() };
    let split = generate(&spec).unwrap();
    let model = nearest_mean_model(&class_means(&spec).unwrap(), 2, 0.1);
    let aware = evaluate_task_aware(&model, &split, 0.1).unwrap();
    assert_eq!((aware.acc, aware.nmi, aware.ari), (1.0, 1.0, 1.0));
    let agnostic = evaluate_task_agnostic(&model, &split, 0.1).unwrap();
    let subsets: Vec<EvalSubset> = agnostic.iter().map(|r| r.subset).collect();
    assert_eq!(subsets, [EvalSubset::Labelled, EvalSubset::Unlabelled, EvalSubset::All]);
    assert!(agnostic.iter().all(|r| r.acc == 1.0));
}

#[test]
fn zero_weight_model_is_at_chance() {
    for seed in 0..5 {
        let split = generate(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
        let mut model = init_model(ModelDims::new(16, 5, 5), seed).unwrap();
        for t in model.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let acc = evaluate_task_aware(&model, &split, 0.1).unwrap().acc;
        assert!((0.15..=0.45).contains(&acc), "seed {seed}: {acc}");
    }
}

#[test]
fn pretraining_fits_the_labelled_pool() {
    let split = generate(&SyntheticSpec::default()).unwrap();
    let cfg = TrainConfig::default();
    let init = init_model(ModelDims::new(16, 5, 5), 0).unwrap();
    let (params, log) = pretrain(&init, &split, &cfg).unwrap();
    let acc = labelled_accuracy(&params, &split.labelled_train, cfg.tau).unwrap();
    assert!(acc >= 0.99, "labelled train accuracy {acc}");
    let ce: Vec<f64> = log.epochs.iter().map(|e| e.losses.ce).collect();
    // single epochs jitter at this loss scale; compare 10-epoch means
    let tail = &ce[ce.len() / 2..];
    let means: Vec<f64> = tail.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "windowed CE rose from {} to {}", w[0], w[1]);
    }
    assert_eq!(split.truth_reads(), 0);
}
