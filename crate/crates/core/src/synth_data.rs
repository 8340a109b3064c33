//! Synthetic novel-class-discovery benchmarks.
//!
//! Classes are isotropic unit-variance Gaussian clusters. The first `C^l`
//! classes form the labelled side, the remaining `C^u` the unlabelled side.
//! Ground truth of unlabelled samples is kept private and is only reachable
//! through [`DatasetSplit::unlabelled_truth`], which counts every read.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NcdError, Result};

/// SplitMix64 finaliser used to derive independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub n_classes: usize,
    pub n_labelled_classes: usize,
    pub samples_per_class: usize,
    /// Minimum distance between class means, in units of the cluster standard deviation.
    pub separation: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            input_dim: 16,
            n_classes: 10,
            n_labelled_classes: 5,
            samples_per_class: 200,
            separation: 4.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn c_l(&self) -> usize {
        self.n_labelled_classes
    }

    pub fn c_u(&self) -> usize {
        self.n_classes.saturating_sub(self.n_labelled_classes)
    }

    fn per_class_test(&self) -> usize {
        (self.test_fraction * self.samples_per_class as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NcdError::Config(m));
        if self.input_dim == 0 {
            return fail("input_dim must be positive".into());
        }
        if self.n_labelled_classes < 1 || self.n_labelled_classes >= self.n_classes {
            return fail(format!(
                "need 1 <= n_labelled_classes < n_classes, got {} of {}",
                self.n_labelled_classes, self.n_classes
            ));
        }
        if self.c_u() < 2 {
            return fail(format!("need at least two unlabelled classes, got {}", self.c_u()));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return fail(format!("separation must be >= 0, got {}", self.separation));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        let test = self.per_class_test();
        if test == 0 || test >= self.samples_per_class {
            return fail(format!(
                "samples_per_class {} with test_fraction {} leaves an empty train or test subset",
                self.samples_per_class, self.test_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSample {
    pub features: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabelledSample {
    pub features: Vec<f64>,
    hidden_class: usize,
}

impl UnlabelledSample {
    pub(crate) fn new(features: Vec<f64>, hidden_class: usize) -> Self {
        Self { features, hidden_class }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
}

/// Labelled and unlabelled train/test pools with disjoint class sets.
/// Class indices are zero-based within each side.
#[derive(Debug)]
pub struct DatasetSplit {
    pub labelled_train: Vec<LabelledSample>,
    pub unlabelled_train: Vec<UnlabelledSample>,
    pub labelled_test: Vec<LabelledSample>,
    pub unlabelled_test: Vec<UnlabelledSample>,
    pub c_l: usize,
    pub c_u: usize,
    pub provenance: Option<SyntheticSpec>,
    truth_reads: AtomicUsize,
}

impl Clone for DatasetSplit {
    fn clone(&self) -> Self {
        Self {
            labelled_train: self.labelled_train.clone(),
            unlabelled_train: self.unlabelled_train.clone(),
            labelled_test: self.labelled_test.clone(),
            unlabelled_test: self.unlabelled_test.clone(),
            c_l: self.c_l,
            c_u: self.c_u,
            provenance: self.provenance.clone(),
            truth_reads: AtomicUsize::new(self.truth_reads()),
        }
    }
}

impl PartialEq for DatasetSplit {
    fn eq(&self, other: &Self) -> bool {
        self.labelled_train == other.labelled_train
            && self.unlabelled_train == other.unlabelled_train
            && self.labelled_test == other.labelled_test
            && self.unlabelled_test == other.unlabelled_test
            && self.c_l == other.c_l
            && self.c_u == other.c_u
    }
}

impl DatasetSplit {
    pub fn new(
        labelled_train: Vec<LabelledSample>,
        unlabelled_train: Vec<UnlabelledSample>,
        labelled_test: Vec<LabelledSample>,
        unlabelled_test: Vec<UnlabelledSample>,
        c_l: usize,
        c_u: usize,
    ) -> Self {
        Self {
            labelled_train,
            unlabelled_train,
            labelled_test,
            unlabelled_test,
            c_l,
            c_u,
            provenance: None,
            truth_reads: AtomicUsize::new(0),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.labelled_train
            .iter()
            .map(|s| s.features.len())
            .chain(self.unlabelled_train.iter().map(|s| s.features.len()))
            .next()
            .unwrap_or(0)
    }

    pub fn labelled(&self, subset: Subset) -> &[LabelledSample] {
        match subset {
            Subset::Train => &self.labelled_train,
            Subset::Test => &self.labelled_test,
        }
    }

    pub fn unlabelled(&self, subset: Subset) -> &[UnlabelledSample] {
        match subset {
            Subset::Train => &self.unlabelled_train,
            Subset::Test => &self.unlabelled_test,
        }
    }

    /// Hidden classes of the unlabelled pool. Evaluation only; every call adds
    /// the number of labels revealed to the audit counter.
    pub fn unlabelled_truth(&self, subset: Subset) -> Vec<usize> {
        let pool = self.unlabelled(subset);
        self.truth_reads.fetch_add(pool.len(), Ordering::SeqCst);
        pool.iter().map(|s| s.hidden_class).collect()
    }

    /// Number of hidden labels revealed so far.
    pub fn truth_reads(&self) -> usize {
        self.truth_reads.load(Ordering::SeqCst)
    }

    pub fn reset_truth_reads(&self) {
        self.truth_reads.store(0, Ordering::SeqCst);
    }

    /// Writes `split,side,class,f0,f1,...` rows: labelled train, unlabelled
    /// train, labelled test, unlabelled test. Hidden labels are written; the
    /// file doubles as the evaluation oracle.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let dim = self.input_dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["split".to_string(), "side".into(), "class".into()];
        header.extend((0..dim).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(csv_err)?;
        let mut put = |split: &str, side: &str, class: usize, features: &[f64]| {
            let mut rec = vec![split.to_string(), side.to_string(), class.to_string()];
            rec.extend(features.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)
        };
        for (name, subset) in [("train", Subset::Train), ("test", Subset::Test)] {
            for s in self.labelled(subset) {
                put(name, "labelled", s.class, &s.features)?;
            }
            for s in self.unlabelled(subset) {
                put(name, "unlabelled", s.hidden_class, &s.features)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names.len() < 4 || names[..3] != ["split", "side", "class"] {
            return Err(NcdError::Format("header must start with split,side,class,f0".into()));
        }
        let dim = names.len() - 3;
        let mut split = DatasetSplit::new(Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0, 0);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| NcdError::Format(format!("row {}: {what}", line + 2));
            if rec.len() != dim + 3 {
                return Err(bad("wrong number of columns"));
            }
            let class: usize = rec[2].parse().map_err(|_| bad("class is not an index"))?;
            let features = rec
                .iter()
                .skip(3)
                .map(|f| f.parse::<f64>().map_err(|_| bad("feature is not a number")))
                .collect::<Result<Vec<_>>>()?;
            let subset = match &rec[0] {
                "train" => Subset::Train,
                "test" => Subset::Test,
                _ => return Err(bad("split must be train or test")),
            };
            match (&rec[1], subset) {
                ("labelled", Subset::Train) => split.labelled_train.push(LabelledSample { features, class }),
                ("labelled", Subset::Test) => split.labelled_test.push(LabelledSample { features, class }),
                ("unlabelled", Subset::Train) => split.unlabelled_train.push(UnlabelledSample::new(features, class)),
                ("unlabelled", Subset::Test) => split.unlabelled_test.push(UnlabelledSample::new(features, class)),
                _ => return Err(bad("side must be labelled or unlabelled")),
            }
        }
        let max_l = split.labelled_train.iter().chain(&split.labelled_test).map(|s| s.class).max();
        let max_u = split.unlabelled_train.iter().chain(&split.unlabelled_test).map(|s| s.hidden_class).max();
        split.c_l = max_l.map_or(0, |m| m + 1);
        split.c_u = max_u.map_or(0, |m| m + 1);
        Ok(split)
    }
}

fn csv_err(e: csv::Error) -> NcdError {
    NcdError::Format(e.to_string())
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

const DIRECTION_RETRIES: usize = 2000;

/// Class means at radius `separation` along directions at least 60° apart,
/// so every pair of means is at least `separation` apart.
pub fn class_means(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 1]));
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    for c in 0..spec.n_classes {
        let mut accepted = None;
        for _ in 0..DIRECTION_RETRIES {
            let d = unit_direction(spec.input_dim, &mut rng);
            if dirs.iter().all(|o| distance(o, &d) >= 1.0) {
                accepted = Some(d);
                break;
            }
        }
        match accepted {
            Some(d) => dirs.push(d),
            None => {
                return Err(NcdError::Generation(format!(
                    "could not place class {c} of {} in {} dimensions after {DIRECTION_RETRIES} retries",
                    spec.n_classes, spec.input_dim
                )))
            }
        }
    }
    Ok(dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * spec.separation).collect())
        .collect())
}

/// Draws a deterministic split from `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    let means = class_means(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 2]));
    let n_test = spec.per_class_test();
    let mut split = DatasetSplit::new(Vec::new(), Vec::new(), Vec::new(), Vec::new(), spec.c_l(), spec.c_u());
    for (c, mean) in means.iter().enumerate() {
        for k in 0..spec.samples_per_class {
            let features: Vec<f64> = mean
                .iter()
                .map(|m| m + normal(&mut rng))
                .collect();
            let is_test = k >= spec.samples_per_class - n_test;
            if c < spec.c_l() {
                let s = LabelledSample { features, class: c };
                if is_test { split.labelled_test.push(s) } else { split.labelled_train.push(s) }
            } else {
                let s = UnlabelledSample::new(features, c - spec.c_l());
                if is_test { split.unlabelled_test.push(s) } else { split.unlabelled_train.push(s) }
            }
        }
    }
    split.provenance = Some(spec.clone());
    Ok(split)
}

/// Vector stand-ins for image augmentations: multiplicative scaling,
/// additive Gaussian jitter and random coordinate masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub jitter_sigma: f64,
    pub mask_fraction: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub views_per_sample: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.5,
            mask_fraction: 0.125,
            scale_min: 0.8,
            scale_max: 1.2,
            views_per_sample: 2,
        }
    }
}

impl AugmentConfig {
    /// Leaves every input unchanged.
    pub fn identity() -> Self {
        Self { jitter_sigma: 0.0, mask_fraction: 0.0, scale_min: 1.0, scale_max: 1.0, views_per_sample: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NcdError::Config(m));
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return fail(format!("jitter_sigma must be >= 0, got {}", self.jitter_sigma));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return fail(format!("mask_fraction must be in [0, 1), got {}", self.mask_fraction));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0 && self.scale_max >= 1.0 && self.scale_max.is_finite()) {
            return fail(format!(
                "scale range [{}, {}] must be positive and contain 1",
                self.scale_min, self.scale_max
            ));
        }
        if self.views_per_sample < 2 {
            return fail(format!("views_per_sample must be >= 2, got {}", self.views_per_sample));
        }
        Ok(())
    }
}

/// One augmented view of `x`, deterministic in `(x, cfg, seed)`.
pub fn augment(x: &[f64], cfg: &AugmentConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if cfg.scale_max > cfg.scale_min {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let mut out: Vec<f64> = x
        .iter()
        .map(|v| {
            let noise: f64 = if cfg.jitter_sigma > 0.0 {
                cfg.jitter_sigma * normal(&mut rng)
            } else {
                0.0
            };
            v * scale + noise
        })
        .collect();
    let n_mask = (cfg.mask_fraction * x.len() as f64).floor() as usize;
    if n_mask > 0 {
        for i in index::sample(&mut rng, x.len(), n_mask) {
            out[i] = 0.0;
        }
    }
    out
}

/// A training sample with its augmented views. `label` is only ever set for
/// labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    /// Position in the training pool of its side.
    pub index: usize,
    pub label: Option<usize>,
    pub original: Vec<f64>,
    pub views: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub labelled: Vec<BatchEntry>,
    pub unlabelled: Vec<BatchEntry>,
}

impl MiniBatch {
    pub fn n_labelled(&self) -> usize {
        self.labelled.len()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.unlabelled.len()
    }
}

fn make_entry(index: usize, label: Option<usize>, x: &[f64], aug: &AugmentConfig, seed: u64, side: u64) -> BatchEntry {
    let views = (0..aug.views_per_sample)
        .map(|v| augment(x, aug, mix_seed(&[seed, side, index as u64, v as u64])))
        .collect();
    BatchEntry { index, label, original: x.to_vec(), views }
}

/// One epoch of mixed mini-batches. Each side is shuffled independently and
/// dealt across `ceil((N + M) / batch_size)` batches in proportion to its size.
pub fn make_batches(split: &DatasetSplit, batch_size: usize, aug: &AugmentConfig, seed: u64) -> Result<Vec<MiniBatch>> {
    if batch_size < 2 {
        return Err(NcdError::Config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    aug.validate()?;
    let (n, m) = (split.labelled_train.len(), split.unlabelled_train.len());
    if n + m == 0 {
        return Err(NcdError::Usage("cannot batch an empty training split".into()));
    }
    let mut lab: Vec<usize> = (0..n).collect();
    let mut unl: Vec<usize> = (0..m).collect();
    lab.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 10])));
    unl.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 11])));
    let n_batches = (n + m).div_ceil(batch_size);
    let chunk = |len: usize, b: usize| (b * len / n_batches)..((b + 1) * len / n_batches);
    Ok((0..n_batches)
        .map(|b| MiniBatch {
            labelled: lab[chunk(n, b)]
                .iter()
                .map(|&i| {
                    let s = &split.labelled_train[i];
                    make_entry(i, Some(s.class), &s.features, aug, seed, 0)
                })
                .collect(),
            unlabelled: unl[chunk(m, b)]
                .iter()
                .map(|&j| make_entry(j, None, &split.unlabelled_train[j].features, aug, seed, 1))
                .collect(),
        })
        .collect())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
