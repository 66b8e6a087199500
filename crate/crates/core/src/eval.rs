//! Importance of training samples measured by removal and re-training, and
//! confusion matrices.
//!
//! A training sample's importance is its average activation distance to the
//! test samples predicted as its class; lower means more important. The
//! experiment removes the most important fraction, re-trains from scratch
//! and compares against removing the same number of samples at random.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use core::fmt;

use crate::dsp::{EnvelopeSpectrum, HealthClass};
use crate::error::{Error, Result};
use crate::gradcam::{self, BandsByClass};
use crate::library::{Algo, HealthLibrary};
use crate::nn::{self, Model, ModelArch, TrainConfig};
use crate::retrieval;
use crate::rng::{derive_seed, Stream};

const TRAIN_SEED_TAG: u64 = 0x5245_5452;
const RANDOM_SEED_TAG: u64 = 0x5241_4e44;

/// Training-by-test distances; pairs whose classes differ are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub n_train: usize,
    pub n_test: usize,
    /// Row-major `n_train x n_test`.
    pub values: Vec<Option<f64>>,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    pub train_classes: Vec<HealthClass>,
    /// Predicted classes of the test samples.
    pub test_classes: Vec<HealthClass>,
    pub algo: Algo,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n_test + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.values[i * self.n_test..(i + 1) * self.n_test]
    }
}

/// Distances between every library entry and every test sample predicted
/// as the entry's class.
pub fn distance_matrix(
    model: &Model<f32>,
    library: &HealthLibrary,
    test_set: &[EnvelopeSpectrum],
    algo: Algo,
    bands: &BandsByClass,
) -> Result<DistanceMatrix> {
    let inputs: Vec<&[f32]> = test_set.iter().map(|s| s.amplitudes.as_slice()).collect();
    let mut test_classes = Vec::with_capacity(test_set.len());
    for (c, _) in model.predict_many(&inputs)? {
        test_classes.push(HealthClass::from_index(c).ok_or_else(|| Error::arg("model", "more classes than health states"))?);
    }
    let test_full = gradcam::full_vectors(model, &inputs, &test_classes)?;
    let test_vecs = test_full
        .iter()
        .zip(&test_classes)
        .map(|(v, &c)| retrieval::comparison_vector(v, c, algo, bands).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    let train_vecs = library
        .entries
        .iter()
        .map(|e| retrieval::comparison_vector(&e.vector, e.class, algo, bands).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;

    let n_test = test_set.len();
    let mut values = vec![None; library.len() * n_test];
    for (i, (e, tv)) in library.entries.iter().zip(&train_vecs).enumerate() {
        for j in 0..n_test {
            if test_classes[j] == e.class {
                values[i * n_test + j] = Some(retrieval::activation_distance(tv, &test_vecs[j]));
            }
        }
    }
    Ok(DistanceMatrix {
        n_train: library.len(),
        n_test,
        values,
        train_ids: library.entries.iter().map(|e| e.sample_id).collect(),
        test_ids: test_set.iter().map(|s| s.sample_id).collect(),
        train_classes: library.entries.iter().map(|e| e.class).collect(),
        test_classes,
        algo,
    })
}

/// Mean of the defined distances in each row. Rows without any are ranked
/// least important (`+inf`).
pub fn avg_train_importance(dis: &DistanceMatrix) -> Vec<f64> {
    let mut missing = 0usize;
    let out = (0..dis.n_train)
        .map(|i| {
            let (sum, n) = dis
                .row(i)
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, n), &d| (s + d, n + 1));
            if n == 0 {
                missing += 1;
                f64::INFINITY
            } else {
                sum / n as f64
            }
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} training samples have no test sample predicted in their class; ranked least important");
    }
    out
}

/// Indices removed for `fraction`: the `floor(fraction * N)` smallest
/// importances, ties to the lower index.
pub fn removal_order(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
    order
}

pub fn removal_count(n: usize, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::arg("fraction", format!("must lie in [0, 1], got {fraction}")));
    }
    // Decimal fractions such as 0.35 are not exact in binary.
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    if k >= n {
        return Err(Error::arg("fraction", "would remove every training sample"));
    }
    Ok(k)
}

/// Keeps everything except the first `removal_count` items of `order`, in
/// the original order.
fn keep_complement<T: Clone>(items: &[T], order: &[usize], fraction: f64) -> Result<Vec<T>> {
    let k = removal_count(items.len(), fraction)?;
    let mut removed = vec![false; items.len()];
    for &i in &order[..k] {
        removed[i] = true;
    }
    Ok(items
        .iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(x, _)| x.clone())
        .collect())
}

/// Removes the `floor(fraction * N)` items with the smallest importance.
pub fn remove_top_fraction<T: Clone>(items: &[T], importance: &[f64], fraction: f64) -> Result<Vec<T>> {
    if items.len() != importance.len() {
        return Err(Error::ShapeMismatch {
            what: "importance",
            expected: items.len(),
            actual: importance.len(),
        });
    }
    keep_complement(items, &removal_order(importance), fraction)
}

/// Removes `floor(fraction * N)` items drawn uniformly without replacement.
/// Draws for one seed are nested across fractions.
pub fn remove_random<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    Stream::new(seed).shuffle(&mut order);
    keep_complement(items, &order, fraction)
}

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.n_classes).map(|j| self.get(truth, j)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.n_classes).map(|i| self.get(i, i)).sum();
        diag as f64 / self.total() as f64
    }
}

pub fn confusion_matrix(model: &Model<f32>, test_set: &[EnvelopeSpectrum]) -> Result<ConfusionMatrix> {
    let c = model.arch.n_classes;
    let mut cm = ConfusionMatrix::new(c);
    let inputs: Vec<&[f32]> = test_set.iter().map(|s| s.amplitudes.as_slice()).collect();
    for (s, (pred, _)) in test_set.iter().zip(model.predict_many(&inputs)?) {
        let truth = s
            .label
            .ok_or_else(|| Error::arg("test_set", format!("sample {} is unlabelled", s.sample_id)))?
            .index();
        if truth >= c {
            return Err(Error::arg("test_set", format!("label {truth} out of range")));
        }
        cm.counts[truth * c + pred] += 1;
    }
    Ok(cm)
}

/// How training samples are chosen for removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Random,
    CamFull,
    CamSub,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Random, Method::CamFull, Method::CamSub];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::CamFull => "cam-full",
            Method::CamSub => "cam-sub",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn algo(self) -> Option<Algo> {
        match self {
            Method::Random => None,
            Method::CamFull => Some(Algo::CamFull),
            Method::CamSub => Some(Algo::CamSub),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalConfig {
    pub fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_repeats: usize,
    /// Root of the per-repeat training and random-removal seeds.
    pub seed: u64,
    pub arch: ModelArch,
    /// Template; its seed is replaced per repeat.
    pub train: TrainConfig,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            fractions: (2..=9).map(|i| i as f64 / 20.0).collect(),
            methods: Method::ALL.to_vec(),
            n_repeats: 10,
            seed: 42,
            arch: ModelArch::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RemovalConfig {
    pub fn train_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.seed, TRAIN_SEED_TAG, repeat as u64)
    }

    pub fn random_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.seed, RANDOM_SEED_TAG, repeat as u64)
    }
}

/// One re-training run. `method` is `None` for the unmodified baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalJob {
    pub method: Option<Method>,
    pub fraction: f64,
    pub repeat: usize,
    pub train_seed: u64,
}

/// Baseline repeats first, then every (method, fraction, repeat).
pub fn plan_removal(cfg: &RemovalConfig) -> Result<Vec<RemovalJob>> {
    if cfg.n_repeats == 0 {
        return Err(Error::arg("n_repeats", "must be at least 1"));
    }
    if let Some(&f) = cfg.fractions.iter().find(|&&f| !(0.0..1.0).contains(&f)) {
        return Err(Error::arg("fractions", format!("{f} is outside [0, 1)")));
    }
    let mut jobs: Vec<RemovalJob> = (0..cfg.n_repeats)
        .map(|r| RemovalJob {
            method: None,
            fraction: 0.0,
            repeat: r,
            train_seed: cfg.train_seed(r),
        })
        .collect();
    for &method in &cfg.methods {
        for &fraction in &cfg.fractions {
            for r in 0..cfg.n_repeats {
                jobs.push(RemovalJob {
                    method: Some(method),
                    fraction,
                    repeat: r,
                    train_seed: cfg.train_seed(r),
                });
            }
        }
    }
    Ok(jobs)
}

/// Importance of each training sample under CAM-Full and CAM-Sub.
#[derive(Debug, Clone, PartialEq)]
pub struct Importances {
    pub cam_full: Vec<f64>,
    pub cam_sub: Vec<f64>,
}

impl Importances {
    pub fn compute(
        model: &Model<f32>,
        library: &HealthLibrary,
        test_set: &[EnvelopeSpectrum],
        bands: &BandsByClass,
    ) -> Result<Self> {
        let full = distance_matrix(model, library, test_set, Algo::CamFull, bands)?;
        let sub = distance_matrix(model, library, test_set, Algo::CamSub, bands)?;
        Ok(Importances {
            cam_full: avg_train_importance(&full),
            cam_sub: avg_train_importance(&sub),
        })
    }

    fn for_algo(&self, algo: Algo) -> &[f64] {
        match algo {
            Algo::CamFull => &self.cam_full,
            Algo::CamSub => &self.cam_sub,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub n_train: usize,
    pub epochs: usize,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub job: RemovalJob,
    pub result: Result<JobMetrics>,
}

/// Trains a fresh model on the reduced training set and evaluates it on the
/// unchanged test set.
pub fn run_job(
    job: &RemovalJob,
    cfg: &RemovalConfig,
    train_set: &[EnvelopeSpectrum],
    test_set: &[EnvelopeSpectrum],
    importances: &Importances,
) -> JobOutcome {
    let result = (|| {
        let reduced = match job.method {
            None => train_set.to_vec(),
            Some(Method::Random) => remove_random(train_set, job.fraction, cfg.random_seed(job.repeat))?,
            Some(m) => {
                let algo = m.algo().expect("CAM method");
                remove_top_fraction(train_set, importances.for_algo(algo), job.fraction)?
            }
        };
        let tc = TrainConfig {
            seed: job.train_seed,
            ..cfg.train.clone()
        };
        let model = Model::<f32>::new(cfg.arch.clone(), job.train_seed)?;
        let (model, history) = nn::train(model, &reduced, &tc)?;
        let (accuracy, loss) = nn::evaluate(&model, test_set)?;
        Ok(JobMetrics {
            accuracy,
            loss,
            n_train: reduced.len(),
            epochs: history.len(),
            confusion: confusion_matrix(&model, test_set)?,
        })
    })();
    if let Err(e) = &result {
        log::warn!(
            "removal run {} fraction {} repeat {} failed: {e}",
            job.method.map_or("baseline", Method::name),
            job.fraction,
            job.repeat
        );
    }
    JobOutcome { job: *job, result }
}

/// Aggregate over repeats of one (method, fraction).
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalResult {
    pub method: Option<Method>,
    pub fraction: f64,
    /// `None` for failed repeats.
    pub accuracies: Vec<Option<f64>>,
    pub losses: Vec<Option<f64>>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
}

impl RemovalResult {
    pub fn failed(&self) -> usize {
        self.accuracies.iter().filter(|a| a.is_none()).count()
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups outcomes by (method, fraction), baseline first, then methods in
/// declaration order and fractions ascending. Failed repeats are excluded
/// from the statistics.
pub fn summarize(outcomes: &[JobOutcome]) -> Vec<RemovalResult> {
    let mut keys: Vec<(Option<Method>, f64)> = Vec::new();
    for o in outcomes {
        let key = (o.job.method, o.job.fraction);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.into_iter()
        .map(|(method, fraction)| {
            let mut group: Vec<&JobOutcome> = outcomes
                .iter()
                .filter(|o| o.job.method == method && o.job.fraction == fraction)
                .collect();
            group.sort_by_key(|o| o.job.repeat);
            let accuracies: Vec<Option<f64>> = group.iter().map(|o| o.result.as_ref().ok().map(|m| m.accuracy)).collect();
            let losses: Vec<Option<f64>> = group.iter().map(|o| o.result.as_ref().ok().map(|m| m.loss)).collect();
            let acc: Vec<f64> = accuracies.iter().flatten().copied().collect();
            let loss: Vec<f64> = losses.iter().flatten().copied().collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_loss, std_loss) = mean_std(&loss);
            RemovalResult {
                method,
                fraction,
                accuracies,
                losses,
                mean_accuracy,
                std_accuracy,
                mean_loss,
                std_loss,
            }
        })
        .collect()
}

/// Runs every planned job sequentially.
pub fn removal_experiment(
    cfg: &RemovalConfig,
    train_set: &[EnvelopeSpectrum],
    test_set: &[EnvelopeSpectrum],
    importances: &Importances,
) -> Result<Vec<JobOutcome>> {
    Ok(plan_removal(cfg)?
        .iter()
        .map(|job| run_job(job, cfg, train_set, test_set, importances))
        .collect())
}
