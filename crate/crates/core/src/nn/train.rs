use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::model::{Gradients, Model};
use super::{Mode, Scalar};
use crate::dsp::{EnvelopeSpectrum, HealthClass};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

const SHUFFLE_TAG: u64 = 0x5348_5546;
const VALID_TAG: u64 = 0x5641_4c49;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Heavy-ball momentum: `v = mu v + g; p -= lr v`.
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn momentum() -> Self {
        Optimizer::Momentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Smallest decrease of the monitored loss that counts as improvement.
    pub min_delta: f64,
    /// Fraction of each class held out for early stopping.
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
    /// Seeds weight initialization, the validation split and shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 8,
            min_delta: 0.0,
            validation_fraction: 0.1,
            optimizer: Optimizer::momentum(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size", "must be at least 1"));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::arg("min_delta", "must be a non-negative number"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::arg("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch record. Validation values are `None` without a validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new<T: Scalar>(kind: Optimizer, lr: f64, model: &Model<T>) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let second = match kind {
            Optimizer::Adam { .. } => zeros.clone(),
            Optimizer::Momentum { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            lr,
            step: 0,
            first: zeros,
            second,
        }
    }

    fn apply<T: Scalar>(&mut self, model: &mut Model<T>, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        for (i, param) in model.params_mut().into_iter().enumerate() {
            let g = &grads.tensors[i];
            match self.kind {
                Optimizer::Momentum { momentum } => {
                    let v = &mut self.first[i];
                    for ((p, v), &g) in param.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = momentum * *v + g;
                        *p = T::of(p.as_f64() - lr * *v);
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    let (m, s) = (&mut self.first[i], &mut self.second[i]);
                    for (((p, m), s), &g) in param.iter_mut().zip(m.iter_mut()).zip(s.iter_mut()).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        let update = lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                        *p = T::of(p.as_f64() - update);
                    }
                }
            }
        }
    }
}

fn labelled<T: Scalar>(data: &[EnvelopeSpectrum]) -> Result<(Vec<Vec<T>>, Vec<usize>)> {
    let mut inputs = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for s in data {
        let label = s
            .label
            .ok_or_else(|| Error::arg("dataset", alloc::format!("sample {} has no label", s.sample_id)))?;
        inputs.push(s.amplitudes.iter().map(|&a| T::of(a as f64)).collect());
        labels.push(label.index());
    }
    Ok((inputs, labels))
}

/// Accuracy and mean cross-entropy in eval mode.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &[EnvelopeSpectrum]) -> Result<(f64, f64)> {
    let (inputs, labels) = labelled::<T>(data)?;
    let refs: Vec<&[T]> = inputs.iter().map(|v| v.as_slice()).collect();
    evaluate_inputs(model, &refs, &labels)
}

fn evaluate_inputs<T: Scalar>(model: &Model<T>, inputs: &[&[T]], labels: &[usize]) -> Result<(f64, f64)> {
    if inputs.is_empty() {
        return Err(Error::arg("dataset", "cannot evaluate on an empty set"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (chunk, ys) in inputs.chunks(64).zip(labels.chunks(64)) {
        let trace = model.forward_batch(chunk, Mode::Eval)?;
        loss += trace.loss(ys) * chunk.len() as f64;
        correct += (0..chunk.len()).filter(|&b| trace.predicted(b) == ys[b]).count();
    }
    let n = inputs.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Splits indices into `(train, validation)`, stratified per class.
fn validation_split(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut rng = Stream::new(derive_seed(seed, VALID_TAG, 0));
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        let n_val = ((fraction * members.len() as f64).round() as usize).min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains `model` with mini-batch gradient descent on softmax cross-entropy.
///
/// The best model by validation loss (or training loss without a validation
/// split) is returned along with the per-epoch history. Deterministic for a
/// given `(model, data, cfg)`.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    data: &[EnvelopeSpectrum],
    cfg: &TrainConfig,
) -> Result<(Model<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    let (inputs, labels) = labelled::<T>(data)?;
    let n_classes = model.arch.n_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::arg("dataset", alloc::format!("label {bad} out of range")));
    }
    for c in 0..n_classes {
        if !labels.contains(&c) {
            let name = HealthClass::from_index(c).map(|h| h.name()).unwrap_or("?");
            log::warn!("training set has no samples of class {name}");
        }
    }
    let (train_idx, val_idx) = validation_split(&labels, n_classes, cfg.validation_fraction, cfg.seed);
    if train_idx.len() < 2 {
        return Err(Error::arg("dataset", "need at least 2 training samples for batch norm"));
    }
    let val_inputs: Vec<&[T]> = val_idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut history = Vec::new();
    let mut best: Option<(f64, Model<T>)> = None;
    let mut stale = 0usize;
    let mut order = train_idx.clone();

    for epoch in 0..cfg.max_epochs {
        order.copy_from_slice(&train_idx);
        Stream::substream(cfg.seed, SHUFFLE_TAG, epoch as u64).shuffle(&mut order);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // A trailing singleton cannot be batch-normalized; fold it into the previous batch.
        if batches.len() > 1 && batches[batches.len() - 1].len() == 1 {
            batches.pop();
            let start = (batches.len() - 1) * cfg.batch_size;
            let last = batches.len() - 1;
            batches[last] = &order[start..];
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches {
            let xs: Vec<&[T]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let trace = model.forward_batch(&xs, Mode::Train)?;
            let loss = trace.loss(&ys);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            correct += (0..batch.len()).filter(|&b| trace.predicted(b) == ys[b]).count();
            let grads = model.backward(&trace, &ys)?;
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            opt.apply(&mut model, &grads);
            model.update_running_stats(&trace);
        }
        let n = train_idx.len() as f64;
        let (train_loss, train_accuracy) = (loss_sum / n, correct as f64 / n);

        let (val_loss, val_accuracy) = if val_inputs.is_empty() {
            (None, None)
        } else {
            let (acc, loss) = evaluate_inputs(&model, &val_inputs, &val_labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            (Some(loss), Some(acc))
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });

        let monitored = val_loss.unwrap_or(train_loss);
        match &best {
            Some((b, _)) if monitored >= *b - cfg.min_delta => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((monitored, model.clone()));
                stale = 0;
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::OrderGrid;
    use crate::nn::ModelArch;

    /// One indicator bin per class plus small noise.
    fn separable(n_per_class: usize, seed: u64) -> Vec<EnvelopeSpectrum> {
        let grid = OrderGrid::new(32).unwrap();
        let mut rng = Stream::new(seed);
        let mut out = Vec::new();
        for class in HealthClass::ALL {
            for i in 0..n_per_class {
                let mut a: Vec<f32> = (0..32).map(|_| (0.05 * rng.uniform()) as f32).collect();
                a[4 + 10 * class.index()] = 1.0;
                out.push(EnvelopeSpectrum {
                    amplitudes: a,
                    grid,
                    label: Some(class),
                    sample_id: (class.index() * 100 + i) as u32,
                    shaft_freq: 25.0,
                });
            }
        }
        out
    }

    fn toy_arch() -> ModelArch {
        ModelArch {
            channels: vec![4, 4, 4],
            kernels: vec![3, 3, 3],
            n_classes: 3,
            input_len: 32,
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = separable(20, 1);
        let cfg = TrainConfig {
            max_epochs: 10,
            batch_size: 8,
            learning_rate: 0.01,
            validation_fraction: 0.0,
            optimizer: Optimizer::adam(),
            ..TrainConfig::default()
        };
        let model = Model::<f32>::new(toy_arch(), 3).unwrap();
        let (model, history) = train(model, &data, &cfg).unwrap();
        assert!(history.len() <= 10);
        let (acc, _) = evaluate(&model, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn same_seed_same_weights() {
        let data = separable(10, 2);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let run = || train(Model::<f32>::new(toy_arch(), 5).unwrap(), &data, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        for (x, y) in a.params().iter().zip(b.params()) {
            let xb: Vec<u32> = x.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable(10, 3);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let err = train(Model::<f32>::new(toy_arch(), 1).unwrap(), &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn validation_split_is_stratified() {
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let (train, val) = validation_split(&labels, 3, 0.1, 7);
        assert_eq!(val.len(), 9);
        assert_eq!(train.len(), 81);
        for c in 0..3 {
            assert_eq!(val.iter().filter(|&&i| labels[i] == c).count(), 3);
        }
    }
}
