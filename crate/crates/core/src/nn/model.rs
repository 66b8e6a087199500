use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::layers::{
    self, BatchNorm, BatchNormOutput, Conv1d, Dense,
};
use super::{argmax, Mode, Scalar};
use crate::dsp::HealthClass;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

const INIT_TAG: u64 = 0x494e_4954;

/// Layer sizes of the classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArch {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub n_classes: usize,
    pub input_len: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            channels: vec![16, 32, 64],
            kernels: vec![9, 7, 5],
            n_classes: HealthClass::COUNT,
            input_len: crate::dsp::DEFAULT_BINS,
        }
    }
}

impl ModelArch {
    pub fn n_blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_blocks();
        if n == 0 || self.kernels.len() != n {
            return Err(Error::arg(
                "arch",
                format!("need matching non-empty channel and kernel lists, got {} and {}", n, self.kernels.len()),
            ));
        }
        if self.channels.contains(&0) {
            return Err(Error::arg("arch", "channel counts must be positive"));
        }
        if self.kernels.iter().any(|&k| k % 2 == 0) {
            return Err(Error::arg("arch", "kernel sizes must be odd"));
        }
        if n >= usize::BITS as usize || self.input_len == 0 || self.input_len % (1 << n) != 0 {
            return Err(Error::arg(
                "arch",
                format!("input length {} is not divisible by 2^{n}", self.input_len),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::arg("arch", "need at least two classes"));
        }
        Ok(())
    }

    /// Feature length after block `l` (0-based), `input_len / 2^(l+1)`.
    pub fn block_output_len(&self, l: usize) -> usize {
        self.input_len >> (l + 1)
    }

    /// Channels `K` and length `Z` of the last block's feature map.
    pub fn feature_shape(&self) -> (usize, usize) {
        let n = self.n_blocks();
        (self.channels[n - 1], self.block_output_len(n - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm<T>,
}

/// The classifier: conv blocks, global max pool, dense + softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub arch: ModelArch,
    pub blocks: Vec<ConvBlock<T>>,
    pub dense: Dense<T>,
}

/// Cached activations of one block for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace<T> {
    pub len: usize,
    pub channels: usize,
    pub bn: BatchNormOutput<T>,
    /// ReLU output, `[batch][channel][len]`.
    pub activated: Vec<T>,
    /// Max-pooled output, `[batch][channel][len / 2]`.
    pub pooled: Vec<T>,
    pub argmax: Vec<u32>,
}

/// Everything the backward pass and Grad-CAM need from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub batch: usize,
    pub input: Vec<T>,
    pub blocks: Vec<BlockTrace<T>>,
    /// Global max pool output, `[batch][K]`.
    pub features: Vec<T>,
    pub feature_argmax: Vec<u32>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl<T: Scalar> ForwardTrace<T> {
    fn n_classes(&self) -> usize {
        self.logits.len() / self.batch
    }

    /// Last conv block output `A` of sample `b`, `K x Z` channel-major.
    pub fn feature_map(&self, b: usize) -> &[T] {
        let last = self.blocks.last().expect("model has blocks");
        let size = last.channels * last.len / 2;
        &last.pooled[b * size..(b + 1) * size]
    }

    pub fn logits(&self, b: usize) -> &[f64] {
        let c = self.n_classes();
        &self.logits[b * c..(b + 1) * c]
    }

    pub fn probabilities(&self, b: usize) -> &[f64] {
        let c = self.n_classes();
        &self.probs[b * c..(b + 1) * c]
    }

    pub fn predicted(&self, b: usize) -> usize {
        argmax(self.probabilities(b))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, labels: &[usize]) -> f64 {
        let c = self.n_classes();
        let mut total = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let z = &self.logits[b * c..(b + 1) * c];
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[y];
        }
        total / labels.len() as f64
    }
}

/// Parameter gradients in declaration order (see [`Model::params`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Scalar> Model<T> {
    /// He-uniform initialization for conv and dense weights, zero biases,
    /// unit batch-norm scale and zero shift.
    pub fn new(arch: ModelArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Stream::new(derive_seed(seed, INIT_TAG, 0));
        let mut he = |values: &mut [T], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in values.iter_mut() {
                *v = T::of(rng.uniform_range(-bound, bound));
            }
        };
        let mut blocks = Vec::with_capacity(arch.n_blocks());
        let mut in_ch = 1;
        for (&out_ch, &k) in arch.channels.iter().zip(&arch.kernels) {
            let mut conv = Conv1d::zeros(in_ch, out_ch, k);
            he(&mut conv.weight, in_ch * k);
            blocks.push(ConvBlock {
                conv,
                bn: BatchNorm::new(out_ch),
            });
            in_ch = out_ch;
        }
        let mut dense = Dense::zeros(in_ch, arch.n_classes);
        he(&mut dense.weight, in_ch);
        Ok(Model { arch, blocks, dense })
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        Model {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: Conv1d {
                        in_channels: b.conv.in_channels,
                        out_channels: b.conv.out_channels,
                        kernel: b.conv.kernel,
                        weight: c(&b.conv.weight),
                        bias: c(&b.conv.bias),
                    },
                    bn: BatchNorm {
                        gamma: c(&b.bn.gamma),
                        beta: c(&b.bn.beta),
                        running_mean: c(&b.bn.running_mean),
                        running_var: c(&b.bn.running_var),
                        momentum: b.bn.momentum,
                        eps: b.bn.eps,
                        calibrated: b.bn.calibrated,
                    },
                })
                .collect(),
            dense: Dense {
                in_features: self.dense.in_features,
                out_features: self.dense.out_features,
                weight: c(&self.dense.weight),
                bias: c(&self.dense.bias),
            },
        }
    }

    /// Trainable tensors: per block conv weight, conv bias, bn scale, bn
    /// shift; then dense weight and dense bias.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weight);
            out.push(&b.conv.bias);
            out.push(&b.bn.gamma);
            out.push(&b.bn.beta);
        }
        out.push(&self.dense.weight);
        out.push(&self.dense.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.dense.weight);
        out.push(&mut self.dense.bias);
        out
    }

    pub fn is_calibrated(&self) -> bool {
        self.blocks.iter().all(|b| b.bn.calibrated)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass over a batch of inputs of length `arch.input_len`.
    pub fn forward_batch(&self, inputs: &[&[T]], mode: Mode) -> Result<ForwardTrace<T>> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::arg("inputs", "empty batch"));
        }
        let n = self.arch.input_len;
        let mut input = Vec::with_capacity(batch * n);
        for x in inputs {
            if x.len() != n {
                return Err(Error::ShapeMismatch {
                    what: "model input",
                    expected: n,
                    actual: x.len(),
                });
            }
            input.extend_from_slice(x);
        }

        let mut blocks: Vec<BlockTrace<T>> = Vec::with_capacity(self.blocks.len());
        let mut len = n;
        for block in &self.blocks {
            let x: &[T] = match blocks.last() {
                Some(prev) => &prev.pooled,
                None => &input,
            };
            let (cin, cout) = (block.conv.in_channels, block.conv.out_channels);
            let mut conv_out = vec![T::zero(); batch * cout * len];
            for b in 0..batch {
                block.conv.forward_into(
                    &x[b * cin * len..(b + 1) * cin * len],
                    len,
                    &mut conv_out[b * cout * len..(b + 1) * cout * len],
                );
            }
            let bn = layers::batchnorm_forward(&conv_out, batch, len, &block.bn, mode)?;
            drop(conv_out);
            let activated: Vec<T> = bn.y.iter().map(|&v| layers::relu(v)).collect();
            let half = len / 2;
            let mut pooled = Vec::with_capacity(batch * cout * half);
            let mut argmax = Vec::with_capacity(batch * cout * half);
            for b in 0..batch {
                let (p, a) = layers::maxpool1d(&activated[b * cout * len..(b + 1) * cout * len], cout, len)?;
                pooled.extend_from_slice(&p);
                argmax.extend_from_slice(&a);
            }
            blocks.push(BlockTrace {
                len,
                channels: cout,
                bn,
                activated,
                pooled,
                argmax,
            });
            len = half;
        }

        let (k, z) = self.arch.feature_shape();
        let last = &blocks[blocks.len() - 1].pooled;
        let mut features = Vec::with_capacity(batch * k);
        let mut feature_argmax = Vec::with_capacity(batch * k);
        let mut logits = Vec::with_capacity(batch * self.arch.n_classes);
        let mut probs = Vec::with_capacity(batch * self.arch.n_classes);
        for b in 0..batch {
            let (f, a) = layers::global_maxpool(&last[b * k * z..(b + 1) * k * z], k, z);
            let (lg, pr) = layers::dense_softmax(&self.dense, &f)?;
            features.extend_from_slice(&f);
            feature_argmax.extend_from_slice(&a);
            logits.extend_from_slice(&lg);
            probs.extend_from_slice(&pr);
        }
        Ok(ForwardTrace {
            mode,
            batch,
            input,
            blocks,
            features,
            feature_argmax,
            logits,
            probs,
        })
    }

    pub fn forward(&self, input: &[T], mode: Mode) -> Result<ForwardTrace<T>> {
        self.forward_batch(&[input], mode)
    }

    /// Logits computed from a last-block feature map `A` (`K x Z`) through
    /// global max pooling and the dense layer.
    pub fn head_logits(&self, feature_map: &[T]) -> Vec<f64> {
        let (k, z) = self.arch.feature_shape();
        let (f, _) = layers::global_maxpool(feature_map, k, z);
        self.dense.logits(&f)
    }

    /// `d y^c / d A` for sample `b`, where `y^c` is the pre-softmax logit of
    /// `class` and `A` the last block output; `K x Z` channel-major.
    pub fn logit_gradient(&self, trace: &ForwardTrace<T>, b: usize, class: usize) -> Vec<f64> {
        let (k, z) = self.arch.feature_shape();
        let row = &self.dense.weight[class * k..(class + 1) * k];
        let dfeat: Vec<f64> = row.iter().map(|w| w.as_f64()).collect();
        layers::global_maxpool_backward(&dfeat, &trace.feature_argmax[b * k..(b + 1) * k], z)
    }

    /// Gradients of the mean softmax cross-entropy loss over the batch.
    pub fn backward(&self, trace: &ForwardTrace<T>, labels: &[usize]) -> Result<Gradients> {
        let batch = trace.batch;
        let c = self.arch.n_classes;
        if labels.len() != batch {
            return Err(Error::ShapeMismatch {
                what: "labels",
                expected: batch,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::arg("labels", format!("class index {bad} out of range")));
        }
        let mut dlogits = trace.probs.clone();
        for (b, &y) in labels.iter().enumerate() {
            dlogits[b * c + y] -= 1.0;
        }
        let inv_b = 1.0 / batch as f64;
        dlogits.iter_mut().for_each(|v| *v *= inv_b);
        self.backward_from_logits(trace, &dlogits)
    }

    /// Backpropagates an arbitrary logit gradient `[batch][C]`.
    pub fn backward_from_logits(&self, trace: &ForwardTrace<T>, dlogits: &[f64]) -> Result<Gradients> {
        let batch = trace.batch;
        let c = self.arch.n_classes;
        let (k, z) = self.arch.feature_shape();
        let mut dense_w = vec![0.0; c * k];
        let mut dense_b = vec![0.0; c];
        let mut d_a = vec![T::zero(); batch * k * z];
        for b in 0..batch {
            let g = &dlogits[b * c..(b + 1) * c];
            let f = &trace.features[b * k..(b + 1) * k];
            let mut dfeat = vec![0.0; k];
            for cls in 0..c {
                dense_b[cls] += g[cls];
                let wrow = &self.dense.weight[cls * k..(cls + 1) * k];
                for j in 0..k {
                    dense_w[cls * k + j] += g[cls] * f[j].as_f64();
                    dfeat[j] += g[cls] * wrow[j].as_f64();
                }
            }
            let idx = &trace.feature_argmax[b * k..(b + 1) * k];
            for j in 0..k {
                d_a[b * k * z + j * z + idx[j] as usize] = T::of(dfeat[j]);
            }
        }

        let n_blocks = self.blocks.len();
        let mut block_grads: Vec<[Vec<f64>; 4]> = Vec::with_capacity(n_blocks);
        let mut d_out = d_a;
        for l in (0..n_blocks).rev() {
            let block = &self.blocks[l];
            let bt = &trace.blocks[l];
            let (cin, cout, len) = (block.conv.in_channels, bt.channels, bt.len);
            let half = len / 2;
            let mut d_act = vec![T::zero(); batch * cout * len];
            for b in 0..batch {
                let dx = layers::maxpool1d_backward(
                    &d_out[b * cout * half..(b + 1) * cout * half],
                    &bt.argmax[b * cout * half..(b + 1) * cout * half],
                    cout,
                    len,
                );
                d_act[b * cout * len..(b + 1) * cout * len].copy_from_slice(&dx);
            }
            for (d, &a) in d_act.iter_mut().zip(&bt.activated) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
            let (d_conv, dgamma, dbeta) =
                layers::batchnorm_backward(&d_act, &bt.bn, &block.bn.gamma, batch, len, trace.mode);
            let x: &[T] = if l == 0 { &trace.input } else { &trace.blocks[l - 1].pooled };
            let mut dw = vec![0.0; block.conv.weight.len()];
            let mut db = vec![0.0; cout];
            let mut d_in = if l > 0 { vec![T::zero(); batch * cin * len] } else { Vec::new() };
            for b in 0..batch {
                let dx = if l > 0 {
                    Some(&mut d_in[b * cin * len..(b + 1) * cin * len])
                } else {
                    None
                };
                block.conv.backward(
                    &x[b * cin * len..(b + 1) * cin * len],
                    &d_conv[b * cout * len..(b + 1) * cout * len],
                    len,
                    dx,
                    &mut dw,
                    &mut db,
                );
            }
            block_grads.push([dw, db, dgamma, dbeta]);
            d_out = d_in;
        }
        let mut tensors = Vec::with_capacity(4 * n_blocks + 2);
        for g in block_grads.into_iter().rev() {
            tensors.extend(g);
        }
        tensors.push(dense_w);
        tensors.push(dense_b);
        Ok(Gradients { tensors })
    }

    /// Writes batch statistics of a train-mode trace into the running stats.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>) {
        if trace.mode != Mode::Train {
            return;
        }
        for (block, bt) in self.blocks.iter_mut().zip(&trace.blocks) {
            block.bn.update_running(&bt.bn.mean, &bt.bn.var, trace.batch * bt.len);
        }
    }

    /// Predicted class index (ties to the lowest index) and probabilities.
    pub fn predict(&self, input: &[T]) -> Result<(usize, Vec<f64>)> {
        let trace = self.forward(input, Mode::Eval)?;
        Ok((trace.predicted(0), trace.probabilities(0).to_vec()))
    }

    /// Eval-mode predictions for many inputs, processed in chunks.
    pub fn predict_many(&self, inputs: &[&[T]]) -> Result<Vec<(usize, Vec<f64>)>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let trace = self.forward_batch(chunk, Mode::Eval)?;
            for b in 0..chunk.len() {
                out.push((trace.predicted(b), trace.probabilities(b).to_vec()));
            }
        }
        Ok(out)
    }
}

impl Model<f32> {
    /// Predicted health class of a spectrum.
    pub fn predict_class(&self, spectrum: &crate::dsp::EnvelopeSpectrum) -> Result<(HealthClass, Vec<f64>)> {
        let (c, p) = self.predict(&spectrum.amplitudes)?;
        let class = HealthClass::from_index(c).ok_or_else(|| Error::arg("model", "more classes than health states"))?;
        Ok((class, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelArch {
        ModelArch {
            channels: vec![2, 2, 2],
            kernels: vec![3, 3, 3],
            n_classes: 3,
            input_len: 16,
        }
    }

    #[test]
    fn arch_validation() {
        assert!(ModelArch::default().validate().is_ok());
        assert_eq!(ModelArch::default().feature_shape(), (64, 192));
        let bad = [
            ModelArch { kernels: vec![3, 4, 3], ..tiny() },
            ModelArch { input_len: 12, ..tiny() },
            ModelArch { channels: vec![2, 2], ..tiny() },
        ];
        for a in bad {
            assert!(a.validate().is_err());
        }
    }

    #[test]
    fn shapes_and_probabilities() {
        let model = Model::<f32>::new(tiny(), 1).unwrap();
        let x: Vec<f32> = (0..16).map(|i| (i as f32 * 0.7).sin()).collect();
        let y: Vec<f32> = (0..16).map(|i| (i as f32 * 0.3).cos()).collect();
        let trace = model.forward_batch(&[&x, &y], Mode::Train).unwrap();
        for (l, bt) in trace.blocks.iter().enumerate() {
            assert_eq!(bt.pooled.len(), 2 * 2 * (16 >> (l + 1)));
        }
        assert_eq!(trace.feature_map(1).len(), 4);
        for b in 0..2 {
            let s: f64 = trace.probabilities(b).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(model.forward(&x[..8], Mode::Train).is_err());
        assert_eq!(model.forward(&x, Mode::Eval).unwrap_err(), Error::Uncalibrated);
    }

    #[test]
    fn confident_correct_prediction_has_zero_logit_gradient() {
        let mut model = Model::<f64>::new(tiny(), 2).unwrap();
        model.dense.weight.iter_mut().for_each(|w| *w = 0.0);
        model.dense.bias = vec![0.0, 800.0, 0.0];
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..16).map(|i| -(i as f64)).collect();
        let trace = model.forward_batch(&[&x, &y], Mode::Train).unwrap();
        let grads = model.backward(&trace, &[1, 1]).unwrap();
        assert!(grads.tensors.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn logit_gradient_only_at_global_argmax() {
        let arch = ModelArch {
            channels: vec![2],
            kernels: vec![3],
            n_classes: 3,
            input_len: 8,
        };
        let mut model = Model::<f64>::new(arch, 3).unwrap();
        model.blocks[0].bn.calibrated = true;
        let x: Vec<f64> = vec![0.1, 0.5, -0.3, 0.9, 0.2, -0.1, 0.4, 0.0];
        let trace = model.forward(&x, Mode::Eval).unwrap();
        for c in 0..3 {
            let g = model.logit_gradient(&trace, 0, c);
            for ch in 0..2 {
                let nz: Vec<usize> = (0..4).filter(|&i| g[ch * 4 + i] != 0.0).collect();
                assert!(nz.len() <= 1);
                if let Some(&i) = nz.first() {
                    assert_eq!(i as u32, trace.feature_argmax[ch]);
                }
            }
        }
    }
}
