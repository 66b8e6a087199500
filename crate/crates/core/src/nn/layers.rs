//! Layer kernels. Batched tensors are flat `[batch][channel][position]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::{Mode, Scalar};
use crate::error::{Error, Result};

/// Single-sample feature map, `data[c * len + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::ShapeMismatch {
                what: "feature map",
                expected: channels * len,
                actual: data.len(),
            });
        }
        Ok(FeatureMap { channels, len, data })
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Dot product accumulated in `f64` over eight fixed lanes.
#[inline]
pub(crate) fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l].as_f64() * y[l].as_f64();
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.as_f64() * y.as_f64();
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Dot product accumulated in `T` over four blocks of 8 lanes; for rows no
/// longer than a feature map, where `f32` partial sums are accurate enough.
#[inline(always)]
fn dot_lanes<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let n = a.len().min(b.len());
    let whole = n - n % 32;
    let mut acc = [[T::zero(); 8]; 4];
    for i in (0..whole).step_by(32) {
        for (k, lanes) in acc.iter_mut().enumerate() {
            let x: &[T; 8] = a[i + 8 * k..i + 8 * k + 8].try_into().expect("whole chunk");
            let y: &[T; 8] = b[i + 8 * k..i + 8 * k + 8].try_into().expect("whole chunk");
            for l in 0..8 {
                lanes[l] += x[l] * y[l];
            }
        }
    }
    let mut tail = T::zero();
    for i in whole..n {
        tail += a[i] * b[i];
    }
    reduce_lanes(&acc) + tail.as_f64()
}

/// Kept out of line so the accumulation loop above vectorizes across lanes.
#[inline(never)]
fn reduce_lanes<T: Scalar>(acc: &[[T; 8]; 4]) -> f64 {
    let mut lanes = [T::zero(); 8];
    for l in 0..8 {
        lanes[l] = (acc[0][l] + acc[2][l]) + (acc[1][l] + acc[3][l]);
    }
    let sum = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    sum.as_f64()
}

#[inline]
pub(crate) fn sum_f64<T: Scalar>(a: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for l in 0..8 {
            acc[l] += x[l].as_f64();
        }
    }
    let tail: f64 = ra.iter().map(|v| v.as_f64()).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Overlap of output positions `[lo, hi)` with valid input for tap `j`.
#[inline]
fn tap_range(len: usize, pad: usize, j: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi.max(lo))
}

/// 1D convolution (cross-correlation) with zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `weight[(o * in_channels + a) * kernel + j]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// `out[o][i] = bias[o] + sum_a sum_j w[o][a][j] * x[a][i + j - k/2]`.
    pub fn forward_into(&self, x: &[T], len: usize, out: &mut [T]) {
        let xpad = pad_channels(x, self.in_channels, len, self.kernel / 2, self.kernel);
        correlate(&xpad, &self.weight, Some(&self.bias), self.in_channels, self.out_channels, self.kernel, len, out);
    }

    /// Accumulates weight and bias gradients and, when `dx` is given, writes
    /// the input gradient.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        len: usize,
        dx: Option<&mut [T]>,
        dweight: &mut [f64],
        dbias: &mut [f64],
    ) {
        weight_grads(x, dy, self.in_channels, self.out_channels, self.kernel, len, dweight, dbias);
        if let Some(dx) = dx {
            // dx is the correlation of dy with the channel-transposed, flipped kernel.
            let k = self.kernel;
            let mut wt = vec![T::zero(); self.weight.len()];
            for o in 0..self.out_channels {
                for a in 0..self.in_channels {
                    for j in 0..k {
                        wt[(a * self.out_channels + o) * k + (k - 1 - j)] = self.weight[(o * self.in_channels + a) * k + j];
                    }
                }
            }
            let dypad = pad_channels(dy, self.out_channels, len, k - 1 - k / 2, k);
            correlate(&dypad, &wt, None, self.out_channels, self.in_channels, k, len, dx);
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn weight_grads_body<T: Scalar>(
    x: &[T],
    dy: &[T],
    cin: usize,
    cout: usize,
    kernel: usize,
    len: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) {
    let pad = kernel / 2;
    for o in 0..cout {
        let dy_o = &dy[o * len..(o + 1) * len];
        dbias[o] += sum_f64(dy_o);
        for a in 0..cin {
            let x_a = &x[a * len..(a + 1) * len];
            let base = (o * cin + a) * kernel;
            for j in 0..kernel {
                let (lo, hi) = tap_range(len, pad, j);
                dweight[base + j] += dot_lanes(&dy_o[lo..hi], &x_a[lo + j - pad..hi + j - pad]);
            }
        }
    }
}

#[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
cpufeatures::new!(avx2, "avx2");

/// Defines `$name`, which runs `$body` in a copy compiled with AVX2 when the
/// CPU has it. Only the vector width changes; every lane sees the same
/// operations in the same order, so results are bitwise identical either way.
macro_rules! dispatch {
    ($name:ident, $body:ident, ($($arg:ident: $ty:ty),*)) => {
        #[allow(clippy::too_many_arguments)]
        fn $name<T: Scalar>($($arg: $ty),*) {
            #[inline(never)]
            #[allow(clippy::too_many_arguments)]
            fn plain<T: Scalar>($($arg: $ty),*) {
                $body($($arg),*)
            }
            #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
            {
                #[inline(never)]
                #[target_feature(enable = "avx2")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn wide<T: Scalar>($($arg: $ty),*) {
                    $body($($arg),*)
                }
                if avx2::get() {
                    // SAFETY: AVX2 support was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
            }
            plain($($arg),*)
        }
    };
}

dispatch!(weight_grads, weight_grads_body, (
    x: &[T], dy: &[T], cin: usize, cout: usize, kernel: usize, len: usize, dweight: &mut [f64], dbias: &mut [f64]
));

dispatch!(correlate, correlate_body, (
    xpad: &[T], w: &[T], bias: Option<&[T]>, cin: usize, cout: usize, kernel: usize, len: usize, out: &mut [T]
));

const TILE: usize = 32;

/// Copies each channel into a row of `len + kernel - 1 + TILE` values with
/// `left` leading zeros.
fn pad_channels<T: Scalar>(x: &[T], channels: usize, len: usize, left: usize, kernel: usize) -> Vec<T> {
    let row = len + kernel - 1 + TILE;
    let mut out = vec![T::zero(); channels * row];
    for c in 0..channels {
        out[c * row + left..c * row + left + len].copy_from_slice(&x[c * len..(c + 1) * len]);
    }
    out
}

/// `out[o][i] = bias[o] + sum_a sum_j w[o][a][j] * xpad[a][i + j]`, computed
/// in register tiles of `TILE` positions.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn correlate_body<T: Scalar>(
    xpad: &[T],
    w: &[T],
    bias: Option<&[T]>,
    cin: usize,
    cout: usize,
    kernel: usize,
    len: usize,
    out: &mut [T],
) {
    let row = len + kernel - 1 + TILE;
    for o in 0..cout {
        let b = bias.map_or(T::zero(), |b| b[o]);
        let w_o = &w[o * cin * kernel..(o + 1) * cin * kernel];
        let out_o = &mut out[o * len..(o + 1) * len];
        let mut i0 = 0;
        while i0 < len {
            let mut acc = [b; TILE];
            for a in 0..cin {
                let x_a = &xpad[a * row + i0..(a + 1) * row];
                for (j, &wv) in w_o[a * kernel..(a + 1) * kernel].iter().enumerate() {
                    let src: &[T; TILE] = x_a[j..j + TILE].try_into().expect("padded row");
                    for l in 0..TILE {
                        acc[l] += wv * src[l];
                    }
                }
            }
            let n = TILE.min(len - i0);
            out_o[i0..i0 + n].copy_from_slice(&acc[..n]);
            i0 += TILE;
        }
    }
}

pub fn conv1d_forward<T: Scalar>(x: &FeatureMap<T>, conv: &Conv1d<T>) -> Result<FeatureMap<T>> {
    if x.channels != conv.in_channels {
        return Err(Error::ShapeMismatch {
            what: "conv input channels",
            expected: conv.in_channels,
            actual: x.channels,
        });
    }
    if conv.weight.len() != conv.out_channels * conv.in_channels * conv.kernel
        || conv.bias.len() != conv.out_channels
    {
        return Err(Error::ShapeMismatch {
            what: "conv weights",
            expected: conv.out_channels * conv.in_channels * conv.kernel,
            actual: conv.weight.len(),
        });
    }
    let mut out = vec![T::zero(); conv.out_channels * x.len];
    conv.forward_into(&x.data, x.len, &mut out);
    FeatureMap::new(conv.out_channels, x.len, out)
}

#[inline]
pub fn relu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    /// Set once running statistics have been written by training or loading.
    pub calibrated: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            calibrated: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving update from biased batch statistics over `count`
    /// values per channel; the variance is stored unbiased.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let m = self.momentum;
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.channels() {
            let rm = self.running_mean[c].as_f64();
            let rv = self.running_var[c].as_f64();
            self.running_mean[c] = T::of((1.0 - m) * rm + m * mean[c]);
            self.running_var[c] = T::of((1.0 - m) * rv + m * var[c] * unbias);
        }
        self.calibrated = true;
    }
}

/// Batch norm output with what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormOutput<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
    /// Batch mean and biased variance (train mode only; empty in eval).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batchnorm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    len: usize,
    bn: &BatchNorm<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let channels = bn.channels();
    if x.len() != batch * channels * len {
        return Err(Error::ShapeMismatch {
            what: "batch norm input",
            expected: batch * channels * len,
            actual: x.len(),
        });
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if batch < 2 {
                return Err(Error::arg("batch", "train-mode batch norm needs at least 2 samples"));
            }
            let count = (batch * len) as f64;
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let mut s = 0.0;
                for b in 0..batch {
                    s += sum_f64(&x[(b * channels + c) * len..(b * channels + c + 1) * len]);
                }
                let mu = s / count;
                let mut ss = 0.0;
                for b in 0..batch {
                    for &v in &x[(b * channels + c) * len..(b * channels + c + 1) * len] {
                        let d = v.as_f64() - mu;
                        ss += d * d;
                    }
                }
                mean[c] = mu;
                var[c] = ss / count;
            }
            (mean, var)
        }
        Mode::Eval => {
            if !bn.calibrated {
                return Err(Error::Uncalibrated);
            }
            (
                bn.running_mean.iter().map(|v| v.as_f64()).collect(),
                bn.running_var.iter().map(|v| v.as_f64()).collect(),
            )
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let range = (b * channels + c) * len..(b * channels + c + 1) * len;
            let mu = T::of(mean[c]);
            let is = T::of(inv_std[c]);
            let (g, be) = (bn.gamma[c], bn.beta[c]);
            for ((xh, yy), &v) in xhat[range.clone()].iter_mut().zip(&mut y[range.clone()]).zip(&x[range]) {
                let h = (v - mu) * is;
                *xh = h;
                *yy = g * h + be;
            }
        }
    }
    let (mean, var) = match mode {
        Mode::Train => (mean, var),
        Mode::Eval => (Vec::new(), Vec::new()),
    };
    Ok(BatchNormOutput {
        y,
        xhat,
        inv_std,
        mean,
        var,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    out: &BatchNormOutput<T>,
    gamma: &[T],
    batch: usize,
    len: usize,
    mode: Mode,
) -> (Vec<T>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for c in 0..channels {
        for b in 0..batch {
            let r = (b * channels + c) * len..(b * channels + c + 1) * len;
            dbeta[c] += sum_f64(&dy[r.clone()]);
            dgamma[c] += dot_f64(&dy[r.clone()], &out.xhat[r]);
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    let count = (batch * len) as f64;
    for c in 0..channels {
        let g = gamma[c].as_f64();
        let is = out.inv_std[c];
        // dxhat = dy * gamma, so sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma.
        let (scale, shift, slope) = match mode {
            Mode::Train => (g * is, g * is * dbeta[c] / count, g * is * dgamma[c] / count),
            Mode::Eval => (g * is, 0.0, 0.0),
        };
        let (scale, shift, slope) = (T::of(scale), T::of(shift), T::of(slope));
        for b in 0..batch {
            let r = (b * channels + c) * len..(b * channels + c + 1) * len;
            for ((d, &g_out), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&out.xhat[r]) {
                *d = scale * g_out - shift - slope * xh;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Size-2, stride-2 max pooling per channel. Argmax indices are input
/// positions within the channel; ties go to the first element.
pub fn maxpool1d<T: Scalar>(x: &[T], channels: usize, len: usize) -> Result<(Vec<T>, Vec<u32>)> {
    if len % 2 != 0 || x.len() != channels * len {
        return Err(Error::arg(
            "maxpool input",
            format!("need even length and {} values, got len {len} with {}", channels * len, x.len()),
        ));
    }
    let half = len / 2;
    let mut out = Vec::with_capacity(channels * half);
    let mut idx = Vec::with_capacity(channels * half);
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        for (p, pair) in xc.chunks_exact(2).enumerate() {
            if pair[1] > pair[0] {
                out.push(pair[1]);
                idx.push((2 * p + 1) as u32);
            } else {
                out.push(pair[0]);
                idx.push((2 * p) as u32);
            }
        }
    }
    Ok((out, idx))
}

/// Routes pooled gradients back to the argmax positions.
pub fn maxpool1d_backward<T: Scalar>(dy: &[T], argmax: &[u32], channels: usize, len: usize) -> Vec<T> {
    let half = len / 2;
    let mut dx = vec![T::zero(); channels * len];
    for c in 0..channels {
        for p in 0..half {
            dx[c * len + argmax[c * half + p] as usize] += dy[c * half + p];
        }
    }
    dx
}

/// Per-channel maximum and its (first) position.
pub fn global_maxpool<T: Scalar>(x: &[T], channels: usize, len: usize) -> (Vec<T>, Vec<u32>) {
    let mut out = Vec::with_capacity(channels);
    let mut idx = Vec::with_capacity(channels);
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        let mut best = 0;
        for (i, &v) in xc.iter().enumerate().skip(1) {
            if v > xc[best] {
                best = i;
            }
        }
        out.push(xc[best]);
        idx.push(best as u32);
    }
    (out, idx)
}

pub fn global_maxpool_backward(dy: &[f64], argmax: &[u32], len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len() * len];
    for (c, (&g, &i)) in dy.iter().zip(argmax).enumerate() {
        dx[c * len + i as usize] = g;
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fully connected layer, `weight[class * in_features + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn logits(&self, features: &[T]) -> Vec<f64> {
        (0..self.out_features)
            .map(|c| {
                let row = &self.weight[c * self.in_features..(c + 1) * self.in_features];
                self.bias[c].as_f64() + dot_f64(row, features)
            })
            .collect()
    }
}

/// Logits and class probabilities.
pub fn dense_softmax<T: Scalar>(dense: &Dense<T>, features: &[T]) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.len() != dense.in_features {
        return Err(Error::ShapeMismatch {
            what: "dense input",
            expected: dense.in_features,
            actual: features.len(),
        });
    }
    let logits = dense.logits(features);
    let probs = softmax(&logits);
    Ok((logits, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], cin: usize, len: usize, w: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let p = k as isize / 2;
        let mut out = vec![0.0; cout * len];
        for o in 0..cout {
            for i in 0..len {
                let mut s = b[o];
                for a in 0..cin {
                    for j in 0..k {
                        let src = i as isize + j as isize - p;
                        if src >= 0 && (src as usize) < len {
                            s += w[(o * cin + a) * k + j] * x[a * len + src as usize];
                        }
                    }
                }
                out[o * len + i] = s;
            }
        }
        out
    }

    #[test]
    fn conv_identity_and_ones() {
        let mut conv = Conv1d::<f64>::zeros(1, 1, 3);
        conv.weight[1] = 1.0;
        let x = FeatureMap::new(1, 5, vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        assert_eq!(conv1d_forward(&x, &conv).unwrap().data, x.data);

        conv.weight = vec![1.0; 3];
        let x = FeatureMap::new(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(conv1d_forward(&x, &conv).unwrap().data, vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut s = crate::rng::Stream::new(5);
        let (cin, cout, k, len) = (3, 4, 5, 11);
        let mut conv = Conv1d::<f64>::zeros(cin, cout, k);
        conv.weight.iter_mut().for_each(|w| *w = s.gaussian());
        conv.bias.iter_mut().for_each(|w| *w = s.gaussian());
        let x: Vec<f64> = (0..cin * len).map(|_| s.gaussian()).collect();
        let got = conv1d_forward(&FeatureMap::new(cin, len, x.clone()).unwrap(), &conv).unwrap();
        let want = naive_conv(&x, cin, len, &conv.weight, &conv.bias, cout, k);
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
        let wrong = FeatureMap::new(2, len, vec![0.0; 2 * len]).unwrap();
        assert!(conv1d_forward(&wrong, &conv).is_err());
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(-1.0f32), 0.0);
        assert_eq!(relu(0.0f32), 0.0);
        assert_eq!(relu(2.5f32), 2.5);
    }

    #[test]
    fn batchnorm_eval_identity_and_uncalibrated() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = vec![1.0, -2.0, 3.0, 4.0];
        assert_eq!(batchnorm_forward(&x, 1, 2, &bn, Mode::Eval), Err(Error::Uncalibrated));
        bn.calibrated = true;
        bn.eps = 0.0;
        let out = batchnorm_forward(&x, 1, 2, &bn, Mode::Eval).unwrap();
        assert_eq!(out.y, x);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let bn = BatchNorm::<f64>::new(2);
        let mut s = crate::rng::Stream::new(9);
        let (batch, len) = (4, 7);
        let x: Vec<f64> = (0..batch * 2 * len).map(|_| 3.0 + 2.0 * s.gaussian()).collect();
        let out = batchnorm_forward(&x, batch, len, &bn, Mode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..batch)
                .flat_map(|b| out.xhat[(b * 2 + c) * len..(b * 2 + c + 1) * len].to_vec())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "{var}"); // eps = 1e-5 shrinks it slightly
        }
        assert!(batchnorm_forward(&x[..2 * len], 1, len, &bn, Mode::Train).is_err());
    }

    #[test]
    fn batchnorm_running_update() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.update_running(&[2.0], &[3.0], 4);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
        assert!(bn.calibrated);
    }

    #[test]
    fn maxpool_examples() {
        let (out, idx) = maxpool1d(&[1.0f32, 3.0, 2.0, 0.0], 1, 4).unwrap();
        assert_eq!(out, vec![3.0, 2.0]);
        assert_eq!(idx, vec![1, 2]);
        let (out, idx) = maxpool1d(&[5.0f32; 4], 1, 4).unwrap();
        assert_eq!(out, vec![5.0, 5.0]);
        assert_eq!(idx, vec![0, 2]);
        assert!(maxpool1d(&[1.0f32; 3], 1, 3).is_err());
    }

    #[test]
    fn maxpool_matches_naive() {
        let mut s = crate::rng::Stream::new(3);
        let (ch, len) = (3, 10);
        let x: Vec<f64> = (0..ch * len).map(|_| s.gaussian()).collect();
        let (out, idx) = maxpool1d(&x, ch, len).unwrap();
        for c in 0..ch {
            for p in 0..len / 2 {
                let (a, b) = (x[c * len + 2 * p], x[c * len + 2 * p + 1]);
                assert_eq!(out[c * len / 2 + p], a.max(b));
                let want = if b > a { 2 * p + 1 } else { 2 * p };
                assert_eq!(idx[c * len / 2 + p] as usize, want);
            }
        }
        let dx = maxpool1d_backward(&vec![1.0; out.len()], &idx, ch, len);
        assert_eq!(dx.iter().sum::<f64>(), out.len() as f64);
    }

    #[test]
    fn global_maxpool_examples() {
        let (out, idx) = global_maxpool(&[-1.0f32, 5.0, 2.0], 1, 3);
        assert_eq!((out, idx), (vec![5.0], vec![1]));
        let (out, _) = global_maxpool(&[-1.0f32, 5.0, 2.0, 7.0, 0.0, 1.0], 2, 3);
        assert_eq!(out, vec![5.0, 7.0]);
    }

    #[test]
    fn global_maxpool_gradient_routes_to_argmax() {
        let x = vec![0.3, -1.0, 0.9, 0.1, 2.0, 1.5];
        let (_, idx) = global_maxpool(&x, 2, 3);
        let dx = global_maxpool_backward(&[1.0, 1.0], &idx, 3);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let f = |v: &[f64]| global_maxpool(v, 2, 3).0.iter().sum::<f64>();
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn softmax_examples() {
        let dense = Dense::<f32>::zeros(4, 3);
        let (_, p) = dense_softmax(&dense, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1000.0, 0.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(dense_softmax(&dense, &[1.0]).is_err());
    }
}
