//! Grad-CAM at the last convolutional block and the activation vectors
//! built from it.
//!
//! The map is `L = sum_k alpha_k A^k` with `alpha_k` the mean over positions
//! of `d y^c / d A^k`. No ReLU is applied, so the sign of the importance is
//! kept for similarity comparisons; [`clamp_positive`] gives the classic
//! rendering.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dsp::{self, EnvelopeSpectrum, FaultOrders, HealthClass, OrderGrid, SubBands};
use crate::error::{Error, Result};
use crate::nn::{Mode, Model, Scalar};

/// Class importance map at feature-map resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCamMap {
    pub values: Vec<f64>,
    pub class: HealthClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    /// Every bin of the order grid.
    Full,
    /// Only the bins inside the class's fault sub-bands.
    Sub,
}

/// Importance of input features for one sample and class.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector {
    pub values: Vec<f32>,
    pub kind: ActivationKind,
    pub class: HealthClass,
}

/// Fault sub-bands and the grid bins inside them, per class. The healthy
/// class has none.
#[derive(Debug, Clone, PartialEq)]
pub struct BandsByClass {
    pub epsilon: f64,
    pub grid: OrderGrid,
    bands: [Option<SubBands>; 3],
    indices: [Option<Vec<usize>>; 3],
}

impl BandsByClass {
    pub fn new(orders: &FaultOrders, epsilon: f64, grid: &OrderGrid) -> Result<Self> {
        let mut bands = [None; 3];
        let mut indices = [None, None, None];
        for class in HealthClass::ALL {
            if let Some(center) = orders.for_class(class) {
                let sb = dsp::make_sub_bands(center, epsilon)?;
                indices[class.index()] = Some(dsp::band_indices(&sb, grid)?);
                bands[class.index()] = Some(sb);
            }
        }
        Ok(BandsByClass {
            epsilon,
            grid: *grid,
            bands,
            indices,
        })
    }

    /// Uses the same bin set for every class, healthy included.
    pub fn uniform(mut indices: Vec<usize>, grid: &OrderGrid) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= grid.n_bins) {
            return Err(Error::arg("indices", format!("bin {bad} outside grid of {} bins", grid.n_bins)));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(BandsByClass {
            epsilon: 0.0,
            grid: *grid,
            bands: [None; 3],
            indices: [Some(indices.clone()), Some(indices.clone()), Some(indices)],
        })
    }

    pub fn sub_bands(&self, class: HealthClass) -> Option<&SubBands> {
        self.bands[class.index()].as_ref()
    }

    /// Ascending bin indices inside the class's bands.
    pub fn indices(&self, class: HealthClass) -> Option<&[usize]> {
        self.indices[class.index()].as_deref()
    }
}

/// `alpha_k = (1/Z) sum_i grads[k][i]` for a `K x Z` channel-major gradient.
pub fn importance_weights(grads: &[f64], k: usize, z: usize) -> Result<Vec<f64>> {
    if grads.len() != k * z || z == 0 {
        return Err(Error::ShapeMismatch {
            what: "gradient map",
            expected: k * z,
            actual: grads.len(),
        });
    }
    Ok(grads
        .chunks_exact(z)
        .map(|row| row.iter().sum::<f64>() / z as f64)
        .collect())
}

/// `values_i = sum_k alpha_k A[k][i]`.
pub fn gradcam_map<T: Scalar>(alpha: &[f64], a: &[T], z: usize, class: HealthClass) -> Result<GradCamMap> {
    if a.len() != alpha.len() * z {
        return Err(Error::ShapeMismatch {
            what: "feature map",
            expected: alpha.len() * z,
            actual: a.len(),
        });
    }
    let mut values = alloc::vec![0.0; z];
    for (&w, row) in alpha.iter().zip(a.chunks_exact(z)) {
        for (v, &x) in values.iter_mut().zip(row) {
            *v += w * x.as_f64();
        }
    }
    Ok(GradCamMap { values, class })
}

/// Linear interpolation from `Z` knots to `n_bins` points. Knot `z` sits at
/// bin coordinate `(z + 0.5) r - 0.5` with `r = n_bins / Z`, the center of
/// its stride; bins outside the first and last knot take the end values.
pub fn upsample_to_input(map: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    let z = map.len();
    if z == 0 || n_bins % z != 0 {
        return Err(Error::arg(
            "n_bins",
            format!("{n_bins} is not an integer multiple of map length {z}"),
        ));
    }
    let r = (n_bins / z) as f64;
    Ok((0..n_bins)
        .map(|i| {
            let p = (i as f64 + 0.5) / r - 0.5;
            if p <= 0.0 {
                map[0]
            } else if p >= (z - 1) as f64 {
                map[z - 1]
            } else {
                let j = p.floor() as usize;
                let t = p - j as f64;
                map[j] + t * (map[j + 1] - map[j])
            }
        })
        .collect())
}

/// ReLU of the map, for display.
pub fn clamp_positive(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v.max(0.0)).collect()
}

/// Grad-CAM of `class` for one input, computed in eval mode.
pub fn gradcam<T: Scalar>(model: &Model<T>, input: &[T], class: HealthClass) -> Result<GradCamMap> {
    let trace = model.forward(input, Mode::Eval)?;
    map_from_trace(model, &trace, 0, class)
}

fn map_from_trace<T: Scalar>(
    model: &Model<T>,
    trace: &crate::nn::ForwardTrace<T>,
    b: usize,
    class: HealthClass,
) -> Result<GradCamMap> {
    let c = class.index();
    if c >= model.arch.n_classes {
        return Err(Error::arg("class", format!("model has {} classes", model.arch.n_classes)));
    }
    let (k, z) = model.arch.feature_shape();
    let grads = model.logit_gradient(trace, b, c);
    let alpha = importance_weights(&grads, k, z)?;
    gradcam_map(&alpha, trace.feature_map(b), z, class)
}

/// Input-resolution Grad-CAM vector over every bin.
pub fn full_vector<T: Scalar>(model: &Model<T>, input: &[T], class: HealthClass) -> Result<Vec<f32>> {
    let map = gradcam(model, input, class)?;
    let up = upsample_to_input(&map.values, model.arch.input_len)?;
    Ok(up.into_iter().map(|v| v as f32).collect())
}

/// [`full_vector`] for many inputs, one class per input, forwarded in chunks.
pub fn full_vectors<T: Scalar>(model: &Model<T>, inputs: &[&[T]], classes: &[HealthClass]) -> Result<Vec<Vec<f32>>> {
    if inputs.len() != classes.len() {
        return Err(Error::ShapeMismatch {
            what: "classes",
            expected: inputs.len(),
            actual: classes.len(),
        });
    }
    let mut out = Vec::with_capacity(inputs.len());
    for (chunk, cls) in inputs.chunks(64).zip(classes.chunks(64)) {
        let trace = model.forward_batch(chunk, Mode::Eval)?;
        for (b, &class) in cls.iter().enumerate() {
            let map = map_from_trace(model, &trace, b, class)?;
            let up = upsample_to_input(&map.values, model.arch.input_len)?;
            out.push(up.into_iter().map(|v| v as f32).collect());
        }
    }
    Ok(out)
}

/// Restricts a full vector to the class's band bins.
pub fn project(full: &[f32], class: HealthClass, bands: &BandsByClass) -> Result<Vec<f32>> {
    let idx = bands.indices(class).ok_or(Error::NoSubBands(class.name()))?;
    idx.iter()
        .map(|&i| {
            full.get(i).copied().ok_or(Error::ShapeMismatch {
                what: "activation vector",
                expected: bands.grid.n_bins,
                actual: full.len(),
            })
        })
        .collect()
}

/// Activation vector of `spectrum` for `class`. `Sub` fails for classes
/// without sub-bands.
pub fn activation_vector(
    model: &Model<f32>,
    spectrum: &EnvelopeSpectrum,
    class: HealthClass,
    kind: ActivationKind,
    bands: &BandsByClass,
) -> Result<ActivationVector> {
    let full = full_vector(model, &spectrum.amplitudes, class)?;
    let values = match kind {
        ActivationKind::Full => full,
        ActivationKind::Sub => project(&full, class, bands)?,
    };
    Ok(ActivationVector { values, kind, class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mean_of_gradients() {
        assert_eq!(importance_weights(&[1.0, 2.0, 3.0, 4.0], 1, 4).unwrap(), vec![2.5]);
        assert_eq!(importance_weights(&[0.0; 6], 2, 3).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_hot_alpha_selects_channel() {
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = gradcam_map(&[0.0, 1.0], &a, 3, HealthClass::OuterRace).unwrap();
        assert_eq!(m.values, vec![4.0, 5.0, 6.0]);
        let m = gradcam_map(&[0.0, 0.0], &a, 3, HealthClass::OuterRace).unwrap();
        assert_eq!(m.values, vec![0.0; 3]);
    }

    #[test]
    fn upsample_ramp_between_stride_centers() {
        let up = upsample_to_input(&[0.0, 8.0], 16).unwrap();
        for (i, &v) in up.iter().enumerate() {
            let expected = if i <= 3 {
                0.0
            } else if i >= 12 {
                8.0
            } else {
                i as f64 - 3.5
            };
            assert_eq!(v, expected, "bin {i}");
        }
        assert_eq!(upsample_to_input(&[2.5; 4], 32).unwrap(), vec![2.5; 32]);
        assert!(upsample_to_input(&[1.0; 3], 16).is_err());
    }

    #[test]
    fn sub_projection_needs_bands() {
        let grid = OrderGrid::default();
        let orders = FaultOrders { bpfo: 3.05, bpfi: 4.95 };
        let bands = BandsByClass::new(&orders, 0.05, &grid).unwrap();
        assert!(bands.indices(HealthClass::Healthy).is_none());
        let full: Vec<f32> = (0..grid.n_bins).map(|i| i as f32).collect();
        let sub = project(&full, HealthClass::OuterRace, &bands).unwrap();
        let idx = bands.indices(HealthClass::OuterRace).unwrap();
        assert_eq!(sub.len(), idx.len());
        assert!(sub.iter().zip(idx).all(|(&v, &i)| v == i as f32));
        assert_eq!(
            project(&full, HealthClass::Healthy, &bands),
            Err(Error::NoSubBands("healthy"))
        );
    }
}
