//! Top-K retrieval of library entries as the basis for a prediction.
//!
//! Vectors are L2-normalized in `f64` and compared by Euclidean distance,
//! which for unit vectors lies in `[0, 2]`. Only entries of the predicted
//! class are candidates.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dsp::{EnvelopeSpectrum, HealthClass};
use crate::error::{Error, Result};
use crate::gradcam::{self, BandsByClass};
use crate::library::{Algo, HealthLibrary};
use crate::nn::Model;

pub const DEFAULT_TOP_K: usize = 4;

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroActivation);
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

/// Euclidean distance.
pub fn activation_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The vector compared under `algo` for a sample of `class`, normalized.
/// The flag is true when CAM-Sub fell back to the full vector because the
/// class has no sub-bands.
pub fn comparison_vector(full: &[f32], class: HealthClass, algo: Algo, bands: &BandsByClass) -> Result<(Vec<f64>, bool)> {
    match algo {
        Algo::CamFull => Ok((l2_normalize(full)?, false)),
        Algo::CamSub => match bands.indices(class) {
            Some(_) => Ok((l2_normalize(&gradcam::project(full, class, bands)?)?, false)),
            None => Ok((l2_normalize(full)?, true)),
        },
    }
}

/// A ranked library entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisEntry {
    pub entry_id: u32,
    pub class: HealthClass,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBasis {
    pub sample_id: u32,
    pub predicted: HealthClass,
    pub probabilities: Vec<f64>,
    pub basis: Vec<BasisEntry>,
    pub algo: Algo,
    /// CAM-Sub was requested but the full vector was used.
    pub fallback: bool,
}

/// Every library entry of `class` ranked by distance to the query, ties to
/// the lower entry id.
pub fn rank_entries(
    library: &HealthLibrary,
    query_full: &[f32],
    class: HealthClass,
    algo: Algo,
    bands: &BandsByClass,
) -> Result<(Vec<BasisEntry>, bool)> {
    if query_full.len() != library.grid.n_bins {
        return Err(Error::ShapeMismatch {
            what: "query vector",
            expected: library.grid.n_bins,
            actual: query_full.len(),
        });
    }
    let (q, fallback) = comparison_vector(query_full, class, algo, bands)?;
    let mut ranked = Vec::new();
    for e in library.entries.iter().filter(|e| e.class == class) {
        let (v, _) = comparison_vector(&e.vector, class, algo, bands)?;
        ranked.push(BasisEntry {
            entry_id: e.sample_id,
            class,
            distance: activation_distance(&q, &v),
        });
    }
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.entry_id.cmp(&b.entry_id)));
    Ok((ranked, fallback))
}

/// Predicts the class of `spectrum` and returns the `k` closest library
/// entries of that class.
pub fn retrieve_basis(
    model: &Model<f32>,
    library: &HealthLibrary,
    spectrum: &EnvelopeSpectrum,
    k: usize,
    algo: Algo,
    bands: &BandsByClass,
) -> Result<PredictionBasis> {
    if k == 0 {
        return Err(Error::arg("k", "must be at least 1"));
    }
    if spectrum.grid != library.grid {
        return Err(Error::arg(
            "spectrum",
            format!("grid of {} bins does not match the library's {}", spectrum.grid.n_bins, library.grid.n_bins),
        ));
    }
    let (predicted, probabilities) = model.predict_class(spectrum)?;
    let available = library.class_count(predicted);
    if k > available {
        return Err(Error::NotEnoughEntries {
            class: predicted.name(),
            requested: k,
            available,
        });
    }
    let full = gradcam::full_vector(model, &spectrum.amplitudes, predicted)?;
    let (mut ranked, fallback) = rank_entries(library, &full, predicted, algo, bands)?;
    ranked.truncate(k);
    Ok(PredictionBasis {
        sample_id: spectrum.sample_id,
        predicted,
        probabilities,
        basis: ranked,
        algo,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroActivation));
        assert_eq!(l2_normalize(&[1.0, 0.0]).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn distance_examples() {
        let a = [0.6, 0.8];
        assert_eq!(activation_distance(&a, &a), 0.0);
        assert!((activation_distance(&a, &[-0.6, -0.8]) - 2.0).abs() < 1e-15);
    }
}
