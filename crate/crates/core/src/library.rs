//! The health library: one Grad-CAM vector per training sample, stored at
//! full input resolution together with the sample's labelled class.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::dsp::{EnvelopeSpectrum, HealthClass, OrderGrid};
use crate::error::{Error, Result};
use crate::gradcam::{self, ActivationKind};
use crate::nn::Model;

/// Explanation algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    CamFull,
    CamSub,
}

impl Algo {
    pub const ALL: [Algo; 2] = [Algo::CamFull, Algo::CamSub];

    pub fn name(self) -> &'static str {
        match self {
            Algo::CamFull => "cam-full",
            Algo::CamSub => "cam-sub",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Algo::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn kind(self) -> ActivationKind {
        match self {
            Algo::CamFull => ActivationKind::Full,
            Algo::CamSub => ActivationKind::Sub,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Content hash of the model weights a library was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ModelFingerprint(pub [u8; 32]);

impl fmt::Display for ModelFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub sample_id: u32,
    pub class: HealthClass,
    /// Un-normalized Grad-CAM vector over every grid bin.
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealthLibrary {
    pub entries: Vec<LibraryEntry>,
    pub algo: Algo,
    pub epsilon: f64,
    pub grid: OrderGrid,
    pub fingerprint: ModelFingerprint,
}

impl HealthLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_count(&self, class: HealthClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    /// Fails unless the library was built from the model with `fingerprint`.
    pub fn check_fingerprint(&self, fingerprint: &ModelFingerprint) -> Result<()> {
        if &self.fingerprint != fingerprint {
            return Err(Error::arg(
                "library",
                format!(
                    "built from model {} but queried with model {}",
                    self.fingerprint, fingerprint
                ),
            ));
        }
        Ok(())
    }
}

/// One entry per training sample, in `train_set` order, each holding the
/// Grad-CAM vector for the sample's label.
pub fn build_library(
    model: &Model<f32>,
    train_set: &[EnvelopeSpectrum],
    algo: Algo,
    epsilon: f64,
    fingerprint: ModelFingerprint,
) -> Result<HealthLibrary> {
    let grid = match train_set.first() {
        Some(s) => s.grid,
        None => return Err(Error::arg("train_set", "is empty")),
    };
    if grid.n_bins != model.arch.input_len {
        return Err(Error::ShapeMismatch {
            what: "grid bins vs model input",
            expected: model.arch.input_len,
            actual: grid.n_bins,
        });
    }
    let mut classes = Vec::with_capacity(train_set.len());
    for s in train_set {
        if s.grid != grid {
            return Err(Error::arg("train_set", format!("sample {} uses a different grid", s.sample_id)));
        }
        classes.push(
            s.label
                .ok_or_else(|| Error::arg("train_set", format!("sample {} is unlabelled", s.sample_id)))?,
        );
    }
    let inputs: Vec<&[f32]> = train_set.iter().map(|s| s.amplitudes.as_slice()).collect();
    let vectors = gradcam::full_vectors(model, &inputs, &classes)?;
    let entries = train_set
        .iter()
        .zip(classes)
        .zip(vectors)
        .map(|((s, class), vector)| LibraryEntry {
            sample_id: s.sample_id,
            class,
            vector,
        })
        .collect();
    Ok(HealthLibrary {
        entries,
        algo,
        epsilon,
        grid,
        fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_round_trip() {
        for a in Algo::ALL {
            assert_eq!(Algo::from_name(a.name()), Some(a));
        }
        assert_eq!(Algo::from_name("cam"), None);
    }

    #[test]
    fn fingerprint_hex() {
        let mut fp = ModelFingerprint::default();
        fp.0[0] = 0xab;
        let s = alloc::string::ToString::to_string(&fp);
        assert_eq!(s.len(), 64);
        assert!(s.starts_with("ab00"));
    }
}
