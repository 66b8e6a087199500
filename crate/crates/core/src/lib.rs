//! Interpretable bearing fault diagnosis on envelope order spectra.
//!
//! The crate covers the whole numerical pipeline and performs no IO:
//!
//! - [`dsp`]: fault characteristic orders, Hilbert envelopes, envelope order
//!   spectra and the fault-frequency sub-bands used by CAM-Sub.
//! - [`synth`]: seeded synthetic vibration signals for healthy, inner-race and
//!   outer-race bearings.
//! - [`nn`]: a small 1D CNN (conv, batch norm, ReLU, max pooling, global max
//!   pooling, dense + softmax) with hand-written backpropagation.
//! - [`gradcam`]: Grad-CAM maps at the last convolutional block and the
//!   CAM-Full / CAM-Sub activation vectors derived from them.
//! - [`library`] and [`retrieval`]: the health library and top-K prediction
//!   basis retrieval by normalized Euclidean distance.
//! - [`eval`]: distance matrices, training-sample importance, the sample
//!   removal experiment and confusion matrices.
//!
//! File formats, plotting and the command line live in the `bxai` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod dsp;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gradcam;
pub mod library;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod synth;

pub use dsp::{
    BearingGeometry, EnvelopeSpectrum, FaultOrders, HealthClass, OrderGrid, SubBands,
};
pub use error::{Error, Result};




pub use eval::{ConfusionMatrix, DistanceMatrix, Method, RemovalConfig, RemovalResult};
pub use gradcam::{ActivationKind, ActivationVector, BandsByClass, GradCamMap};
pub use library::{Algo, HealthLibrary, LibraryEntry, ModelFingerprint};
pub use nn::{Mode, Model, ModelArch, TrainConfig};
pub use retrieval::{BasisEntry, PredictionBasis};
