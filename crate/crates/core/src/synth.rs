//! Synthetic bearing vibration signals.
//!
//! A faulty bearing is modelled as a train of impacts at the fault
//! characteristic rate, each exciting a single damped structural resonance
//! `h(t) = exp(-zeta t) sin(2 pi f_res t)`. Impact instants carry a small
//! Gaussian timing jitter. Inner-race impacts are additionally amplitude
//! modulated at the shaft rate because the defect rotates through the load
//! zone. Healthy bearings produce white noise plus a weak shaft-order tone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::dsp::{self, BearingGeometry, EnvelopeSpectrum, HealthClass, OrderGrid};
use crate::error::{Error, Result};
use crate::rng::Stream;

const SAMPLE_TAG: u64 = 0x5359_4e54_4800;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub geometry: BearingGeometry,
    /// Samples per class, indexed by [`HealthClass::index`].
    pub class_counts: [usize; 3],
    pub signal_len: usize,
    pub sample_rate: f64,
    pub resonance_freq: f64,
    /// Decay rate `zeta` of the resonance, 1/s.
    pub resonance_damping: f64,
    pub impulse_amplitude: f64,
    /// Per-sample impact amplitude is scaled by `exp(u)`, `u ~ U(-spread, spread)`.
    pub amplitude_spread: f64,
    pub noise_std: f64,
    /// Impact timing jitter as a fraction of the impact period.
    pub jitter_std: f64,
    pub shaft_tone_amplitude: f64,
    /// Inner-race amplitude modulation depth at the shaft rate.
    pub inner_modulation_depth: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            geometry: BearingGeometry {
                n_rollers: 8,
                inner_diameter: 0.2375,
                outer_diameter: 1.0,
                load_angle: 0.0,
                shaft_freq: 25.0,
            },
            class_counts: [250, 250, 250],
            signal_len: 6400,
            sample_rate: 8000.0,
            resonance_freq: 2000.0,
            resonance_damping: 400.0,
            impulse_amplitude: 3.0,
            amplitude_spread: 0.5,
            noise_std: 0.5,
            jitter_std: 0.01,
            shaft_tone_amplitude: 0.1,
            inner_modulation_depth: 0.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.signal_len < 1024 {
            return Err(Error::arg("signal_len", format!("need >= 1024, got {}", self.signal_len)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::arg("noise_std", "must be non-negative"));
        }
        if !(0.0..=0.05).contains(&self.jitter_std) {
            return Err(Error::arg("jitter_std", format!("must lie in [0, 0.05], got {}", self.jitter_std)));
        }
        if !(self.resonance_freq > 0.0 && self.resonance_freq < self.sample_rate / 2.0) {
            return Err(Error::arg(
                "resonance_freq",
                format!("must lie in (0, {}) Hz", self.sample_rate / 2.0),
            ));
        }
        if !(self.resonance_damping > 0.0) {
            return Err(Error::arg("resonance_damping", "must be positive"));
        }
        if !(self.amplitude_spread >= 0.0 && self.inner_modulation_depth >= 0.0) {
            return Err(Error::arg("amplitude_spread", "spread and modulation depth must be non-negative"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }
}

/// One generated time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample_id: u32,
    pub label: HealthClass,
    pub shaft_freq: f64,
    pub signal: Vec<f64>,
}

/// Identifier of the `index`-th sample of `class`; stable when class counts change.
pub fn sample_id(class: HealthClass, index: usize) -> u32 {
    class.index() as u32 * 1_000_000 + index as u32
}

/// Random stream used for the `index`-th sample of `class`.
pub fn sample_stream(seed: u64, class: HealthClass, index: usize) -> Stream {
    Stream::substream(seed, SAMPLE_TAG + class.index() as u64, index as u64)
}

pub fn generate_sample(class: HealthClass, cfg: &SynthConfig, rng: &mut Stream) -> Result<Vec<f64>> {
    cfg.validate()?;
    let orders = dsp::compute_fault_orders(&cfg.geometry)?;
    let fr = cfg.geometry.shaft_freq;
    let fs = cfg.sample_rate;
    let n = cfg.signal_len;
    let mut x = vec![0.0; n];

    match class {
        HealthClass::Healthy => {
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v = cfg.shaft_tone_amplitude * (2.0 * PI * fr * t + phase).sin();
            }
        }
        HealthClass::InnerRace | HealthClass::OuterRace => {
            let fault_order = orders.for_class(class).unwrap_or_default();
            let period = 1.0 / (fault_order * fr);
            let gain = cfg.impulse_amplitude
                * rng.uniform_range(-cfg.amplitude_spread, cfg.amplitude_spread).exp();
            let offset = rng.uniform_range(0.0, period);
            let mod_phase = rng.uniform_range(0.0, 2.0 * PI);
            let duration = n as f64 / fs;
            // Response is negligible after exp(-12).
            let tail = ((12.0 / cfg.resonance_damping) * fs).ceil() as usize;
            let n_impacts = (duration / period).ceil() as i64 + 1;
            for m in -1..n_impacts {
                let jitter = cfg.jitter_std * period * rng.gaussian();
                let t_m = offset + m as f64 * period + jitter;
                let mut amp = gain;
                if class == HealthClass::InnerRace {
                    amp *= 1.0 + cfg.inner_modulation_depth * (2.0 * PI * fr * t_m + mod_phase).cos();
                }
                let start = (t_m * fs).ceil().max(0.0) as usize;
                let end = ((t_m * fs).ceil() as i64 + tail as i64).clamp(0, n as i64) as usize;
                for (i, v) in x.iter_mut().enumerate().take(end).skip(start) {
                    let tau = i as f64 / fs - t_m;
                    *v += amp
                        * (-cfg.resonance_damping * tau).exp()
                        * (2.0 * PI * cfg.resonance_freq * tau).sin();
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        for v in x.iter_mut() {
            *v += cfg.noise_std * rng.gaussian();
        }
    }
    Ok(x)
}

/// All samples, class by class, each drawn from its own substream.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    if cfg.class_counts.contains(&0) {
        return Err(Error::arg("class_counts", "every class needs at least one sample"));
    }
    let mut out = Vec::with_capacity(cfg.total());
    for class in HealthClass::ALL {
        for idx in 0..cfg.class_counts[class.index()] {
            let mut rng = sample_stream(cfg.seed, class, idx);
            out.push(SynthSample {
                sample_id: sample_id(class, idx),
                label: class,
                shaft_freq: cfg.geometry.shaft_freq,
                signal: generate_sample(class, cfg, &mut rng)?,
            });
        }
    }
    Ok(out)
}

/// Labelled envelope order spectra for generated samples.
pub fn to_spectra(samples: &[SynthSample], sample_rate: f64, grid: &OrderGrid) -> Result<Vec<EnvelopeSpectrum>> {
    samples
        .iter()
        .map(|s| {
            Ok(dsp::envelope_order_spectrum(&s.signal, sample_rate, s.shaft_freq, grid)?
                .with_label(s.label, s.sample_id))
        })
        .collect()
}

/// Stratified split keeping, per class, the first `round(train_fraction * n_c)`
/// items (in input order) for training. Returns `(train, test)` index lists.
pub fn stratified_split(labels: &[HealthClass], train_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::arg("train_fraction", "must lie in [0, 1]"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in HealthClass::ALL {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            class_counts: [3, 2, 4],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = generate_dataset(&small_cfg()).unwrap();
        let b = generate_dataset(&small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
    }

    #[test]
    fn shared_prefix_survives_count_change() {
        let a = generate_dataset(&small_cfg()).unwrap();
        let b = generate_dataset(&SynthConfig {
            class_counts: [1, 3, 2],
            ..small_cfg()
        })
        .unwrap();
        let find = |set: &[SynthSample], id| set.iter().find(|s| s.sample_id == id).cloned();
        for id in [sample_id(HealthClass::Healthy, 0), sample_id(HealthClass::InnerRace, 1)] {
            assert_eq!(find(&a, id), find(&b, id));
        }
    }

    #[test]
    fn split_proportions() {
        let labels: Vec<HealthClass> = HealthClass::ALL
            .iter()
            .flat_map(|&c| core::iter::repeat(c).take(200))
            .collect();
        let (train, test) = stratified_split(&labels, 0.8).unwrap();
        assert_eq!(train.len(), 480);
        assert_eq!(test.len(), 120);
        for c in HealthClass::ALL {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 160);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            jitter_std: 0.2,
            ..SynthConfig::default()
        };
        assert!(generate_dataset(&cfg).is_err());
        let cfg = SynthConfig {
            resonance_freq: 5000.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
