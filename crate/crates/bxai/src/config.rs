//! Run configuration: a TOML file with one table per pipeline stage. Every
//! key is optional; missing keys take the defaults below. Command-line flags
//! override file values, and the resolved configuration is written next to
//! each command's outputs.

use std::path::Path;

use bxai_core::dsp::{BearingGeometry, OrderGrid};
use bxai_core::eval::{Method, RemovalConfig};
use bxai_core::library::Algo;
use bxai_core::nn::{ModelArch, Optimizer, TrainConfig};
use bxai_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub geometry: GeometrySection,
    pub synth: SynthSection,
    pub spectrum: SpectrumSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub explain: ExplainSection,
    pub removal: RemovalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub n_rollers: u32,
    pub inner_diameter: f64,
    pub outer_diameter: f64,
    /// Radians.
    pub load_angle: f64,
    /// Hz.
    pub shaft_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Healthy, inner race, outer race.
    pub class_counts: [usize; 3],
    pub train_fraction: f64,
    pub signal_len: usize,
    pub sample_rate: f64,
    pub resonance_freq: f64,
    pub resonance_damping: f64,
    pub impulse_amplitude: f64,
    pub amplitude_spread: f64,
    pub noise_std: f64,
    pub jitter_std: f64,
    pub shaft_tone_amplitude: f64,
    pub inner_modulation_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub optimizer: OptimizerName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub epsilon: f64,
    pub top_k: usize,
    pub algo: String,
    /// Render only positive importance in plots.
    pub clamp: bool,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemovalSection {
    pub fractions: Vec<f64>,
    pub methods: Vec<String>,
    pub repeats: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            geometry: GeometrySection::default(),
            synth: SynthSection::default(),
            spectrum: SpectrumSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            explain: ExplainSection::default(),
            removal: RemovalSection::default(),
        }
    }
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = SynthConfig::default().geometry;
        GeometrySection {
            n_rollers: g.n_rollers,
            inner_diameter: g.inner_diameter,
            outer_diameter: g.outer_diameter,
            load_angle: g.load_angle,
            shaft_freq: g.shaft_freq,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            class_counts: s.class_counts,
            train_fraction: 0.8,
            signal_len: s.signal_len,
            sample_rate: s.sample_rate,
            resonance_freq: s.resonance_freq,
            resonance_damping: s.resonance_damping,
            impulse_amplitude: s.impulse_amplitude,
            amplitude_spread: s.amplitude_spread,
            noise_std: s.noise_std,
            jitter_std: s.jitter_std,
            shaft_tone_amplitude: s.shaft_tone_amplitude,
            inner_modulation_depth: s.inner_modulation_depth,
        }
    }
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            bins: OrderGrid::default().n_bins,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ModelArch::default();
        ModelSection {
            channels: a.channels,
            kernels: a.kernels,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            min_delta: t.min_delta,
            validation_fraction: t.validation_fraction,
            optimizer: match t.optimizer {
                Optimizer::Momentum { .. } => OptimizerName::Momentum,
                Optimizer::Adam { .. } => OptimizerName::Adam,
            },
        }
    }
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            epsilon: bxai_core::dsp::DEFAULT_EPSILON,
            top_k: bxai_core::retrieval::DEFAULT_TOP_K,
            algo: Algo::CamSub.name().to_string(),
            clamp: false,
            plots: true,
        }
    }
}

impl Default for RemovalSection {
    fn default() -> Self {
        let r = RemovalConfig::default();
        RemovalSection {
            fractions: r.fractions,
            methods: r.methods.iter().map(|m| m.name().to_string()).collect(),
            repeats: r.n_repeats,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> BearingGeometry {
        let g = &self.geometry;
        BearingGeometry {
            n_rollers: g.n_rollers,
            inner_diameter: g.inner_diameter,
            outer_diameter: g.outer_diameter,
            load_angle: g.load_angle,
            shaft_freq: g.shaft_freq,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            geometry: self.geometry(),
            class_counts: s.class_counts,
            signal_len: s.signal_len,
            sample_rate: s.sample_rate,
            resonance_freq: s.resonance_freq,
            resonance_damping: s.resonance_damping,
            impulse_amplitude: s.impulse_amplitude,
            amplitude_spread: s.amplitude_spread,
            noise_std: s.noise_std,
            jitter_std: s.jitter_std,
            shaft_tone_amplitude: s.shaft_tone_amplitude,
            inner_modulation_depth: s.inner_modulation_depth,
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Result<OrderGrid> {
        OrderGrid::new(self.spectrum.bins).map_err(|e| Error::Usage(format!("--bins: {e}")))
    }

    pub fn arch(&self, input_len: usize) -> ModelArch {
        ModelArch {
            channels: self.model.channels.clone(),
            kernels: self.model.kernels.clone(),
            n_classes: 3,
            input_len,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            min_delta: t.min_delta,
            validation_fraction: t.validation_fraction,
            optimizer: match t.optimizer {
                OptimizerName::Momentum => Optimizer::momentum(),
                OptimizerName::Adam => Optimizer::adam(),
            },
            seed: self.seed,
        }
    }

    pub fn algo(&self) -> Result<Algo> {
        Algo::from_name(&self.explain.algo)
            .ok_or_else(|| Error::Usage(format!("unknown algorithm `{}` (cam-full or cam-sub)", self.explain.algo)))
    }

    pub fn removal(&self, input_len: usize) -> Result<RemovalConfig> {
        let methods = self
            .removal
            .methods
            .iter()
            .map(|m| Method::from_name(m).ok_or_else(|| Error::Usage(format!("unknown removal method `{m}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(RemovalConfig {
            fractions: self.removal.fractions.clone(),
            methods,
            n_repeats: self.removal.repeats,
            seed: self.seed,
            arch: self.arch(input_len),
            train: self.train(),
        })
    }

    /// Checks values that the core would otherwise reject deep inside a run.
    pub fn validate(&self) -> Result<()> {
        let e = self.explain.epsilon;
        if !(e > 0.0 && e <= 0.2) {
            return Err(Error::Usage(format!("--epsilon must lie in (0, 0.2], got {e}")));
        }
        if self.explain.top_k == 0 {
            return Err(Error::Usage("--top-k must be at least 1".into()));
        }
        self.algo()?;
        self.grid()?;
        self.arch(self.spectrum.bins)
            .validate()
            .map_err(|e| Error::Usage(format!("model or --bins: {e}")))?;
        if !(0.0 < self.synth.train_fraction && self.synth.train_fraction < 1.0) {
            return Err(Error::Usage("synth.train_fraction must lie in (0, 1)".into()));
        }
        self.removal(self.spectrum.bins)?;
        Ok(())
    }
}
