use bxai_core::dsp::{self, EnvelopeSpectrum, HealthClass, OrderGrid};
use bxai_core::synth::{self, SynthConfig};

fn spectra(cfg: &SynthConfig) -> Vec<EnvelopeSpectrum> {
    let samples = synth::generate_dataset(cfg).unwrap();
    synth::to_spectra(&samples, cfg.sample_rate, &OrderGrid::default()).unwrap()
}

fn median(v: &[f32]) -> f32 {
    let mut s = v.to_vec();
    s.sort_by(f32::total_cmp);
    s[s.len() / 2]
}

/// Peak of the first fault sub-band of each fault class relative to the
/// spectrum median; healthy when neither peak clears `threshold`.
fn detect(s: &EnvelopeSpectrum, orders: &dsp::FaultOrders, threshold: f32) -> HealthClass {
    let med = median(&s.amplitudes);
    let peak = |order: f64| {
        let band = dsp::make_sub_bands(order, 0.05).unwrap();
        let idx = dsp::band_indices(&band, &s.grid).unwrap();
        idx.iter()
            .filter(|&&i| band.bands[0].contains(s.grid.center(i)))
            .map(|&i| s.amplitudes[i])
            .fold(0.0f32, f32::max)
            / med
    };
    let (inner, outer) = (peak(orders.bpfi), peak(orders.bpfo));
    if inner.max(outer) < threshold {
        HealthClass::Healthy
    } else if inner > outer {
        HealthClass::InnerRace
    } else {
        HealthClass::OuterRace
    }
}

/// Ratio a first sub-band peak has to reach before a sample counts as faulty.
const THRESHOLD: f32 = 5.0;

#[test]
fn labels_are_recoverable_by_a_band_detector() {
    let cfg = SynthConfig::default();
    let orders = dsp::compute_fault_orders(&cfg.geometry).unwrap();
    let data = spectra(&cfg);
    let ok = data.iter().filter(|s| detect(s, &orders, THRESHOLD) == s.label.unwrap()).count();
    let rate = ok as f64 / data.len() as f64;
    assert!(rate >= 0.95, "detector recovered {ok}/{}", data.len());
}

#[test]
fn healthy_spectra_carry_no_fault_lines() {
    let cfg = SynthConfig { class_counts: [60, 1, 1], ..SynthConfig::default() };
    let orders = dsp::compute_fault_orders(&cfg.geometry).unwrap();
    for s in spectra(&cfg).iter().filter(|s| s.label == Some(HealthClass::Healthy)) {
        assert_eq!(detect(s, &orders, THRESHOLD), HealthClass::Healthy, "sample {}", s.sample_id);
    }
}
