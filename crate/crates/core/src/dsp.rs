//! Envelope order spectra and bearing fault characteristic orders.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fft;

/// Upper end of the order range fed to the classifier.
pub const ORDER_MAX: f64 = 30.0;

/// Default number of spectrum bins; divisible by 2^3 so three stride-2
/// poolings leave an integer feature length of 192.
pub const DEFAULT_BINS: usize = 1536;

/// Default fractional half-width of a fault-frequency sub-band.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Bearing health condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum HealthClass {
    Healthy = 0,
    InnerRace = 1,
    OuterRace = 2,
}

impl HealthClass {
    pub const ALL: [HealthClass; 3] = [
        HealthClass::Healthy,
        HealthClass::InnerRace,
        HealthClass::OuterRace,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            HealthClass::Healthy => "healthy",
            HealthClass::InnerRace => "inner_race",
            HealthClass::OuterRace => "outer_race",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for HealthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rolling element bearing geometry and operating speed.
///
/// `inner_diameter` and `outer_diameter` only enter the fault orders through
/// their ratio, so any consistent length unit works.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingGeometry {
    pub n_rollers: u32,
    pub inner_diameter: f64,
    pub outer_diameter: f64,
    /// Load angle from the radial plane, radians.
    pub load_angle: f64,
    /// Shaft rotation frequency, Hz.
    pub shaft_freq: f64,
}

impl BearingGeometry {
    /// Geometry with `n_rollers` elements and zero load angle whose outer-race
    /// fault order equals `bpfo_order`.
    pub fn with_bpfo_order(n_rollers: u32, bpfo_order: f64, shaft_freq: f64) -> Result<Self> {
        let ratio = 1.0 - 2.0 * bpfo_order / n_rollers as f64;
        let geom = BearingGeometry {
            n_rollers,
            inner_diameter: ratio,
            outer_diameter: 1.0,
            load_angle: 0.0,
            shaft_freq,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Same construction, targeting the inner-race fault order instead.
    pub fn with_bpfi_order(n_rollers: u32, bpfi_order: f64, shaft_freq: f64) -> Result<Self> {
        let ratio = 2.0 * bpfi_order / n_rollers as f64 - 1.0;
        let geom = BearingGeometry {
            n_rollers,
            inner_diameter: ratio,
            outer_diameter: 1.0,
            load_angle: 0.0,
            shaft_freq,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rollers == 0 {
            return Err(Error::InvalidGeometry("n_rollers must be at least 1".into()));
        }
        let (d, big_d) = (self.inner_diameter, self.outer_diameter);
        if !(d.is_finite() && big_d.is_finite() && d > 0.0 && d < big_d) {
            return Err(Error::InvalidGeometry(format!(
                "need 0 < d < D, got d={d}, D={big_d}"
            )));
        }
        if !(self.shaft_freq.is_finite() && self.shaft_freq > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "shaft frequency must be positive, got {}",
                self.shaft_freq
            )));
        }
        if !self.load_angle.is_finite() {
            return Err(Error::InvalidGeometry("load angle must be finite".into()));
        }
        Ok(())
    }
}

/// Fault characteristic frequencies divided by the shaft frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultOrders {
    pub bpfo: f64,
    pub bpfi: f64,
}

impl FaultOrders {
    /// Characteristic order of a fault class; `None` for healthy bearings.
    pub fn for_class(&self, class: HealthClass) -> Option<f64> {
        match class {
            HealthClass::Healthy => None,
            HealthClass::InnerRace => Some(self.bpfi),
            HealthClass::OuterRace => Some(self.bpfo),
        }
    }
}

/// Ball pass orders for the outer and inner race.
pub fn compute_fault_orders(geom: &BearingGeometry) -> Result<FaultOrders> {
    geom.validate()?;
    let half_n = geom.n_rollers as f64 / 2.0;
    let r = geom.inner_diameter / geom.outer_diameter * geom.load_angle.cos();
    Ok(FaultOrders {
        bpfo: half_n * (1.0 - r),
        bpfi: half_n * (1.0 + r),
    })
}

/// Uniform grid of order bins; bin `i` is centred at `order_min + (i + 0.5) * width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderGrid {
    pub order_min: f64,
    pub order_max: f64,
    pub n_bins: usize,
}

impl OrderGrid {
    /// `n_bins` bins over `[0, 30]`.
    pub fn new(n_bins: usize) -> Result<Self> {
        Self::with_range(0.0, ORDER_MAX, n_bins)
    }

    pub fn with_range(order_min: f64, order_max: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::arg("n_bins", "must be positive"));
        }
        if !(order_min.is_finite() && order_max.is_finite() && order_max > order_min) {
            return Err(Error::arg(
                "order range",
                format!("need order_min < order_max, got [{order_min}, {order_max}]"),
            ));
        }
        Ok(OrderGrid {
            order_min,
            order_max,
            n_bins,
        })
    }

    pub fn bin_width(&self) -> f64 {
        (self.order_max - self.order_min) / self.n_bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.order_min + (i as f64 + 0.5) * self.bin_width()
    }

    /// Index of the bin whose center is nearest to `order`, clamped to the grid.
    pub fn nearest_bin(&self, order: f64) -> usize {
        let pos = (order - self.order_min) / self.bin_width() - 0.5;
        (pos.round().max(0.0) as usize).min(self.n_bins - 1)
    }
}

impl Default for OrderGrid {
    fn default() -> Self {
        OrderGrid {
            order_min: 0.0,
            order_max: ORDER_MAX,
            n_bins: DEFAULT_BINS,
        }
    }
}

/// Vibration amplitude on a fixed order grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSpectrum {
    pub amplitudes: Vec<f32>,
    pub grid: OrderGrid,
    pub label: Option<HealthClass>,
    pub sample_id: u32,
    pub shaft_freq: f64,
}

impl EnvelopeSpectrum {
    pub fn with_label(mut self, label: HealthClass, sample_id: u32) -> Self {
        self.label = Some(label);
        self.sample_id = sample_id;
        self
    }
}

/// Magnitude of the analytic signal.
///
/// The analytic signal is built in the frequency domain: negative frequencies
/// are zeroed, positive ones doubled, DC and (for even lengths) Nyquist kept
/// with weight one.
pub fn hilbert_envelope(signal: &[f64]) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::arg("signal", format!("need at least 4 samples, got {n}")));
    }
    let mut spec = fft::fft_real(signal);
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    fft::ifft(&mut spec);
    Ok(spec.iter().map(|z| z.norm()).collect())
}

/// Symmetric Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos())
        .collect()
}

/// FFT length used for an envelope of `len` samples: a power of two at
/// least `len` whose bin spacing is at most half a grid bin.
pub fn spectrum_fft_len(len: usize, sample_rate: f64, shaft_freq: f64, grid: &OrderGrid) -> usize {
    let spacing_hz = grid.bin_width() * shaft_freq / 2.0;
    let needed = (sample_rate / spacing_hz).ceil() as usize;
    needed.max(len).next_power_of_two()
}

pub(crate) fn check_spectrum_inputs(
    len: usize,
    sample_rate: f64,
    shaft_freq: f64,
    grid: &OrderGrid,
) -> Result<()> {
    if len < 256 {
        return Err(Error::arg("signal", format!("need at least 256 samples, got {len}")));
    }
    if !(shaft_freq.is_finite() && shaft_freq > 0.0) {
        return Err(Error::arg("shaft_freq", format!("must be positive, got {shaft_freq}")));
    }
    let nyquist_needed = 2.0 * shaft_freq * grid.order_max;
    if !(sample_rate.is_finite() && sample_rate > nyquist_needed) {
        return Err(Error::arg(
            "sample_rate",
            format!(
                "{sample_rate} Hz cannot resolve order {} at {shaft_freq} Hz (need > {nyquist_needed} Hz)",
                grid.order_max
            ),
        ));
    }
    Ok(())
}

/// Full-precision amplitudes of the envelope order spectrum on `grid`.
///
/// Pipeline: Hilbert envelope, mean removal, Hann window, zero-padded FFT
/// magnitude scaled to single-sided amplitude, frequency to order
/// (`o = f / f_r`), then linear interpolation at the grid bin centers.
pub fn envelope_order_amplitudes(
    signal: &[f64],
    sample_rate: f64,
    shaft_freq: f64,
    grid: &OrderGrid,
) -> Result<Vec<f64>> {
    check_spectrum_inputs(signal.len(), sample_rate, shaft_freq, grid)?;
    let envelope = hilbert_envelope(signal)?;
    let n = envelope.len();
    let mean = envelope.iter().sum::<f64>() / n as f64;
    let window = hann_window(n);
    let window_sum: f64 = window.iter().sum();

    let nfft = spectrum_fft_len(n, sample_rate, shaft_freq, grid);
    let mut buf = alloc::vec![Complex64::new(0.0, 0.0); nfft];
    for ((slot, &e), &w) in buf.iter_mut().zip(&envelope).zip(&window) {
        *slot = Complex64::new((e - mean) * w, 0.0);
    }
    fft::fft(&mut buf);

    let scale = 2.0 / window_sum;
    let bins_per_order = shaft_freq * nfft as f64 / sample_rate;
    let last = nfft / 2;
    let amp = |k: usize| buf[k.min(last)].norm() * scale;
    Ok((0..grid.n_bins)
        .map(|i| {
            let pos = grid.center(i) * bins_per_order;
            let k0 = pos.floor();
            let t = pos - k0;
            let k0 = k0 as usize;
            (1.0 - t) * amp(k0) + t * amp(k0 + 1)
        })
        .collect())
}

/// Envelope order spectrum of a time signal; the label is left unset.
pub fn envelope_order_spectrum(
    signal: &[f64],
    sample_rate: f64,
    shaft_freq: f64,
    grid: &OrderGrid,
) -> Result<EnvelopeSpectrum> {
    let amps = envelope_order_amplitudes(signal, sample_rate, shaft_freq, grid)?;
    Ok(EnvelopeSpectrum {
        amplitudes: amps.iter().map(|&a| a as f32).collect(),
        grid: *grid,
        label: None,
        sample_id: 0,
        shaft_freq,
    })
}

/// Closed order interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn contains(&self, order: f64) -> bool {
        self.lo <= order && order <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Three bands around a fault order and its first two harmonics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubBands {
    pub center: f64,
    pub epsilon: f64,
    pub bands: [Band; 3],
}

/// Band `h` spans `(h + 1) * f_c * (1 -/+ epsilon)`.
pub fn make_sub_bands(fault_order: f64, epsilon: f64) -> Result<SubBands> {
    if !(fault_order.is_finite() && fault_order > 0.0) {
        return Err(Error::arg("fault_order", format!("must be positive, got {fault_order}")));
    }
    if !(epsilon > 0.0 && epsilon <= 0.2) {
        return Err(Error::arg("epsilon", format!("must lie in (0, 0.2], got {epsilon}")));
    }
    if 3.0 * fault_order * (1.0 + epsilon) > ORDER_MAX {
        return Err(Error::arg(
            "fault_order",
            format!("third harmonic band of {fault_order} exceeds order {ORDER_MAX}"),
        ));
    }
    let band = |h: usize| {
        let c = (h + 1) as f64 * fault_order;
        Band {
            lo: c * (1.0 - epsilon),
            hi: c * (1.0 + epsilon),
        }
    };
    Ok(SubBands {
        center: fault_order,
        epsilon,
        bands: [band(0), band(1), band(2)],
    })
}

/// Sorted, de-duplicated indices of bins whose centers fall inside any band.
pub fn band_indices(bands: &SubBands, grid: &OrderGrid) -> Result<Vec<usize>> {
    let width = grid.bin_width();
    let mut out = Vec::new();
    for band in &bands.bands {
        if band.lo < grid.order_min || band.hi > grid.order_max {
            return Err(Error::arg(
                "bands",
                format!(
                    "[{}, {}] outside grid [{}, {}]",
                    band.lo, band.hi, grid.order_min, grid.order_max
                ),
            ));
        }
        // Candidate range from arithmetic, then fix up float rounding at the ends.
        let mut first = ((band.lo - grid.order_min) / width - 0.5).ceil().max(0.0) as usize;
        while first > 0 && band.contains(grid.center(first - 1)) {
            first -= 1;
        }
        while first < grid.n_bins && grid.center(first) < band.lo {
            first += 1;
        }
        let mut i = first;
        let mut any = false;
        while i < grid.n_bins && band.contains(grid.center(i)) {
            out.push(i);
            any = true;
            i += 1;
        }
        if !any {
            return Err(Error::EmptyBand {
                lo: band.lo,
                hi: band.hi,
            });
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
