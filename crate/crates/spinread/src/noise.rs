//! Noise injection and SNR.
//!
//! Noise levels are linear amplitudes relative to the unit charge-event
//! step: the Gaussian level is the per-sample RMS, the drift level the
//! sinusoid amplitude. A composite [`NoiseSpec`] is always applied in the
//! fixed order gaussian -> drift -> spikes.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::Trace;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// RMS of white Gaussian noise, relative to the event amplitude.
    pub gaussian_level: f64,
    /// Amplitude of the slow drift sinusoid, relative to the event amplitude.
    pub drift_level: f64,
    /// Drift frequency in kHz (1 kHz is slower than a 480 us trace).
    pub drift_freq_khz: f64,
    /// Mean number of spike pulses per trace (Poisson).
    pub spike_rate_per_trace: f64,
    /// Spike pulse amplitude.
    pub spike_amp: f64,
    /// Spike pulse width in samples.
    pub spike_width_samples: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_level: 0.0,
            drift_level: 0.0,
            drift_freq_khz: 1.0,
            spike_rate_per_trace: 0.0,
            spike_amp: 1.0,
            spike_width_samples: 3,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gaussian_level", self.gaussian_level),
            ("drift_level", self.drift_level),
            ("spike_rate_per_trace", self.spike_rate_per_trace),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.drift_freq_khz > 0.0) {
            return Err(Error::invalid("drift_freq_khz must be positive"));
        }
        if self.spike_width_samples == 0 {
            return Err(Error::invalid("spike_width_samples must be >= 1"));
        }
        Ok(())
    }

    /// Apply all configured components in the fixed order
    /// gaussian -> drift -> spikes.
    pub fn apply(&self, trace: &Trace, rng: &mut Rng) -> Result<Trace> {
        self.validate()?;
        let t = add_gaussian(trace, self.gaussian_level, rng)?;
        let t = add_drift(&t, self.drift_level, self.drift_freq_khz, rng)?;
        add_spikes(
            &t,
            self.spike_rate_per_trace,
            self.spike_amp,
            self.spike_width_samples,
            rng,
        )
    }
}

/// Add white Gaussian noise with per-sample standard deviation `level`.
pub fn add_gaussian(trace: &Trace, level: f64, rng: &mut Rng) -> Result<Trace> {
    if !level.is_finite() || level < 0.0 {
        return Err(Error::invalid("gaussian level must be finite and >= 0"));
    }
    if level == 0.0 {
        return Ok(trace.clone());
    }
    Ok(trace.map_samples(|s| s + rng.normal(level)))
}

/// Add a sinusoidal drift of amplitude `level` at `freq_khz`, with a
/// uniformly random phase per trace.
pub fn add_drift(trace: &Trace, level: f64, freq_khz: f64, rng: &mut Rng) -> Result<Trace> {
    if !level.is_finite() || level < 0.0 {
        return Err(Error::invalid("drift level must be finite and >= 0"));
    }
    if !(freq_khz > 0.0) {
        return Err(Error::invalid("drift frequency must be positive"));
    }
    if level == 0.0 {
        return Ok(trace.clone());
    }
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let omega_per_us = 2.0 * PI * freq_khz * 1e-3;
    let dt = trace.dt_us();
    let mut k = 0usize;
    Ok(trace.map_samples(|s| {
        let t_us = k as f64 * dt;
        k += 1;
        s + level * (omega_per_us * t_us + phase).sin()
    }))
}

/// Add a Poisson number (mean `rate_per_trace`) of rectangular pulses of
/// the given amplitude and width at uniform random positions.
pub fn add_spikes(
    trace: &Trace,
    rate_per_trace: f64,
    amp: f64,
    width: usize,
    rng: &mut Rng,
) -> Result<Trace> {
    if !rate_per_trace.is_finite() || rate_per_trace < 0.0 {
        return Err(Error::invalid("spike rate must be finite and >= 0"));
    }
    if width == 0 {
        return Err(Error::invalid("spike width must be >= 1"));
    }
    if rate_per_trace == 0.0 {
        return Ok(trace.clone());
    }
    let n = trace.len();
    let count = rng.poisson(rate_per_trace);
    let mut extra = vec![0.0; n];
    for _ in 0..count {
        let start = rng.uniform_usize(n);
        for slot in extra.iter_mut().skip(start).take(width) {
            *slot += amp;
        }
    }
    let mut k = 0usize;
    Ok(trace.map_samples(|s| {
        let v = s + extra[k];
        k += 1;
        v
    }))
}

/// SNR in dB: `20 log10(rms(signal) / rms(noise))`, RMS over all samples.
pub fn snr_db(signal: &Trace, noise: &Trace) -> Result<f64> {
    let rs = signal.rms();
    let rn = noise.rms();
    if rn == 0.0 {
        return Err(Error::invalid("noise RMS is zero; SNR is infinite"));
    }
    Ok(20.0 * (rs / rn).log10())
}
