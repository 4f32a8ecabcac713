//! Second-order ring-down model of the resonator under test.
//!
//! After the actuation step at a signal maximum the output decays as
//!
//! ```text
//! V(t) = V0 · e^(−α t) · [cos(ωd t) + sin(ωd t) / √(4Q² − 1)]
//! α  = ω0 / 2Q
//! ωd = ω0 · √(1 − 1/4Q²)
//! ```
//!
//! Maxima sit exactly at multiples of the pseudo-period `T'0 = 2π/ωd`, and
//! consecutive maxima shrink by the constant log decrement
//! `δ = α·T'0 = 2π/√(4Q² − 1)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// Minimum synthesis rate, in samples per resonant period.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 20.0;

/// The device under test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorParams {
    /// Resonant frequency (Hz).
    pub f0: f64,
    /// True quality factor.
    pub q: f64,
    /// Initial peak amplitude (V).
    pub v0: f64,
}

impl Default for ResonatorParams {
    fn default() -> Self {
        Self {
            f0: 50e3,
            q: 300.0,
            v0: 1.0,
        }
    }
}

impl ResonatorParams {
    pub fn new(f0: f64, q: f64, v0: f64) -> Result<Self> {
        let p = Self { f0, q, v0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(invalid("f0", format!("must be > 0 Hz, got {}", self.f0)));
        }
        if !(self.v0.is_finite() && self.v0 > 0.0) {
            return Err(invalid("v0", format!("must be > 0 V, got {}", self.v0)));
        }
        if !(self.q.is_finite() && self.q > 0.5) {
            return Err(invalid(
                "q",
                format!(
                    "must be > 0.5 (underdamped), got {}; no pseudo-period exists otherwise",
                    self.q
                ),
            ));
        }
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    /// Amplitude ratio between consecutive maxima, `ln(V_m / V_{m+1})`.
    pub fn log_decrement(&self) -> f64 {
        log_decrement_for_q(self.q)
    }
}

/// `δ(Q) = 2π/√(4Q² − 1)`, the log ratio of consecutive maxima.
pub fn log_decrement_for_q(q: f64) -> f64 {
    2.0 * PI / (4.0 * q * q - 1.0).sqrt()
}

/// Exact inverse of [`log_decrement_for_q`]: `Q = ½·√(1 + (2π/δ)²)`.
pub fn q_for_log_decrement(delta: f64) -> f64 {
    0.5 * (1.0 + (2.0 * PI / delta).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedDynamics {
    /// Envelope decay rate ω0/2Q (1/s).
    pub alpha: f64,
    /// Damped angular frequency (rad/s).
    pub omega_d: f64,
    /// Pseudo-period 2π/ωd (s).
    pub pseudo_period: f64,
}

pub fn derive_dynamics(params: &ResonatorParams) -> Result<DerivedDynamics> {
    params.validate()?;
    let w0 = params.omega0();
    let q = params.q;
    let omega_d = w0 * (1.0 - 1.0 / (4.0 * q * q)).sqrt();
    Ok(DerivedDynamics {
        alpha: w0 / (2.0 * q),
        omega_d,
        pseudo_period: 2.0 * PI / omega_d,
    })
}

fn response_unchecked(params: &ResonatorParams, dyn_: &DerivedDynamics, t: f64) -> f64 {
    let c = 1.0 / (4.0 * params.q * params.q - 1.0).sqrt();
    let (s, co) = (dyn_.omega_d * t).sin_cos();
    params.v0 * (-dyn_.alpha * t).exp() * (co + c * s)
}

/// Ring-down voltage at time `t ≥ 0`.
pub fn eval_response(params: &ResonatorParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("must be >= 0 s, got {t}")));
    }
    let d = derive_dynamics(params)?;
    Ok(response_unchecked(params, &d, t))
}

/// Time of the `m`-th maximum (the step is launched at maximum `m = 0`).
pub fn peak_time(params: &ResonatorParams, m: u64) -> Result<f64> {
    Ok(m as f64 * derive_dynamics(params)?.pseudo_period)
}

/// Value of the `m`-th maximum, `V0·e^(−m·δ)`.
pub fn peak_value(params: &ResonatorParams, m: u64) -> Result<f64> {
    params.validate()?;
    Ok(params.v0 * (-(m as f64) * params.log_decrement()).exp())
}

/// Phase lag of the rising zero crossing that follows each maximum, as a
/// fraction of the pseudo-period: `3/4 + atan(1/√(4Q²−1))/2π`.
pub fn rising_crossing_fraction(q: f64) -> f64 {
    0.75 + (1.0 / (4.0 * q * q - 1.0).sqrt()).atan() / (2.0 * PI)
}

/// Uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: f64,
    pub start_time: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Samples the ring-down at `sample_rate` for `duration`, optionally adding
/// white Gaussian noise drawn from a ChaCha stream seeded with `seed`.
pub fn synth_waveform(
    params: &ResonatorParams,
    sample_rate: f64,
    duration: f64,
    noise_rms: f64,
    seed: u64,
) -> Result<Waveform> {
    let d = derive_dynamics(params)?;
    if !(sample_rate.is_finite() && sample_rate >= MIN_SAMPLES_PER_PERIOD * params.f0) {
        return Err(invalid(
            "sample_rate",
            format!(
                "{sample_rate} Hz is below {} samples per period ({} Hz)",
                MIN_SAMPLES_PER_PERIOD,
                MIN_SAMPLES_PER_PERIOD * params.f0
            ),
        ));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid(
            "duration",
            format!("must be > 0 s, got {duration}"),
        ));
    }
    if !(noise_rms.is_finite() && noise_rms >= 0.0) {
        return Err(invalid(
            "noise_rms",
            format!("must be >= 0 V, got {noise_rms}"),
        ));
    }
    let count = ((duration * sample_rate).round() as usize).max(1);
    let mut samples: Vec<f64> = (0..count)
        .map(|i| response_unchecked(params, &d, i as f64 / sample_rate))
        .collect();
    if noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_rms).expect("finite non-negative sigma");
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(Waveform {
        sample_rate,
        start_time: 0.0,
        samples,
    })
}
