//! Idealized Fixed Voltage Interval measurement.
//!
//! The count `n` of pseudo-periods needed for the ring-down maxima to fall
//! from `V0` to `V0/k` gives
//!
//! ```text
//! Q_meas = ½·√(1 + 4π²n² / ln²k)
//! ```
//!
//! The only error source in the ideal case is that `V0/k` rarely coincides
//! with a maximum, so `n` is quantized.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, QfmError, Result};
use crate::resonator::{derive_dynamics, peak_value, ResonatorParams};
use crate::sweep::{QRange, SweepCell, SweepRow, SweepTable};

/// Division factor for which `Q_meas ≈ 2n`, since `ln 4.81 ≈ π/2`.
pub const SHORTCUT_K: f64 = 4.81;

/// How `n` relates to the first maximum at or below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// `n` is the index of the first maximum at or below `V0/k`.
    FirstAtOrBelow,
    /// `n` is the index of the last maximum still above `V0/k`.
    #[default]
    LastAbove,
}

impl Convention {
    /// Converts the index of the first at-or-below maximum into `n`.
    pub fn count_from_first_below(self, first_below: u64) -> u64 {
        match self {
            Convention::FirstAtOrBelow => first_below,
            Convention::LastAbove => first_below.saturating_sub(1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Convention::FirstAtOrBelow => "first_at_or_below",
            Convention::LastAbove => "last_above",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Convention {
    type Err = QfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "first_at_or_below" | "first" => Ok(Convention::FirstAtOrBelow),
            "last_above" | "last" => Ok(Convention::LastAbove),
            other => Err(invalid(
                "convention",
                format!("unknown `{other}`, expected last_above or first_at_or_below"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConfig {
    /// Division factor, `> 1`.
    pub k: f64,
    pub convention: Convention,
    /// Report `2n` instead of the full closed form (meant for `k = 4.81`).
    pub shortcut: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            k: 6.0,
            convention: Convention::LastAbove,
            shortcut: false,
        }
    }
}

impl MeasurementConfig {
    pub fn new(k: f64, convention: Convention) -> Result<Self> {
        let c = Self {
            k,
            convention,
            shortcut: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k)
    }

    /// Q for a count under this configuration.
    pub fn q_for_count(&self, n: u64) -> Result<f64> {
        if self.shortcut {
            q_from_count_shortcut(n)
        } else {
            q_from_count(n, self.k)
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k.is_finite() && k > 1.0) {
        return Err(invalid(
            "k",
            format!("division factor must be > 1, got {k}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementResult {
    /// Counted pseudo-periods.
    pub n: u64,
    pub q_measured: f64,
    /// `n·T'0` when the pseudo-period is known.
    pub t_measure: Option<f64>,
    /// Time at which the counter stopped, when a time base exists.
    pub stop_time: Option<f64>,
    /// Signed `(Q_meas − Q)/Q`, when the true Q is known.
    pub relative_error: Option<f64>,
    pub threshold_used: f64,
    pub convention: Convention,
}

impl MeasurementResult {
    /// Single-line `key=value` record.
    pub fn record(&self) -> String {
        let mut s = format!(
            "n={} q={:.6} threshold={:.9} convention={}",
            self.n, self.q_measured, self.threshold_used, self.convention
        );
        if let Some(t) = self.t_measure {
            s.push_str(&format!(" t_measure={t:.9e}"));
        }
        if let Some(e) = self.relative_error {
            s.push_str(&format!(" error={:.4}%", e * 100.0));
        }
        s
    }
}

/// `Q = ½·√(1 + 4π²n²/ln²k)`.
pub fn q_from_count(n: u64, k: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "no pseudo-period counted; Q is undefined"));
    }
    check_k(k)?;
    let x = 2.0 * PI * n as f64 / k.ln();
    Ok(0.5 * (1.0 + x * x).sqrt())
}

/// `Q = 2n`, valid when `k = 4.81`.
pub fn q_from_count_shortcut(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "no pseudo-period counted; Q is undefined"));
    }
    Ok(2.0 * n as f64)
}

/// Index of the first maximum at or below `V0/k`; always `≥ 1`.
pub(crate) fn first_peak_at_or_below(params: &ResonatorParams, k: f64) -> Result<u64> {
    let threshold = params.v0 / k;
    let x = k.ln() / params.log_decrement();
    let mut m = (x.ceil() as u64).max(1);
    // the closed-form guess can land one off when x is within rounding of an integer
    while m > 1 && peak_value(params, m - 1)? <= threshold {
        m -= 1;
    }
    while peak_value(params, m)? > threshold {
        m += 1;
    }
    Ok(m)
}

/// Analytic pseudo-period count for an ideal measurement.
pub fn count_pseudo_periods(params: &ResonatorParams, config: &MeasurementConfig) -> Result<u64> {
    params.validate()?;
    config.validate()?;
    let m = first_peak_at_or_below(params, config.k)?;
    Ok(config.convention.count_from_first_below(m))
}

/// Full ideal measurement of `params`.
pub fn ideal_measurement(
    params: &ResonatorParams,
    config: &MeasurementConfig,
) -> Result<MeasurementResult> {
    let n = count_pseudo_periods(params, config)?;
    let q = config.q_for_count(n)?;
    let period = derive_dynamics(params)?.pseudo_period;
    Ok(MeasurementResult {
        n,
        q_measured: q,
        t_measure: Some(n as f64 * period),
        stop_time: None,
        relative_error: Some((q - params.q) / params.q),
        threshold_used: params.v0 / config.k,
        convention: config.convention,
    })
}

/// Signed relative error of the ideal measurement of a resonator with `q_true`.
pub fn theoretical_error(q_true: f64, config: &MeasurementConfig) -> Result<f64> {
    // neither f0 nor V0 affects the count
    let params = ResonatorParams::new(1.0, q_true, 1.0)?;
    Ok(ideal_measurement(&params, config)?
        .relative_error
        .expect("true Q known"))
}

/// Count quantum at the operating point: `Q(n+1) − Q(n)` relative to `Q(n)`.
pub fn count_quantum(n: u64, k: f64) -> Result<f64> {
    let n = n.max(1);
    let lo = q_from_count(n, k)?;
    Ok((q_from_count(n + 1, k)? - lo) / lo)
}

/// Ideal error over a grid of `k` values (outer) and `Q` values (inner).
pub fn theoretical_error_sweep(
    k_values: &[f64],
    q_range: &QRange,
    convention: Convention,
) -> Result<SweepTable> {
    if k_values.is_empty() {
        return Err(invalid("k_values", "empty list"));
    }
    let qs = q_range.values()?;
    if let Some(q) = qs.iter().find(|q| **q <= 0.5) {
        return Err(invalid("q_range", format!("Q must be > 0.5, got {q}")));
    }
    let mut rows = Vec::with_capacity(k_values.len() * qs.len());
    for &k in k_values {
        let config = MeasurementConfig::new(k, convention)?;
        for &q in &qs {
            let params = ResonatorParams::new(1.0, q, 1.0)?;
            let r = ideal_measurement(&params, &config)?;
            rows.push(SweepRow {
                keys: vec![k, q],
                cell: SweepCell::Ok {
                    n: r.n,
                    q_measured: r.q_measured,
                    rel_error: r.relative_error.unwrap(),
                },
            });
        }
    }
    Ok(SweepTable::new(&["k", "q_true"], rows))
}
