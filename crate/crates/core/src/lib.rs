//! Fixed Voltage Interval quality-factor measurement for MEMS resonators.
//!
//! A resonator released at a maximum rings down; counting the pseudo-periods
//! until its maxima fall from `V0` to `V0/k` yields `Q`. This crate provides
//! the ring-down model ([`resonator`]), the ideal counting measurement
//! ([`ideal`]), a behavioral model of the analog front end ([`circuit`]),
//! error studies ([`analysis`]), waveform ingestion ([`waveform`]) and SVG
//! rendering of sweep tables ([`chart`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod chart;
pub mod circuit;
pub mod error;
pub mod ideal;
pub mod resonator;
pub mod sweep;
pub mod waveform;

pub use analysis::{
    frequency_sweep, monte_carlo, optimal_k, worst_case_sweep, CornerSearch, KChoice, McSummary,
    SimSettings, Spread,
};
pub use circuit::{
    capture_model, effective_threshold, predicted_measurement, predicted_with_errors,
    simulate_measurement, AppliedErrors, CircuitNonIdealities, CycleRecord, SignMode, SimTrace,
};
pub use error::{QfmError, Result};
pub use ideal::{
    count_pseudo_periods, ideal_measurement, q_from_count, q_from_count_shortcut,
    theoretical_error, theoretical_error_sweep, Convention, MeasurementConfig, MeasurementResult,
    SHORTCUT_K,
};
pub use resonator::{
    derive_dynamics, eval_response, peak_time, peak_value, synth_waveform, DerivedDynamics,
    ResonatorParams, Waveform,
};
pub use sweep::{Grid, QRange, SweepCell, SweepRow, SweepTable};
pub use waveform::{
    extract_peaks, fit_q_log_decrement, load_waveform, measure_q_counting, write_waveform_csv,
    Peak, PeakList, PeakOptions,
};
