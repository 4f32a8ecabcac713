//! Behavioral model of the measurement front end.
//!
//! Signal chain, one clock cycle per pseudo-period:
//!
//! 1. a zero-crossing comparator turns the ring-down into a clock;
//! 2. a peak detector holds each cycle's maximum and is reset on every
//!    rising clock edge;
//! 3. the cycle-0 capture is divided by `k` to form the stop threshold;
//! 4. a threshold comparator enables the counter while the held peak is
//!    above that threshold.
//!
//! Non-idealities enter in two places: [`capture_model`] (detector tracking,
//! uncancelled diode drop, capacitor droop, opamp offset) and
//! [`effective_threshold`] (divider ratio error, comparator offset).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, QfmError, Result};
use crate::ideal::{MeasurementConfig, MeasurementResult};
use crate::resonator::{derive_dynamics, peak_value, rising_crossing_fraction, ResonatorParams};

/// Minimum simulation rate, in samples per resonant period.
pub const MIN_SIM_SAMPLES_PER_PERIOD: u32 = 20;

/// Sign assignment of the offset-like error sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMode {
    /// All sources raise the stop threshold relative to the captured peaks:
    /// the count stops early and Q reads low.
    Plus,
    /// All sources lower it: the count runs long and Q reads high.
    #[default]
    Minus,
    /// Each source gets an independent random sign.
    Independent,
}

impl SignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SignMode::Plus => "plus",
            SignMode::Minus => "minus",
            SignMode::Independent => "independent",
        }
    }

    fn factor(self) -> Option<f64> {
        match self {
            SignMode::Plus => Some(1.0),
            SignMode::Minus => Some(-1.0),
            SignMode::Independent => None,
        }
    }
}

impl std::fmt::Display for SignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SignMode {
    type Err = QfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plus" | "+" => Ok(SignMode::Plus),
            "minus" | "-" => Ok(SignMode::Minus),
            "independent" => Ok(SignMode::Independent),
            other => Err(invalid(
                "sign",
                format!("unknown `{other}`, expected plus, minus or independent"),
            )),
        }
    }
}

/// Magnitudes of the front-end error sources.
///
/// `comparator_offset`, `divider_error` and `opamp_offset` are magnitudes
/// whose signs come from `sign`; the remaining terms are physical and
/// always degrade the held peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitNonIdealities {
    /// Threshold comparator offset (V).
    pub comparator_offset: f64,
    /// Fractional error on the division factor.
    pub divider_error: f64,
    /// Lumped peak-detector and divider-driver opamp offset (V).
    pub opamp_offset: f64,
    /// Hold-capacitor droop rate (V/s).
    pub leak_droop: f64,
    /// Uncancelled diode drop reached at `diode_fail_freq` (V).
    pub diode_residual: f64,
    /// Frequency at which diode cancellation has fully failed (Hz).
    pub diode_fail_freq: f64,
    /// First-order tracking bandwidth of the peak detector (Hz).
    pub detector_bandwidth: f64,
    /// Additive white noise on the input (V rms).
    pub noise_rms: f64,
    pub sign: SignMode,
}

impl Default for CircuitNonIdealities {
    fn default() -> Self {
        Self::ideal()
    }
}

impl CircuitNonIdealities {
    pub const NOMINAL_COMPARATOR_OFFSET: f64 = 10e-3;
    pub const NOMINAL_DIVIDER_ERROR: f64 = 0.01;

    pub fn ideal() -> Self {
        Self {
            comparator_offset: 0.0,
            divider_error: 0.0,
            opamp_offset: 0.0,
            leak_droop: 0.0,
            diode_residual: 0.0,
            diode_fail_freq: 1e6,
            detector_bandwidth: f64::INFINITY,
            noise_rms: 0.0,
            sign: SignMode::Plus,
        }
    }

    /// Only the 1 % divider error and 10 mV comparator offset, aligned.
    pub fn pessimistic(sign: SignMode) -> Self {
        Self {
            comparator_offset: Self::NOMINAL_COMPARATOR_OFFSET,
            divider_error: Self::NOMINAL_DIVIDER_ERROR,
            sign,
            ..Self::ideal()
        }
    }

    /// Full calibrated front end used for frequency studies.
    ///
    /// Leakage is sized so that, for V0 = 1 V and k = 6, it dominates below
    /// about 2 kHz and cancels the offsets a little above; the diode residual
    /// and detector roll-off take over past 1 MHz.
    pub fn calibrated() -> Self {
        Self {
            comparator_offset: Self::NOMINAL_COMPARATOR_OFFSET,
            divider_error: Self::NOMINAL_DIVIDER_ERROR,
            opamp_offset: 1e-3,
            leak_droop: 60.0,
            diode_residual: 5e-3,
            diode_fail_freq: 1e6,
            detector_bandwidth: 1e6,
            noise_rms: 0.0,
            sign: SignMode::Minus,
        }
    }

    pub fn with_sign(mut self, sign: SignMode) -> Self {
        self.sign = sign;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("comparator_offset", self.comparator_offset),
            ("divider_error", self.divider_error),
            ("opamp_offset", self.opamp_offset),
            ("leak_droop", self.leak_droop),
            ("diode_residual", self.diode_residual),
            ("noise_rms", self.noise_rms),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    name,
                    format!("must be a finite magnitude >= 0, got {v}"),
                ));
            }
        }
        if self.divider_error >= 1.0 {
            return Err(invalid(
                "divider_error",
                format!("must be < 1, got {}", self.divider_error),
            ));
        }
        if !(self.detector_bandwidth > 0.0) {
            return Err(invalid(
                "detector_bandwidth",
                format!("must be > 0 Hz, got {}", self.detector_bandwidth),
            ));
        }
        if !(self.diode_fail_freq.is_finite() && self.diode_fail_freq > 0.0) {
            return Err(invalid(
                "diode_fail_freq",
                format!("must be > 0 Hz, got {}", self.diode_fail_freq),
            ));
        }
        Ok(())
    }

    fn applied(&self, comparator: f64, divider: f64, opamp: f64) -> AppliedErrors {
        AppliedErrors {
            comparator_offset: comparator * self.comparator_offset,
            divider_error: divider * self.divider_error,
            opamp_offset: opamp * self.opamp_offset,
            leak_droop: self.leak_droop,
            diode_residual: self.diode_residual,
            diode_fail_freq: self.diode_fail_freq,
            detector_bandwidth: self.detector_bandwidth,
        }
    }

    /// Signed errors for one of the aligned corners.
    ///
    /// For a sign `s` the threshold is `V0/(k(1 − s·δk)) + s·offset` and the
    /// held peaks carry `−s·opamp_offset`, so every source moves the stop
    /// point the same way.
    pub fn corner(&self) -> Result<AppliedErrors> {
        let s = self.sign.factor().ok_or_else(|| {
            invalid(
                "sign",
                "a closed-form corner needs plus or minus, not independent",
            )
        })?;
        Ok(self.corner_signs(s, s, s))
    }

    /// Signed errors with an explicit "raises the threshold" sign per
    /// source (comparator, divider, opamp), each `±1`.
    pub fn corner_signs(&self, comparator: f64, divider: f64, opamp: f64) -> AppliedErrors {
        self.applied(comparator, -divider, -opamp)
    }

    /// Resolves signs, drawing random ones in [`SignMode::Independent`].
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> AppliedErrors {
        match self.sign.factor() {
            Some(s) => self.corner_signs(s, s, s),
            None => {
                let mut draw = || if rng.random::<bool>() { 1.0 } else { -1.0 };
                let (a, b, c) = (draw(), draw(), draw());
                self.corner_signs(a, b, c)
            }
        }
    }
}

/// Front-end errors with signs applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedErrors {
    /// Signed comparator offset added to the threshold (V).
    pub comparator_offset: f64,
    /// Signed fractional divider error: the divider realizes `k·(1 + δk)`.
    pub divider_error: f64,
    /// Signed offset added to every held peak (V).
    pub opamp_offset: f64,
    pub leak_droop: f64,
    pub diode_residual: f64,
    pub diode_fail_freq: f64,
    pub detector_bandwidth: f64,
}

impl AppliedErrors {
    pub fn ideal() -> Self {
        CircuitNonIdealities::ideal().applied(0.0, 0.0, 0.0)
    }
}

/// Voltage held by the peak detector at the end of a cycle.
///
/// `true_peak·G(f0) − residual·min(1, f0/f_fail) − droop·hold + offset`,
/// floored at zero, with `G(f0) = 1/√(1 + (f0/f_bw)²)`.
pub fn capture_model(true_peak: f64, f0: f64, errs: &AppliedErrors, hold_interval: f64) -> f64 {
    let tracking = 1.0 / (1.0 + (f0 / errs.detector_bandwidth).powi(2)).sqrt();
    let diode = errs.diode_residual * (f0 / errs.diode_fail_freq).min(1.0);
    let held = true_peak * tracking - diode - errs.leak_droop * hold_interval + errs.opamp_offset;
    held.max(0.0)
}

/// Stop threshold `V0c/(k·(1 + δk)) + offset` for a captured initial peak.
pub fn effective_threshold(v0_captured: f64, k: f64, errs: &AppliedErrors) -> Result<f64> {
    if !(v0_captured > 0.0) {
        return Err(invalid(
            "v0_captured",
            format!("captured initial peak must be > 0 V, got {v0_captured}"),
        ));
    }
    if !(k.is_finite() && k > 1.0) {
        return Err(invalid(
            "k",
            format!("division factor must be > 1, got {k}"),
        ));
    }
    Ok(v0_captured / (k * (1.0 + errs.divider_error)) + errs.comparator_offset)
}

/// One pseudo-period as seen by the front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub cycle: u64,
    pub peak_time: f64,
    /// Input maximum over the cycle.
    pub true_peak: f64,
    /// Value held at the end of the cycle.
    pub captured_peak: f64,
    pub threshold: f64,
    pub count_enable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub cycles: Vec<CycleRecord>,
    pub v0_captured: f64,
    pub threshold: f64,
    /// Rising clock edges, interpolated zero crossings (s).
    pub clock_edges: Vec<f64>,
    pub errors: AppliedErrors,
}

impl SimTrace {
    pub const CSV_HEADER: &'static str =
        "cycle,peak_time,true_peak,captured_peak,threshold,count_enable";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cycles {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.cycle,
                c.peak_time,
                c.true_peak,
                c.captured_peak,
                c.threshold,
                u8::from(c.count_enable)
            ));
        }
        out
    }

    /// Spacing between consecutive rising clock edges.
    pub fn clock_periods(&self) -> Vec<f64> {
        self.clock_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Closed-form counterpart of [`simulate_measurement`] for a fixed corner.
pub fn predicted_measurement(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    ni: &CircuitNonIdealities,
) -> Result<MeasurementResult> {
    ni.validate()?;
    predicted_with_errors(params, config, &ni.corner()?)
}

/// [`predicted_measurement`] with explicitly signed errors.
pub fn predicted_with_errors(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    errs: &AppliedErrors,
) -> Result<MeasurementResult> {
    params.validate()?;
    config.validate()?;
    let period = derive_dynamics(params)?.pseudo_period;
    let frac = rising_crossing_fraction(params.q);
    let hold = frac * period;
    let held = |p: f64| capture_model(p, params.f0, errs, hold);

    let v0c = held(params.v0);
    if v0c <= 0.0 {
        return Err(QfmError::Simulation(format!(
            "initial peak captured as {v0c} V; the detector loses the whole signal"
        )));
    }
    let threshold = effective_threshold(v0c, config.k, errs)?;
    if held(0.0) > threshold {
        return Err(QfmError::Simulation(format!(
            "held peaks never fall below the {threshold:.6} V threshold"
        )));
    }
    let below = |m: u64| -> Result<bool> { Ok(held(peak_value(params, m)?) <= threshold) };

    // held peaks are non-increasing in m: bracket, then bisect
    let mut hi = 1u64;
    while !below(hi)? {
        hi = hi
            .checked_mul(2)
            .filter(|h| *h < 1 << 50)
            .ok_or_else(|| QfmError::Simulation("threshold never reached".into()))?;
    }
    let mut lo = hi / 2; // below(lo) is false, or lo == 0
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let first_below = hi.max(1);
    finish(
        params,
        config,
        first_below,
        threshold,
        period,
        (first_below as f64 + frac) * period,
    )
}

fn finish(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    first_below: u64,
    threshold: f64,
    period: f64,
    stop_time: f64,
) -> Result<MeasurementResult> {
    let n = config.convention.count_from_first_below(first_below);
    if n == 0 {
        return Err(QfmError::Simulation(
            "threshold crossed on the first pseudo-period; nothing counted".into(),
        ));
    }
    let q = config.q_for_count(n)?;
    Ok(MeasurementResult {
        n,
        q_measured: q,
        t_measure: Some(n as f64 * period),
        stop_time: Some(stop_time),
        relative_error: Some((q - params.q) / params.q),
        threshold_used: threshold,
        convention: config.convention,
    })
}

/// Vertex of the parabola through three equally spaced samples, as
/// (offset in samples from the middle one, value).
pub(crate) fn parabolic_vertex(left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return (0.0, mid);
    }
    let offset = 0.5 * (left - right) / denom;
    if offset.abs() > 1.0 {
        return (0.0, mid);
    }
    (offset, mid - 0.25 * (left - right) * offset)
}

struct CycleMax {
    value: f64,
    index: usize,
    left: f64,
    right: Option<f64>,
}

/// Fixed-step run of the front end on a synthesized ring-down.
///
/// The clock comparator has hysteresis `4·noise_rms`. Each cycle's peak is the
/// sample maximum refined by three-point parabolic interpolation.
pub fn simulate_measurement(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    ni: &CircuitNonIdealities,
    samples_per_period: u32,
    seed: u64,
) -> Result<(MeasurementResult, SimTrace)> {
    params.validate()?;
    config.validate()?;
    ni.validate()?;
    if samples_per_period < MIN_SIM_SAMPLES_PER_PERIOD {
        return Err(invalid(
            "samples_per_period",
            format!("must be >= {MIN_SIM_SAMPLES_PER_PERIOD}, got {samples_per_period}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errs = ni.resolve(&mut rng);
    let noise = (ni.noise_rms > 0.0)
        .then(|| Normal::new(0.0, ni.noise_rms).expect("finite non-negative sigma"));
    let hysteresis = 4.0 * ni.noise_rms;

    let dyn_ = derive_dynamics(params)?;
    let c = 1.0 / (4.0 * params.q * params.q - 1.0).sqrt();
    let dt = 1.0 / (samples_per_period as f64 * params.f0);
    let mut input = |i: usize| -> f64 {
        let t = i as f64 * dt;
        let (s, co) = (dyn_.omega_d * t).sin_cos();
        let v = params.v0 * (-dyn_.alpha * t).exp() * (co + c * s);
        match &noise {
            Some(n) => v + n.sample(&mut rng),
            None => v,
        }
    };

    // generous bound on the number of cycles a sane configuration needs
    let expected = (config.k.ln() / params.log_decrement()).ceil() as u64;
    let max_cycles = expected.saturating_mul(8).saturating_add(1000);
    let max_gap = 4 * samples_per_period as usize;

    let mut cycles: Vec<CycleRecord> = Vec::new();
    let mut edges: Vec<f64> = Vec::new();
    let mut v0c = f64::NAN;
    let mut threshold = f64::NAN;

    let mut prev = input(0);
    let mut cur_max = CycleMax {
        value: prev,
        index: 0,
        left: f64::NAN, // mirrored from the right neighbour: the launch is a maximum
        right: None,
    };
    let mut armed = prev < -hysteresis;
    let mut last_up_crossing = f64::NAN;
    let mut last_edge_index = 0usize;
    let mut i = 0usize;
    loop {
        i += 1;
        let v = input(i);
        if cur_max.right.is_none() && cur_max.index + 1 == i {
            cur_max.right = Some(v);
        }
        if prev < 0.0 && v >= 0.0 {
            last_up_crossing = (i - 1) as f64 * dt + dt * (-prev) / (v - prev);
        }
        if v < -hysteresis {
            armed = true;
        }
        let edge = armed && v >= hysteresis && v >= 0.0;
        if edge {
            armed = false;
            last_edge_index = i;
            let t_edge = if last_up_crossing.is_nan() {
                i as f64 * dt
            } else {
                last_up_crossing
            };
            edges.push(t_edge);

            let right = cur_max.right.unwrap_or(cur_max.value);
            let left = if cur_max.left.is_nan() {
                right
            } else {
                cur_max.left
            };
            let (offset, value) = parabolic_vertex(left, cur_max.value, right);
            let peak_time = (cur_max.index as f64 + offset) * dt;
            let cycle = cycles.len() as u64;
            let captured = capture_model(value, params.f0, &errs, t_edge - peak_time);
            if cycle == 0 {
                v0c = captured;
                if v0c <= 0.0 {
                    return Err(QfmError::Simulation(format!(
                        "initial peak captured as {v0c} V; the detector loses the whole signal"
                    )));
                }
                threshold = effective_threshold(v0c, config.k, &errs)?;
                if threshold < 0.0 {
                    return Err(QfmError::Simulation(format!(
                        "stop threshold {threshold:.6} V is negative and can never be reached"
                    )));
                }
            }
            let count_enable = cycle == 0 || captured > threshold;
            cycles.push(CycleRecord {
                cycle,
                peak_time,
                true_peak: value,
                captured_peak: captured,
                threshold,
                count_enable,
            });
            if !count_enable {
                let trace = SimTrace {
                    cycles,
                    v0_captured: v0c,
                    threshold,
                    clock_edges: edges,
                    errors: errs,
                };
                let periods = trace.clock_periods();
                let period = if periods.is_empty() {
                    dyn_.pseudo_period
                } else {
                    periods.iter().sum::<f64>() / periods.len() as f64
                };
                let result = finish(params, config, cycle, threshold, period, t_edge)?;
                return Ok((result, trace));
            }
            if cycle >= max_cycles {
                return Err(QfmError::Simulation(format!(
                    "no threshold crossing after {cycle} cycles"
                )));
            }
            cur_max = CycleMax {
                value: v,
                index: i,
                left: prev,
                right: None,
            };
        } else if v > cur_max.value {
            cur_max = CycleMax {
                value: v,
                index: i,
                left: prev,
                right: None,
            };
        }
        if i - last_edge_index > max_gap {
            return Err(QfmError::Simulation(format!(
                "clock lost after {} cycles: the input decayed below the comparator \
                 hysteresis ({hysteresis:.3e} V) before the threshold was crossed",
                cycles.len()
            )));
        }
        prev = v;
    }
}
