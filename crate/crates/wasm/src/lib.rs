//! Browser bindings: a simulated ring-down with its count, and two error
//! curves (quantization error against Q, simulated error against f0).

use qfm_core::analysis::SimSettings;
use qfm_core::{
    frequency_sweep, simulate_measurement, synth_waveform, theoretical_error_sweep,
    CircuitNonIdealities, Convention, Grid, MeasurementConfig, QRange, ResonatorParams, SignMode,
    SweepTable,
};
use wasm_bindgen::prelude::*;

/// Waveform samples kept per pseudo-period for display.
const DISPLAY_SPP: f64 = 32.0;
/// Upper bound on displayed waveform samples.
const MAX_DISPLAY_SAMPLES: f64 = 40_000.0;

fn msg<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sign(plus: bool) -> SignMode {
    if plus {
        SignMode::Plus
    } else {
        SignMode::Minus
    }
}

/// Front-end errors as exposed by the page controls.
fn front_end(offset: f64, dk: f64, leak: f64, plus: bool) -> CircuitNonIdealities {
    CircuitNonIdealities {
        comparator_offset: offset,
        divider_error: dk,
        leak_droop: leak,
        sign: sign(plus),
        ..CircuitNonIdealities::ideal()
    }
}

#[wasm_bindgen]
#[derive(Debug)]
pub struct Ringdown {
    times: Vec<f64>,
    values: Vec<f64>,
    peak_times: Vec<f64>,
    captured: Vec<f64>,
    counted: Vec<f64>,
    threshold: f64,
    n: u32,
    q_measured: f64,
    error: f64,
}

#[wasm_bindgen]
impl Ringdown {
    /// Display samples: time (s).
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Time of each simulated cycle's maximum.
    #[wasm_bindgen(getter)]
    pub fn peak_times(&self) -> Vec<f64> {
        self.peak_times.clone()
    }

    /// Held peak value per cycle as seen by the comparator.
    #[wasm_bindgen(getter)]
    pub fn captured(&self) -> Vec<f64> {
        self.captured.clone()
    }

    /// 1 while counting was enabled at that peak, 0 after the stop.
    #[wasm_bindgen(getter)]
    pub fn counted(&self) -> Vec<f64> {
        self.counted.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[wasm_bindgen(getter)]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[wasm_bindgen(getter)]
    pub fn q_measured(&self) -> f64 {
        self.q_measured
    }

    /// Signed relative error of the measured Q.
    #[wasm_bindgen(getter)]
    pub fn error(&self) -> f64 {
        self.error
    }
}

/// Simulates one measurement and returns the waveform with the per-cycle
/// held peaks and the stop threshold.
#[wasm_bindgen]
pub fn ringdown(
    f0: f64,
    q: f64,
    k: f64,
    offset: f64,
    dk: f64,
    leak: f64,
    plus: bool,
) -> Result<Ringdown, String> {
    let params = ResonatorParams::new(f0, q, 1.0).map_err(msg)?;
    let config = MeasurementConfig::new(k, Convention::LastAbove).map_err(msg)?;
    let ni = front_end(offset, dk, leak, plus);
    let (result, trace) = simulate_measurement(&params, &config, &ni, 100, 0).map_err(msg)?;
    let last = trace.cycles.last().map_or(0.0, |c| c.peak_time);
    let period = 1.0 / f0;
    let duration = last + 2.0 * period;
    let rate = (DISPLAY_SPP * f0)
        .min(MAX_DISPLAY_SAMPLES / duration)
        .max(20.0 * f0);
    let wave = synth_waveform(&params, rate, duration, 0.0, 0).map_err(msg)?;
    let times = (0..wave.len()).map(|i| wave.time(i)).collect();
    Ok(Ringdown {
        times,
        values: wave.samples,
        peak_times: trace.cycles.iter().map(|c| c.peak_time).collect(),
        captured: trace.cycles.iter().map(|c| c.captured_peak).collect(),
        counted: trace
            .cycles
            .iter()
            .map(|c| f64::from(u8::from(c.count_enable)))
            .collect(),
        threshold: trace.threshold,
        n: result.n as u32,
        q_measured: result.q_measured,
        error: result.relative_error.unwrap_or(f64::NAN),
    })
}

/// Points of a single error curve; failed points are NaN.
#[wasm_bindgen]
#[derive(Debug)]
pub struct Curve {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    /// Signed relative error.
    #[wasm_bindgen(getter)]
    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }
}

impl From<SweepTable> for Curve {
    fn from(t: SweepTable) -> Self {
        let key = t.key_columns.len() - 1;
        Curve {
            x: t.rows.iter().map(|r| r.keys[key]).collect(),
            y: t.rows
                .iter()
                .map(|r| r.cell.rel_error().unwrap_or(f64::NAN))
                .collect(),
        }
    }
}

/// Ideal counting error against Q for one division factor.
#[wasm_bindgen]
pub fn theoretical_curve(
    k: f64,
    q_min: f64,
    q_max: f64,
    last_above: bool,
) -> Result<Curve, String> {
    let convention = if last_above {
        Convention::LastAbove
    } else {
        Convention::FirstAtOrBelow
    };
    let step = ((q_max - q_min) / 2000.0).max(0.25);
    let range = QRange::new(q_min, q_max, step).map_err(msg)?;
    Ok(theoretical_error_sweep(&[k], &range, convention)
        .map_err(msg)?
        .into())
}

/// Simulated error against resonant frequency, 100 Hz to 4 MHz, with the
/// calibrated detector (bandwidth, diode residual, op-amp offset).
#[wasm_bindgen]
pub fn frequency_curve(
    q: f64,
    k: f64,
    offset: f64,
    dk: f64,
    leak: f64,
    plus: bool,
) -> Result<Curve, String> {
    let ni = CircuitNonIdealities {
        comparator_offset: offset,
        divider_error: dk,
        leak_droop: leak,
        sign: sign(plus),
        ..CircuitNonIdealities::calibrated()
    };
    let f0s = Grid::Log {
        min: 100.0,
        max: 4e6,
        per_decade: 10,
    }
    .values()
    .map_err(msg)?;
    let config = MeasurementConfig::new(k, Convention::LastAbove).map_err(msg)?;
    let settings = SimSettings {
        samples_per_period: 100,
        ..SimSettings::default()
    };
    Ok(frequency_sweep(q, &config, &f0s, &ni, &settings)
        .map_err(msg)?
        .into())
}
