//! Waveform ingestion and peak-based measurement of recorded ring-downs.
//!
//! CSV layout: header `t,v`, one `time,volts` row per sample, LF endings.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::circuit::parabolic_vertex;
use crate::error::{invalid, QfmError, Result};
use crate::ideal::{MeasurementConfig, MeasurementResult};
use crate::resonator::{q_for_log_decrement, Waveform};

pub const WAVEFORM_HEADER: &str = "t,v";
pub const PEAKS_HEADER: &str = "m,t,v";

/// Relative tolerance on the time step of an ingested waveform.
pub const UNIFORM_STEP_TOLERANCE: f64 = 1e-6;
/// Allowed deviation of a peak spacing from the median spacing.
pub const SPACING_TOLERANCE: f64 = 0.30;
pub const MIN_FIT_PEAKS: usize = 5;

pub fn write_waveform_csv<W: Write>(w: &Waveform, mut out: W) -> Result<()> {
    out.write_all(waveform_csv(w).as_bytes())?;
    Ok(())
}

pub fn waveform_csv(w: &Waveform) -> String {
    let mut s = String::with_capacity(24 * (w.len() + 1));
    s.push_str(WAVEFORM_HEADER);
    s.push('\n');
    for (i, v) in w.samples.iter().enumerate() {
        writeln!(s, "{},{}", w.time(i), v).unwrap();
    }
    s
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Parses a `t,v` waveform; the sample rate comes from the median step.
pub fn load_waveform<R: Read>(mut source: R) -> Result<Waveform> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| QfmError::Parse {
            line: 0,
            reason: format!("not readable as UTF-8 text: {e}"),
        })?;
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r').trim() == WAVEFORM_HEADER => {}
        Some((_, h)) if h.trim().is_empty() && text.trim().is_empty() => {
            return Err(QfmError::EmptyWaveform)
        }
        Some((_, h)) => {
            return Err(QfmError::Parse {
                line: 1,
                reason: format!("expected header `{WAVEFORM_HEADER}`, found `{}`", h.trim()),
            })
        }
        None => return Err(QfmError::EmptyWaveform),
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let bad = |reason: String| QfmError::Parse {
            line: lineno,
            reason,
        };
        let mut fields = line.split(',');
        let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(format!("expected two fields `t,v`, found `{line}`")));
        };
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad time `{}`", t.trim())))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad voltage `{}`", v.trim())))?;
        if !t.is_finite() || !v.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        times.push((lineno, t));
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(QfmError::EmptyWaveform);
    }
    if samples.len() < 3 {
        return Err(QfmError::TooShort {
            rows: samples.len(),
            needed: 3,
        });
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let med = median(&mut steps.clone());
    if !(med > 0.0) {
        return Err(QfmError::NonUniformSampling {
            line: times[1].0,
            step: med,
            median: med,
        });
    }
    for (i, step) in steps.drain(..).enumerate() {
        if (step - med).abs() > UNIFORM_STEP_TOLERANCE * med {
            return Err(QfmError::NonUniformSampling {
                line: times[i + 1].0,
                step,
                median: med,
            });
        }
    }
    Ok(Waveform {
        sample_rate: 1.0 / med,
        start_time: times[0].1,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time: f64,
    pub value: f64,
}

/// Positive-lobe maxima in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
    /// Set when some spacing strays more than 30 % from the median.
    pub spacing_warning: Option<String>,
}

impl PeakList {
    pub fn new(peaks: Vec<Peak>) -> Self {
        let spacing_warning = spacing_warning(&peaks);
        Self {
            peaks,
            spacing_warning,
        }
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn median_spacing(&self) -> Option<f64> {
        let mut s: Vec<f64> = self
            .peaks
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .collect();
        (!s.is_empty()).then(|| median(&mut s))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(PEAKS_HEADER);
        s.push('\n');
        for (m, p) in self.peaks.iter().enumerate() {
            writeln!(s, "{m},{},{}", p.time, p.value).unwrap();
        }
        s
    }
}

fn spacing_warning(peaks: &[Peak]) -> Option<String> {
    let mut spacings: Vec<f64> = peaks.windows(2).map(|w| w[1].time - w[0].time).collect();
    if spacings.is_empty() {
        return None;
    }
    let med = median(&mut spacings.clone());
    let outliers = spacings
        .drain(..)
        .filter(|s| (s - med).abs() > SPACING_TOLERANCE * med)
        .count();
    (outliers > 0).then(|| {
        format!("{outliers} peak spacing(s) deviate more than 30% from the median {med:.6e} s")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeakOptions {
    /// Fall below a candidate required before it is accepted (V).
    pub hysteresis: f64,
    /// Candidates below this level are ignored (V); 0 disables the floor.
    pub amplitude_floor: f64,
}

impl PeakOptions {
    pub fn with_hysteresis(hysteresis: f64) -> Self {
        Self {
            hysteresis,
            ..Self::default()
        }
    }
}

/// Least-squares parabola `c + b·x + a·x²` through `y[x]`, x = 0, 1, ...
/// Returns `(vertex, value at vertex)` for a downward parabola.
fn quadratic_vertex(y: &[f64]) -> Option<(f64, f64)> {
    let mut sx = [0.0f64; 5];
    let mut sy = [0.0f64; 3];
    for (i, v) in y.iter().enumerate() {
        let x = i as f64;
        let mut p = 1.0;
        for (j, acc) in sx.iter_mut().enumerate() {
            *acc += p;
            if j < 3 {
                sy[j] += p * v;
            }
            p *= x;
        }
    }
    // normal equations solved by Cramer's rule
    let m = [
        [sx[0], sx[1], sx[2]],
        [sx[1], sx[2], sx[3]],
        [sx[2], sx[3], sx[4]],
    ];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 {
        return None;
    }
    let solve = |col: usize| {
        let mut r = m;
        for (row, v) in r.iter_mut().zip(sy) {
            row[col] = v;
        }
        det(&r) / d
    };
    let (c, b, a) = (solve(0), solve(1), solve(2));
    if !(a < 0.0) {
        return None;
    }
    let x = -b / (2.0 * a);
    Some((x, c + b * x + a * x * x))
}

/// Index where extraction starts, and whether sample 0 is itself a maximum.
///
/// The launch test uses the first three samples. When that fails and the
/// caller allows for noise (`noisy`), a least-squares parabola over the first
/// quarter of the leading lobe is tried instead.
fn leading_trim(s: &[f64], noisy: bool) -> (usize, Option<Peak>) {
    if s[0] < s[1] {
        return (0, None);
    }
    // parabola through the first three samples, vertex in samples from s[0]
    let a = 0.5 * (s[0] - 2.0 * s[1] + s[2]);
    if s[0] > 0.0 && a < 0.0 {
        let b = s[1] - s[0] - a;
        let x = -b / (2.0 * a);
        if x.abs() <= 0.5 {
            return (
                0,
                Some(Peak {
                    time: x,
                    value: s[0] + b * x + a * x * x,
                }),
            );
        }
    }
    let lobe_end = s.iter().position(|v| *v <= 0.0).unwrap_or(s.len());
    if noisy && lobe_end >= 12 {
        if let Some((x, value)) = quadratic_vertex(&s[..lobe_end / 4]) {
            if x.abs() <= 0.5 {
                return (0, Some(Peak { time: x, value }));
            }
        }
    }
    // partial leading lobe: skip to the first rising zero crossing
    let start = s
        .windows(2)
        .position(|w| w[0] < 0.0 && w[1] >= 0.0)
        .map_or(s.len(), |p| p + 1);
    (start, None)
}

/// Finds the maxima of the positive lobes, at most one per lobe.
///
/// A candidate (a sample above its left neighbour and not below its right
/// one) is accepted once the signal has fallen `hysteresis` below it; a lobe
/// that returns to zero first is discarded as noise. Accepted maxima are
/// refined by three-point parabolic interpolation.
pub fn extract_peaks(w: &Waveform, opts: &PeakOptions) -> Result<PeakList> {
    if !(opts.hysteresis >= 0.0) {
        return Err(invalid(
            "hysteresis",
            format!("must be >= 0 V, got {}", opts.hysteresis),
        ));
    }
    let s = &w.samples;
    if s.len() < 3 {
        return Err(QfmError::TooFewPeaks {
            found: 0,
            needed: 2,
        });
    }
    let dt = w.dt();
    let mut peaks = Vec::new();
    let (start, launch) = leading_trim(s, opts.hysteresis > 0.0);
    let mut lobe_open = true;
    if let Some(p) = launch {
        if p.value >= opts.amplitude_floor {
            peaks.push(Peak {
                time: w.start_time + p.time * dt,
                value: p.value,
            });
            lobe_open = false;
        }
    }
    let mut pending: Option<usize> = None;
    let last = s.len() - 1;
    for i in start.max(1)..last {
        let v = s[i];
        if let Some(p) = pending {
            if v <= s[p] - opts.hysteresis && i > p {
                let (offset, value) = parabolic_vertex(s[p - 1], s[p], s[p + 1]);
                peaks.push(Peak {
                    time: w.time(p) + offset * dt,
                    value,
                });
                pending = None;
                lobe_open = false;
            }
        }
        if v <= 0.0 {
            pending = None;
            lobe_open = true;
            continue;
        }
        let candidate = v > s[i - 1] && v >= s[i + 1] && v >= opts.amplitude_floor;
        if candidate && lobe_open && pending.is_none_or(|p| v > s[p]) {
            pending = Some(i);
        }
    }
    if peaks.len() < 2 {
        return Err(QfmError::TooFewPeaks {
            found: peaks.len(),
            needed: 2,
        });
    }
    Ok(PeakList::new(peaks))
}

/// Least-squares slope of `ln(value)` against peak index.
fn log_slope(peaks: &[Peak]) -> Result<f64> {
    if let Some(p) = peaks.iter().find(|p| !(p.value > 0.0)) {
        return Err(QfmError::DegenerateFit(format!(
            "non-positive peak {} V at t = {} s",
            p.value, p.time
        )));
    }
    let n = peaks.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = peaks.iter().map(|p| p.value.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (m, p) in peaks.iter().enumerate() {
        let dx = m as f64 - mean_x;
        sxy += dx * (p.value.ln() - mean_y);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(QfmError::DegenerateFit(
            "zero variance in peak index".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Q from the logarithmic decrement of the peak sequence, inverting
/// `δ = 2π/√(4Q² − 1)` exactly.
pub fn fit_q_log_decrement(peaks: &PeakList) -> Result<f64> {
    if peaks.len() < MIN_FIT_PEAKS {
        return Err(QfmError::TooFewPeaks {
            found: peaks.len(),
            needed: MIN_FIT_PEAKS,
        });
    }
    let delta = -log_slope(&peaks.peaks)?;
    if !(delta > 0.0) {
        return Err(QfmError::DegenerateFit(format!(
            "peaks do not decay (log decrement {delta:e})"
        )));
    }
    Ok(q_for_log_decrement(delta))
}

/// Counting measurement on extracted maxima, the first taken as `V0`.
pub fn measure_q_counting(
    peaks: &PeakList,
    config: &MeasurementConfig,
) -> Result<MeasurementResult> {
    config.validate()?;
    if peaks.len() < 2 {
        return Err(QfmError::TooFewPeaks {
            found: peaks.len(),
            needed: 2,
        });
    }
    let v0 = peaks.peaks[0].value;
    if !(v0 > 0.0) {
        return Err(invalid(
            "peaks",
            format!("first peak must be > 0 V, got {v0}"),
        ));
    }
    let threshold = v0 / config.k;
    let spacing = peaks.median_spacing().expect("at least two peaks");
    let Some(first_below) = peaks
        .peaks
        .iter()
        .skip(1)
        .position(|p| p.value <= threshold)
    else {
        let delta = log_slope(&peaks.peaks).map(|s| -s).unwrap_or(0.0);
        let missing_duration = if delta > 0.0 {
            let needed = config.k.ln() / delta;
            ((needed - (peaks.len() - 1) as f64).max(0.0)) * spacing
        } else {
            f64::INFINITY
        };
        return Err(QfmError::InsufficientRecord {
            threshold,
            missing_duration,
        });
    };
    let first_below = first_below as u64 + 1;
    let n = config.convention.count_from_first_below(first_below);
    let q = config.q_for_count(n)?;
    Ok(MeasurementResult {
        n,
        q_measured: q,
        t_measure: Some(n as f64 * spacing),
        stop_time: Some(peaks.peaks[first_below as usize].time),
        relative_error: None,
        threshold_used: threshold,
        convention: config.convention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ideal::Convention;
    use crate::resonator::{derive_dynamics, peak_value, synth_waveform, ResonatorParams};

    fn synth(q: f64, duration: f64, noise: f64, seed: u64) -> (ResonatorParams, Waveform) {
        let p = ResonatorParams::new(50e3, q, 1.0).unwrap();
        (p, synth_waveform(&p, 5e6, duration, noise, seed).unwrap())
    }

    fn peaks_of(values: &[f64]) -> PeakList {
        PeakList::new(
            values
                .iter()
                .enumerate()
                .map(|(m, v)| Peak {
                    time: m as f64 * 1e-5,
                    value: *v,
                })
                .collect(),
        )
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let (_, w) = synth(300.0, 1e-3, 1e-4, 3);
        let back = load_waveform(waveform_csv(&w).as_bytes()).unwrap();
        assert_eq!(back.samples.len(), w.samples.len());
        assert!(back
            .samples
            .iter()
            .zip(&w.samples)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!((back.sample_rate - w.sample_rate).abs() / w.sample_rate < 1e-9);
    }

    #[test]
    fn first_row_is_zero_one() {
        let (_, w) = synth(300.0, 1e-4, 0.0, 0);
        let csv = waveform_csv(&w);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,1");
    }

    #[test]
    fn load_errors() {
        assert_eq!(
            load_waveform("t,v\n".as_bytes()),
            Err(QfmError::EmptyWaveform)
        );
        assert_eq!(load_waveform("".as_bytes()), Err(QfmError::EmptyWaveform));
        assert!(matches!(
            load_waveform("t,v\n0,1\n1e-6,0.9\n".as_bytes()),
            Err(QfmError::TooShort { .. })
        ));
        assert!(matches!(
            load_waveform("t,v\n0,1\n2e-6,0.5\n1e-6,0.9\n3e-6,0.2\n".as_bytes()),
            Err(QfmError::NonUniformSampling { .. })
        ));
        match load_waveform("t,v\n0,1\n1e-6,abc\n".as_bytes()) {
            Err(QfmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_waveform("time,volts\n0,1\n".as_bytes()),
            Err(QfmError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn clean_peaks_match_closed_form() {
        let (p, w) = synth(300.0, 5e-3, 0.0, 0);
        let list = extract_peaks(&w, &PeakOptions::default()).unwrap();
        let dt = 1.0 / 5e6;
        let period = derive_dynamics(&p).unwrap().pseudo_period;
        assert_eq!(list.len(), (5e-3 / period).ceil() as usize);
        for (m, peak) in list.peaks.iter().enumerate() {
            assert!((peak.time - m as f64 * period).abs() <= 0.5 * dt);
            assert!((peak.value - peak_value(&p, m as u64).unwrap()).abs() <= 1e-4);
        }
        assert!(list.spacing_warning.is_none());
    }

    #[test]
    fn hysteresis_is_harmless_on_clean_data() {
        let (_, w) = synth(300.0, 2e-3, 0.0, 0);
        let a = extract_peaks(&w, &PeakOptions::default()).unwrap();
        let b = extract_peaks(&w, &PeakOptions::with_hysteresis(1e-2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leading_partial_lobe_is_trimmed() {
        let (_, w) = synth(300.0, 1e-3, 0.0, 0);
        // start a quarter period in, on the falling slope
        let cut = Waveform {
            sample_rate: w.sample_rate,
            start_time: w.time(25),
            samples: w.samples[25..].to_vec(),
        };
        let full = extract_peaks(&w, &PeakOptions::default()).unwrap();
        let trimmed = extract_peaks(&cut, &PeakOptions::default()).unwrap();
        assert_eq!(trimmed.len(), full.len() - 1);
        for (a, b) in trimmed.peaks.iter().zip(&full.peaks[1..]) {
            assert_eq!(a.value, b.value);
            assert!((a.time - b.time).abs() < 1e-15);
        }
    }

    #[test]
    fn noisy_launch_is_kept_and_partial_lobe_still_trimmed() {
        let (_, clean) = synth(300.0, 1e-3, 0.0, 0);
        let full = extract_peaks(&clean, &PeakOptions::default()).unwrap();
        let opts = PeakOptions::with_hysteresis(1e-2);
        for seed in 0..8 {
            let (_, w) = synth(300.0, 1e-3, 1e-3, seed);
            let peaks = extract_peaks(&w, &opts).unwrap();
            assert!(peaks.peaks[0].time.abs() < 1e-7, "seed {seed}");
            assert_eq!(peaks.len(), full.len());
            for skip in [3, 25] {
                let cut = Waveform {
                    sample_rate: w.sample_rate,
                    start_time: w.time(skip),
                    samples: w.samples[skip..].to_vec(),
                };
                let trimmed = extract_peaks(&cut, &opts).unwrap();
                assert_eq!(trimmed.len(), full.len() - 1, "seed {seed} skip {skip}");
            }
        }
    }

    #[test]
    fn never_more_peaks_than_positive_lobes() {
        let (_, w) = synth(50.0, 2e-3, 0.01, 1);
        let list = extract_peaks(&w, &PeakOptions::with_hysteresis(0.05)).unwrap();
        let half_cycles = (w.duration() * 50e3 * 2.0).ceil() as usize;
        assert!(list.len() <= half_cycles);
    }

    #[test]
    fn counting_on_clean_record() {
        let (_, w) = synth(300.0, 5e-3, 0.0, 0);
        let list = extract_peaks(&w, &PeakOptions::default()).unwrap();
        let r = measure_q_counting(&list, &MeasurementConfig::default()).unwrap();
        assert_eq!(r.n, 171);
        assert!((r.q_measured - 299.8).abs() < 0.1);
    }

    #[test]
    fn immediate_crossing() {
        let c = MeasurementConfig::new(4.0, Convention::FirstAtOrBelow).unwrap();
        let r = measure_q_counting(&peaks_of(&[1.0, 0.25]), &c).unwrap();
        assert_eq!(r.n, 1);
    }

    #[test]
    fn truncated_record_reports_missing_time() {
        let (_, w) = synth(300.0, 2e-3, 0.0, 0);
        let list = extract_peaks(&w, &PeakOptions::default()).unwrap();
        match measure_q_counting(&list, &MeasurementConfig::default()) {
            Err(QfmError::InsufficientRecord {
                missing_duration, ..
            }) => {
                // 172 maxima needed, ~100 present
                let expect = (171.1 - (list.len() - 1) as f64) * 2e-5;
                assert!(
                    (missing_duration - expect).abs() < 2e-5,
                    "{missing_duration}"
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_recovers_q() {
        for q in [2.0, 300.0] {
            let p = ResonatorParams::new(50e3, q, 1.0).unwrap();
            let list = peaks_of(
                &(0..40)
                    .map(|m| peak_value(&p, m).unwrap())
                    .collect::<Vec<_>>(),
            );
            let fit = fit_q_log_decrement(&list).unwrap();
            assert!((fit - q).abs() / q < 1e-3, "{fit}");
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_q_log_decrement(&peaks_of(&[1.0; 8])),
            Err(QfmError::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_q_log_decrement(&peaks_of(&[1.0, 0.5, 0.25])),
            Err(QfmError::TooFewPeaks { .. })
        ));
        assert!(matches!(
            fit_q_log_decrement(&peaks_of(&[1.0, 0.5, 0.0, 0.1, 0.05])),
            Err(QfmError::DegenerateFit(_))
        ));
    }

    #[test]
    fn spacing_outliers_flagged() {
        let mut list = peaks_of(&[1.0, 0.9, 0.8, 0.7, 0.6]);
        list.peaks[4].time += 0.5e-5;
        let list = PeakList::new(list.peaks);
        assert!(list.spacing_warning.is_some());
    }
}
