//! Error studies: worst-case and frequency sweeps, division-factor
//! selection and Monte Carlo spreads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::circuit::{
    predicted_with_errors, simulate_measurement, AppliedErrors, CircuitNonIdealities, SignMode,
};
use crate::error::{invalid, QfmError, Result};
use crate::ideal::{Convention, MeasurementConfig};
use crate::resonator::ResonatorParams;
use crate::sweep::{QRange, SweepCell, SweepRow, SweepTable};

/// Which sign corners a worst-case evaluation visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CornerSearch {
    /// The two aligned corners (all sources raising, all lowering the threshold).
    #[default]
    Aligned,
    /// Every sign combination of comparator, divider and opamp errors.
    Exhaustive,
}

impl CornerSearch {
    fn corners(self) -> Vec<[f64; 3]> {
        match self {
            CornerSearch::Aligned => vec![[1.0; 3], [-1.0; 3]],
            CornerSearch::Exhaustive => (0..8)
                .map(|b| {
                    let s = |bit: u32| if b & (1 << bit) == 0 { 1.0 } else { -1.0 };
                    [s(0), s(1), s(2)]
                })
                .collect(),
        }
    }
}

fn corner_label(signs: &[f64; 3]) -> String {
    if signs.iter().all(|s| *s > 0.0) {
        "plus".into()
    } else if signs.iter().all(|s| *s < 0.0) {
        "minus".into()
    } else {
        signs
            .iter()
            .map(|s| if *s > 0.0 { '+' } else { '-' })
            .collect()
    }
}

/// Worst measurement over the selected corners: the cell with the largest
/// `|error|` and the corner that produced it.
pub fn worst_case_cell(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    ni: &CircuitNonIdealities,
    search: CornerSearch,
) -> (SweepCell, String) {
    let mut worst: Option<(SweepCell, String)> = None;
    for signs in search.corners() {
        let errs = ni.corner_signs(signs[0], signs[1], signs[2]);
        let label = corner_label(&signs);
        match predicted_with_errors(params, config, &errs) {
            Ok(r) => {
                let cell = SweepCell::Ok {
                    n: r.n,
                    q_measured: r.q_measured,
                    rel_error: r.relative_error.expect("true Q known"),
                };
                let better = match &worst {
                    None => true,
                    Some((SweepCell::Ok { rel_error, .. }, _)) => {
                        cell.rel_error().unwrap().abs() > rel_error.abs()
                    }
                    Some((SweepCell::Failed(_), _)) => false,
                };
                if better {
                    worst = Some((cell, label));
                }
            }
            // an unmeasurable corner is worse than any finite error
            Err(e) => return (SweepCell::Failed(e.to_string()), label),
        }
    }
    worst.expect("at least one corner")
}

/// Worst-case error over `k_values` (outer) × `q_range` (inner) at `f0`.
pub fn worst_case_sweep(
    k_values: &[f64],
    q_range: &QRange,
    ni: &CircuitNonIdealities,
    f0: f64,
    convention: Convention,
    search: CornerSearch,
) -> Result<SweepTable> {
    if k_values.is_empty() {
        return Err(invalid("k_values", "empty list"));
    }
    ni.validate()?;
    let qs = q_range.values()?;
    let mut rows = Vec::with_capacity(k_values.len() * qs.len());
    let mut tags = Vec::with_capacity(rows.capacity());
    for &k in k_values {
        let config = MeasurementConfig::new(k, convention)?;
        for &q in &qs {
            let params = ResonatorParams::new(f0, q, 1.0)?;
            let (cell, label) = worst_case_cell(&params, &config, ni, search);
            rows.push(SweepRow {
                keys: vec![k, q],
                cell,
            });
            tags.push(label);
        }
    }
    Ok(SweepTable::new(&["k", "q_true"], rows).with_tags("corner", tags))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KChoice {
    pub k: f64,
    /// Largest worst-case `|error|` over the Q range at this `k`.
    pub max_abs_error: f64,
}

/// Grid `k` minimizing the largest worst-case `|error|` over `q_range`.
/// Ties go to the smaller `k`, which gives the shorter measurement.
pub fn optimal_k(
    q_range: &QRange,
    ni: &CircuitNonIdealities,
    k_grid: &[f64],
    f0: f64,
    convention: Convention,
) -> Result<KChoice> {
    if k_grid.is_empty() {
        return Err(invalid("k_grid", "empty grid"));
    }
    let table = worst_case_sweep(k_grid, q_range, ni, f0, convention, CornerSearch::Aligned)?;
    let mut best: Option<KChoice> = None;
    for (label, rows) in table.series() {
        let k = label.expect("two key columns");
        let max_abs_error = rows
            .iter()
            .map(|r| r.cell.rel_error().map_or(f64::INFINITY, f64::abs))
            .fold(0.0, f64::max);
        if best.is_none_or(|b| max_abs_error < b.max_abs_error) {
            best = Some(KChoice { k, max_abs_error });
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Time-domain simulation settings shared by sweep points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub v0: f64,
    pub samples_per_period: u32,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            v0: 1.0,
            samples_per_period: 200,
            seed: 0,
        }
    }
}

/// Simulated measurement error against resonant frequency at the
/// non-idealities' aligned corner.
pub fn frequency_sweep(
    q_true: f64,
    config: &MeasurementConfig,
    f0_values: &[f64],
    ni: &CircuitNonIdealities,
    sim: &SimSettings,
) -> Result<SweepTable> {
    if f0_values.is_empty() {
        return Err(invalid("f0_values", "empty list"));
    }
    if f0_values.iter().any(|f| !(*f > 0.0 && f.is_finite()))
        || f0_values.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(invalid(
            "f0_values",
            "frequencies must be positive and ascending",
        ));
    }
    if ni.sign == SignMode::Independent {
        return Err(invalid("sign", "frequency sweeps run at an aligned corner"));
    }
    ni.validate()?;
    config.validate()?;
    let rows = f0_values
        .iter()
        .map(|&f0| {
            let params = ResonatorParams::new(f0, q_true, sim.v0)?;
            let cell =
                match simulate_measurement(&params, config, ni, sim.samples_per_period, sim.seed) {
                    Ok((r, _)) => SweepCell::Ok {
                        n: r.n,
                        q_measured: r.q_measured,
                        rel_error: r.relative_error.expect("true Q known"),
                    },
                    Err(QfmError::Simulation(msg)) => SweepCell::Failed(msg),
                    Err(e) => return Err(e),
                };
            Ok(SweepRow {
                keys: vec![f0],
                cell,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable::new(&["f0"], rows))
}

/// Distribution of each signed error within its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spread {
    /// Uniform over `[−m, m]`.
    #[default]
    Uniform,
    /// Normal with σ = m/3, clipped to `[−m, m]`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub trials: u64,
    /// Draws whose measurement could not complete.
    pub failures: u64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Signed relative errors binned over `[min, max]`.
    pub histogram: Histogram,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Error statistics with every signed error source drawn independently.
pub fn monte_carlo(
    params: &ResonatorParams,
    config: &MeasurementConfig,
    ni: &CircuitNonIdealities,
    spread: Spread,
    trials: u64,
    seed: u64,
) -> Result<McSummary> {
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    ni.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |m: f64, rng: &mut ChaCha8Rng| -> f64 {
        if m == 0.0 {
            return 0.0;
        }
        match spread {
            Spread::Uniform => m * (2.0 * rng.random::<f64>() - 1.0),
            Spread::Gaussian => Normal::new(0.0, m / 3.0)
                .expect("finite sigma")
                .sample(rng)
                .clamp(-m, m),
        }
    };
    let mut errors = Vec::with_capacity(trials as usize);
    let mut failures = 0;
    for _ in 0..trials {
        let errs = AppliedErrors {
            comparator_offset: draw(ni.comparator_offset, &mut rng),
            divider_error: draw(ni.divider_error, &mut rng),
            opamp_offset: draw(ni.opamp_offset, &mut rng),
            ..ni.corner_signs(1.0, 1.0, 1.0)
        };
        match predicted_with_errors(params, config, &errs) {
            Ok(r) => errors.push(r.relative_error.expect("true Q known")),
            Err(QfmError::Simulation(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if errors.is_empty() {
        return Err(QfmError::Simulation(format!("all {trials} draws failed")));
    }
    let count = errors.len() as f64;
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mean, std) = if min == max {
        (min, 0.0)
    } else {
        let mean = errors.iter().sum::<f64>() / count;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / count;
        (mean, var.sqrt())
    };
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let width = (max - min) / HISTOGRAM_BINS as f64;
    for e in &errors {
        let bin = if width > 0.0 {
            (((e - min) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(McSummary {
        trials,
        failures,
        mean,
        std,
        min,
        max,
        histogram: Histogram {
            lo: min,
            hi: max,
            counts,
        },
    })
}
