//! `qfm`: quality-factor measurement by pseudo-period counting.

mod config;
mod quantity;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfm_core::analysis::SimSettings;
use qfm_core::chart::svg_line_chart;
use qfm_core::{
    extract_peaks, fit_q_log_decrement, frequency_sweep, load_waveform, measure_q_counting,
    optimal_k, simulate_measurement, synth_waveform, theoretical_error_sweep, worst_case_sweep,
    CircuitNonIdealities, CornerSearch, Grid, PeakOptions, QRange, QfmError, SweepTable,
};

use config::{RunConfig, Span, DEFAULT_DURATION, DEFAULT_RATE, DEFAULT_SPP};

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_INSUFFICIENT: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "qfm",
    version,
    about = "Measure resonator quality factors by counting ring-down pseudo-periods",
    after_help = "Values accept SI prefixes and units (50kHz, 10mV, 40V/s, 5ms, 1%).\n\
                  Exit codes: 0 ok, 2 config/parse error, 3 simulation or measurement failure, \
                  4 I/O error, 5 insufficient record."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one measurement through the analog front end
    Simulate,
    /// Write a sweep table (CSV) and optionally an SVG chart
    Sweep {
        #[arg(value_enum)]
        mode: SweepMode,
    },
    /// Measure Q from a recorded waveform CSV with columns t,v
    Measure { input: PathBuf },
    /// Write a synthetic ring-down waveform CSV
    Synth,
    /// Print the merged configuration in config-file syntax
    DumpConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepMode {
    /// Ideal quantization error over Q and k
    Theoretical,
    /// Worst-case error over the aligned corners, plus the best k
    Worstcase,
    /// Simulated error against resonant frequency
    Frequency,
}

#[derive(Debug, Args)]
struct Opts {
    /// Resonant frequency (Hz): value, lo:hi:step, lo:hi:log or lo:hi:logN (N points per decade, default 10)
    #[arg(long, global = true, value_name = "HZ")]
    f0: Option<String>,
    /// Quality factor: value or lo:hi:step
    #[arg(long, global = true)]
    q: Option<String>,
    /// Initial amplitude (V)
    #[arg(long, global = true, value_name = "V")]
    v0: Option<String>,
    /// Division factor (> 1); comma-separated list for sweeps
    #[arg(long, global = true)]
    k: Option<String>,
    /// Stop convention: last_above or first_at_or_below
    #[arg(long, global = true)]
    convention: Option<String>,
    /// Report Q = 2n instead of the closed form
    #[arg(long, global = true)]
    shortcut: bool,
    /// Comparator offset magnitude (V)
    #[arg(long, global = true, value_name = "V")]
    offset: Option<String>,
    /// Divider relative error magnitude (ratio or %)
    #[arg(long, global = true)]
    dk: Option<String>,
    /// Peak-detector op-amp offset magnitude (V)
    #[arg(long, global = true, value_name = "V")]
    opamp_offset: Option<String>,
    /// Held-peak leakage droop (V/s)
    #[arg(long, global = true, value_name = "V/S")]
    leak: Option<String>,
    /// Uncancelled diode threshold at and above --ffail (V)
    #[arg(long, global = true, value_name = "V")]
    diode: Option<String>,
    /// Peak-detector bandwidth (Hz), `inf` for none
    #[arg(long, global = true, value_name = "HZ")]
    fbw: Option<String>,
    /// Frequency where diode cancellation has fully failed (Hz)
    #[arg(long, global = true, value_name = "HZ")]
    ffail: Option<String>,
    /// Additive Gaussian noise, RMS (V)
    #[arg(long, global = true, value_name = "V")]
    noise: Option<String>,
    /// Error sign corner: plus, minus or independent
    #[arg(long, global = true)]
    sign: Option<String>,
    /// Simulation samples per pseudo-period
    #[arg(long, global = true)]
    spp: Option<String>,
    /// Random seed
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Synthesized record length (s)
    #[arg(long, global = true, value_name = "S")]
    duration: Option<String>,
    /// Synthesized sample rate (Hz)
    #[arg(long, global = true, value_name = "HZ")]
    rate: Option<String>,
    /// Peak-extraction hysteresis (V)
    #[arg(long, global = true, value_name = "V")]
    hysteresis: Option<String>,
    /// Output file (tables, waveforms, dumps); stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// SVG chart path for sweeps
    #[arg(long, global = true)]
    svg: Option<PathBuf>,
    /// Per-cycle trace CSV path for simulate
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Configuration file (key = value)
    #[arg(long, global = true, env = "QFM_CONFIG")]
    config: Option<PathBuf>,
}

impl Opts {
    fn flag_config(&self) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        let pairs = [
            ("f0", &self.f0),
            ("q", &self.q),
            ("v0", &self.v0),
            ("k", &self.k),
            ("convention", &self.convention),
            ("offset", &self.offset),
            ("dk", &self.dk),
            ("opamp_offset", &self.opamp_offset),
            ("leak", &self.leak),
            ("diode", &self.diode),
            ("fbw", &self.fbw),
            ("ffail", &self.ffail),
            ("noise", &self.noise),
            ("sign", &self.sign),
            ("spp", &self.spp),
            ("seed", &self.seed),
            ("duration", &self.duration),
            ("rate", &self.rate),
            ("hysteresis", &self.hysteresis),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, v).map_err(|e| {
                    let detail = e.strip_prefix(key).unwrap_or(&e);
                    format!("--{}{detail}", key.replace('_', "-"))
                })?;
            }
        }
        if self.shortcut {
            cfg.shortcut = Some(true);
        }
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] QfmError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Config(s)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                QfmError::InvalidParameter { .. }
                | QfmError::Parse { .. }
                | QfmError::NonUniformSampling { .. }
                | QfmError::EmptyWaveform
                | QfmError::TooShort { .. } => EXIT_CONFIG,
                QfmError::Simulation(_)
                | QfmError::TooFewPeaks { .. }
                | QfmError::DegenerateFit(_) => EXIT_SIMULATION,
                QfmError::InsufficientRecord { .. } => EXIT_INSUFFICIENT,
                QfmError::Io(_) => EXIT_IO,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn load_config(opts: &Opts) -> CliResult<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse_file(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.overlay(opts.flag_config()?);
    Ok(cfg)
}

fn simulate(cfg: &RunConfig, opts: &Opts) -> CliResult<()> {
    let params = cfg.resonator()?;
    let config = cfg.measurement()?;
    let ni = cfg.non_idealities(CircuitNonIdealities::ideal())?;
    let spp = cfg.spp.unwrap_or(DEFAULT_SPP);
    let (result, trace) = simulate_measurement(&params, &config, &ni, spp, cfg.seed.unwrap_or(0))?;
    if let Some(path) = &opts.trace {
        std::fs::write(path, trace.to_csv()).map_err(io_err(path))?;
    }
    println!("{}", result.record());
    Ok(())
}

fn write_table(table: &SweepTable, title: &str, opts: &Opts) -> CliResult<()> {
    emit(opts.out.as_deref(), &table.to_csv())?;
    if let Some(path) = &opts.svg {
        std::fs::write(path, svg_line_chart(table, title)).map_err(io_err(path))?;
    }
    Ok(())
}

/// Summary record; only printed when the table itself went to a file.
fn summary(opts: &Opts, table: &SweepTable, extra: &str) {
    let failed = table
        .rows
        .iter()
        .filter(|r| r.cell.rel_error().is_none())
        .count();
    let max = table
        .max_abs_error()
        .map_or("nan".to_string(), |e| format!("{:.6}", e * 100.0));
    let line = format!(
        "rows={} failed={failed} max_abs_error={max}%{extra}",
        table.rows.len()
    );
    if opts.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn sweep(mode: SweepMode, cfg: &RunConfig, opts: &Opts) -> CliResult<()> {
    let sweep_ks = || {
        cfg.k
            .clone()
            .unwrap_or_else(|| vec![2.0, 4.0, 6.0, 8.0, 16.0])
    };
    let convention = cfg.convention.unwrap_or_default();
    match mode {
        SweepMode::Theoretical => {
            let range = cfg.q_range(QRange::new(10.0, 1000.0, 1.0)?)?;
            let table = theoretical_error_sweep(&sweep_ks(), &range, convention)?;
            write_table(&table, "Theoretical measurement error", opts)?;
            summary(opts, &table, "");
        }
        SweepMode::Worstcase => {
            let range = cfg.q_range(QRange::new(100.0, 1000.0, 1.0)?)?;
            let ni = cfg.non_idealities(CircuitNonIdealities::calibrated())?;
            let f0 = cfg.single_f0()?;
            let table = worst_case_sweep(
                &sweep_ks(),
                &range,
                &ni,
                f0,
                convention,
                CornerSearch::Aligned,
            )?;
            write_table(
                &table,
                "Worst-case error with combined non-idealities",
                opts,
            )?;
            let grid: Vec<f64> = (0..=72).map(|i| 2.0 + 0.25 * i as f64).collect();
            let best = optimal_k(&range, &ni, &grid, f0, convention)?;
            summary(
                opts,
                &table,
                &format!(
                    " optimal_k={} optimal_max_abs_error={:.6}%",
                    best.k,
                    best.max_abs_error * 100.0
                ),
            );
        }
        SweepMode::Frequency => {
            let f0s = match cfg.f0 {
                Some(span) => span.values(),
                None => Span::Range(Grid::Log {
                    min: 100.0,
                    max: 4e6,
                    per_decade: 10,
                })
                .values(),
            };
            let ni = cfg.non_idealities(CircuitNonIdealities::calibrated())?;
            let settings = SimSettings {
                v0: cfg.v0.unwrap_or(1.0),
                samples_per_period: cfg.spp.unwrap_or(DEFAULT_SPP),
                seed: cfg.seed.unwrap_or(0),
            };
            let table =
                frequency_sweep(cfg.single_q()?, &cfg.measurement()?, &f0s, &ni, &settings)?;
            write_table(&table, "Measurement error against resonant frequency", opts)?;
            summary(opts, &table, "");
        }
    }
    Ok(())
}

fn measure(input: &Path, cfg: &RunConfig) -> CliResult<()> {
    let file = File::open(input).map_err(io_err(input))?;
    let waveform = load_waveform(io::BufReader::new(file))?;
    let opts = PeakOptions::with_hysteresis(cfg.hysteresis.unwrap_or(0.0));
    let peaks = extract_peaks(&waveform, &opts)?;
    if let Some(w) = &peaks.spacing_warning {
        eprintln!("warning: {w}");
    }
    let config = cfg.measurement()?;
    let counted = measure_q_counting(&peaks, &config)?;
    let fit = fit_q_log_decrement(&peaks)?;
    println!(
        "{} q_fit={fit:.6} disagreement={:.4}% peaks={}",
        counted.record(),
        (counted.q_measured - fit).abs() / fit * 100.0,
        peaks.len()
    );
    Ok(())
}

fn synth(cfg: &RunConfig, opts: &Opts) -> CliResult<()> {
    let w = synth_waveform(
        &cfg.resonator()?,
        cfg.rate.unwrap_or(DEFAULT_RATE),
        cfg.duration.unwrap_or(DEFAULT_DURATION),
        cfg.noise.unwrap_or(0.0),
        cfg.seed.unwrap_or(0),
    )?;
    let write = |out: &mut dyn Write| qfm_core::write_waveform_csv(&w, out);
    match &opts.out {
        Some(path) => {
            let mut file = BufWriter::new(File::create(path).map_err(io_err(path))?);
            write(&mut file)?;
            file.flush().map_err(io_err(path))?;
        }
        None => write(&mut io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(&cli.opts)?;
    match &cli.command {
        Command::Simulate => simulate(&cfg, &cli.opts),
        Command::Sweep { mode } => sweep(*mode, &cfg, &cli.opts),
        Command::Measure { input } => measure(input, &cfg),
        Command::Synth => synth(&cfg, &cli.opts),
        Command::DumpConfig => emit(cli.opts.out.as_deref(), &cfg.dump()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qfm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
