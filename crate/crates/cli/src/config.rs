//! Run configuration: `key = value` files, flag overrides and dumping.
//!
//! Every field is optional so that a dumped configuration reloads to the
//! same value; commands fill the gaps with their own defaults.

use std::fmt;

use qfm_core::{
    CircuitNonIdealities, Convention, Grid, MeasurementConfig, QRange, ResonatorParams, SignMode,
};

use crate::quantity::{parse_quantity, Unit};

/// Every recognised key, in dump order.
pub const KEYS: &[&str] = &[
    "f0",
    "q",
    "v0",
    "k",
    "convention",
    "shortcut",
    "offset",
    "dk",
    "opamp_offset",
    "leak",
    "diode",
    "fbw",
    "ffail",
    "noise",
    "sign",
    "spp",
    "seed",
    "duration",
    "rate",
    "hysteresis",
];

/// A single value or a sweep range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Span {
    Single(f64),
    Range(Grid),
}

impl Span {
    /// `v`, `lo:hi:step`, `lo:hi:log` (10 per decade) or `lo:hi:logN`.
    fn parse(text: &str, unit: Unit, allow_log: bool) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [v] => Ok(Span::Single(parse_quantity(v, unit)?)),
            [lo, hi, step] => {
                let (lo, hi) = (parse_quantity(lo, unit)?, parse_quantity(hi, unit)?);
                if let Some(n) = step.strip_prefix("log") {
                    if !allow_log {
                        return Err(format!(
                            "'{text}': logarithmic ranges are not supported here"
                        ));
                    }
                    let per_decade = if n.is_empty() {
                        10
                    } else {
                        n.parse::<u32>()
                            .map_err(|_| format!("'{text}': bad points per decade '{n}'"))?
                    };
                    let grid = Grid::Log {
                        min: lo,
                        max: hi,
                        per_decade,
                    };
                    grid.values().map_err(|e| e.to_string())?;
                    Ok(Span::Range(grid))
                } else {
                    let r = QRange::new(lo, hi, parse_quantity(step, unit)?)
                        .map_err(|e| e.to_string())?;
                    Ok(Span::Range(Grid::Linear(r)))
                }
            }
            _ => Err(format!("'{text}': expected a value or lo:hi:step")),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Span::Single(v) => vec![*v],
            Span::Range(g) => g.values().expect("validated when parsed"),
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Span::Single(v) => write!(f, "{v}"),
            Span::Range(Grid::Linear(r)) => write!(f, "{}:{}:{}", r.min, r.max, r.step),
            Span::Range(Grid::Log {
                min,
                max,
                per_decade,
            }) => write!(f, "{min}:{max}:log{per_decade}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub f0: Option<Span>,
    pub q: Option<Span>,
    pub v0: Option<f64>,
    pub k: Option<Vec<f64>>,
    pub convention: Option<Convention>,
    pub shortcut: Option<bool>,
    pub offset: Option<f64>,
    pub dk: Option<f64>,
    pub opamp_offset: Option<f64>,
    pub leak: Option<f64>,
    pub diode: Option<f64>,
    pub fbw: Option<f64>,
    pub ffail: Option<f64>,
    pub noise: Option<f64>,
    pub sign: Option<SignMode>,
    pub spp: Option<u32>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub rate: Option<f64>,
    pub hysteresis: Option<f64>,
}

pub const DEFAULT_F0: f64 = 50e3;
pub const DEFAULT_Q: f64 = 300.0;
pub const DEFAULT_K: f64 = 6.0;
pub const DEFAULT_SPP: u32 = 200;
pub const DEFAULT_DURATION: f64 = 5e-3;
pub const DEFAULT_RATE: f64 = 5e6;

fn parse_bool(text: &str) -> Result<bool, String> {
    match text.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean")),
    }
}

fn parse_int<T: std::str::FromStr>(text: &str) -> Result<T, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("'{}' is not a non-negative integer", text.trim()))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let qty = |unit| parse_quantity(value, unit);
        let err = |e: String| format!("{key}: {e}");
        match key {
            "f0" => self.f0 = Some(Span::parse(value, Unit::Hertz, true).map_err(err)?),
            "q" => self.q = Some(Span::parse(value, Unit::Ratio, false).map_err(err)?),
            "v0" => self.v0 = Some(qty(Unit::Volt).map_err(err)?),
            "k" => {
                let ks = value
                    .split(',')
                    .map(|v| parse_quantity(v, Unit::Ratio))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                self.k = Some(ks);
            }
            "convention" => {
                self.convention = Some(value.trim().parse().map_err(|e| err(format!("{e}")))?)
            }
            "shortcut" => self.shortcut = Some(parse_bool(value).map_err(err)?),
            "offset" => self.offset = Some(qty(Unit::Volt).map_err(err)?),
            "dk" => self.dk = Some(qty(Unit::Ratio).map_err(err)?),
            "opamp_offset" => self.opamp_offset = Some(qty(Unit::Volt).map_err(err)?),
            "leak" => self.leak = Some(qty(Unit::VoltPerSecond).map_err(err)?),
            "diode" => self.diode = Some(qty(Unit::Volt).map_err(err)?),
            "fbw" => self.fbw = Some(qty(Unit::Hertz).map_err(err)?),
            "ffail" => self.ffail = Some(qty(Unit::Hertz).map_err(err)?),
            "noise" => self.noise = Some(qty(Unit::Volt).map_err(err)?),
            "sign" => self.sign = Some(value.trim().parse().map_err(|e| err(format!("{e}")))?),
            "spp" => self.spp = Some(parse_int(value).map_err(err)?),
            "seed" => self.seed = Some(parse_int(value).map_err(err)?),
            "duration" => self.duration = Some(qty(Unit::Second).map_err(err)?),
            "rate" => self.rate = Some(qty(Unit::Hertz).map_err(err)?),
            "hysteresis" => self.hysteresis = Some(qty(Unit::Volt).map_err(err)?),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Parses a configuration file. Errors carry 1-based line numbers.
    pub fn parse_file(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", i + 1))?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(cfg)
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let num = |v: Option<f64>| v.map(|v| v.to_string());
        match key {
            "f0" => self.f0.map(|s| s.to_string()),
            "q" => self.q.map(|s| s.to_string()),
            "v0" => num(self.v0),
            "k" => self
                .k
                .as_ref()
                .map(|ks| ks.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
            "convention" => self.convention.map(|c| c.to_string()),
            "shortcut" => self.shortcut.map(|b| b.to_string()),
            "offset" => num(self.offset),
            "dk" => num(self.dk),
            "opamp_offset" => num(self.opamp_offset),
            "leak" => num(self.leak),
            "diode" => num(self.diode),
            "fbw" => num(self.fbw),
            "ffail" => num(self.ffail),
            "noise" => num(self.noise),
            "sign" => self.sign.map(|s| s.to_string()),
            "spp" => self.spp.map(|v| v.to_string()),
            "seed" => self.seed.map(|v| v.to_string()),
            "duration" => num(self.duration),
            "rate" => num(self.rate),
            "hysteresis" => num(self.hysteresis),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// File text that reloads to `self`. Unset keys appear commented out.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            match self.value_of(key) {
                Some(v) => out.push_str(&format!("{key} = {v}\n")),
                None => out.push_str(&format!("# {key} = (command default)\n")),
            }
        }
        out
    }

    /// Keys set in `other` replace those in `self`.
    pub fn overlay(&mut self, other: RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            f0,
            q,
            v0,
            k,
            convention,
            shortcut,
            offset,
            dk,
            opamp_offset,
            leak,
            diode,
            fbw,
            ffail,
            noise,
            sign,
            spp,
            seed,
            duration,
            rate,
            hysteresis
        );
    }

    pub fn single_f0(&self) -> Result<f64, String> {
        match self.f0 {
            None => Ok(DEFAULT_F0),
            Some(Span::Single(v)) => Ok(v),
            Some(Span::Range(_)) => Err("f0: a single frequency is required here".into()),
        }
    }

    pub fn single_q(&self) -> Result<f64, String> {
        match self.q {
            None => Ok(DEFAULT_Q),
            Some(Span::Single(v)) => Ok(v),
            Some(Span::Range(_)) => Err("q: a single quality factor is required here".into()),
        }
    }

    pub fn single_k(&self) -> Result<f64, String> {
        match self.k.as_deref() {
            None => Ok(DEFAULT_K),
            Some([k]) => Ok(*k),
            Some(_) => Err("k: a single division factor is required here".into()),
        }
    }

    /// Q values for a sweep; a single value becomes a one-point range.
    pub fn q_range(&self, default: QRange) -> Result<QRange, String> {
        match self.q {
            None => Ok(default),
            Some(Span::Single(v)) => QRange::new(v, v, 1.0).map_err(|e| e.to_string()),
            Some(Span::Range(Grid::Linear(r))) => Ok(r),
            Some(Span::Range(_)) => Err("q: logarithmic Q ranges are not supported".into()),
        }
    }

    pub fn resonator(&self) -> Result<ResonatorParams, String> {
        ResonatorParams::new(self.single_f0()?, self.single_q()?, self.v0.unwrap_or(1.0))
            .map_err(|e| e.to_string())
    }

    pub fn measurement_with_k(&self, k: f64) -> Result<MeasurementConfig, String> {
        let mut c = MeasurementConfig::new(k, self.convention.unwrap_or_default())
            .map_err(|e| e.to_string())?;
        c.shortcut = self.shortcut.unwrap_or(false);
        Ok(c)
    }

    pub fn measurement(&self) -> Result<MeasurementConfig, String> {
        self.measurement_with_k(self.single_k()?)
    }

    /// Front-end errors, starting from `base` for every unset field.
    pub fn non_idealities(
        &self,
        base: CircuitNonIdealities,
    ) -> Result<CircuitNonIdealities, String> {
        let ni = CircuitNonIdealities {
            comparator_offset: self.offset.unwrap_or(base.comparator_offset),
            divider_error: self.dk.unwrap_or(base.divider_error),
            opamp_offset: self.opamp_offset.unwrap_or(base.opamp_offset),
            leak_droop: self.leak.unwrap_or(base.leak_droop),
            diode_residual: self.diode.unwrap_or(base.diode_residual),
            diode_fail_freq: self.ffail.unwrap_or(base.diode_fail_freq),
            detector_bandwidth: self.fbw.unwrap_or(base.detector_bandwidth),
            noise_rms: self.noise.unwrap_or(base.noise_rms),
            sign: self.sign.unwrap_or(base.sign),
        };
        ni.validate().map_err(|e| e.to_string())?;
        Ok(ni)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans() {
        assert_eq!(
            Span::parse("50kHz", Unit::Hertz, true),
            Ok(Span::Single(50e3))
        );
        let Span::Range(g) = Span::parse("1e2:2e6:log", Unit::Hertz, true).unwrap() else {
            panic!()
        };
        assert_eq!(
            g,
            Grid::Log {
                min: 100.0,
                max: 2e6,
                per_decade: 10
            }
        );
        assert_eq!(
            Span::parse("10:1000:1", Unit::Ratio, false)
                .unwrap()
                .values()
                .len(),
            991
        );
        assert!(Span::parse("1:2:log", Unit::Ratio, false).is_err());
        assert!(Span::parse("5:1:1", Unit::Ratio, false).is_err());
        assert!(Span::parse("1:2", Unit::Ratio, false).is_err());
    }

    #[test]
    fn file_errors_name_the_line() {
        let e = RunConfig::parse_file("f0 = 50kHz\n\nbogus = 1\n").unwrap_err();
        assert!(e.starts_with("line 3:"), "{e}");
        let e = RunConfig::parse_file("k 6\n").unwrap_err();
        assert!(e.starts_with("line 1:"), "{e}");
        let e = RunConfig::parse_file("f0 = 10mV\n").unwrap_err();
        assert!(e.contains("Hz"), "{e}");
    }

    #[test]
    fn dump_round_trips() {
        let text = "f0 = 1e2:4e6:log5\nq = 10:1000:0.5\nk = 2,4.81,6\nconvention = first_at_or_below\n\
                    shortcut = yes\noffset = 10mV\ndk = 1%\nleak = 60V/s\nfbw = inf\nsign = independent\n\
                    spp = 150\nseed = 9\nduration = 3ms\nhysteresis = 0.1mV # trailing comment\n";
        let cfg = RunConfig::parse_file(text).unwrap();
        let again = RunConfig::parse_file(&cfg.dump()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(
            RunConfig::parse_file(&RunConfig::default().dump()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn overlay_prefers_the_top_layer() {
        let mut base = RunConfig::parse_file("f0 = 20kHz\nq = 100\n").unwrap();
        base.overlay(RunConfig::parse_file("q = 300\n").unwrap());
        assert_eq!(base.f0, Some(Span::Single(20e3)));
        assert_eq!(base.q, Some(Span::Single(300.0)));
    }

    #[test]
    fn defaults_describe_the_reference_scenario() {
        let cfg = RunConfig::default();
        let p = cfg.resonator().unwrap();
        assert_eq!((p.f0, p.q, p.v0), (50e3, 300.0, 1.0));
        assert_eq!(cfg.measurement().unwrap().k, 6.0);
        assert_eq!(
            cfg.non_idealities(CircuitNonIdealities::ideal()).unwrap(),
            CircuitNonIdealities::ideal()
        );
    }
}
