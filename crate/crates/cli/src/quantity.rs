//! Numbers with optional SI prefix and unit: `50kHz`, `10mV`, `1%`, `40V/s`.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Plain number; `%` is accepted.
    Ratio,
    Hertz,
    Volt,
    VoltPerSecond,
    Second,
}

impl Unit {
    fn symbol(self) -> &'static str {
        match self {
            Unit::Ratio => "",
            Unit::Hertz => "Hz",
            Unit::Volt => "V",
            Unit::VoltPerSecond => "V/s",
            Unit::Second => "s",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Ratio => f.write_str("dimensionless"),
            u => f.write_str(u.symbol()),
        }
    }
}

fn prefix_scale(p: &str) -> Option<f64> {
    Some(match p {
        "" => 1.0,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" | "µ" => 1e-6,
        "m" => 1e-3,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        _ => return None,
    })
}

/// Parses `text` as a quantity in `unit`. The unit may be omitted, with or
/// without a prefix; a written unit must match.
pub fn parse_quantity(text: &str, unit: Unit) -> Result<f64, String> {
    let t = text.trim();
    // longest leading slice that parses as a float
    let split = t
        .char_indices()
        .map(|(i, c)| i + c.len_utf8())
        .rev()
        .find(|&i| t[..i].parse::<f64>().is_ok())
        .ok_or_else(|| format!("'{text}' is not a number"))?;
    let value: f64 = t[..split].parse().expect("checked above");
    let suffix = t[split..].trim();
    if suffix.is_empty() {
        return Ok(value);
    }
    if suffix == "%" {
        return match unit {
            Unit::Ratio => Ok(value * 0.01),
            _ => Err(format!(
                "'{text}': percent is only valid for dimensionless values"
            )),
        };
    }
    let prefix = match unit {
        Unit::Ratio => Some(suffix),
        u => Some(suffix.strip_suffix(u.symbol()).unwrap_or(suffix)),
    };
    match prefix.and_then(prefix_scale) {
        Some(scale) => Ok(value * scale),
        None => Err(format!("'{text}': expected a value in {unit}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_quantity("50kHz", Unit::Hertz), Ok(50e3));
        assert_eq!(parse_quantity("1 MHz", Unit::Hertz), Ok(1e6));
        assert_eq!(parse_quantity("10mV", Unit::Volt), Ok(10e-3));
        assert_eq!(parse_quantity("40V/s", Unit::VoltPerSecond), Ok(40.0));
        assert_eq!(parse_quantity("5ms", Unit::Second), Ok(5e-3));
        assert_eq!(parse_quantity("1%", Unit::Ratio), Ok(0.01));
        assert_eq!(parse_quantity("1e-3", Unit::Volt), Ok(1e-3));
        assert_eq!(parse_quantity("2.5k", Unit::Hertz), Ok(2.5e3));
        assert_eq!(parse_quantity("inf", Unit::Hertz), Ok(f64::INFINITY));
    }

    #[test]
    fn rejects_wrong_units() {
        assert!(parse_quantity("10mV", Unit::Hertz).is_err());
        assert!(parse_quantity("5%", Unit::Volt).is_err());
        assert!(parse_quantity("abc", Unit::Ratio).is_err());
        assert!(parse_quantity("3 apples", Unit::Ratio).is_err());
    }
}
