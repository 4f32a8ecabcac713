//! Sweep grids and the tabular result they produce.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{invalid, Result};

/// Linear grid `min, min+step, …, max` (inclusive within half a step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl QRange {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let r = Self { min, max, step };
        r.values()?;
        Ok(r)
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max < self.min {
            return Err(invalid(
                "range",
                format!("empty range {}:{}", self.min, self.max),
            ));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(invalid(
                "range",
                format!("step must be > 0, got {}", self.step),
            ));
        }
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| self.min + i as f64 * self.step)
            .collect())
    }
}

/// Grid of positive, ascending values, linear or logarithmic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    Linear(QRange),
    /// `per_decade` points per decade from `min` to `max`, both included.
    Log {
        min: f64,
        max: f64,
        per_decade: u32,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Grid::Linear(r) => r.values(),
            Grid::Log {
                min,
                max,
                per_decade,
            } => {
                if !(min > 0.0 && max >= min && max.is_finite()) || per_decade == 0 {
                    return Err(invalid(
                        "range",
                        format!("log range needs 0 < min <= max, got {min}:{max}"),
                    ));
                }
                let decades = (max / min).log10();
                let steps = (decades * per_decade as f64 - 1e-9).ceil().max(0.0) as usize;
                if steps == 0 {
                    return Ok(vec![min]);
                }
                Ok((0..=steps)
                    .map(|i| {
                        if i == steps {
                            max
                        } else {
                            min * 10f64.powf(i as f64 / per_decade as f64)
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepCell {
    Ok {
        n: u64,
        q_measured: f64,
        rel_error: f64,
    },
    /// Point where the measurement could not complete.
    Failed(String),
}

impl SweepCell {
    pub fn n(&self) -> Option<u64> {
        match self {
            SweepCell::Ok { n, .. } => Some(*n),
            SweepCell::Failed(_) => None,
        }
    }

    pub fn q_measured(&self) -> Option<f64> {
        match self {
            SweepCell::Ok { q_measured, .. } => Some(*q_measured),
            SweepCell::Failed(_) => None,
        }
    }

    pub fn rel_error(&self) -> Option<f64> {
        match self {
            SweepCell::Ok { rel_error, .. } => Some(*rel_error),
            SweepCell::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Independent variables, one per key column.
    pub keys: Vec<f64>,
    pub cell: SweepCell,
}

/// Rows in scan order. With two key columns the first one labels the
/// series and the second is the x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub key_columns: Vec<String>,
    /// Extra label column appended after `rel_error` (e.g. the sign corner).
    pub tag_column: Option<String>,
    pub tags: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Written into the `n` column of rows that failed.
pub const FAILURE_MARKER: &str = "FAIL";

impl SweepTable {
    pub fn new(key_columns: &[&str], rows: Vec<SweepRow>) -> Self {
        Self {
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            tag_column: None,
            tags: Vec::new(),
            rows,
        }
    }

    pub fn with_tags(mut self, column: &str, tags: Vec<String>) -> Self {
        debug_assert_eq!(tags.len(), self.rows.len());
        self.tag_column = Some(column.to_string());
        self.tags = tags;
        self
    }

    pub fn header(&self) -> String {
        let mut h = self.key_columns.join(",");
        h.push_str(",n,q_measured,rel_error");
        if let Some(t) = &self.tag_column {
            h.push(',');
            h.push_str(t);
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            for (j, key) in row.keys.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{key}").unwrap();
            }
            match &row.cell {
                SweepCell::Ok {
                    n,
                    q_measured,
                    rel_error,
                } => write!(out, ",{n},{q_measured},{rel_error}").unwrap(),
                SweepCell::Failed(_) => write!(out, ",{FAILURE_MARKER},,").unwrap(),
            }
            if self.tag_column.is_some() {
                out.push(',');
                out.push_str(&self.tags[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Largest `|rel_error|` over successful rows.
    pub fn max_abs_error(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.cell.rel_error())
            .map(f64::abs)
            .reduce(f64::max)
    }

    /// Rows grouped by the series key (first key column) in scan order.
    pub fn series(&self) -> Vec<(Option<f64>, Vec<&SweepRow>)> {
        let mut out: Vec<(Option<f64>, Vec<&SweepRow>)> = Vec::new();
        for row in &self.rows {
            let label = (row.keys.len() > 1).then(|| row.keys[0]);
            match out.last_mut() {
                Some((l, rows)) if *l == label => rows.push(row),
                _ => out.push((label, vec![row])),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grid_counts() {
        assert_eq!(
            QRange::new(10.0, 1000.0, 1.0)
                .unwrap()
                .values()
                .unwrap()
                .len(),
            991
        );
        assert_eq!(
            QRange::new(2.0, 20.0, 0.25)
                .unwrap()
                .values()
                .unwrap()
                .len(),
            73
        );
        assert_eq!(
            QRange::new(5.0, 5.0, 1.0).unwrap().values().unwrap(),
            vec![5.0]
        );
    }

    #[test]
    fn log_grid_hits_both_ends() {
        let v = Grid::Log {
            min: 100.0,
            max: 2e6,
            per_decade: 10,
        }
        .values()
        .unwrap();
        assert_eq!(v[0], 100.0);
        assert_eq!(*v.last().unwrap(), 2e6);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!((v[10] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let t = SweepTable::new(
            &["k", "q_true"],
            vec![
                SweepRow {
                    keys: vec![6.0, 300.0],
                    cell: SweepCell::Ok {
                        n: 171,
                        q_measured: 299.5,
                        rel_error: -0.5,
                    },
                },
                SweepRow {
                    keys: vec![6.0, 301.0],
                    cell: SweepCell::Failed("x".into()),
                },
            ],
        );
        assert_eq!(
            t.to_csv(),
            "k,q_true,n,q_measured,rel_error\n6,300,171,299.5,-0.5\n6,301,FAIL,,\n"
        );
        assert_eq!(t.series().len(), 1);
    }
}
