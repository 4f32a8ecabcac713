//! Minimal SVG line chart for sweep tables: `|error|` in percent against
//! the last key column, one polyline per series.

use std::fmt::Write as _;

use crate::sweep::SweepTable;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders `table` as a standalone SVG document.
pub fn svg_line_chart(table: &SweepTable, title: &str) -> String {
    let series = table.series();
    let points: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter_map(|r| Some((*r.keys.last()?, r.cell.rel_error()?.abs() * 100.0)))
        .collect();
    let x_label = table.key_columns.last().cloned().unwrap_or_default();
    let (mut x_lo, mut x_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let y_hi = points.iter().map(|p| p.1).fold(0.0, f64::max);
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let log_x = x_lo > 0.0 && x_hi / x_lo >= 100.0;
    let y_hi = if y_hi > 0.0 { y_hi * 1.05 } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| {
        let f = if log_x {
            (x.log10() - x_lo.log10()) / (x_hi.log10() - x_lo.log10())
        } else {
            (x - x_lo) / (x_hi - x_lo)
        };
        LEFT + f * plot_w
    };
    let sy = |y: f64| TOP + plot_h * (1.0 - y / y_hi);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    )
    .unwrap();

    // axes and grid
    let x_ticks: Vec<f64> = if log_x {
        let lo = x_lo.log10().ceil() as i32;
        let hi = x_hi.log10().floor() as i32;
        (lo..=hi).map(|e| 10f64.powi(e)).collect()
    } else {
        nice_ticks(x_lo, x_hi, 8)
    };
    for x in &x_ticks {
        let px = sx(*x);
        writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 16.0,
            fmt_tick(*x)
        )
        .unwrap();
    }
    for y in nice_ticks(0.0, y_hi, 6) {
        let py = sy(y);
        writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&x_label)
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">|error| (%)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    for (i, (label, rows)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // failed points split the curve
        let mut segments: Vec<Vec<String>> = vec![Vec::new()];
        for r in rows {
            match (r.keys.last(), r.cell.rel_error()) {
                (Some(x), Some(e)) => segments.last_mut().unwrap().push(format!(
                    "{:.2},{:.2}",
                    sx(*x),
                    sy(e.abs() * 100.0)
                )),
                _ => segments.push(Vec::new()),
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{}"/>"#,
                seg.join(" ")
            )
            .unwrap();
        }
        let name = match label {
            Some(v) => format!("{} = {}", table.key_columns[0], v),
            None => "error".to_string(),
        };
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{SweepCell, SweepRow};

    fn table() -> SweepTable {
        let mut rows = Vec::new();
        for k in [2.0, 6.0] {
            for q in [10.0, 20.0, 30.0] {
                rows.push(SweepRow {
                    keys: vec![k, q],
                    cell: if q == 20.0 && k == 6.0 {
                        SweepCell::Failed("x".into())
                    } else {
                        SweepCell::Ok {
                            n: 3,
                            q_measured: q,
                            rel_error: -0.01 * k,
                        }
                    },
                });
            }
        }
        SweepTable::new(&["k", "q_true"], rows)
    }

    #[test]
    fn one_polyline_per_series_segment() {
        let svg = svg_line_chart(&table(), "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // k=2 unbroken, k=6 split by the failed point into two one-point segments
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("k = 6"));
    }

    #[test]
    fn balanced_tags() {
        let svg = svg_line_chart(&table(), "t");
        let opens = svg.matches("<text").count();
        let closes = svg.matches("</text>").count();
        assert_eq!(opens, closes);
    }

    #[test]
    fn ticks() {
        assert_eq!(
            nice_ticks(0.0, 10.0, 5),
            vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
        );
        assert_eq!(fmt_tick(2e6), "2e6");
        assert_eq!(fmt_tick(2.5), "2.5");
    }
}
