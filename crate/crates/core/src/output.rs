//! CSV and SVG writers.
//!
//! Every number is written as `{:.16e}` (17 significant digits), so files
//! are byte-stable for a given input and independent of locale.

use std::io::Write;

use crate::analysis::omega::OmegaScan;
use crate::error::{GridError, Result};
use crate::sde::{EnsembleStats, Trajectory};

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: impl std::fmt::Display) -> GridError {
    GridError::Scenario(format!("write failed: {e}"))
}

/// `time` followed by [`Trajectory::column_names`].
pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    std::iter::once("time".to_string())
        .chain(traj.column_names())
        .collect()
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj)).map_err(csv_error)?;
    for (t, rec) in traj.times.iter().zip(&traj.records) {
        let row = std::iter::once(*t).chain(rec.row()).map(format_number);
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// `time`, then `<column>_mean`, `<column>_var`, `<column>_min`, `<column>_max` per column.
pub fn write_ensemble_csv<W: Write>(stats: &EnsembleStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    for c in &stats.columns {
        for s in ["mean", "var", "min", "max"] {
            header.push(format!("{c}_{s}"));
        }
    }
    w.write_record(&header).map_err(csv_error)?;
    for k in 0..stats.times.len() {
        let mut row = vec![format_number(stats.times[k])];
        for c in 0..stats.columns.len() {
            for x in [
                stats.mean[k][c],
                stats.variance[k][c],
                stats.min[k][c],
                stats.max[k][c],
            ] {
                row.push(format_number(x));
            }
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// Long format: `v,p_star,l_ii`, voltage-major.
pub fn write_scan_csv<W: Write>(scan: &OmegaScan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "p_star", "l_ii"]).map_err(csv_error)?;
    for (v, row) in scan.voltages.iter().zip(&scan.values) {
        for (p, l) in scan.powers.iter().zip(row) {
            w.write_record([format_number(*v), format_number(*p), format_number(*l)])
                .map_err(csv_error)?;
        }
    }
    w.flush().map_err(csv_error)
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line plot of the trajectory columns starting with `prefix_`.
pub fn trajectory_svg(traj: &Trajectory, prefix: &str) -> String {
    let names = traj.column_names();
    let cols: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.rsplit_once('_').is_some_and(|(p, _)| p == prefix))
        .map(|(i, _)| i)
        .collect();
    let rows: Vec<Vec<f64>> = traj.records.iter().map(|r| r.row()).collect();
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let t1 = traj.times.last().copied().unwrap_or(1.0).max(t0 + f64::EPSILON);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in &rows {
        for &c in &cols {
            lo = lo.min(r[c]);
            hi = hi.max(r[c]);
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let x = |t: f64| pad + (t - t0) / (t1 - t0) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\" font-size=\"14\">{prefix}</text>\n\
         <text x=\"5\" y=\"{}\" font-size=\"10\">{hi:.4}</text>\n\
         <text x=\"5\" y=\"{}\" font-size=\"10\">{lo:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"10\">t = {t1:.3} s</text>\n",
        pad,
        h - pad,
        w - pad - 60.0,
        h - 10.0,
    );
    for (k, &c) in cols.iter().enumerate() {
        let points: Vec<String> = traj
            .times
            .iter()
            .zip(&rows)
            .map(|(t, r)| format!("{:.2},{:.2}", x(*t), y(r[c])))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>\n",
            PALETTE[k % PALETTE.len()],
            points.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Heat map of a scan; non-positive cells are drawn black.
pub fn scan_svg(scan: &OmegaScan) -> String {
    let cell = 5.0;
    let nv = scan.voltages.len();
    let np = scan.powers.len();
    let hi = scan
        .values
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
        np as f64 * cell,
        nv as f64 * cell
    );
    for (i, row) in scan.values.iter().enumerate() {
        for (j, l) in row.iter().enumerate() {
            let fill = if *l > 0.0 {
                let s = (255.0 * (l / hi).clamp(0.0, 1.0)) as u8;
                format!("rgb({},{},{})", 255 - s, 255 - s / 2, 255)
            } else {
                "black".to_string()
            };
            // Voltage grows upwards.
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\"/>\n",
                j as f64 * cell,
                (nv - 1 - i) as f64 * cell
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(format_number(380.0), "3.8000000000000000e2");
        assert_eq!(format_number(-0.5), "-5.0000000000000000e-1");
        let x = 0.1 + 0.2;
        assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
    }
}
