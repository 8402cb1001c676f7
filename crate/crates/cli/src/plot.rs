//! Deterministic SVG line charts from history CSVs.
//!
//! Input files follow the history schema
//! `iteration,normalized_gain_error,objective_estimate,seed,mode,q,gamma,tau`.
//! Each file becomes one series: the per-iteration median of the normalized
//! error across its seeds, drawn on a log10 error axis. Identical inputs
//! produce byte-identical SVG.

use std::collections::BTreeMap;
use tsallis_lq::{Error, Result};

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// (iteration, median normalized error), iteration-sorted.
    pub points: Vec<(usize, f64)>,
}

/// Parse one history CSV into a median-error series. Errors carry the
/// 1-based line number of the offending row.
pub fn parse_history_csv(text: &str, label: &str) -> Result<Series> {
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Serialization("line 1: empty CSV".into()))?
        .1;
    let columns: Vec<&str> = header.split(',').collect();
    let iter_idx = columns
        .iter()
        .position(|c| *c == "iteration")
        .ok_or_else(|| Error::Serialization("line 1: missing 'iteration' column".into()))?;
    let err_idx = columns
        .iter()
        .position(|c| *c == "normalized_gain_error")
        .ok_or_else(|| {
            Error::Serialization("line 1: missing 'normalized_gain_error' column".into())
        })?;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < columns.len() {
            return Err(Error::Serialization(format!(
                "line {}: expected {} fields, found {}",
                i + 1,
                columns.len(),
                fields.len()
            )));
        }
        let iteration: usize = fields[iter_idx].parse().map_err(|_| {
            Error::Serialization(format!("line {}: bad iteration '{}'", i + 1, fields[iter_idx]))
        })?;
        let error: f64 = fields[err_idx].parse().map_err(|_| {
            Error::Serialization(format!(
                "line {}: bad normalized_gain_error '{}'",
                i + 1,
                fields[err_idx]
            ))
        })?;
        rows.entry(iteration).or_default().push(error);
    }
    let points = rows
        .into_iter()
        .map(|(iteration, mut errs)| {
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = errs.len() / 2;
            let median = if errs.len() % 2 == 0 {
                0.5 * (errs[mid - 1] + errs[mid])
            } else {
                errs[mid]
            };
            (iteration, median)
        })
        .collect();
    Ok(Series {
        label: label.to_string(),
        points,
    })
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render series as a deterministic SVG line chart with a log10 error axis.
/// An input without data rows yields an axes-only chart.
pub fn emit_plot(series: &[Series]) -> String {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;

    let mut max_iter = 1usize;
    let mut log_min = f64::INFINITY;
    let mut log_max = f64::NEG_INFINITY;
    for s in series {
        for &(it, err) in &s.points {
            max_iter = max_iter.max(it);
            let l = err.max(1e-16).log10();
            log_min = log_min.min(l);
            log_max = log_max.max(l);
        }
    }
    if !log_min.is_finite() || !log_max.is_finite() {
        log_min = -4.0;
        log_max = 0.0;
    }
    if (log_max - log_min).abs() < 1e-9 {
        log_min -= 1.0;
        log_max += 1.0;
    }
    let log_floor = log_min.floor();
    let log_ceil = log_max.ceil();

    let x_of = |it: f64| MARGIN_L + plot_w * it / max_iter as f64;
    let y_of = |log_err: f64| MARGIN_T + plot_h * (log_ceil - log_err) / (log_ceil - log_floor);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B),
        fmt(WIDTH - MARGIN_R),
        fmt(HEIGHT - MARGIN_B)
    ));
    // y grid and decade labels
    let mut decade = log_floor as i64;
    while decade <= log_ceil as i64 {
        let y = y_of(decade as f64);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            fmt(MARGIN_L),
            fmt(y),
            fmt(WIDTH - MARGIN_R),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">1e{}</text>\n",
            fmt(MARGIN_L - 8.0),
            fmt(y + 4.0),
            decade
        ));
        decade += 1;
    }
    // x labels: start, middle, end
    for frac in [0.0, 0.5, 1.0] {
        let it = (max_iter as f64 * frac).round();
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            fmt(x_of(it)),
            fmt(HEIGHT - MARGIN_B + 20.0),
            it as usize
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">iteration</text>\n",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 10.0)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">normalized gain error</text>\n",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0)
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if !s.points.is_empty() {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(it, err)| {
                    format!(
                        "{},{}",
                        fmt(x_of(it as f64)),
                        fmt(y_of(err.max(1e-16).log10()))
                    )
                })
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        // legend entry (also for empty series)
        let ly = MARGIN_T + 18.0 * idx as f64 + 10.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(WIDTH - MARGIN_R + 10.0),
            fmt(ly),
            fmt(WIDTH - MARGIN_R + 34.0),
            fmt(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            fmt(WIDTH - MARGIN_R + 40.0),
            fmt(ly + 4.0),
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "iteration,normalized_gain_error,objective_estimate,seed,mode,q,gamma,tau\n";

    #[test]
    fn empty_csv_yields_axes_only_svg() {
        let series = parse_history_csv(HEADER, "empty").unwrap();
        assert!(series.points.is_empty());
        let svg = emit_plot(&[series]);
        assert!(svg.contains("<svg"));
        assert!(!svg.contains("polyline"));
    }

    #[test]
    fn identical_input_identical_bytes() {
        let text = format!("{HEADER}1,0.5,1.2,1,offline,0.8,0.9,0.7\n2,0.05,1.1,1,offline,0.8,0.9,0.7\n");
        let a = emit_plot(&[parse_history_csv(&text, "x").unwrap()]);
        let b = emit_plot(&[parse_history_csv(&text, "x").unwrap()]);
        assert_eq!(a, b);
        assert!(a.contains("polyline"));
    }

    #[test]
    fn malformed_csv_reports_line_number() {
        let text = format!("{HEADER}1,0.5,1.2,1,offline,0.8,0.9,0.7\nbad,row\n");
        let err = parse_history_csv(&text, "x").unwrap_err();
        assert!(err.to_string().contains("line 3"), "got: {err}");
    }

    #[test]
    fn median_across_seeds() {
        let text = format!(
            "{HEADER}1,0.1,1,1,offline,0.8,0.9,0.7\n1,0.3,1,2,offline,0.8,0.9,0.7\n1,0.2,1,3,offline,0.8,0.9,0.7\n"
        );
        let series = parse_history_csv(&text, "x").unwrap();
        assert_eq!(series.points, vec![(1, 0.2)]);
    }
}
