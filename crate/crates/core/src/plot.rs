//! Figures as plain SVG plus a CSV of exactly the plotted series.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::eval::write;
use crate::nn::TrainReport;
use crate::road::{curvature_histogram, RoadMap};
use crate::sim::{SimLog, SimRecord};

pub const HISTOGRAM_BINS: usize = 40;

const W: f64 = 720.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct PlotInputs<'a> {
    pub maps: &'a [&'a RoadMap],
    /// Labelled validation runs.
    pub runs: &'a [(&'a str, &'a SimLog)],
    pub train_report: Option<&'a TrainReport>,
}

struct Series<'a> {
    name: &'a str,
    y: Vec<f64>,
}

/// Writes every figure the inputs allow and returns the files written.
pub fn emit_plots(inputs: &PlotInputs<'_>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut emit = |stem: String, svg: String, csv: String| -> Result<()> {
        for (ext, body) in [("svg", svg), ("csv", csv)] {
            let p = dir.join(format!("{stem}.{ext}"));
            write(&p, &body)?;
            files.push(p);
        }
        Ok(())
    };

    for map in inputs.maps {
        let h = curvature_histogram(map, HISTOGRAM_BINS)?;
        let centers: Vec<f64> = h.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
        let svg = bar_chart(&format!("curvature histogram, {}", map.name), "curvature [1/m]", "stations", &centers, &counts);
        emit(format!("curvature_histogram_{}", map.name), svg, h.to_csv())?;
    }

    if let Some((_, first)) = inputs.runs.first() {
        let t = first.column(|r| r.t);
        for (stem, title, unit, f) in [
            ("lateral_error", "lateral error", "e_y [m]", (|r: &SimRecord| r.state.e_y) as fn(&SimRecord) -> f64),
            ("heading_error", "heading error", "e_psi [rad]", |r: &SimRecord| r.state.e_psi),
        ] {
            let series: Vec<Series> = inputs
                .runs
                .iter()
                .map(|(name, log)| Series { name, y: log.column(f) })
                .collect();
            emit(stem.into(), line_chart(title, "t [s]", unit, &t, &series), series_csv("t_s", &t, &series))?;
        }
        let (_, comp) = inputs.runs.last().expect("non-empty");
        let t = comp.column(|r| r.t);
        let series = [
            Series {
                name: "delta_lqr",
                y: comp.column(|r| r.delta_lqr),
            },
            Series {
                name: "delta_f",
                y: comp.column(|r| r.delta_f),
            },
        ];
        emit(
            "steering".into(),
            line_chart("steering commands", "t [s]", "[rad]", &t, &series),
            series_csv("t_s", &t, &series),
        )?;
    }

    if let Some(r) = inputs.train_report {
        let epochs: Vec<f64> = (0..r.epochs_run).map(|e| e as f64).collect();
        let series = [
            Series {
                name: "train_loss",
                y: r.train_loss.iter().map(|v| v.max(1e-300).log10()).collect(),
            },
            Series {
                name: "val_loss",
                y: r.val_loss.iter().map(|v| v.max(1e-300).log10()).collect(),
            },
        ];
        emit(
            "training_loss".into(),
            line_chart("training loss", "epoch", "log10 MSE", &epochs, &series),
            r.to_csv(),
        )?;
    }
    Ok(files)
}

fn series_csv(x_name: &str, x: &[f64], series: &[Series]) -> String {
    let mut s = x_name.to_string();
    for c in series {
        s.push(',');
        s.push_str(c.name);
    }
    s.push('\n');
    for (i, xv) in x.iter().enumerate() {
        let _ = write!(s, "{xv}");
        for c in series {
            let _ = write!(s, ",{}", c.y[i]);
        }
        s.push('\n');
    }
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }
    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y0}V{y1}H{x1}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (v, anchor_x, anchor_y) in [
        (f.x.0, x0, y1 + 14.0),
        (f.x.1, x1, y1 + 14.0),
    ] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{anchor_y}" text-anchor="middle">{}</text>"#, tick(v));
    }
    for v in [f.y.0, f.y.1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, f.py(v) + 4.0, tick(v));
    }
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, x: &[f64], series: &[Series]) -> String {
    let f = Frame {
        x: range(x.iter().copied()),
        y: range(series.iter().flat_map(|s| s.y.iter().copied())),
    };
    let mut s = header(title, xlabel, ylabel, &f);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        s.push_str(r#"<polyline fill="none" stroke-width="1" stroke=""#);
        s.push_str(color);
        s.push_str(r#"" points=""#);
        for (xv, yv) in x.iter().zip(&ser.y) {
            if yv.is_finite() {
                let _ = write!(s, "{:.1},{:.1} ", f.px(*xv), f.py(*yv));
            }
        }
        s.push_str("\"/>\n");
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN - 4.0,
            esc(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bar_chart(title: &str, xlabel: &str, ylabel: &str, centers: &[f64], heights: &[f64]) -> String {
    let step = if centers.len() > 1 {
        centers[1] - centers[0]
    } else {
        1.0
    };
    let f = Frame {
        x: range(centers.iter().map(|c| c - 0.5 * step).chain(centers.iter().map(|c| c + 0.5 * step))),
        y: (0.0, heights.iter().copied().fold(1.0, f64::max)),
    };
    let mut s = header(title, xlabel, ylabel, &f);
    for (c, h) in centers.iter().zip(heights) {
        let x0 = f.px(c - 0.5 * step);
        let x1 = f.px(c + 0.5 * step);
        let y = f.py(*h);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}" stroke="white"/>"#,
            (x1 - x0).max(0.0),
            (H - MARGIN - y).max(0.0),
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_align() {
        let x = [0.0, 1.0, 2.0];
        let s = [
            Series { name: "a", y: vec![1.0, 2.0, 3.0] },
            Series { name: "b", y: vec![0.5, 0.5, 0.5] },
        ];
        let csv = series_csv("t", &x, &s);
        assert_eq!(csv.lines().next().unwrap(), "t,a,b");
        assert_eq!(csv.lines().count(), 4);
        assert!(line_chart("x", "t", "y", &x, &s).contains("<polyline"));
    }

    #[test]
    fn flat_series_gets_a_nonzero_range() {
        let (lo, hi) = range([2.0, 2.0].into_iter());
        assert!(hi > lo);
    }
}
