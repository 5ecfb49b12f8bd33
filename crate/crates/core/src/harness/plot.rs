use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::run::MetricsRow;
use crate::error::Result;

/// Mean success per evaluation step for one variant, averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub variant: String,
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    /// Standard error over seeds.
    pub stderr: Vec<f64>,
    pub seeds: Vec<usize>,
}

pub fn curves(rows: &[MetricsRow]) -> Vec<Curve> {
    let mut by: BTreeMap<&str, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by.entry(r.variant.as_str())
            .or_default()
            .entry(r.env_step)
            .or_default()
            .push(r.success_rate);
    }
    by.into_iter()
        .map(|(variant, pts)| {
            let mut c = Curve {
                variant: variant.to_string(),
                steps: Vec::new(),
                mean: Vec::new(),
                stderr: Vec::new(),
                seeds: Vec::new(),
            };
            for (step, vals) in pts {
                let (m, se) = mean_stderr(&vals);
                c.steps.push(step);
                c.mean.push(m);
                c.stderr.push(se);
                c.seeds.push(vals.len());
            }
            c
        })
        .collect()
}

pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (m, 0.0);
    }
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Trailing moving average over up to `window` points.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

pub fn render_curves_svg(curves: &[Curve], window: usize) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let max_step = curves.iter().flat_map(|c| c.steps.iter().copied()).max().unwrap_or(1).max(1) as f64;
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/><line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"12\">env steps (max {max_step})</text>", w / 2.0 - 40.0, h - 8.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"12\">success</text>", pad - 10.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];
    for (i, c) in curves.iter().enumerate() {
        let ys = smooth(&c.mean, window);
        let pts: Vec<String> = c
            .steps
            .iter()
            .zip(&ys)
            .map(|(s, y)| {
                let px = pad + (*s as f64 / max_step) * (w - 2.0 * pad);
                let py = h - pad - y.clamp(0.0, 1.0) * (h - 2.0 * pad);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let color = colors[i % colors.len()];
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - pad - 150.0,
            pad + 16.0 * i as f64,
            c.variant
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `curves.csv` (raw and smoothed mean success per variant and step) and
/// `learning_curves.svg` into `out`.
pub fn plot(rows: &[MetricsRow], out: &Path, window: usize) -> Result<Vec<Curve>> {
    fs::create_dir_all(out)?;
    let cs = curves(rows);
    let mut w = csv::Writer::from_path(out.join("curves.csv"))?;
    w.write_record(["variant", "env_step", "seeds", "mean_success", "stderr", "smoothed_success"])?;
    for c in &cs {
        let sm = smooth(&c.mean, window);
        for i in 0..c.steps.len() {
            w.write_record([
                c.variant.clone(),
                c.steps[i].to_string(),
                c.seeds[i].to_string(),
                format!("{:?}", c.mean[i]),
                format!("{:?}", c.stderr[i]),
                format!("{:?}", sm[i]),
            ])?;
        }
    }
    w.flush()?;
    fs::write(out.join("learning_curves.svg"), render_curves_svg(&cs, window))?;
    Ok(cs)
}
