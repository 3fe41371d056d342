//! Self-contained SVG renderings of the metrics CSV: label-fraction
//! curves on a logarithmic x axis and per-tap accuracy bars.

use crate::error::{CliError, Result};
use std::fmt::Write as _;
use std::path::Path;
use vsr_model::metrics::{read_metrics_csv, MetricRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    FractionCurve,
    TapBars,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction-curve" => Ok(PlotKind::FractionCurve),
            "tap-bars" => Ok(PlotKind::TapBars),
            other => Err(CliError::config(format!("unknown plot kind: {other}"))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Stable-order distinct values of a string field.
fn distinct<'a>(records: &'a [MetricRecord], field: impl Fn(&'a MetricRecord) -> &'a str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        let v = field(r);
        if !out.iter().any(|x| x == v) {
            out.push(v.to_string());
        }
    }
    out
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn svg_open(body: &mut String) {
    let _ = writeln!(
        body,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(body, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
}

fn axes(body: &mut String) {
    let _ = writeln!(
        body,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        body,
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    );
}

fn legend(body: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 130.0;
        let _ = writeln!(
            body,
            "<rect x=\"{x}\" y=\"{ry}\" width=\"10\" height=\"10\" fill=\"{c}\"/>",
            ry = y - 9.0,
            c = COLORS[i % COLORS.len()]
        );
        let _ = writeln!(
            body,
            "<text class=\"legend\" x=\"{tx}\" y=\"{y}\" font-size=\"12\">{t}</text>",
            tx = x + 14.0,
            t = esc(name)
        );
    }
}

/// Mean metric value per (regime, fraction), one polyline per regime,
/// fractions on a log10 x axis.
fn fraction_curve(records: &[MetricRecord]) -> String {
    let regimes = distinct(records, |r| &r.regime);
    let mut fractions: Vec<f64> = Vec::new();
    for r in records {
        if !fractions.iter().any(|&f| f == r.fraction) {
            fractions.push(r.fraction);
        }
    }
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let lo = fractions.first().unwrap().log10();
    let hi = fractions.last().unwrap().log10();
    let span = if (hi - lo).abs() < 1e-12 { 1.0 } else { hi - lo };
    let x_of = |f: f64| MARGIN + (f.log10() - lo) / span * (WIDTH - 2.0 * MARGIN);
    let vmax = records.iter().map(|r| r.value).fold(0.0f64, f64::max).max(1e-9);
    let y_of = |v: f64| HEIGHT - MARGIN - (v / (vmax * 1.05)) * (HEIGHT - 2.0 * MARGIN);

    let mut body = String::new();
    svg_open(&mut body);
    axes(&mut body);
    for &f in &fractions {
        let _ = writeln!(
            body,
            "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" text-anchor=\"middle\">{f}</text>",
            x = x_of(f),
            y = HEIGHT - MARGIN + 16.0
        );
    }
    for (ri, regime) in regimes.iter().enumerate() {
        let color = COLORS[ri % COLORS.len()];
        let mut points = Vec::new();
        for &f in &fractions {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| &r.regime == regime && r.fraction == f)
                .map(|r| r.value)
                .collect();
            if vals.is_empty() {
                continue;
            }
            points.push((f, x_of(f), y_of(mean(&vals))));
        }
        let path: Vec<String> = points.iter().map(|(_, x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            body,
            "<polyline points=\"{p}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            p = path.join(" ")
        );
        for (f, x, y) in &points {
            let _ = writeln!(
                body,
                "<circle class=\"pt\" data-regime=\"{r}\" data-fraction=\"{f}\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>",
                r = esc(regime)
            );
        }
    }
    legend(&mut body, &regimes);
    body.push_str("</svg>\n");
    body
}

/// Mean metric value per (tap, regime) as grouped bars; taps come from
/// the run_id column.
fn tap_bars(records: &[MetricRecord]) -> String {
    let taps = distinct(records, |r| &r.run_id);
    let regimes = distinct(records, |r| &r.regime);
    let vmax = records.iter().map(|r| r.value).fold(0.0f64, f64::max).max(1e-9);
    let ploth = HEIGHT - 2.0 * MARGIN;
    let group_w = (WIDTH - 2.0 * MARGIN) / taps.len() as f64;
    let bar_w = (group_w * 0.8) / regimes.len() as f64;

    let mut body = String::new();
    svg_open(&mut body);
    axes(&mut body);
    for (ti, tap) in taps.iter().enumerate() {
        let gx = MARGIN + ti as f64 * group_w;
        let _ = writeln!(
            body,
            "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" text-anchor=\"middle\">{t}</text>",
            x = gx + group_w / 2.0,
            y = HEIGHT - MARGIN + 16.0,
            t = esc(tap)
        );
        for (ri, regime) in regimes.iter().enumerate() {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| &r.run_id == tap && &r.regime == regime)
                .map(|r| r.value)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let h = (mean(&vals) / (vmax * 1.05)) * ploth;
            let x = gx + group_w * 0.1 + ri as f64 * bar_w;
            let _ = writeln!(
                body,
                "<rect class=\"bar\" data-tap=\"{t}\" data-regime=\"{r}\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{c}\"/>",
                t = esc(tap),
                r = esc(regime),
                y = HEIGHT - MARGIN - h,
                w = bar_w * 0.9,
                c = COLORS[ri % COLORS.len()]
            );
        }
    }
    legend(&mut body, &regimes);
    body.push_str("</svg>\n");
    body
}

/// Render `csv` as `kind` into `out`. An empty CSV is a config error.
pub fn emit_plot(csv: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let records = read_metrics_csv(csv)
        .map_err(|e| CliError::config(format!("cannot read metrics CSV {}: {e}", csv.display())))?;
    if records.is_empty() {
        return Err(CliError::config(format!("empty CSV: {}", csv.display())));
    }
    let svg = match kind {
        PlotKind::FractionCurve => fraction_curve(&records),
        PlotKind::TapBars => tap_bars(&records),
    };
    std::fs::write(out, svg)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", out.display())))?;
    Ok(())
}
