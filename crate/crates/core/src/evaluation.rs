//! Forecast metrics per model and horizon, error distributions, model
//! comparisons, and CSV/JSON/SVG renderings of all of them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{predict_horizon, ForecastResult, ModelKind, TrainedModel};
use crate::series::{mean_and_std, SeriesFrame, StandardizationParams};

pub const DEFAULT_HORIZONS: [usize; 7] = [1, 5, 10, 20, 30, 40, 60];
/// MAPE denominators never drop below this fraction of the target's spread.
pub const MAPE_FLOOR_FRACTION: f64 = 1e-3;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    /// Percent.
    pub mape: f64,
}

fn check_pair(targets: &[f64], predictions: &[f64]) -> Result<()> {
    if targets.len() != predictions.len() {
        return Err(Error::LengthMismatch(targets.len(), predictions.len()));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// MAE, MSE and MAPE. The MAPE denominator is `max(|target|, floor)` with
/// `floor = 1e-3 * std(targets)`, which keeps it finite when the level
/// crosses zero. A constant target has no spread; the floor then falls
/// back to one unit of the target.
pub fn compute_metrics(targets: &[f64], predictions: &[f64]) -> Result<Metrics> {
    check_pair(targets, predictions)?;
    let n = targets.len() as f64;
    let (_, sigma) = mean_and_std(targets);
    let floor = if sigma > 0.0 { MAPE_FLOOR_FRACTION * sigma } else { 1.0 };
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for (&y, &p) in targets.iter().zip(predictions) {
        let e = (p - y).abs();
        abs += e;
        sq += e * e;
        pct += e / y.abs().max(floor);
    }
    Ok(Metrics { mae: abs / n, mse: sq / n, mape: 100.0 * pct / n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Errors outside the binned range.
    pub outside: usize,
}

impl Histogram {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub mean: f64,
    pub sigma: f64,
    /// `mean - 2 sigma`, `mean + 2 sigma`.
    pub band: [f64; 2],
    pub histogram: Histogram,
}

/// Signed errors `prediction - target`: mean, population sigma, the two
/// sigma band and a 50-bin histogram over `mean +- 4 sigma`.
pub fn error_distribution(targets: &[f64], predictions: &[f64]) -> Result<ErrorDistribution> {
    check_pair(targets, predictions)?;
    let errors: Vec<f64> = targets.iter().zip(predictions).map(|(y, p)| p - y).collect();
    let (mean, sigma) = mean_and_std(&errors);
    // a degenerate spread still gets a drawable unit-width range
    let half = if sigma > 0.0 { 4.0 * sigma } else { 0.5 };
    let (lo, hi) = (mean - half, mean + half);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    let mut outside = 0;
    for &e in &errors {
        if e < lo || e > hi {
            outside += 1;
        } else {
            let bin = (((e - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
    }
    Ok(ErrorDistribution {
        mean,
        sigma,
        band: [mean - 2.0 * sigma, mean + 2.0 * sigma],
        histogram: Histogram { edges, counts, outside },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub horizon: usize,
    pub mae: f64,
    pub mse: f64,
    pub mape: f64,
    pub err_mean: f64,
    pub err_sigma: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub model: String,
    pub horizon: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn row(&self, model: &str, horizon: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.model == model && r.horizon == horizon)
    }

    pub fn models(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.model.as_str()) {
                names.push(&r.model);
            }
        }
        names
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model,horizon,mae,mse,mape,err_mean,err_sigma,n\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.model, r.horizon, r.mae, r.mse, r.mape, r.err_mean, r.err_sigma, r.n
            );
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()
            .map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(Self { rows, failures: Vec::new() })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        std::fs::write(c, self.to_csv_string()).map_err(|e| Error::io(c, e))?;
        std::fs::write(j, self.to_json()?).map_err(|e| Error::io(j, e))
    }
}

/// Builds report rows from already computed forecasts. Horizons beyond a
/// forecast's own horizon are recorded as failures.
pub fn report_from_forecasts(forecasts: &[(String, ForecastResult)], horizons: &[usize]) -> EvalReport {
    let mut report = EvalReport::default();
    for (name, forecast) in forecasts {
        for &h in horizons {
            let cell = if h == 0 || h > forecast.horizon {
                Err(Error::InvalidConfig(format!("horizon {h} outside 1..={}", forecast.horizon)))
            } else {
                let (t, p) = forecast.step(h);
                compute_metrics(&t, &p).and_then(|m| {
                    let d = error_distribution(&t, &p)?;
                    Ok(EvalRow {
                        model: name.clone(),
                        horizon: h,
                        mae: m.mae,
                        mse: m.mse,
                        mape: m.mape,
                        err_mean: d.mean,
                        err_sigma: d.sigma,
                        n: t.len(),
                    })
                })
            };
            match cell {
                Ok(row) => report.rows.push(row),
                Err(e) => report.failures.push(EvalFailure { model: name.clone(), horizon: h, error: e.to_string() }),
            }
        }
    }
    report
}

/// Forecasts with every model (plus the persistence baseline) over the
/// standardized test frame and tabulates metrics per requested horizon.
pub fn evaluate_horizons(
    models: &[TrainedModel],
    frame_test: &SeriesFrame,
    standardization: &StandardizationParams,
    horizons: &[usize],
) -> Result<EvalReport> {
    Ok(evaluate_with_forecasts(models, frame_test, standardization, horizons)?.0)
}

/// As [`evaluate_horizons`], also returning each model's forecasts.
pub fn evaluate_with_forecasts(
    models: &[TrainedModel],
    frame_test: &SeriesFrame,
    standardization: &StandardizationParams,
    horizons: &[usize],
) -> Result<(EvalReport, Vec<(String, ForecastResult)>)> {
    if models.is_empty() || horizons.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut all: Vec<TrainedModel> = models.to_vec();
    if !all.iter().any(|m| m.kind == ModelKind::Persistence) {
        let window = all.iter().map(|m| m.config.window_len).max().unwrap_or(1);
        let horizon = horizons.iter().copied().max().unwrap_or(1);
        all.push(TrainedModel::persistence(&all[0].target, window, horizon));
    }
    let mut forecasts = Vec::new();
    let mut failures = Vec::new();
    for m in &all {
        match predict_horizon(m, frame_test, standardization) {
            Ok(f) => forecasts.push((m.name.clone(), f)),
            Err(e) => failures.extend(horizons.iter().map(|&h| EvalFailure {
                model: m.name.clone(),
                horizon: h,
                error: e.to_string(),
            })),
        }
    }
    let mut report = report_from_forecasts(&forecasts, horizons);
    report.failures.extend(failures);
    Ok((report, forecasts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Mse,
    Mape,
}

impl Metric {
    pub fn of(self, row: &EvalRow) -> f64 {
        match self {
            Metric::Mae => row.mae,
            Metric::Mse => row.mse,
            Metric::Mape => row.mape,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Metric::Mae),
            "mse" => Ok(Metric::Mse),
            "mape" => Ok(Metric::Mape),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub horizon: usize,
    pub value_a: f64,
    pub value_b: f64,
    /// `value_a - value_b`; negative means `a` is better.
    pub difference: f64,
    /// `(value_b - value_a) / value_b`; `None` when `value_b` is zero.
    pub relative_improvement: Option<f64>,
}

/// Per-horizon comparison of two models on one metric, over the horizons
/// both models report.
pub fn compare(report: &EvalReport, model_a: &str, model_b: &str, metric: Metric) -> Result<Vec<ComparisonRow>> {
    for m in [model_a, model_b] {
        if !report.rows.iter().any(|r| r.model == m) {
            return Err(Error::UnknownModel(m.to_string()));
        }
    }
    Ok(report
        .rows
        .iter()
        .filter(|r| r.model == model_a)
        .filter_map(|a| {
            let b = report.row(model_b, a.horizon)?;
            let (va, vb) = (metric.of(a), metric.of(b));
            let relative = if vb == 0.0 {
                (va == 0.0).then_some(0.0)
            } else {
                Some((vb - va) / vb)
            };
            Some(ComparisonRow { horizon: a.horizon, value_a: va, value_b: vb, difference: va - vb, relative_improvement: relative })
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("horizon,value_a,value_b,difference,relative_improvement\n");
    for r in rows {
        let rel = r.relative_improvement.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.horizon, r.value_a, r.value_b, r.difference, rel);
    }
    out
}

// svg rendering

const W: f64 = 800.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(values: &[f64], y_range: (f64, f64), color: &str) -> String {
    let n = values.len().max(2) - 1;
    let mut points = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
        let y = H - PAD - (H - 2.0 * PAD) * (v - y_range.0) / (y_range.1 - y_range.0);
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    format!(r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, points.trim_end()) + "\n"
}

/// Line plot of predicted against true values.
pub fn overlay_svg(targets: &[f64], predictions: &[f64], title: &str) -> String {
    let range = bounds(targets.iter().chain(predictions).copied());
    let mut s = svg_open(title);
    s += &polyline(targets, range, "black");
    s += &polyline(predictions, range, "crimson");
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">truth (black), prediction (red)</text>"#, PAD, H - 12.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{:.3}</text>"#, PAD, range.1);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{:.3}</text>"#, H - PAD, range.0);
    s + "</svg>\n"
}

/// Error histogram with dashed markers at the two sigma band.
pub fn histogram_svg(dist: &ErrorDistribution, title: &str) -> String {
    let hist = &dist.histogram;
    let (lo, hi) = (hist.edges[0], hist.edges[hist.edges.len() - 1]);
    let max_count = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let sx = |v: f64| PAD + (W - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut s = svg_open(title);
    for (i, &c) in hist.counts.iter().enumerate() {
        let h = (H - 2.0 * PAD) * c as f64 / max_count;
        let (x0, x1) = (sx(hist.edges[i]), sx(hist.edges[i + 1]));
        let _ = writeln!(s, r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="steelblue"/>"#, H - PAD - h, (x1 - x0).max(0.0));
    }
    for v in dist.band {
        let x = sx(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{}" stroke="crimson" stroke-dasharray="4 3"/>"#, H - PAD);
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">mean {:.4}, sigma {:.4}, band [{:.4}, {:.4}]</text>"#,
        H - 12.0,
        dist.mean,
        dist.sigma,
        dist.band[0],
        dist.band[1]
    );
    s + "</svg>\n"
}
