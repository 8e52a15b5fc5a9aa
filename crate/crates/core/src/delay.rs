//! Per-factor transport delay estimation and lag augmentation.
//!
//! The delay of a factor `x` relative to the target `y` is the lag that
//! maximizes the Pearson correlation between `x[t - lag]` and `y[t]`,
//! computed over the overlapping window only.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{format_value, SeriesFrame};

/// Default lag search range in samples (10 minutes at 1 Hz).
pub const DEFAULT_MAX_LAG: usize = 600;

/// Correlation between `x[0..n-lag]` and `y[lag..n]`.
pub fn cross_cov_at_lag(x: &[f64], y: &[f64], lag: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if lag + 2 >= n {
        return Err(Error::LagExceedsLength { lag, len: n });
    }
    pearson(&x[..n - lag], &y[lag..]).ok_or(Error::DegenerateWindow { lag })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        let (du, dv) = (u - ma, v - mb);
        sab += du * dv;
        saa += du * du;
        sbb += dv * dv;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Chosen delay for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEntry {
    pub variable: String,
    pub optimal_lag: usize,
    pub peak_value: f64,
    /// +1 for a positive peak, -1 when the magnitude mode picked an
    /// anti-correlated peak.
    pub sign: i8,
    /// Correlation at lags `0..=max_lag`; zero where the window was degenerate.
    #[serde(skip)]
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DelayOptions {
    /// Maximize |correlation| and record the sign, instead of the signed value.
    pub allow_negative: bool,
}

/// Scans lags `0..=max_lag` and returns the one with the largest
/// correlation, preferring the smallest lag on ties.
pub fn infer_delay(x: &[f64], y: &[f64], max_lag: usize) -> Result<DelayEntry> {
    infer_delay_with(x, y, max_lag, DelayOptions::default())
}

pub fn infer_delay_with(x: &[f64], y: &[f64], max_lag: usize, options: DelayOptions) -> Result<DelayEntry> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if max_lag == 0 || x.len() <= 2 * max_lag {
        return Err(Error::SeriesTooShort { len: x.len(), max_lag });
    }
    let profile = lag_profile(x, y, max_lag);
    let score = |v: f64| if options.allow_negative { v.abs() } else { v };
    let mut best = 0;
    for (lag, &v) in profile.iter().enumerate() {
        if score(v) > score(profile[best]) {
            best = lag;
        }
    }
    let peak_value = profile[best];
    let sign = if peak_value < 0.0 && options.allow_negative { -1 } else { 1 };
    Ok(DelayEntry { variable: String::new(), optimal_lag: best, peak_value, sign, profile })
}

/// Correlation at every lag `0..=max_lag`. Window means come from prefix
/// sums; the centred products are accumulated directly.
fn lag_profile(x: &[f64], y: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let prefix = |s: &[f64]| {
        let mut p = Vec::with_capacity(n + 1);
        p.push(0.0);
        let mut acc = 0.0;
        for v in s {
            acc += v;
            p.push(acc);
        }
        p
    };
    let (px, py) = (prefix(x), prefix(y));
    (0..=max_lag)
        .map(|lag| {
            let m = n - lag;
            let mx = px[m] / m as f64;
            let my = (py[n] - py[lag]) / m as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (&u, &v) in x[..m].iter().zip(&y[lag..]) {
                let (du, dv) = (u - mx, v - my);
                sxy += du * dv;
                sxx += du * du;
                syy += dv * dv;
            }
            if sxx <= 0.0 || syy <= 0.0 {
                0.0
            } else {
                (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFailure {
    pub variable: String,
    pub error: String,
}

/// Delays of several factors against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTable {
    pub target: String,
    pub max_lag: usize,
    pub entries: Vec<DelayEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<DelayFailure>,
}

impl DelayTable {
    pub fn get(&self, variable: &str) -> Option<&DelayEntry> {
        self.entries.iter().find(|e| e.variable == variable)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `lag,<variable>...` rows with each entry's correlation profile.
    pub fn write_profile_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let header: Vec<&str> = std::iter::once("lag").chain(self.entries.iter().map(|e| e.variable.as_str())).collect();
        writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        let rows = self.entries.iter().map(|e| e.profile.len()).max().unwrap_or(0);
        for lag in 0..rows {
            let mut line = lag.to_string();
            for e in &self.entries {
                line.push(',');
                if let Some(v) = e.profile.get(lag) {
                    line.push_str(&format_value(*v));
                }
            }
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Runs [`infer_delay`] for each variable; failures are recorded and the
/// batch continues.
pub fn build_delay_table(frame: &SeriesFrame, target: &str, variables: &[String], max_lag: usize) -> Result<DelayTable> {
    build_delay_table_with(frame, target, variables, max_lag, DelayOptions::default())
}

pub fn build_delay_table_with(
    frame: &SeriesFrame,
    target: &str,
    variables: &[String],
    max_lag: usize,
    options: DelayOptions,
) -> Result<DelayTable> {
    let y = frame.get(target)?;
    let mut table = DelayTable { target: target.to_string(), max_lag, entries: Vec::new(), failures: Vec::new() };
    for name in variables {
        let result = frame.get(name).and_then(|x| infer_delay_with(x, y, max_lag, options));
        match result {
            Ok(mut entry) => {
                entry.variable = name.clone();
                table.entries.push(entry);
            }
            Err(e) => table.failures.push(DelayFailure { variable: name.clone(), error: e.to_string() }),
        }
    }
    Ok(table)
}

/// Which lagged copies to add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub keep_original: bool,
    /// Explicit lags per variable; variables absent here use their table delay.
    pub lags: indexmap::IndexMap<String, Vec<usize>>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { keep_original: true, lags: indexmap::IndexMap::new() }
    }
}

/// Name of the column holding `name` shifted by `lag` samples.
pub fn lag_column_name(name: &str, lag: usize) -> String {
    format!("{name}__lag{lag}")
}

/// Adds `<name>__lag<k>` columns (value at `t` is the original at `t - k`)
/// and drops the first `max(k)` rows so every column is defined.
///
/// Output columns: originals in input order (only the target when
/// `keep_original` is off), then lagged columns
/// by variable in table order and ascending lag.
pub fn augment_with_lags(frame: &SeriesFrame, table: &DelayTable, spec: &AugmentSpec) -> Result<SeriesFrame> {
    let mut plan: Vec<(String, Vec<usize>)> = Vec::new();
    for entry in &table.entries {
        let mut lags = spec.lags.get(&entry.variable).cloned().unwrap_or_else(|| vec![entry.optimal_lag]);
        lags.sort_unstable();
        lags.dedup();
        plan.push((entry.variable.clone(), lags));
    }
    for (name, lags) in &spec.lags {
        if table.get(name).is_none() {
            let mut lags = lags.clone();
            lags.sort_unstable();
            lags.dedup();
            plan.push((name.clone(), lags));
        }
    }
    let n = frame.len();
    let max_lag = plan.iter().flat_map(|(_, l)| l.iter().copied()).max().unwrap_or(0);
    if max_lag >= n {
        return Err(Error::LagExceedsLength { lag: max_lag, len: n });
    }
    let mut out = frame.slice(max_lag..n)?;
    if !spec.keep_original {
        // the target always survives; it is what the lags are aligned to
        let keep: Vec<&str> = frame.contains(&table.target).then_some(table.target.as_str()).into_iter().collect();
        out = out.select(&keep)?;
    }
    for (name, lags) in &plan {
        let source = frame.get(name)?;
        for &lag in lags {
            let column = lag_column_name(name, lag);
            if frame.contains(&column) || out.contains(&column) {
                return Err(Error::ColumnCollision(column));
            }
            out.insert(column, source[max_lag - lag..n - lag].to_vec())?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = crate::seed::rng(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn shifted(x: &[f64], d: usize) -> Vec<f64> {
        (0..x.len()).map(|t| if t >= d { x[t - d] } else { 0.0 }).collect()
    }

    /// Straight definition of the windowed correlation.
    fn oracle(x: &[f64], y: &[f64], lag: usize) -> f64 {
        let n = x.len() - lag;
        let a: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let b: Vec<f64> = (0..n).map(|i| y[i + lag]).collect();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n as f64;
        let sa = (a.iter().map(|u| (u - ma).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sb = (b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n as f64).sqrt();
        cov / (sa * sb)
    }

    #[test]
    fn self_correlation() {
        let x = noise(1, 500);
        assert!((cross_cov_at_lag(&x, &x, 0).unwrap() - 1.0).abs() < 1e-12);
        let e = infer_delay(&x, &x, 50).unwrap();
        assert_eq!(e.optimal_lag, 0);
        assert!((e.peak_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_shift_37() {
        let x = noise(2, 1000);
        let y = shifted(&x, 37);
        assert!((cross_cov_at_lag(&x, &y, 37).unwrap() - 1.0).abs() < 1e-12);
        assert!(cross_cov_at_lag(&x, &y, 36).unwrap() < 1.0 - 1e-3);
        for lag in [0, 5, 36, 37, 38, 90] {
            assert!((cross_cov_at_lag(&x, &y, lag).unwrap() - oracle(&x, &y, lag)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_window_is_degenerate() {
        let x = vec![2.0; 100];
        let y = noise(3, 100);
        assert_eq!(cross_cov_at_lag(&x, &y, 3).unwrap_err(), Error::DegenerateWindow { lag: 3 });
        let e = infer_delay(&x, &y, 10).unwrap();
        assert!(e.profile.iter().all(|v| *v == 0.0));
        assert_eq!(e.optimal_lag, 0);
    }

    #[test]
    fn noisy_shift_matches_brute_force() {
        let x = noise(4, 2000);
        let e = noise(5, 2000);
        let y: Vec<f64> = shifted(&x, 37).iter().zip(&e).map(|(a, b)| a + 0.1 * b).collect();
        let entry = infer_delay(&x, &y, 100).unwrap();
        assert_eq!(entry.profile.len(), 101);
        let brute = (0..=100).map(|l| (l, oracle(&x, &y, l))).fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        assert_eq!(entry.optimal_lag, 37);
        assert_eq!(brute.0, 37);
        for (lag, v) in entry.profile.iter().enumerate() {
            assert!((v - oracle(&x, &y, lag)).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_consistency_and_scale_invariance() {
        let x = noise(6, 3000);
        let base = shifted(&x, 10);
        let d0 = infer_delay(&x, &base, 200).unwrap().optimal_lag;
        for s in [1, 7, 50] {
            let later = shifted(&x, 10 + s);
            assert_eq!(infer_delay(&x, &later, 200).unwrap().optimal_lag, d0 + s);
        }
        let scaled: Vec<f64> = x.iter().map(|v| 4.0 * v + 9.0).collect();
        assert_eq!(infer_delay(&scaled, &base, 200).unwrap().optimal_lag, d0);
    }

    #[test]
    fn negative_mode_records_sign() {
        let x = noise(7, 2000);
        let y: Vec<f64> = shifted(&x, 12).iter().map(|v| -v).collect();
        let signed = infer_delay(&x, &y, 50).unwrap();
        assert_ne!(signed.optimal_lag, 12);
        let abs = infer_delay_with(&x, &y, 50, DelayOptions { allow_negative: true }).unwrap();
        assert_eq!(abs.optimal_lag, 12);
        assert_eq!(abs.sign, -1);
        assert!((abs.peak_value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        let x = noise(8, 20);
        assert!(matches!(infer_delay(&x, &x, 10), Err(Error::SeriesTooShort { .. })));
        assert!(matches!(infer_delay(&x, &x, 0), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn table_cases() {
        let p = noise(9, 4000);
        let q = noise(10, 4000);
        let y: Vec<f64> = shifted(&p, 5).iter().zip(shifted(&q, 50)).map(|(a, b)| a + b).collect();
        let frame = SeriesFrame::from_columns([("y", y), ("p", p), ("q", q)]).unwrap();
        let names = vec!["p".to_string(), "q".to_string(), "y".to_string(), "ghost".to_string()];
        let table = build_delay_table(&frame, "y", &names, 100).unwrap();
        assert_eq!(table.get("p").unwrap().optimal_lag, 5);
        assert_eq!(table.get("q").unwrap().optimal_lag, 50);
        let own = table.get("y").unwrap();
        assert_eq!(own.optimal_lag, 0);
        assert!((own.peak_value - 1.0).abs() < 1e-12);
        assert_eq!(table.failures.len(), 1);

        let back = DelayTable::from_json(&table.to_json().unwrap()).unwrap();
        assert_eq!(back.entries.len(), table.entries.len());
        for (a, b) in back.entries.iter().zip(&table.entries) {
            assert_eq!((a.optimal_lag, a.peak_value.to_bits(), a.sign), (b.optimal_lag, b.peak_value.to_bits(), b.sign));
        }
        let empty = build_delay_table(&frame, "y", &[], 100).unwrap();
        assert!(empty.entries.is_empty());
    }

    fn table_with(var: &str, lag: usize) -> DelayTable {
        DelayTable {
            target: "y".into(),
            max_lag: 10,
            entries: vec![DelayEntry { variable: var.into(), optimal_lag: lag, peak_value: 1.0, sign: 1, profile: vec![] }],
            failures: vec![],
        }
    }

    #[test]
    fn augment_cases() {
        let a: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let frame = SeriesFrame::from_columns([("a", a.clone()), ("b", vec![1.0; 10])]).unwrap();

        let out = augment_with_lags(&frame, &table_with("a", 0), &AugmentSpec::default()).unwrap();
        assert_eq!(out.get("a__lag0").unwrap(), out.get("a").unwrap());

        let out = augment_with_lags(&frame, &table_with("a", 3), &AugmentSpec::default()).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(out.names().collect::<Vec<_>>(), ["a", "b", "a__lag3"]);
        let lagged = out.get("a__lag3").unwrap();
        let orig = out.get("a").unwrap();
        for t in 0..7 {
            assert_eq!(orig[t], a[t + 3]);
            assert_eq!(lagged[t], a[t]);
        }
        assert_eq!(out.timestamps()[0], 3);

        let err = augment_with_lags(&frame, &table_with("a", 11), &AugmentSpec::default()).unwrap_err();
        assert!(matches!(err, Error::LagExceedsLength { lag: 11, .. }));

        let mut spec = AugmentSpec { keep_original: false, ..Default::default() };
        spec.lags.insert("a".into(), vec![4, 1, 4]);
        let out = augment_with_lags(&frame, &table_with("a", 3), &spec).unwrap();
        assert_eq!(out.names().collect::<Vec<_>>(), ["a__lag1", "a__lag4"]);
        assert_eq!(out.len(), 6);

        let clash = SeriesFrame::from_columns([("a", a.clone()), ("a__lag2", a)]).unwrap();
        let err = augment_with_lags(&clash, &table_with("a", 2), &AugmentSpec::default()).unwrap_err();
        assert_eq!(err, Error::ColumnCollision("a__lag2".into()));
    }
}
