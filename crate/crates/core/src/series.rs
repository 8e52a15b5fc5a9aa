//! Multivariate series container and the preprocessing stages that run
//! before any modelling: gap filling, Hampel outlier replacement, centered
//! moving-average smoothing, z-score standardization and chronological
//! splitting.
//!
//! Missing observations are stored as `NaN` until [`interpolate_missing`]
//! removes them. Every operation takes the frame by reference and returns a
//! new one.

use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamp-indexed multivariate series with named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<i64>,
    variables: IndexMap<String, Vec<f64>>,
    sample_period_s: i64,
}

impl SeriesFrame {
    /// Frame with timestamps `start, start + period, ...` and no variables.
    pub fn with_uniform_timestamps(len: usize, start: i64, sample_period_s: i64) -> Self {
        assert!(sample_period_s > 0, "sample period must be positive");
        let timestamps = (0..len as i64).map(|i| start + i * sample_period_s).collect();
        Self { timestamps, variables: IndexMap::new(), sample_period_s }
    }

    /// Builds a frame from columns, indexing samples `0, 1, 2, ...` at 1 s.
    pub fn from_columns<S: Into<String>>(columns: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let mut columns = columns.into_iter().peekable();
        let len = columns.peek().map(|(_, v)| v.len()).unwrap_or(0);
        let mut frame = Self::with_uniform_timestamps(len, 0, 1);
        for (name, values) in columns {
            frame.insert(name, values)?;
        }
        Ok(frame)
    }

    /// Validates and builds a frame from explicit timestamps.
    pub fn from_parts(timestamps: Vec<i64>, variables: IndexMap<String, Vec<f64>>) -> Result<Self> {
        let sample_period_s = validate_timestamps(&timestamps)?;
        for (name, values) in &variables {
            if values.len() != timestamps.len() {
                return Err(Error::ShapeMismatch(format!(
                    "variable `{name}` has {} values for {} timestamps",
                    values.len(),
                    timestamps.len()
                )));
            }
        }
        Ok(Self { timestamps, variables, sample_period_s })
    }

    /// Adds or replaces a variable.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.timestamps.len() {
            return Err(Error::ShapeMismatch(format!(
                "variable `{name}` has {} values, frame has {} rows",
                values.len(),
                self.timestamps.len()
            )));
        }
        self.variables.insert(name, values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn sample_period_s(&self) -> i64 {
        self.sample_period_s
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.variables.keys().map(String::as_str)
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.variables.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.variables
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.variables.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Indices of missing observations in `name`.
    pub fn gaps(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.get(name)?.iter().enumerate().filter(|(_, v)| v.is_nan()).map(|(i, _)| i).collect())
    }

    pub fn has_non_finite(&self) -> bool {
        self.variables.values().any(|v| v.iter().any(|x| !x.is_finite()))
    }

    /// Contiguous row range as a new frame.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::InvalidRange { start: range.start, end: range.end, len: self.len() });
        }
        Ok(Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            variables: self.variables.iter().map(|(k, v)| (k.clone(), v[range.clone()].to_vec())).collect(),
            sample_period_s: self.sample_period_s,
        })
    }

    /// Keeps only the named variables, in the given order.
    pub fn select(&self, names: &[impl AsRef<str>]) -> Result<Self> {
        let mut variables = IndexMap::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            variables.insert(name.to_string(), self.get(name)?.to_vec());
        }
        Ok(Self { timestamps: self.timestamps.clone(), variables, sample_period_s: self.sample_period_s })
    }

    /// Appends `other` below `self`. Both frames must carry the same variables
    /// in the same order and continue the same timestamp grid.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if !self.variables.keys().eq(other.variables.keys()) {
            return Err(Error::ShapeMismatch("frames carry different variables".into()));
        }
        let mut timestamps = self.timestamps.clone();
        timestamps.extend_from_slice(&other.timestamps);
        let variables = self
            .variables
            .iter()
            .zip(other.variables.values())
            .map(|((k, a), b)| {
                let mut v = a.clone();
                v.extend_from_slice(b);
                (k.clone(), v)
            })
            .collect();
        Self::from_parts(timestamps, variables)
    }

    fn map_columns(&self, mut f: impl FnMut(&str, &[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let mut variables = IndexMap::with_capacity(self.variables.len());
        for (name, values) in &self.variables {
            variables.insert(name.clone(), f(name, values)?);
        }
        Ok(Self { timestamps: self.timestamps.clone(), variables, sample_period_s: self.sample_period_s })
    }

    /// Parses a CSV document (see [`load_csv`]).
    pub fn from_csv_str(text: &str, schema: &[impl AsRef<str>]) -> Result<Self> {
        parse_csv(text.as_bytes(), schema)
    }

    /// Renders the frame as CSV with 17 significant digits per value.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.variables.len() + 1) * 24);
        out.push_str("timestamp");
        for name in self.variables.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (row, ts) in self.timestamps.iter().enumerate() {
            out.push_str(&ts.to_string());
            for values in self.variables.values() {
                out.push(',');
                let v = values[row];
                if !v.is_nan() {
                    out.push_str(&format_value(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Prints `v` with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn validate_timestamps(timestamps: &[i64]) -> Result<i64> {
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(Error::DuplicateTimestamp { line: i + 3, timestamp: w[1] });
        }
        if w[1] < w[0] {
            return Err(Error::NonMonotonicTimestamp { line: i + 3, timestamp: w[1] });
        }
    }
    let period = match timestamps {
        [a, b, ..] => b - a,
        _ => 1,
    };
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] - w[0] != period {
            return Err(Error::IrregularSampling { index: i + 1, found: w[1] - w[0], expected: period });
        }
    }
    Ok(period)
}

/// Loads a CSV file whose first column is `timestamp` (integer seconds) and
/// whose remaining columns are numeric. Empty cells become gaps.
///
/// When `schema` is non-empty, every listed column must be present.
pub fn load_csv(path: impl AsRef<Path>, schema: &[impl AsRef<str>]) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, schema)
}

fn parse_csv(bytes: &[u8], schema: &[impl AsRef<str>]) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow { line: 1, message: e.to_string() })?
        .clone();
    if header.get(0).map(str::trim) != Some("timestamp") {
        return Err(Error::MissingColumn("timestamp".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    for expected in schema {
        if !names.iter().any(|n| n == expected.as_ref()) {
            return Err(Error::MissingColumn(expected.as_ref().to_string()));
        }
    }
    let mut timestamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::MalformedRow { line, message: e.to_string() })?;
        let ts_text = record.get(0).unwrap_or("").trim();
        let ts: i64 = ts_text
            .parse()
            .map_err(|_| Error::MalformedRow { line, message: format!("bad timestamp `{ts_text}`") })?;
        if let Some(&prev) = timestamps.last() {
            if ts == prev {
                return Err(Error::DuplicateTimestamp { line, timestamp: ts });
            }
            if ts < prev {
                return Err(Error::NonMonotonicTimestamp { line, timestamp: ts });
            }
        }
        timestamps.push(ts);
        for (col, cell) in columns.iter_mut().zip(record.iter().skip(1)) {
            let cell = cell.trim();
            let value = if cell.is_empty() {
                f64::NAN
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::MalformedRow { line, message: format!("non-numeric cell `{cell}`") })?;
                if v.is_nan() {
                    return Err(Error::MalformedRow { line, message: "NaN literal; leave the cell empty".into() });
                }
                v
            };
            col.push(value);
        }
    }
    let variables = names.into_iter().zip(columns).collect();
    SeriesFrame::from_parts(timestamps, variables)
}

/// Fills gaps: interior runs by linear interpolation between the bounding
/// observations, leading and trailing runs by the nearest observation.
pub fn interpolate_missing(frame: &SeriesFrame, max_gap: usize) -> Result<SeriesFrame> {
    frame.map_columns(|name, values| fill_column(name, values, max_gap))
}

fn fill_column(name: &str, values: &[f64], max_gap: usize) -> Result<Vec<f64>> {
    let mut out = values.to_vec();
    let n = out.len();
    let mut i = 0;
    let mut any_observed = false;
    while i < n {
        if !out[i].is_nan() {
            any_observed = true;
            i += 1;
            continue;
        }
        let start = i;
        while i < n && out[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if start == 0 && i == n {
            return Err(Error::AllMissing(name.to_string()));
        }
        if len > max_gap {
            return Err(Error::GapTooLong { variable: name.to_string(), start, len, max_gap });
        }
        match (start.checked_sub(1), (i < n).then_some(i)) {
            (Some(left), Some(right)) => {
                let (a, b) = (out[left], out[right]);
                let span = (right - left) as f64;
                for (k, slot) in out[start..i].iter_mut().enumerate() {
                    let frac = (k + 1) as f64 / span;
                    *slot = a + (b - a) * frac;
                }
            }
            (None, Some(right)) => {
                let fill = out[right];
                out[start..i].fill(fill);
            }
            (Some(left), None) => {
                let fill = out[left];
                out[start..i].fill(fill);
            }
            (None, None) => unreachable!(),
        }
    }
    if !any_observed && n > 0 {
        return Err(Error::AllMissing(name.to_string()));
    }
    Ok(out)
}

/// Scale factor turning a median absolute deviation into a Gaussian σ estimate.
pub const MAD_TO_SIGMA: f64 = 1.4826;

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Window bounds `[lo, hi)` centred on `i`, truncated at the series ends.
fn truncated_window(i: usize, half: usize, n: usize) -> Range<usize> {
    i.saturating_sub(half)..(i + half + 1).min(n)
}

/// Hampel filter: a point further than `n_sigmas * 1.4826 * MAD` from its
/// rolling median is replaced by that median. Windows are truncated at the
/// series ends.
pub fn remove_outliers(frame: &SeriesFrame, window: usize, n_sigmas: f64) -> Result<SeriesFrame> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidWindow(window));
    }
    if !(n_sigmas > 0.0) {
        return Err(Error::InvalidConfig(format!("n_sigmas must be positive, got {n_sigmas}")));
    }
    if window > frame.len() {
        return Err(Error::WindowTooLarge { window, len: frame.len() });
    }
    frame.map_columns(|_, values| Ok(hampel_column(values, window, n_sigmas).0))
}

/// Filtered column plus the replaced indices.
pub fn hampel_column(values: &[f64], window: usize, n_sigmas: f64) -> (Vec<f64>, Vec<usize>) {
    let half = window / 2;
    let n = values.len();
    let mut out = values.to_vec();
    let mut replaced = Vec::new();
    let mut buf = Vec::with_capacity(window);
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&values[truncated_window(i, half, n)]);
        let median = median_in_place(&mut buf);
        for v in buf.iter_mut() {
            *v = (*v - median).abs();
        }
        let mad = median_in_place(&mut buf);
        if (values[i] - median).abs() > n_sigmas * MAD_TO_SIGMA * mad {
            out[i] = median;
            replaced.push(i);
        }
    }
    (out, replaced)
}

/// Centered moving average; near the ends the window is truncated to the
/// samples that exist.
pub fn smooth(frame: &SeriesFrame, window: usize) -> Result<SeriesFrame> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidWindow(window));
    }
    frame.map_columns(|_, values| Ok(moving_average(values, window)))
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 1 {
        return values.to_vec();
    }
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let w = &values[truncated_window(i, half, n)];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Per-variable location and scale used by z-score standardization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub variables: IndexMap<String, VariableScale>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableScale {
    pub mean: f64,
    /// Population standard deviation over the fit range.
    pub scale: f64,
}

impl VariableScale {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.scale + self.mean
    }
}

impl StandardizationParams {
    pub fn get(&self, name: &str) -> Result<VariableScale> {
        self.variables.get(name).copied().ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Applies stored parameters to a frame. Variables without parameters
    /// pass through unchanged.
    pub fn apply(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        frame.map_columns(|name, values| {
            Ok(match self.variables.get(name) {
                Some(s) => values.iter().map(|&x| s.forward(x)).collect(),
                None => values.to_vec(),
            })
        })
    }
}

/// Population mean and standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores every variable with statistics computed over `fit_range` only.
pub fn standardize(frame: &SeriesFrame, fit_range: Range<usize>) -> Result<(SeriesFrame, StandardizationParams)> {
    if fit_range.start >= fit_range.end || fit_range.end > frame.len() {
        return Err(Error::InvalidRange { start: fit_range.start, end: fit_range.end, len: frame.len() });
    }
    let mut params = IndexMap::new();
    for (name, values) in frame.columns() {
        let (mean, scale) = mean_and_std(&values[fit_range.clone()]);
        if !scale.is_finite() || scale <= f64::EPSILON * mean.abs().max(1.0) {
            return Err(Error::DegenerateVariance(name.to_string()));
        }
        params.insert(name.to_string(), VariableScale { mean, scale });
    }
    let params = StandardizationParams { variables: params };
    Ok((params.apply(frame)?, params))
}

/// Undoes [`standardize`] for every variable present in `params`.
pub fn inverse_standardize(frame: &SeriesFrame, params: &StandardizationParams) -> Result<SeriesFrame> {
    frame.map_columns(|name, values| {
        Ok(match params.variables.get(name) {
            Some(s) => values.iter().map(|&z| s.inverse(z)).collect(),
            None => values.to_vec(),
        })
    })
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.7, validation_fraction: 0.15, test_fraction: 0.15 }
    }
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let spec = Self { train_fraction: train, validation_fraction: validation, test_fraction: test };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train_fraction, self.validation_fraction, self.test_fraction];
        if parts.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::InvalidSplit(format!("fractions must be positive: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Partition lengths for `n` rows: train and validation are rounded to
    /// the nearest integer, test takes the remainder.
    pub fn lengths(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train_fraction).round() as usize;
        let val = ((n as f64) * self.validation_fraction).round() as usize;
        let train = train.min(n);
        let val = val.min(n - train);
        (train, val, n - train - val)
    }
}

/// Splits into contiguous train, validation and test frames. Each partition
/// must hold at least `min_len` rows (the longest model window).
pub fn split(frame: &SeriesFrame, spec: &SplitSpec, min_len: usize) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    spec.validate()?;
    let (a, b, c) = spec.lengths(frame.len());
    for (part, len) in [("train", a), ("validation", b), ("test", c)] {
        if len == 0 || len < min_len {
            return Err(Error::EmptySplit { part, len, min_len: min_len.max(1) });
        }
    }
    Ok((frame.slice(0..a)?, frame.slice(a..a + b)?, frame.slice(a + b..a + b + c)?))
}

/// Preprocessing knobs. Defaults: max_gap 10, Hampel window 11 at 3σ,
/// moving-average window 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub max_gap: usize,
    pub outlier_window: usize,
    pub outlier_sigmas: f64,
    pub smooth_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { max_gap: 10, outlier_window: 11, outlier_sigmas: 3.0, smooth_window: 5 }
    }
}

/// Runs interpolate, outlier removal and smoothing in that order. The frame
/// is left in physical units; standardization happens once the split is known.
pub fn clean(frame: &SeriesFrame, config: &PreprocessConfig) -> Result<SeriesFrame> {
    let filled = interpolate_missing(frame, config.max_gap)?;
    let filtered = remove_outliers(&filled, config.outlier_window, config.outlier_sigmas)?;
    smooth(&filtered, config.smooth_window)
}
