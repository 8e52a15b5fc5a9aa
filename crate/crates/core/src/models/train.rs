//! Windowed datasets, minibatch Adam training with early stopping, and
//! sliding-window multi-horizon prediction.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, gradients_inner, AdamState, ModelConfig, ModelKind, ParameterSet, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::series::{SeriesFrame, StandardizationParams};

/// Feature rows plus an aligned target column. Sample `s` reads input rows
/// `s .. s + window` and targets `s + window .. s + window + horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    data: Vec<f64>,
    target: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    window: usize,
    horizon: usize,
}

impl WindowDataset {
    pub fn from_columns(columns: &[&[f64]], target: &[f64], window: usize, horizon: usize) -> Result<Self> {
        let n_rows = target.len();
        if columns.is_empty() {
            return Err(Error::InsufficientData("no feature columns".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != n_rows) {
            return Err(Error::LengthMismatch(c.len(), n_rows));
        }
        let n_features = columns.len();
        let mut data = Vec::with_capacity(n_rows * n_features);
        for r in 0..n_rows {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Ok(Self { data, target: target.to_vec(), n_rows, n_features, window, horizon })
    }

    pub fn from_frame(frame: &SeriesFrame, features: &[String], target: &str, window: usize, horizon: usize) -> Result<Self> {
        let columns = features.iter().map(|f| frame.get(f)).collect::<Result<Vec<_>>>()?;
        Self::from_columns(&columns, frame.get(target)?, window, horizon)
    }

    pub fn len(&self) -> usize {
        (self.n_rows + 1).saturating_sub(self.window + self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn inputs(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_features..(s + self.window) * self.n_features]
    }

    pub fn targets(&self, s: usize) -> &[f64] {
        &self.target[s + self.window..s + self.window + self.horizon]
    }

    pub fn sample(&self, s: usize) -> Sample<'_> {
        Sample { inputs: self.inputs(s), targets: self.targets(s) }
    }

    /// Target value at row `r`.
    pub fn target_at(&self, r: usize) -> f64 {
        self.target[r]
    }

    /// Copy of a contiguous row range.
    pub fn rows(&self, range: Range<usize>) -> Self {
        Self {
            data: self.data[range.start * self.n_features..range.end * self.n_features].to_vec(),
            target: self.target[range.clone()].to_vec(),
            n_rows: range.len(),
            n_features: self.n_features,
            window: self.window,
            horizon: self.horizon,
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.n_features != config.n_features || self.window != config.window_len || self.horizon != config.horizon {
            return Err(Error::ShapeMismatch(format!(
                "dataset (features {}, window {}, horizon {}) does not match the model",
                self.n_features, self.window, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean minibatch loss since the previous entry.
    pub train_mse: f64,
    pub best_train_mse: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Mean squared error over the horizon on (a strided subset of) `data`.
pub fn evaluate_mse(params: &ParameterSet, config: &ModelConfig, data: &WindowDataset, max_windows: usize) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let stride = n.div_ceil(max_windows.max(1));
    let mut total = 0.0;
    let mut count = 0usize;
    for s in (0..n).step_by(stride) {
        let pred = params.predict(config, data.inputs(s))?;
        for (p, y) in pred.iter().zip(data.targets(s)) {
            total += (p - y) * (p - y);
        }
        count += config.horizon;
    }
    Ok(total / count as f64)
}

/// Minibatch Adam on mean squared error with early stopping on validation
/// loss. Returns the parameters from the best validation check.
///
/// The batch schedule, dropout masks and initialization are all derived
/// from `config.seed`, so repeated runs are bit-identical.
pub fn train(
    kind: ModelKind,
    train_data: &WindowDataset,
    val_data: &WindowDataset,
    config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ParameterSet, TrainingLog)> {
    config.validate()?;
    train_config.validate()?;
    train_data.check(config)?;
    val_data.check(config)?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} training and {} validation windows",
            train_data.len(),
            val_data.len()
        )));
    }
    let mut params = ParameterSet::init(kind, config)?;
    let mut state = AdamState::new(params.tensors());
    let mut batch_rng = crate::seed::rng_for(config.seed, "batches");
    let mut dropout_rng = crate::seed::rng_for(config.seed, "dropout");
    let mut log = TrainingLog::default();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_train = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;
    let mut batch = Vec::with_capacity(train_config.batch_size);

    for step in 1..=train_config.max_steps {
        batch.clear();
        for _ in 0..train_config.batch_size {
            let s = batch_rng.random_range(0..train_data.len());
            batch.push(train_data.sample(s));
        }
        let rng = (config.dropout > 0.0).then_some(&mut dropout_rng);
        let (loss, grads) = gradients_inner(&params, config, &batch, rng).map_err(|e| match e {
            Error::NonFiniteActivation(_) | Error::NonFiniteGradient(_) => Error::Diverged(step),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        {
            let grad_refs = grads.tensors();
            let mut param_refs = params.tensors_mut();
            adam_step(&mut param_refs, &grad_refs, &mut state, train_config);
        }
        interval_loss += loss;
        interval_steps += 1;
        log.steps_run = step;

        if step % train_config.eval_every == 0 || step == train_config.max_steps {
            let val = evaluate_mse(&params, config, val_data, train_config.max_eval_windows).map_err(|e| match e {
                Error::NonFiniteActivation(_) => Error::Diverged(step),
                other => other,
            })?;
            if val.is_nan() {
                return Err(Error::Diverged(step));
            }
            let train_mse = interval_loss / interval_steps as f64;
            best_train = best_train.min(train_mse);
            interval_loss = 0.0;
            interval_steps = 0;
            if val < best_val {
                best_val = val;
                best = params.clone();
                log.best_step = step;
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            log.entries.push(LogEntry { step, train_mse, best_train_mse: best_train, val_mse: val, best_val_mse: best_val });
            if since_improvement > train_config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}

/// A trained forecaster together with the columns it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub name: String,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: Option<ParameterSet>,
    /// Input columns in model order.
    pub features: Vec<String>,
    pub target: String,
}

impl TrainedModel {
    /// The persistence baseline reading `target` over the given window.
    pub fn persistence(target: &str, window_len: usize, horizon: usize) -> Self {
        Self {
            name: ModelKind::Persistence.name().to_string(),
            kind: ModelKind::Persistence,
            config: ModelConfig { window_len, n_features: 1, d_model: 1, n_heads: 1, d_ff: 1, n_layers: 1, horizon, dropout: 0.0, seed: 0 },
            params: None,
            features: vec![target.to_string()],
            target: target.to_string(),
        }
    }
}

/// Predictions and matching targets, both `n_samples x horizon` row-major,
/// in the target's physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub horizon: usize,
    pub n_samples: usize,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    /// Timestamp of the last input row of each window.
    pub origins: Vec<i64>,
}

impl ForecastResult {
    /// Targets and predictions for horizon step `h` (1-based).
    pub fn step(&self, h: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(h >= 1 && h <= self.horizon, "horizon step {h} out of range");
        let pick = |v: &[f64]| v.chunks_exact(self.horizon).map(|r| r[h - 1]).collect();
        (pick(&self.targets), pick(&self.predictions))
    }
}

/// Direct multi-horizon prediction over every window of a standardized
/// test frame; outputs are mapped back to physical units.
pub fn predict_horizon(model: &TrainedModel, frame_test: &SeriesFrame, standardization: &StandardizationParams) -> Result<ForecastResult> {
    let config = &model.config;
    let data = WindowDataset::from_frame(frame_test, &model.features, &model.target, config.window_len, config.horizon)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "test frame of {} rows holds no window of {} + {}",
            frame_test.len(),
            config.window_len,
            config.horizon
        )));
    }
    let scale = standardization.get(&model.target)?;
    let target_pos = model.features.iter().position(|f| *f == model.target);
    let mut predictions = Vec::with_capacity(n * config.horizon);
    let mut targets = Vec::with_capacity(n * config.horizon);
    let mut origins = Vec::with_capacity(n);
    for s in 0..n {
        let z = match (&model.params, model.kind) {
            (None, ModelKind::Persistence) => {
                let pos = target_pos.ok_or_else(|| Error::MissingColumn(model.target.clone()))?;
                let history: Vec<f64> = data.inputs(s).chunks_exact(data.n_features()).map(|r| r[pos]).collect();
                super::persistence_predict(&history, config.horizon)?
            }
            (Some(params), _) => params.predict(config, data.inputs(s))?,
            (None, kind) => return Err(Error::InvalidConfig(format!("{} model has no parameters", kind.name()))),
        };
        predictions.extend(z.iter().map(|&v| scale.inverse(v)));
        targets.extend(data.targets(s).iter().map(|&v| scale.inverse(v)));
        origins.push(frame_test.timestamps()[s + config.window_len - 1]);
    }
    Ok(ForecastResult { horizon: config.horizon, n_samples: n, predictions, targets, origins })
}

/// Trains a one-step predictor on rows before `fit_end` and predicts the
/// target at each row of `eval_rows` from the preceding `window_len` rows.
/// The last 15% of the fit windows serve as validation.
pub fn fit_one_step(
    kind: ModelKind,
    config: &ModelConfig,
    train_config: &TrainConfig,
    features: &[&[f64]],
    target: &[f64],
    fit_end: usize,
    eval_rows: Range<usize>,
) -> Result<Vec<f64>> {
    let tau = config.window_len;
    let config = ModelConfig { n_features: features.len(), horizon: 1, ..config.clone() };
    let all = WindowDataset::from_columns(features, target, tau, 1)?;
    let n_fit = fit_end.saturating_sub(tau);
    let n_val = (n_fit * 15 / 100).max(1);
    if n_fit <= n_val + 1 {
        return Err(Error::InsufficientData(format!("{n_fit} fit windows")));
    }
    let train_rows = 0..fit_end - n_val;
    let val_rows = fit_end - n_val - tau..fit_end;
    let (params, _) = train(kind, &all.rows(train_rows), &all.rows(val_rows), &config, train_config)?;
    eval_rows
        .map(|t| {
            if t < tau || t >= target.len() {
                return Err(Error::InvalidRange { start: t, end: t + 1, len: target.len() });
            }
            Ok(params.predict(&config, all.inputs(t - tau))?[0])
        })
        .collect()
}
