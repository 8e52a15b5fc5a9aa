//! Sequence forecasters: a transformer encoder, an LSTM and the persistence
//! baseline, with exact gradients, Adam training and multi-horizon
//! prediction from a window of past feature rows.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod persistence;
pub mod tensor;
pub mod train;
pub mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use lstm::{forward_lstm, LstmParams};
pub use persistence::persistence_predict;
pub use tensor::Tensor;
pub use train::{
    fit_one_step, predict_horizon, train, ForecastResult, LogEntry, TrainedModel, TrainingLog, WindowDataset,
};
pub use transformer::{attention, embed, feedforward, forward_transformer, positional_encoding, TransformerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Lstm,
    Persistence,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Lstm => "lstm",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(ModelKind::Transformer),
            "lstm" => Ok(ModelKind::Lstm),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

/// Architecture of a forecaster. For the LSTM, `d_model` is the hidden size
/// and the attention fields are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window_len: usize,
    pub n_features: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub horizon: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: window 60, width 32, 2 heads, 2 layers, feedforward 64.
    pub fn desk(n_features: usize, horizon: usize) -> Self {
        Self { window_len: 60, n_features, d_model: 32, n_heads: 2, d_ff: 64, n_layers: 2, horizon, dropout: 0.0, seed: 0 }
    }

    /// Small configuration used for gradient checks and embedded predictors.
    pub fn tiny(n_features: usize, window_len: usize, horizon: usize) -> Self {
        Self { window_len, n_features, d_model: 8, n_heads: 2, d_ff: 16, n_layers: 1, horizon, dropout: 0.0, seed: 0 }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.window_len, self.n_features, self.d_model, self.n_heads, self.d_ff, self.n_layers, self.horizon];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("all dimensions must be at least 1: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Optimizer and schedule settings. The loss is always mean squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Validation checks without improvement tolerated before stopping.
    pub patience: usize,
    /// Steps between validation checks.
    pub eval_every: usize,
    /// Cap on validation windows per check; windows are taken at a fixed stride.
    pub max_eval_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            eval_every: 50,
            max_eval_windows: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_eval_windows == 0 {
            return Err(Error::InvalidConfig("batch_size, eval_every and max_eval_windows must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable weights of one forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterSet {
    Transformer(TransformerParams),
    Lstm(LstmParams),
}

impl ParameterSet {
    pub fn init(kind: ModelKind, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seed::rng_for(config.seed, "init");
        Self::init_with(kind, config, &mut rng)
    }

    pub fn init_with(kind: ModelKind, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        match kind {
            ModelKind::Transformer => Ok(ParameterSet::Transformer(TransformerParams::init(config, rng))),
            ModelKind::Lstm => Ok(ParameterSet::Lstm(LstmParams::init(config, rng))),
            ModelKind::Persistence => Err(Error::InvalidConfig("the persistence baseline has no parameters".into())),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ParameterSet::Transformer(_) => ModelKind::Transformer,
            ParameterSet::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            ParameterSet::Transformer(p) => p.named_tensors(),
            ParameterSet::Lstm(p) => p.named_tensors(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ParameterSet::Transformer(p) => p.tensors_mut(),
            ParameterSet::Lstm(p) => p.tensors_mut(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data.fill(0.0);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        match self {
            ParameterSet::Transformer(p) => p.check_shapes(config),
            ParameterSet::Lstm(p) => p.check_shapes(config),
        }
    }

    /// Prediction for one row-major `[window_len x n_features]` window.
    pub fn predict(&self, config: &ModelConfig, window: &[f64]) -> Result<Vec<f64>> {
        match self {
            ParameterSet::Transformer(p) => {
                let pe = positional_encoding(config.window_len, config.d_model);
                transformer::forward_cached::<rand_chacha::ChaCha8Rng>(p, config, &pe, window, None).map(|(y, _)| y)
            }
            ParameterSet::Lstm(p) => lstm::forward_cached(p, config, window).map(|(y, _)| y),
        }
    }
}

/// One training example: a row-major input window and its horizon targets.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
}

/// Mean squared error over the batch and horizon, with its exact gradient
/// with respect to every parameter.
pub fn gradients(params: &ParameterSet, config: &ModelConfig, batch: &[Sample<'_>]) -> Result<(f64, ParameterSet)> {
    gradients_inner::<rand_chacha::ChaCha8Rng>(params, config, batch, None)
}

pub(crate) fn gradients_inner<R: Rng>(
    params: &ParameterSet,
    config: &ModelConfig,
    batch: &[Sample<'_>],
    mut dropout_rng: Option<&mut R>,
) -> Result<(f64, ParameterSet)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let denom = (batch.len() * config.horizon) as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let pe = match params {
        ParameterSet::Transformer(_) => Some(positional_encoding(config.window_len, config.d_model)),
        ParameterSet::Lstm(_) => None,
    };
    for sample in batch {
        if sample.targets.len() != config.horizon {
            return Err(Error::ShapeMismatch(format!("expected {} targets, got {}", config.horizon, sample.targets.len())));
        }
        match (params, &mut grads) {
            (ParameterSet::Transformer(p), ParameterSet::Transformer(g)) => {
                let pe = pe.as_ref().expect("transformer position codes");
                let (pred, cache) = transformer::forward_cached(p, config, pe, sample.inputs, dropout_rng.as_deref_mut())?;
                let dpred = residual_grad(&pred, sample.targets, denom, &mut loss);
                transformer::backward(p, config, &cache, &dpred, g);
            }
            (ParameterSet::Lstm(p), ParameterSet::Lstm(g)) => {
                let (pred, cache) = lstm::forward_cached(p, config, sample.inputs)?;
                let dpred = residual_grad(&pred, sample.targets, denom, &mut loss);
                lstm::backward(p, config, &cache, &dpred, g);
            }
            _ => unreachable!("gradient buffers mirror the parameter kind"),
        }
    }
    for (name, t) in grads.named_tensors() {
        if !t.is_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    Ok((loss / denom, grads))
}

fn residual_grad(pred: &[f64], targets: &[f64], denom: f64, loss: &mut f64) -> Vec<f64> {
    pred.iter()
        .zip(targets)
        .map(|(p, y)| {
            let r = p - y;
            *loss += r * r;
            2.0 * r / denom
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::tiny(3, 6, 2);
        c.validate().unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let c = ModelConfig { horizon: 0, ..ModelConfig::tiny(3, 6, 2) };
        assert!(c.validate().is_err());
        let c = ModelConfig { dropout: 1.0, ..ModelConfig::tiny(3, 6, 2) };
        assert!(c.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let c = ModelConfig::tiny(3, 6, 2);
        let a = ParameterSet::init(ModelKind::Transformer, &c).unwrap();
        let b = ParameterSet::init(ModelKind::Transformer, &c).unwrap();
        assert_eq!(a, b);
        // embed 3*8, per layer 4*(8*8+8) + 2*2*8 + 8*16+16 + 16*8+8, head 8*2+2
        let layer = 4 * (64 + 8) + 4 * 8 + (128 + 16) + (128 + 8);
        assert_eq!(a.param_count(), 24 + layer + 18);
        let l = ParameterSet::init(ModelKind::Lstm, &c).unwrap();
        assert_eq!(l.param_count(), 3 * 32 + 8 * 32 + 32 + 16 + 2);
        assert!(ParameterSet::init(ModelKind::Persistence, &c).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let c = ModelConfig::tiny(2, 4, 3);
        let mut rng = crate::seed::rng(2);
        for kind in [ModelKind::Transformer, ModelKind::Lstm] {
            let p = ParameterSet::init(kind, &c).unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = p.predict(&c, &x).unwrap();
            let (loss, g) = gradients(&p, &c, &[Sample { inputs: &x, targets: &y }]).unwrap();
            assert_eq!(loss, 0.0);
            assert!(g.tensors().iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn output_bias_gradient_is_scaled_residual() {
        let c = ModelConfig::tiny(2, 4, 3);
        let mut rng = crate::seed::rng(3);
        let p = ParameterSet::init(ModelKind::Transformer, &c).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets = [0.5, -1.0, 2.0];
        let pred = p.predict(&c, &x).unwrap();
        let (_, g) = gradients(&p, &c, &[Sample { inputs: &x, targets: &targets }]).unwrap();
        let ParameterSet::Transformer(g) = g else { unreachable!() };
        for k in 0..3 {
            let want = 2.0 * (pred[k] - targets[k]) / 3.0;
            assert!((g.head_b.data[k] - want).abs() < 1e-15);
        }
    }
}
