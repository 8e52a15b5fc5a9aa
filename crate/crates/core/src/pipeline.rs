//! End-to-end run: preprocess, screen, delay, augment, train, evaluate.
//!
//! Every stage reads its inputs from the artifacts of earlier stages in the
//! output directory, so a stage run on its own from persisted files gives
//! the same bytes as a full run.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::{screen_all, CausalReport, ConditioningPolicy, PredictorKind, ScreenConfig};
use crate::delay::{augment_with_lags, build_delay_table_with, AugmentSpec, DelayOptions, DelayTable, DEFAULT_MAX_LAG};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_csv, compare, error_distribution, evaluate_with_forecasts, histogram_svg, overlay_svg, Metric,
    DEFAULT_HORIZONS,
};
use crate::models::{train, Checkpoint, ForecastResult, ModelConfig, ModelKind, TrainConfig, TrainedModel, WindowDataset};
use crate::seed::derive;
use crate::series::{clean, format_value, load_csv, split, standardize, PreprocessConfig, SeriesFrame, SplitSpec};

pub const CODE_VERSION: &str = concat!("drumlevel ", env!("CARGO_PKG_VERSION"));
pub const STAGES: [&str; 6] = ["preprocess", "screen", "delay", "augment", "train", "evaluate"];

pub const CLEAN_CSV: &str = "clean.csv";
pub const CAUSAL_JSON: &str = "causal_report.json";
pub const DELAYS_JSON: &str = "delays.json";
pub const DELAY_PROFILES_CSV: &str = "delay_profiles.csv";
pub const AUGMENTED_CSV: &str = "augmented.csv";
pub const EVAL_CSV: &str = "eval_report.csv";
pub const EVAL_JSON: &str = "eval_report.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Candidate factors: an explicit list or every non-target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidates {
    /// The string `"all"`.
    Keyword(String),
    Named(Vec<String>),
}

impl Default for Candidates {
    fn default() -> Self {
        Candidates::Keyword("all".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningParams {
    pub alpha: f64,
    pub history_len: usize,
    pub predictor_kind: PredictorKind,
    pub conditioning: ConditioningPolicy,
}

impl Default for ScreeningParams {
    fn default() -> Self {
        let d = ScreenConfig::default();
        Self { alpha: d.alpha, history_len: d.history_len, predictor_kind: d.predictor_kind, conditioning: d.conditioning }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayParams {
    pub max_lag: usize,
    pub allow_negative: bool,
}

impl Default for DelayParams {
    fn default() -> Self {
        Self { max_lag: DEFAULT_MAX_LAG, allow_negative: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    /// Off trains on the retained factors without lagged copies.
    pub enabled: bool,
    pub keep_original: bool,
    pub lags: IndexMap<String, Vec<usize>>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { enabled: true, keep_original: true, lags: IndexMap::new() }
    }
}

/// One forecaster to train. `n_features` and the seed are filled in by the
/// pipeline; `horizon` defaults to the largest evaluated horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
}

fn default_window() -> usize {
    32
}
fn default_d_model() -> usize {
    16
}
fn default_heads() -> usize {
    2
}
fn default_d_ff() -> usize {
    32
}
fn default_layers() -> usize {
    1
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            name: None,
            window_len: default_window(),
            d_model: default_d_model(),
            n_heads: default_heads(),
            d_ff: default_d_ff(),
            n_layers: default_layers(),
            horizon: None,
            dropout: 0.0,
        }
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn model_config(&self, n_features: usize, default_horizon: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            window_len: self.window_len,
            n_features,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_layers: self.n_layers,
            horizon: self.horizon.unwrap_or(default_horizon),
            dropout: self.dropout,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub target: String,
    #[serde(default)]
    pub candidates: Candidates,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub screening: ScreeningParams,
    #[serde(default)]
    pub delay: DelayParams,
    #[serde(default)]
    pub augment: AugmentParams,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizons() -> Vec<usize> {
    DEFAULT_HORIZONS.to_vec()
}

fn config_error(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Everything that influences results; the input and output locations
    /// are left out (the input enters the manifest through its content).
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.input = PathBuf::new();
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }

    /// Checks every setting and that the referenced variables exist in the
    /// input header. Returns the resolved candidate list. Reads nothing but
    /// the header.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.target.is_empty() {
            return Err(config_error("target must be set"));
        }
        if self.models.is_empty() {
            return Err(config_error("at least one model is required"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(config_error("horizons must be a non-empty list of positive steps"));
        }
        let mut names = Vec::new();
        for m in &self.models {
            if m.kind == ModelKind::Persistence {
                return Err(config_error("the persistence baseline is always evaluated; do not list it"));
            }
            let name = m.name();
            if names.contains(&name) || name == ModelKind::Persistence.name() || name.contains(['/', '\\']) {
                return Err(config_error(format!("model name `{name}` is duplicated or reserved")));
            }
            names.push(name);
            let max_h = *self.horizons.iter().max().expect("non-empty");
            m.model_config(1, max_h, 0).validate().map_err(|e| config_error(e.to_string()))?;
        }
        self.train.validate().map_err(|e| config_error(e.to_string()))?;
        self.split.validate().map_err(|e| config_error(e.to_string()))?;
        if !(self.screening.alpha > 0.0 && self.screening.alpha < 1.0) {
            return Err(config_error(format!("alpha must lie in (0, 1), got {}", self.screening.alpha)));
        }
        if self.screening.history_len == 0 || self.delay.max_lag == 0 {
            return Err(config_error("history_len and max_lag must be positive"));
        }
        let p = &self.preprocess;
        if p.outlier_window % 2 == 0 || p.smooth_window % 2 == 0 || !(p.outlier_sigmas > 0.0) {
            return Err(config_error("preprocessing windows must be odd and sigmas positive"));
        }

        let header = read_header(&self.input)?;
        if header.first().map(String::as_str) != Some("timestamp") {
            return Err(Error::MissingColumn("timestamp".into()));
        }
        let columns = &header[1..];
        if !columns.contains(&self.target) {
            return Err(config_error(format!("target `{}` is not a column of the input", self.target)));
        }
        let candidates = match &self.candidates {
            Candidates::Keyword(k) if k == "all" => columns.iter().filter(|c| **c != self.target).cloned().collect(),
            Candidates::Keyword(k) => return Err(config_error(format!("candidates must be a list or \"all\", got `{k}`"))),
            Candidates::Named(list) => list.clone(),
        };
        for c in candidates.iter().chain(self.augment.lags.keys()) {
            if !columns.contains(c) || *c == self.target {
                return Err(config_error(format!("variable `{c}` is not a candidate column of the input")));
            }
        }
        if let ConditioningPolicy::Fixed(z) = &self.screening.conditioning {
            if let Some(v) = z.iter().find(|v| !columns.contains(v)) {
                return Err(config_error(format!("conditioning variable `{v}` is not a column of the input")));
            }
        }
        Ok(candidates)
    }
}

fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
    let header = reader.headers().map_err(|e| Error::io(path, e))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    /// Relative artifact path to its sha256.
    pub artifacts: IndexMap<String, String>,
    /// Chained over the previous stage's hash and this stage's artifacts.
    pub hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: String,
    /// Hash of code version, config and input together.
    pub run_hash: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn completed(&self) -> usize {
        self.stages.iter().filter(|s| s.status == "completed").count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A validated configuration bound to its output directory.
pub struct Run {
    pub config: PipelineConfig,
    pub candidates: Vec<String>,
    pub out: PathBuf,
}

impl Run {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let candidates = config.validate()?;
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| config_error(format!("output directory {}: {e}", out.display())))?;
        Ok(Self { config, candidates, out })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> Result<String> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(rel.to_string())
    }

    fn read(&self, rel: &str) -> Result<String> {
        let path = self.path(rel);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    fn load_frame(&self, rel: &str) -> Result<SeriesFrame> {
        load_csv(self.path(rel), &[] as &[&str])
    }

    fn model_names(&self) -> Vec<String> {
        self.config.models.iter().map(ModelSpec::name).collect()
    }

    /// Runs one stage by name and returns the relative paths it wrote.
    pub fn stage(&self, name: &str) -> Result<Vec<String>> {
        let result = match name {
            "preprocess" => self.preprocess(),
            "screen" => self.screen(),
            "delay" => self.delay(),
            "augment" => self.augment(),
            "train" => self.train(),
            "evaluate" => self.evaluate(),
            other => return Err(config_error(format!("unknown stage `{other}`"))),
        };
        result.map_err(|e| e.at_stage(name))
    }

    pub fn preprocess(&self) -> Result<Vec<String>> {
        let mut schema = vec![self.config.target.clone()];
        schema.extend(self.candidates.iter().cloned());
        let frame = load_csv(&self.config.input, &schema)?.select(&schema)?;
        let cleaned = clean(&frame, &self.config.preprocess)?;
        log::info!("preprocess: {} rows, {} variables", cleaned.len(), cleaned.n_variables());
        Ok(vec![self.write(CLEAN_CSV, cleaned.to_csv_string())?])
    }

    /// Training rows of a frame under the configured split.
    fn train_part(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let (n_train, _, _) = self.config.split.lengths(frame.len());
        frame.slice(0..n_train)
    }

    pub fn screen(&self) -> Result<Vec<String>> {
        let frame = self.train_part(&self.load_frame(CLEAN_CSV)?)?;
        let s = &self.config.screening;
        let cfg = ScreenConfig {
            history_len: s.history_len,
            predictor_kind: s.predictor_kind,
            alpha: s.alpha,
            seed: derive(self.config.seed, "screen"),
            conditioning: s.conditioning.clone(),
        };
        let report = screen_all(&frame, &self.config.target, &self.candidates, &cfg)?;
        log::info!("screen: retained {:?}", report.retained());
        Ok(vec![self.write(CAUSAL_JSON, report.to_json()?)?])
    }

    fn retained(&self) -> Result<Vec<String>> {
        let report = CausalReport::from_json(&self.read(CAUSAL_JSON)?)?;
        // keep candidate order so column order does not depend on p-values
        let kept = report.retained();
        Ok(self.candidates.iter().filter(|c| kept.contains(&c.as_str())).cloned().collect())
    }

    pub fn delay(&self) -> Result<Vec<String>> {
        let frame = self.train_part(&self.load_frame(CLEAN_CSV)?)?;
        let retained = self.retained()?;
        let options = DelayOptions { allow_negative: self.config.delay.allow_negative };
        let table = build_delay_table_with(&frame, &self.config.target, &retained, self.config.delay.max_lag, options)?;
        for e in &table.entries {
            log::info!("delay: {} -> {} samples (r = {:.3})", e.variable, e.optimal_lag, e.peak_value);
        }
        let json = self.write(DELAYS_JSON, table.to_json()?)?;
        table.write_profile_csv(self.path(DELAY_PROFILES_CSV))?;
        Ok(vec![json, DELAY_PROFILES_CSV.to_string()])
    }

    /// Model inputs: target, retained factors, then their lagged copies.
    fn features(&self, frame: &SeriesFrame, retained: &[String]) -> Vec<String> {
        let mut out = vec![self.config.target.clone()];
        out.extend(retained.iter().filter(|r| frame.contains(r)).cloned());
        for name in frame.names() {
            if retained.iter().any(|r| name.starts_with(&format!("{r}__lag"))) {
                out.push(name.to_string());
            }
        }
        out
    }

    pub fn augment(&self) -> Result<Vec<String>> {
        let frame = self.load_frame(CLEAN_CSV)?;
        let mut table = DelayTable::from_json(&self.read(DELAYS_JSON)?)?;
        let a = &self.config.augment;
        let augmented = if a.enabled {
            // a zero delay would only duplicate the original column
            table.entries.retain(|e| e.optimal_lag > 0 || a.lags.contains_key(&e.variable));
            augment_with_lags(&frame, &table, &AugmentSpec { keep_original: a.keep_original, lags: a.lags.clone() })?
        } else {
            frame
        };
        let retained = self.retained()?;
        let features = self.features(&augmented, &retained);
        let selected = augmented.select(&features)?;
        log::info!("augment: features {:?}", features);
        Ok(vec![self.write(AUGMENTED_CSV, selected.to_csv_string())?])
    }

    pub fn train(&self) -> Result<Vec<String>> {
        let frame = self.load_frame(AUGMENTED_CSV)?;
        let features: Vec<String> = frame.names().map(str::to_string).collect();
        let longest = self.config.models.iter().map(|m| m.window_len + m.horizon.unwrap_or(self.max_horizon())).max().unwrap_or(1);
        let (n_train, _, _) = self.config.split.lengths(frame.len());
        let (train_raw, val_raw, _) = split(&frame, &self.config.split, longest)?;
        let (_, scales) = standardize(&frame, 0..n_train)?;
        let train_z = scales.apply(&train_raw)?;
        let val_z = scales.apply(&val_raw)?;
        let mut written = Vec::new();
        for spec in &self.config.models {
            let name = spec.name();
            let config = spec.model_config(features.len(), self.max_horizon(), derive(self.config.seed, &format!("train:{name}")));
            let train_ds = WindowDataset::from_frame(&train_z, &features, &self.config.target, config.window_len, config.horizon)?;
            let val_ds = WindowDataset::from_frame(&val_z, &features, &self.config.target, config.window_len, config.horizon)?;
            let (params, log) = train(spec.kind, &train_ds, &val_ds, &config, &self.config.train)?;
            log::info!("train: {name} best validation step {} of {}", log.best_step, log.steps_run);
            let model = TrainedModel {
                name: name.clone(),
                kind: spec.kind,
                config,
                params: Some(params),
                features: features.clone(),
                target: self.config.target.clone(),
            };
            written.push(self.write(&format!("checkpoints/{name}.json"), Checkpoint::new(model, scales.clone()).to_json()?)?);
            written.push(self.write(&format!("logs/{name}.json"), serde_json::to_string_pretty(&log)?)?);
        }
        Ok(written)
    }

    fn max_horizon(&self) -> usize {
        self.config.horizons.iter().copied().max().unwrap_or(1)
    }

    pub fn evaluate(&self) -> Result<Vec<String>> {
        let frame = self.load_frame(AUGMENTED_CSV)?;
        let mut models = Vec::new();
        let mut scales = None;
        for name in self.model_names() {
            let ck = Checkpoint::load(self.path(&format!("checkpoints/{name}.json")))?;
            scales.get_or_insert(ck.standardization.clone());
            models.push(ck.model);
        }
        let scales = scales.ok_or(Error::EmptyInput)?;
        let (_, _, test) = self.config.split.lengths(frame.len());
        let test_z = scales.apply(&frame.slice(frame.len() - test..frame.len())?)?;
        let (report, forecasts) = evaluate_with_forecasts(&models, &test_z, &scales, &self.config.horizons)?;
        for f in &report.failures {
            log::warn!("evaluate: {} at horizon {}: {}", f.model, f.horizon, f.error);
        }
        let mut written = vec![self.write(EVAL_CSV, report.to_csv_string())?, self.write(EVAL_JSON, report.to_json()?)?];
        for (name, forecast) in &forecasts {
            let rel = format!("forecasts/{name}.csv");
            written.push(self.write(&rel, forecast_csv(forecast, &self.config.horizons))?);
            written.extend(self.render(name, forecast)?);
        }
        let baseline = ModelKind::Persistence.name();
        for name in self.model_names() {
            if report.rows.iter().any(|r| r.model == name) {
                let rows = compare(&report, &name, baseline, Metric::Mse)?;
                written.push(self.write(&format!("comparisons/{name}_vs_{baseline}.csv"), comparison_csv(&rows))?);
            }
        }
        Ok(written)
    }

    /// Overlay and error histogram at the first evaluated horizon.
    fn render(&self, name: &str, forecast: &ForecastResult) -> Result<Vec<String>> {
        let h = self.config.horizons[0];
        if h > forecast.horizon {
            return Ok(Vec::new());
        }
        render_plots(&self.out, name, forecast, h)
    }

    /// Runs every stage in order, recording each in the manifest. A failing
    /// stage is recorded, earlier artifacts stay on disk, and the error is
    /// returned.
    pub fn run_all(&self) -> Result<Manifest> {
        let config_hash = self.config.fingerprint()?;
        let input_hash = hash_file(&self.config.input)?;
        let run_hash = sha256_hex(format!("{CODE_VERSION}\n{config_hash}\n{input_hash}").as_bytes());
        let mut manifest =
            Manifest { code_version: CODE_VERSION.to_string(), seed: self.config.seed, config_hash, input_hash, run_hash, stages: Vec::new() };
        let mut chain = manifest.run_hash.clone();
        for stage in STAGES {
            log::info!("stage {stage}");
            match self.stage(stage) {
                Ok(artifacts) => {
                    let mut record = IndexMap::new();
                    for rel in artifacts {
                        let hash = hash_file(&self.path(&rel))?;
                        record.insert(rel, hash);
                    }
                    let mut hasher = Sha256::new();
                    hasher.update(chain.as_bytes());
                    for (rel, hash) in &record {
                        hasher.update(format!("\n{rel} {hash}").as_bytes());
                    }
                    chain = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
                    manifest.stages.push(StageRecord {
                        stage: stage.to_string(),
                        status: "completed".into(),
                        artifacts: record,
                        hash: chain.clone(),
                        error: None,
                    });
                }
                Err(e) => {
                    manifest.stages.push(StageRecord {
                        stage: stage.to_string(),
                        status: "failed".into(),
                        artifacts: IndexMap::new(),
                        hash: String::new(),
                        error: Some(e.to_string()),
                    });
                    self.write(MANIFEST_JSON, serde_json::to_string_pretty(&manifest)?)?;
                    return Err(e);
                }
            }
        }
        self.write(MANIFEST_JSON, serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Validates the configuration, then runs all six stages.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    Run::new(config.clone())?.run_all()
}

/// `origin,target_h<k>,prediction_h<k>...` for the listed horizons that the
/// forecast covers.
pub fn forecast_csv(forecast: &ForecastResult, horizons: &[usize]) -> String {
    let hs: Vec<usize> = horizons.iter().copied().filter(|&h| h >= 1 && h <= forecast.horizon).collect();
    let mut out = String::from("origin");
    for h in &hs {
        out.push_str(&format!(",target_h{h},prediction_h{h}"));
    }
    out.push('\n');
    for s in 0..forecast.n_samples {
        out.push_str(&forecast.origins[s].to_string());
        for &h in &hs {
            let i = s * forecast.horizon + h - 1;
            out.push(',');
            out.push_str(&format_value(forecast.targets[i]));
            out.push(',');
            out.push_str(&format_value(forecast.predictions[i]));
        }
        out.push('\n');
    }
    out
}

/// Reads a forecast CSV back as (horizon, targets, predictions) columns.
pub fn read_forecast_csv(path: impl AsRef<Path>) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| Error::io(path, e))?.iter().map(str::to_string).collect();
    let mut cols: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for name in header.iter().skip(1).step_by(2) {
        let h = name
            .strip_prefix("target_h")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::MalformedRow { line: 1, message: format!("unexpected column `{name}`") })?;
        cols.push((h, Vec::new(), Vec::new()));
    }
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedRow { line: i + 2, message: e.to_string() })?;
        for (k, col) in cols.iter_mut().enumerate() {
            let parse = |j: usize| -> Result<f64> {
                record
                    .get(j)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::MalformedRow { line: i + 2, message: format!("bad value in column {j}") })
            };
            col.1.push(parse(1 + 2 * k)?);
            col.2.push(parse(2 + 2 * k)?);
        }
    }
    Ok(cols)
}

/// Writes the overlay plot, error histogram plot and histogram CSV for one
/// model at horizon `h` under `out/plots`.
pub fn render_plots(out: &Path, name: &str, forecast: &ForecastResult, h: usize) -> Result<Vec<String>> {
    let (t, p) = forecast.step(h);
    render_columns(out, name, h, &t, &p)
}

pub fn render_columns(out: &Path, name: &str, h: usize, targets: &[f64], predictions: &[f64]) -> Result<Vec<String>> {
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dist = error_distribution(targets, predictions)?;
    // the overlay shows the most recent stretch; the histogram uses all of it
    let tail = targets.len().saturating_sub(1000);
    let files = [
        (format!("plots/{name}_h{h}_overlay.svg"), overlay_svg(&targets[tail..], &predictions[tail..], &format!("{name}, {h}-step ahead"))),
        (format!("plots/{name}_h{h}_errors.svg"), histogram_svg(&dist, &format!("{name}, {h}-step errors"))),
        (format!("plots/{name}_h{h}_histogram.csv"), dist.histogram.to_csv_string()),
    ];
    let mut written = Vec::new();
    for (rel, body) in files {
        let path = out.join(&rel);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(rel);
    }
    Ok(written)
}
