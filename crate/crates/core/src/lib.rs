//! Causal screening, delay inference and sequence forecasting for drum
//! level time series.

pub mod causal;
pub mod delay;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod seed;
pub mod series;
pub mod synth;

pub use causal::{granger_test, screen_all, CausalReport, CausalTestSpec, ScreenConfig};
pub use delay::{augment_with_lags, build_delay_table, infer_delay, AugmentSpec, DelayTable};
pub use evaluation::{compute_metrics, error_distribution, evaluate_horizons, EvalReport};
pub use error::{Error, ErrorKind, Result};
pub use pipeline::{run_pipeline, Manifest, PipelineConfig};
pub use models::{ModelConfig, ModelKind, TrainConfig};
pub use series::{SeriesFrame, SplitSpec, StandardizationParams};
