//! Granger-style causal screening of candidate factors against a target.
//!
//! For each candidate two one-step predictors are fitted on the first 70% of
//! the frame: a restricted one on target and conditioning histories, and an
//! unrestricted one that also sees the candidate's history. Their absolute
//! one-step errors on the remaining 30% are compared pairwise with a
//! one-sided Wilcoxon signed-rank test; the candidate is retained when the
//! unrestricted errors are significantly smaller.

pub mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, ModelKind};
use crate::series::SeriesFrame;
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_with_method, Alternative, Method, WilcoxonResult};

/// Fraction of the frame used to fit the predictors.
pub const FIT_FRACTION: f64 = 0.7;

/// Relative pivot below which a regressor is treated as a linear
/// combination of the regressors before it and left out of the fit.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    LinearAr,
    Lstm,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTestSpec {
    pub target: String,
    pub candidate: String,
    pub conditioning: Vec<String>,
    pub history_len: usize,
    pub predictor_kind: PredictorKind,
    pub alpha: f64,
    pub seed: u64,
}

impl CausalTestSpec {
    pub fn new(target: impl Into<String>, candidate: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            candidate: candidate.into(),
            conditioning: Vec::new(),
            history_len: 10,
            predictor_kind: PredictorKind::LinearAr,
            alpha: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditioning.contains(&self.candidate) {
            return Err(Error::InvalidTestSpec(format!("candidate `{}` is in the conditioning set", self.candidate)));
        }
        if self.conditioning.contains(&self.target) {
            return Err(Error::InvalidTestSpec(format!("target `{}` is in the conditioning set", self.target)));
        }
        if self.candidate == self.target {
            return Err(Error::InvalidTestSpec("candidate equals target".into()));
        }
        if self.history_len == 0 {
            return Err(Error::InvalidTestSpec("history_len must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidTestSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Outcome of one candidate's test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEntry {
    pub candidate: String,
    pub p_value: f64,
    pub statistic: f64,
    pub retained: bool,
    pub n_pairs: usize,
    /// Mean absolute one-step error with the candidate's history.
    pub mae_with: f64,
    /// Mean absolute one-step error without it.
    pub mae_without: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScreenEntry {
    Tested(CausalEntry),
    Failed { candidate: String, error: String },
}

impl ScreenEntry {
    pub fn candidate(&self) -> &str {
        match self {
            ScreenEntry::Tested(e) => &e.candidate,
            ScreenEntry::Failed { candidate, .. } => candidate,
        }
    }

    pub fn tested(&self) -> Option<&CausalEntry> {
        match self {
            ScreenEntry::Tested(e) => Some(e),
            ScreenEntry::Failed { .. } => None,
        }
    }
}

/// Per-candidate results ordered by ascending p-value; failed candidates last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CausalReport {
    pub entries: Vec<ScreenEntry>,
}

impl CausalReport {
    pub fn retained(&self) -> Vec<&str> {
        self.entries.iter().filter_map(ScreenEntry::tested).filter(|e| e.retained).map(|e| e.candidate.as_str()).collect()
    }

    pub fn get(&self, candidate: &str) -> Option<&ScreenEntry> {
        self.entries.iter().find(|e| e.candidate() == candidate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// How the conditioning set is chosen for each candidate in [`screen_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningPolicy {
    /// Every other candidate.
    Mutual,
    /// The same user-supplied list for all candidates.
    Fixed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub history_len: usize,
    pub predictor_kind: PredictorKind,
    pub alpha: f64,
    pub seed: u64,
    pub conditioning: ConditioningPolicy,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            history_len: 10,
            predictor_kind: PredictorKind::LinearAr,
            alpha: 0.05,
            seed: 0,
            conditioning: ConditioningPolicy::Mutual,
        }
    }
}

/// Rows `t` usable for one-step prediction with history `tau`, split into
/// fit rows `[tau, fit_end)` and evaluation rows `[fit_end + tau, n)`; the
/// evaluation windows never reach back into the fit half.
#[derive(Debug, Clone, Copy)]
struct RowPlan {
    tau: usize,
    fit_end: usize,
    n: usize,
}

impl RowPlan {
    fn new(n: usize, tau: usize) -> Result<Self> {
        let fit_end = ((n as f64) * FIT_FRACTION).floor() as usize;
        let plan = Self { tau, fit_end, n };
        if fit_end <= tau || plan.eval_rows().len() < 5 {
            return Err(Error::TooFewPairs(plan.eval_rows().len()));
        }
        Ok(plan)
    }

    fn fit_rows(&self) -> std::ops::Range<usize> {
        self.tau..self.fit_end
    }

    fn eval_rows(&self) -> std::ops::Range<usize> {
        (self.fit_end + self.tau).min(self.n)..self.n
    }
}

/// Lagged regressors `[1, v0[t-1..=t-tau], v1[t-1..=t-tau], ...]` with the
/// Gram matrix and cross products accumulated over the fit rows.
struct LaggedDesign<'a> {
    series: Vec<&'a [f64]>,
    target: &'a [f64],
    plan: RowPlan,
    gram: Vec<f64>,
    xty: Vec<f64>,
    width: usize,
}

impl<'a> LaggedDesign<'a> {
    fn new(target: &'a [f64], series: Vec<&'a [f64]>, plan: RowPlan) -> Self {
        let width = 1 + series.len() * plan.tau;
        let mut gram = vec![0.0; width * width];
        let mut xty = vec![0.0; width];
        let mut row = vec![0.0; width];
        for t in plan.fit_rows() {
            fill_row(&series, plan.tau, t, &mut row);
            let y = target[t];
            for i in 0..width {
                let ri = row[i];
                xty[i] += ri * y;
                let g = &mut gram[i * width..i * width + i + 1];
                for (gj, rj) in g.iter_mut().zip(&row[..=i]) {
                    *gj += ri * rj;
                }
            }
        }
        Self { series, target, plan, gram, xty, width }
    }

    /// Column indices of the intercept plus the lag blocks of `blocks`.
    fn columns(&self, blocks: &[usize]) -> Vec<usize> {
        let tau = self.plan.tau;
        std::iter::once(0).chain(blocks.iter().flat_map(|b| (0..tau).map(move |k| 1 + b * tau + k))).collect()
    }

    fn fit(&self, cols: &[usize]) -> Result<LinearFit> {
        let g = |i: usize, j: usize| {
            let (a, b) = if i >= j { (i, j) } else { (j, i) };
            self.gram[a * self.width + b]
        };
        let p = cols.len();
        let mut l = vec![0.0; p * p];
        let mut kept = vec![false; p];
        for j in 0..p {
            let ajj = g(cols[j], cols[j]);
            let mut d = ajj;
            for k in 0..j {
                if kept[k] {
                    d -= l[j * p + k] * l[j * p + k];
                }
            }
            if !(ajj > 0.0) || d <= PIVOT_TOLERANCE * ajj {
                continue;
            }
            let ljj = d.sqrt();
            l[j * p + j] = ljj;
            kept[j] = true;
            for i in j + 1..p {
                let mut s = g(cols[i], cols[j]);
                for k in 0..j {
                    if kept[k] {
                        s -= l[i * p + k] * l[j * p + k];
                    }
                }
                l[i * p + j] = s / ljj;
            }
        }
        // forward then backward substitution over the kept columns
        let mut z = vec![0.0; p];
        for i in 0..p {
            if !kept[i] {
                continue;
            }
            let mut s = self.xty[cols[i]];
            for k in 0..i {
                if kept[k] {
                    s -= l[i * p + k] * z[k];
                }
            }
            z[i] = s / l[i * p + i];
        }
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            if !kept[i] {
                continue;
            }
            let mut s = z[i];
            for k in i + 1..p {
                if kept[k] {
                    s -= l[k * p + i] * beta[k];
                }
            }
            beta[i] = s / l[i * p + i];
        }
        if beta.iter().any(|b| !b.is_finite()) || !kept.iter().any(|&k| k) {
            return Err(Error::SingularDesign);
        }
        Ok(LinearFit { cols: cols.to_vec(), beta, kept })
    }

    fn abs_errors(&self, fit: &LinearFit) -> Vec<f64> {
        let mut row = vec![0.0; self.width];
        self.plan
            .eval_rows()
            .map(|t| {
                fill_row(&self.series, self.plan.tau, t, &mut row);
                let pred: f64 = fit.cols.iter().zip(&fit.beta).map(|(&c, b)| row[c] * b).sum();
                (self.target[t] - pred).abs()
            })
            .collect()
    }
}

fn fill_row(series: &[&[f64]], tau: usize, t: usize, row: &mut [f64]) {
    row[0] = 1.0;
    for (b, s) in series.iter().enumerate() {
        for k in 0..tau {
            row[1 + b * tau + k] = s[t - 1 - k];
        }
    }
}

struct LinearFit {
    cols: Vec<usize>,
    beta: Vec<f64>,
    kept: Vec<bool>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn entry_from_errors(candidate: &str, with: &[f64], without: &[f64], alpha: f64) -> Result<CausalEntry> {
    let w = wilcoxon_signed_rank(with, without, Alternative::ALess)?;
    Ok(CausalEntry {
        candidate: candidate.to_string(),
        p_value: w.p_value,
        statistic: w.statistic,
        retained: w.p_value < alpha,
        n_pairs: with.len(),
        mae_with: mean(with),
        mae_without: mean(without),
    })
}

/// Linear-AR test of `candidate` (block index) against restricted `base` blocks.
fn linear_test(design: &LaggedDesign<'_>, base: &[usize], candidate_block: usize, name: &str, alpha: f64) -> Result<CausalEntry> {
    let restricted_cols = design.columns(base);
    let mut all = base.to_vec();
    all.push(candidate_block);
    let unrestricted_cols = design.columns(&all);
    let restricted = design.fit(&restricted_cols)?;
    let unrestricted = design.fit(&unrestricted_cols)?;
    let without = design.abs_errors(&restricted);
    // when every candidate lag is a linear combination of the restricted
    // regressors the two predictors coincide
    let adds_nothing = unrestricted.kept[restricted_cols.len()..].iter().all(|k| !k);
    let with = if adds_nothing { without.clone() } else { design.abs_errors(&unrestricted) };
    entry_from_errors(name, &with, &without, alpha)
}

/// Tests whether `spec.candidate` Granger-causes `spec.target`.
pub fn granger_test(frame: &SeriesFrame, spec: &CausalTestSpec) -> Result<CausalEntry> {
    spec.validate()?;
    let target = frame.get(&spec.target)?;
    let candidate = frame.get(&spec.candidate)?;
    let conditioning = spec.conditioning.iter().map(|z| frame.get(z)).collect::<Result<Vec<_>>>()?;
    let plan = RowPlan::new(frame.len(), spec.history_len)?;
    match spec.predictor_kind {
        PredictorKind::LinearAr => {
            let mut series = vec![target];
            series.extend(conditioning);
            series.push(candidate);
            let base: Vec<usize> = (0..series.len() - 1).collect();
            let cand = series.len() - 1;
            let design = LaggedDesign::new(target, series, plan);
            linear_test(&design, &base, cand, &spec.candidate, spec.alpha)
        }
        PredictorKind::Lstm | PredictorKind::Transformer => {
            let kind = if spec.predictor_kind == PredictorKind::Lstm { ModelKind::Lstm } else { ModelKind::Transformer };
            let seed = crate::seed::derive(spec.seed, &spec.candidate);
            let mut restricted = vec![target];
            restricted.extend(conditioning);
            let mut unrestricted = restricted.clone();
            unrestricted.push(candidate);
            let without = model_errors(kind, &restricted, target, plan, seed)?;
            let with = model_errors(kind, &unrestricted, target, plan, seed)?;
            entry_from_errors(&spec.candidate, &with, &without, spec.alpha)
        }
    }
}

/// Absolute one-step errors over the evaluation rows of a neural predictor
/// trained on the fit rows.
fn model_errors(kind: ModelKind, features: &[&[f64]], target: &[f64], plan: RowPlan, seed: u64) -> Result<Vec<f64>> {
    let mut config = models::ModelConfig::tiny(features.len(), plan.tau, 1);
    config.seed = seed;
    let train = models::TrainConfig { max_steps: 300, batch_size: 16, patience: 5, ..Default::default() };
    let preds = models::fit_one_step(kind, &config, &train, features, target, plan.fit_end, plan.eval_rows())?;
    Ok(plan.eval_rows().zip(preds).map(|(t, p)| (target[t] - p).abs()).collect())
}

/// Screens every candidate against `target`. Per-candidate failures are
/// recorded in the report instead of aborting the batch.
pub fn screen_all(frame: &SeriesFrame, target: &str, candidates: &[String], config: &ScreenConfig) -> Result<CausalReport> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut entries: Vec<ScreenEntry> = match config.predictor_kind {
        PredictorKind::LinearAr => screen_linear(frame, target, candidates, config)?,
        _ => candidates
            .iter()
            .map(|c| {
                let spec = spec_for(target, c, candidates, config);
                match granger_test(frame, &spec) {
                    Ok(e) => ScreenEntry::Tested(e),
                    Err(e) => ScreenEntry::Failed { candidate: c.clone(), error: e.to_string() },
                }
            })
            .collect(),
    };
    entries.sort_by(|a, b| match (a, b) {
        (ScreenEntry::Tested(x), ScreenEntry::Tested(y)) => x.p_value.total_cmp(&y.p_value),
        (ScreenEntry::Tested(_), ScreenEntry::Failed { .. }) => std::cmp::Ordering::Less,
        (ScreenEntry::Failed { .. }, ScreenEntry::Tested(_)) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Equal,
    });
    Ok(CausalReport { entries })
}

fn spec_for(target: &str, candidate: &str, candidates: &[String], config: &ScreenConfig) -> CausalTestSpec {
    let conditioning = match &config.conditioning {
        ConditioningPolicy::Mutual => candidates.iter().filter(|c| *c != candidate).cloned().collect(),
        ConditioningPolicy::Fixed(z) => z.iter().filter(|c| *c != candidate).cloned().collect(),
    };
    CausalTestSpec {
        target: target.to_string(),
        candidate: candidate.to_string(),
        conditioning,
        history_len: config.history_len,
        predictor_kind: config.predictor_kind,
        alpha: config.alpha,
        seed: config.seed,
    }
}

/// Linear screening shares one Gram matrix over the union of all series;
/// each test selects its columns from it. Results are identical to calling
/// [`granger_test`] per candidate.
fn screen_linear(frame: &SeriesFrame, target: &str, candidates: &[String], config: &ScreenConfig) -> Result<Vec<ScreenEntry>> {
    let mut names: Vec<String> = vec![target.to_string()];
    if let ConditioningPolicy::Fixed(z) = &config.conditioning {
        names.extend(z.iter().filter(|n| !candidates.contains(n)).cloned());
    }
    names.extend(candidates.iter().cloned());
    let y = frame.get(target)?;
    // a missing candidate only fails its own entry
    let mut series = Vec::with_capacity(names.len());
    let mut present = Vec::with_capacity(names.len());
    for name in &names {
        match frame.get(name) {
            Ok(s) => {
                series.push(s);
                present.push(true);
            }
            Err(e) if candidates.contains(name) => {
                present.push(false);
                let _ = e;
            }
            Err(e) => return Err(e),
        }
    }
    let block_of = |name: &str| -> Option<usize> {
        let idx = names.iter().position(|n| n == name)?;
        present[idx].then(|| present[..idx].iter().filter(|&&p| p).count())
    };
    let plan = RowPlan::new(frame.len(), config.history_len)?;
    let design = LaggedDesign::new(y, series, plan);
    let entries = candidates
        .iter()
        .map(|c| {
            let result = (|| {
                let spec = spec_for(target, c, candidates, config);
                spec.validate()?;
                let cand = block_of(c).ok_or_else(|| Error::UnknownVariable(c.clone()))?;
                let mut base = vec![0];
                for z in &spec.conditioning {
                    base.push(block_of(z).ok_or_else(|| Error::UnknownVariable(z.clone()))?);
                }
                linear_test(&design, &base, cand, c, config.alpha)
            })();
            match result {
                Ok(e) => ScreenEntry::Tested(e),
                Err(e) => ScreenEntry::Failed { candidate: c.clone(), error: e.to_string() },
            }
        })
        .collect();
    Ok(entries)
}
