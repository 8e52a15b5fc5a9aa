//! Single-layer LSTM forecaster with backpropagation through time.
//!
//! Gate blocks are laid out `[input, forget, cell, output]` along the
//! columns of the stacked weight matrices. The final hidden state feeds a
//! linear head over the horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `[n_features x 4*hidden]`
    pub wx: Tensor,
    /// `[hidden x 4*hidden]`
    pub wh: Tensor,
    /// `[1 x 4*hidden]`
    pub b: Tensor,
    /// `[hidden x horizon]`
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl LstmParams {
    /// Weights uniform by fan-in; forget-gate bias starts at 1.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let h = config.d_model;
        let mut b = Tensor::zeros(1, 4 * h);
        b.data[h..2 * h].fill(1.0);
        Self {
            wx: Tensor::uniform_fan_in(config.n_features, 4 * h, rng),
            wh: Tensor::uniform_fan_in(h, 4 * h, rng),
            b,
            head_w: Tensor::uniform_fan_in(h, config.horizon, rng),
            head_b: Tensor::zeros(1, config.horizon),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("wx".into(), &self.wx),
            ("wh".into(), &self.wh),
            ("b".into(), &self.b),
            ("head_w".into(), &self.head_w),
            ("head_b".into(), &self.head_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.wx, &mut self.wh, &mut self.b, &mut self.head_w, &mut self.head_b]
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let h = config.d_model;
        let want = [
            (config.n_features, 4 * h),
            (h, 4 * h),
            (1, 4 * h),
            (h, config.horizon),
            (1, config.horizon),
        ];
        for ((name, t), (r, c)) in self.named_tensors().into_iter().zip(want) {
            if t.rows != r || t.cols != c {
                return Err(Error::ShapeMismatch(format!("{name}: expected {r}x{c}, got {}x{}", t.rows, t.cols)));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct ForwardCache {
    inputs: Vec<f64>,
    /// Activated gates per step, `4*hidden` each.
    gates: Vec<f64>,
    /// Cell states `c_0 .. c_T` (c_0 = 0).
    cells: Vec<f64>,
    /// Hidden states `h_0 .. h_T` (h_0 = 0).
    hidden: Vec<f64>,
}

pub(crate) fn forward_cached(params: &LstmParams, config: &ModelConfig, inputs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let n = config.window_len;
    let f = config.n_features;
    let h = config.d_model;
    if inputs.len() != n * f {
        return Err(Error::ShapeMismatch(format!("expected {}x{} inputs, got {} values", n, f, inputs.len())));
    }
    let mut gates = vec![0.0; n * 4 * h];
    let mut cells = vec![0.0; (n + 1) * h];
    let mut hidden = vec![0.0; (n + 1) * h];
    let mut a = vec![0.0; 4 * h];
    for t in 0..n {
        a.copy_from_slice(&params.b.data);
        for (p, &xv) in inputs[t * f..(t + 1) * f].iter().enumerate() {
            for (ai, w) in a.iter_mut().zip(params.wx.row(p)) {
                *ai += xv * w;
            }
        }
        for p in 0..h {
            let hv = hidden[t * h + p];
            if hv != 0.0 {
                for (ai, w) in a.iter_mut().zip(params.wh.row(p)) {
                    *ai += hv * w;
                }
            }
        }
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_g = sigmoid(a[j]);
            let f_g = sigmoid(a[h + j]);
            let c_g = a[2 * h + j].tanh();
            let o_g = sigmoid(a[3 * h + j]);
            g[j] = i_g;
            g[h + j] = f_g;
            g[2 * h + j] = c_g;
            g[3 * h + j] = o_g;
            let c = f_g * cells[t * h + j] + i_g * c_g;
            cells[(t + 1) * h + j] = c;
            hidden[(t + 1) * h + j] = o_g * c.tanh();
        }
    }
    let last = &hidden[n * h..(n + 1) * h];
    if last.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("lstm recurrence"));
    }
    let mut pred = params.head_b.data.clone();
    for (c, &z) in last.iter().enumerate() {
        for (p, w) in pred.iter_mut().zip(params.head_w.row(c)) {
            *p += z * w;
        }
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("lstm head"));
    }
    Ok((pred, ForwardCache { inputs: inputs.to_vec(), gates, cells, hidden }))
}

/// Prediction for one `[window_len x n_features]` input window.
pub fn forward_lstm(params: &LstmParams, config: &ModelConfig, inputs: &Tensor) -> Result<Vec<f64>> {
    if inputs.rows != config.window_len || inputs.cols != config.n_features {
        return Err(Error::ShapeMismatch(format!(
            "expected {}x{} inputs, got {}x{}",
            config.window_len, config.n_features, inputs.rows, inputs.cols
        )));
    }
    forward_cached(params, config, &inputs.data).map(|(p, _)| p)
}

/// Cell states `c_1 .. c_T` of one window, for inspection.
pub fn cell_states(params: &LstmParams, config: &ModelConfig, inputs: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (_, cache) = forward_cached(params, config, &inputs.data)?;
    Ok(cache.cells.chunks_exact(config.d_model).skip(1).map(<[f64]>::to_vec).collect())
}

pub(crate) fn backward(params: &LstmParams, config: &ModelConfig, cache: &ForwardCache, dpred: &[f64], grads: &mut LstmParams) {
    let n = config.window_len;
    let f = config.n_features;
    let h = config.d_model;
    let horizon = config.horizon;
    let last = &cache.hidden[n * h..(n + 1) * h];
    for (c, &z) in last.iter().enumerate() {
        for (g, dp) in grads.head_w.data[c * horizon..(c + 1) * horizon].iter_mut().zip(dpred) {
            *g += z * dp;
        }
    }
    for (g, dp) in grads.head_b.data.iter_mut().zip(dpred) {
        *g += dp;
    }
    let mut dh: Vec<f64> = (0..h).map(|c| params.head_w.row(c).iter().zip(dpred).map(|(w, g)| w * g).sum()).collect();
    let mut dc = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for t in (0..n).rev() {
        let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let c_t = &cache.cells[(t + 1) * h..(t + 2) * h];
        for j in 0..h {
            let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = c_t[j].tanh();
            let d_o = dh[j] * tc;
            let dcell = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
            da[j] = dcell * c_g * i_g * (1.0 - i_g);
            da[h + j] = dcell * c_prev[j] * f_g * (1.0 - f_g);
            da[2 * h + j] = dcell * i_g * (1.0 - c_g * c_g);
            da[3 * h + j] = d_o * o_g * (1.0 - o_g);
            dc[j] = dcell * f_g;
        }
        for (p, &xv) in cache.inputs[t * f..(t + 1) * f].iter().enumerate() {
            if xv != 0.0 {
                for (gw, d) in grads.wx.data[p * 4 * h..(p + 1) * 4 * h].iter_mut().zip(&da) {
                    *gw += xv * d;
                }
            }
        }
        let h_prev = &cache.hidden[t * h..(t + 1) * h];
        for (p, &hv) in h_prev.iter().enumerate() {
            if hv != 0.0 {
                for (gw, d) in grads.wh.data[p * 4 * h..(p + 1) * 4 * h].iter_mut().zip(&da) {
                    *gw += hv * d;
                }
            }
        }
        for (gb, d) in grads.b.data.iter_mut().zip(&da) {
            *gb += d;
        }
        for (p, dhp) in dh.iter_mut().enumerate() {
            *dhp = params.wh.row(p).iter().zip(&da).map(|(w, d)| w * d).sum();
        }
    }
}
