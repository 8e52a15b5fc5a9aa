//! Encoder-only transformer forecaster with hand-written backpropagation.
//!
//! Input rows are embedded by a linear map, sinusoidal position codes are
//! added, and the sequence passes through post-norm encoder blocks
//! (multi-head self-attention, residual, LayerNorm, ReLU feedforward,
//! residual, LayerNorm). The representation of the last time step feeds a
//! linear head that emits every horizon step at once.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{add_row, col_sum_acc, matmul, matmul_a_bt_acc, matmul_at_b_acc, softmax_in_place, Tensor};
use super::ModelConfig;
use crate::error::{Error, Result};

/// Variance floor inside LayerNorm.
pub const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

const LAYER_FIELDS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain", "ln2_bias",
];

impl EncoderLayer {
    fn init(d: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: Tensor::uniform_fan_in(d, d, rng),
            bq: Tensor::zeros(1, d),
            wk: Tensor::uniform_fan_in(d, d, rng),
            bk: Tensor::zeros(1, d),
            wv: Tensor::uniform_fan_in(d, d, rng),
            bv: Tensor::zeros(1, d),
            wo: Tensor::uniform_fan_in(d, d, rng),
            bo: Tensor::zeros(1, d),
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            w1: Tensor::uniform_fan_in(d, d_ff, rng),
            b1: Tensor::zeros(1, d_ff),
            w2: Tensor::uniform_fan_in(d_ff, d, rng),
            b2: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_gain, &self.ln1_bias,
            &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_gain, &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    /// `[n_features x d_model]`
    pub embed: Tensor,
    pub layers: Vec<EncoderLayer>,
    /// `[d_model x horizon]`
    pub head_w: Tensor,
    /// `[1 x horizon]`
    pub head_b: Tensor,
}

impl TransformerParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        Self {
            embed: Tensor::uniform_fan_in(config.n_features, d, rng),
            layers: (0..config.n_layers).map(|_| EncoderLayer::init(d, config.d_ff, rng)).collect(),
            head_w: Tensor::uniform_fan_in(d, config.horizon, rng),
            head_b: Tensor::zeros(1, config.horizon),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_FIELDS.iter().zip(layer.tensors()) {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.d_model;
        let expect = |t: &Tensor, r: usize, c: usize, name: &str| {
            if t.rows != r || t.cols != c {
                Err(Error::ShapeMismatch(format!("{name}: expected {r}x{c}, got {}x{}", t.rows, t.cols)))
            } else {
                Ok(())
            }
        };
        expect(&self.embed, config.n_features, d, "embed")?;
        if self.layers.len() != config.n_layers {
            return Err(Error::ShapeMismatch(format!("expected {} layers, got {}", config.n_layers, self.layers.len())));
        }
        for layer in &self.layers {
            for (name, t) in LAYER_FIELDS.iter().zip(layer.tensors()) {
                let (r, c) = match *name {
                    "wq" | "wk" | "wv" | "wo" => (d, d),
                    "w1" => (d, config.d_ff),
                    "b1" => (1, config.d_ff),
                    "w2" => (config.d_ff, d),
                    _ => (1, d),
                };
                expect(t, r, c, name)?;
            }
        }
        expect(&self.head_w, d, config.horizon, "head_w")?;
        expect(&self.head_b, 1, config.horizon, "head_b")
    }
}

/// Row-wise linear map `inputs * embed`.
pub fn embed(inputs: &Tensor, embed: &Tensor) -> Result<Tensor> {
    if inputs.cols != embed.rows {
        return Err(Error::ShapeMismatch(format!("inputs have {} features, embedding expects {}", inputs.cols, embed.rows)));
    }
    let mut out = Tensor::zeros(inputs.rows, embed.cols);
    matmul(&inputs.data, &embed.data, &mut out.data, inputs.rows, inputs.cols, embed.cols);
    Ok(out)
}

/// Sinusoidal position codes: `sin(i / 10000^(2j/d))` in even columns and
/// `cos` of the same angle in the following odd column.
pub fn positional_encoding(n: usize, d_model: usize) -> Tensor {
    let mut pe = Tensor::zeros(n, d_model);
    for i in 0..n {
        for c in 0..d_model {
            let j = c / 2;
            let angle = i as f64 / 10000f64.powf(2.0 * j as f64 / d_model as f64);
            pe.data[i * d_model + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Scaled dot-product attention. Returns the output and the weight matrix.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, d_k: usize) -> Result<(Tensor, Tensor)> {
    if q.cols != k.cols || k.rows != v.rows || d_k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "q {}x{}, k {}x{}, v {}x{}",
            q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
        )));
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut weights = Tensor::zeros(q.rows, k.rows);
    matmul_a_bt_acc(&q.data, &k.data, &mut weights.data, q.rows, q.cols, k.rows);
    for row in weights.data.chunks_exact_mut(k.rows) {
        for s in row.iter_mut() {
            *s *= scale;
        }
        softmax_in_place(row);
    }
    let mut out = Tensor::zeros(q.rows, v.cols);
    matmul(&weights.data, &v.data, &mut out.data, q.rows, k.rows, v.cols);
    Ok((out, weights))
}

/// `ReLU(a * w1 + b1) * w2 + b2`.
pub fn feedforward(a: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Result<Tensor> {
    if a.cols != w1.rows || w1.cols != b1.cols || w1.cols != w2.rows || w2.cols != b2.cols {
        return Err(Error::ShapeMismatch("feedforward weights do not chain".into()));
    }
    let mut h = Tensor::zeros(a.rows, w1.cols);
    matmul(&a.data, &w1.data, &mut h.data, a.rows, a.cols, w1.cols);
    add_row(&mut h.data, &b1.data);
    for v in &mut h.data {
        *v = v.max(0.0);
    }
    let mut o = Tensor::zeros(a.rows, w2.cols);
    matmul(&h.data, &w2.data, &mut o.data, a.rows, w2.rows, w2.cols);
    add_row(&mut o.data, &b2.data);
    Ok(o)
}

/// Normalized rows (before gain and bias) and the inverse standard deviations.
pub fn layer_norm_rows(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for (row, out) in x.chunks_exact(d).zip(xhat.chunks_exact_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (o, v) in out.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (xhat, inv_std)
}

fn apply_gain_bias(xhat: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = gain.len();
    let mut out = vec![0.0; xhat.len()];
    for (o, x) in out.chunks_exact_mut(d).zip(xhat.chunks_exact(d)) {
        for c in 0..d {
            o[c] = x[c] * gain[c] + bias[c];
        }
    }
    out
}

/// Backward pass of LayerNorm. Accumulates gain/bias gradients and returns
/// the gradient with respect to the input rows.
fn layer_norm_backward(
    dout: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let d = gain.len();
    let mut dx = vec![0.0; dout.len()];
    let mut dxhat = vec![0.0; d];
    for (r, ((go, xh), out)) in dout.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate() {
        let (mut m1, mut m2) = (0.0, 0.0);
        for c in 0..d {
            dgain[c] += go[c] * xh[c];
            dbias[c] += go[c];
            dxhat[c] = go[c] * gain[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for c in 0..d {
            out[c] = inv_std[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, one `n x n` block per head.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    att_mask: Option<Vec<f64>>,
    ln1_xhat: Vec<f64>,
    ln1_inv: Vec<f64>,
    x1: Vec<f64>,
    hpre: Vec<f64>,
    h: Vec<f64>,
    ff_mask: Option<Vec<f64>>,
    ln2_xhat: Vec<f64>,
    ln2_inv: Vec<f64>,
}

pub(crate) struct ForwardCache {
    inputs: Vec<f64>,
    layers: Vec<LayerCache>,
    readout: Vec<f64>,
}

fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Forward pass keeping every intermediate needed by [`backward`].
/// `dropout_rng` enables dropout on the attention and feedforward outputs.
pub(crate) fn forward_cached<R: Rng>(
    params: &TransformerParams,
    config: &ModelConfig,
    pe: &Tensor,
    inputs: &[f64],
    mut dropout_rng: Option<&mut R>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let n = config.window_len;
    let d = config.d_model;
    let dff = config.d_ff;
    let heads = config.n_heads;
    let dk = config.d_k();
    if inputs.len() != n * config.n_features {
        return Err(Error::ShapeMismatch(format!(
            "expected {}x{} inputs, got {} values",
            n,
            config.n_features,
            inputs.len()
        )));
    }
    let scale = 1.0 / (dk as f64).sqrt();
    let mut x = vec![0.0; n * d];
    matmul(inputs, &params.embed.data, &mut x, n, config.n_features, d);
    for (xi, p) in x.iter_mut().zip(&pe.data) {
        *xi += p;
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut head_q = vec![0.0; n * dk];
    let mut head_k = vec![0.0; n * dk];
    for layer in &params.layers {
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        matmul(&x, &layer.wq.data, &mut q, n, d, d);
        add_row(&mut q, &layer.bq.data);
        matmul(&x, &layer.wk.data, &mut k, n, d, d);
        add_row(&mut k, &layer.bk.data);
        matmul(&x, &layer.wv.data, &mut v, n, d, d);
        add_row(&mut v, &layer.bv.data);

        let mut probs = vec![0.0; heads * n * n];
        let mut ctx = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dk;
            for i in 0..n {
                head_q[i * dk..(i + 1) * dk].copy_from_slice(&q[i * d + off..i * d + off + dk]);
                head_k[i * dk..(i + 1) * dk].copy_from_slice(&k[i * d + off..i * d + off + dk]);
            }
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            matmul_a_bt_acc(&head_q, &head_k, p, n, dk, n);
            for row in p.chunks_exact_mut(n) {
                for s in row.iter_mut() {
                    *s *= scale;
                }
                softmax_in_place(row);
            }
            for i in 0..n {
                let prow = &p[i * n..(i + 1) * n];
                let crow = &mut ctx[i * d + off..i * d + off + dk];
                for (j, &pij) in prow.iter().enumerate() {
                    let vrow = &v[j * d + off..j * d + off + dk];
                    for (c, vv) in crow.iter_mut().zip(vrow) {
                        *c += pij * vv;
                    }
                }
            }
        }
        let mut att = vec![0.0; n * d];
        matmul(&ctx, &layer.wo.data, &mut att, n, d, d);
        add_row(&mut att, &layer.bo.data);
        let att_mask = match dropout_rng.as_deref_mut() {
            Some(rng) if config.dropout > 0.0 => {
                let m = dropout_mask(n * d, config.dropout, rng);
                for (a, mm) in att.iter_mut().zip(&m) {
                    *a *= mm;
                }
                Some(m)
            }
            _ => None,
        };
        let r1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
        let (ln1_xhat, ln1_inv) = layer_norm_rows(&r1, d);
        let x1 = apply_gain_bias(&ln1_xhat, &layer.ln1_gain.data, &layer.ln1_bias.data);

        let mut hpre = vec![0.0; n * dff];
        matmul(&x1, &layer.w1.data, &mut hpre, n, d, dff);
        add_row(&mut hpre, &layer.b1.data);
        let hact: Vec<f64> = hpre.iter().map(|v| v.max(0.0)).collect();
        let mut f = vec![0.0; n * d];
        matmul(&hact, &layer.w2.data, &mut f, n, dff, d);
        add_row(&mut f, &layer.b2.data);
        let ff_mask = match dropout_rng.as_deref_mut() {
            Some(rng) if config.dropout > 0.0 => {
                let m = dropout_mask(n * d, config.dropout, rng);
                for (a, mm) in f.iter_mut().zip(&m) {
                    *a *= mm;
                }
                Some(m)
            }
            _ => None,
        };
        let r2: Vec<f64> = x1.iter().zip(&f).map(|(a, b)| a + b).collect();
        let (ln2_xhat, ln2_inv) = layer_norm_rows(&r2, d);
        let x2 = apply_gain_bias(&ln2_xhat, &layer.ln2_gain.data, &layer.ln2_bias.data);
        layers.push(LayerCache {
            x: std::mem::replace(&mut x, x2),
            q,
            k,
            v,
            probs,
            ctx,
            att_mask,
            ln1_xhat,
            ln1_inv,
            x1,
            hpre,
            h: hact,
            ff_mask,
            ln2_xhat,
            ln2_inv,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("transformer encoder"));
    }
    let readout = x[(n - 1) * d..n * d].to_vec();
    let mut pred = params.head_b.data.clone();
    for (c, &z) in readout.iter().enumerate() {
        for (p, w) in pred.iter_mut().zip(params.head_w.row(c)) {
            *p += z * w;
        }
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("transformer head"));
    }
    Ok((pred, ForwardCache { inputs: inputs.to_vec(), layers, readout }))
}

/// Prediction for one `[window_len x n_features]` input window.
pub fn forward_transformer(params: &TransformerParams, config: &ModelConfig, inputs: &Tensor) -> Result<Vec<f64>> {
    if inputs.rows != config.window_len || inputs.cols != config.n_features {
        return Err(Error::ShapeMismatch(format!(
            "expected {}x{} inputs, got {}x{}",
            config.window_len, config.n_features, inputs.rows, inputs.cols
        )));
    }
    let pe = positional_encoding(config.window_len, config.d_model);
    forward_cached::<rand_chacha::ChaCha8Rng>(params, config, &pe, &inputs.data, None).map(|(p, _)| p)
}

/// Attention weights of every layer and head for one input window,
/// `[layer][head]` each `window_len x window_len`.
pub fn attention_maps(params: &TransformerParams, config: &ModelConfig, inputs: &Tensor) -> Result<Vec<Vec<Tensor>>> {
    let pe = positional_encoding(config.window_len, config.d_model);
    let (_, cache) = forward_cached::<rand_chacha::ChaCha8Rng>(params, config, &pe, &inputs.data, None)?;
    let n = config.window_len;
    Ok(cache
        .layers
        .iter()
        .map(|l| {
            l.probs
                .chunks_exact(n * n)
                .map(|p| Tensor { rows: n, cols: n, data: p.to_vec() })
                .collect()
        })
        .collect())
}

/// Accumulates into `grads` the gradient of `dpred . prediction` for the
/// sample that produced `cache`.
pub(crate) fn backward(
    params: &TransformerParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    dpred: &[f64],
    grads: &mut TransformerParams,
) {
    let n = config.window_len;
    let d = config.d_model;
    let dff = config.d_ff;
    let heads = config.n_heads;
    let dk = config.d_k();
    let scale = 1.0 / (dk as f64).sqrt();

    // head
    for (c, &z) in cache.readout.iter().enumerate() {
        for (g, dp) in grads.head_w.data[c * config.horizon..(c + 1) * config.horizon].iter_mut().zip(dpred) {
            *g += z * dp;
        }
    }
    for (g, dp) in grads.head_b.data.iter_mut().zip(dpred) {
        *g += dp;
    }
    let mut dx = vec![0.0; n * d];
    for c in 0..d {
        dx[(n - 1) * d + c] = params.head_w.row(c).iter().zip(dpred).map(|(w, g)| w * g).sum();
    }

    let mut dhead_ctx = vec![0.0; n * dk];
    let mut dprobs = vec![0.0; n * n];
    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[l];
        // second LayerNorm
        let dr2 = layer_norm_backward(&dx, &lc.ln2_xhat, &lc.ln2_inv, &layer.ln2_gain.data, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
        let mut dx1 = dr2.clone();
        let mut df = dr2;
        if let Some(m) = &lc.ff_mask {
            for (a, mm) in df.iter_mut().zip(m) {
                *a *= mm;
            }
        }
        // feedforward
        matmul_at_b_acc(&lc.h, &df, &mut g.w2.data, n, dff, d);
        col_sum_acc(&df, &mut g.b2.data);
        let mut dh = vec![0.0; n * dff];
        matmul_a_bt_acc(&df, &layer.w2.data, &mut dh, n, d, dff);
        for (dv, pre) in dh.iter_mut().zip(&lc.hpre) {
            if *pre <= 0.0 {
                *dv = 0.0;
            }
        }
        matmul_at_b_acc(&lc.x1, &dh, &mut g.w1.data, n, d, dff);
        col_sum_acc(&dh, &mut g.b1.data);
        matmul_a_bt_acc(&dh, &layer.w1.data, &mut dx1, n, dff, d);
        // first LayerNorm
        let dr1 = layer_norm_backward(&dx1, &lc.ln1_xhat, &lc.ln1_inv, &layer.ln1_gain.data, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
        let mut dx_in = dr1.clone();
        let mut datt = dr1;
        if let Some(m) = &lc.att_mask {
            for (a, mm) in datt.iter_mut().zip(m) {
                *a *= mm;
            }
        }
        // output projection
        matmul_at_b_acc(&lc.ctx, &datt, &mut g.wo.data, n, d, d);
        col_sum_acc(&datt, &mut g.bo.data);
        let mut dctx = vec![0.0; n * d];
        matmul_a_bt_acc(&datt, &layer.wo.data, &mut dctx, n, d, d);
        // attention heads
        let mut dq = vec![0.0; n * d];
        let mut dk_full = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dk;
            let p = &lc.probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                dhead_ctx[i * dk..(i + 1) * dk].copy_from_slice(&dctx[i * d + off..i * d + off + dk]);
            }
            // dP = dC V_h^T ; dV_h = P^T dC
            for i in 0..n {
                let dci = &dhead_ctx[i * dk..(i + 1) * dk];
                for j in 0..n {
                    let vrow = &lc.v[j * d + off..j * d + off + dk];
                    dprobs[i * n + j] = dci.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    let pij = p[i * n + j];
                    if pij != 0.0 {
                        for (t, dcv) in dv[j * d + off..j * d + off + dk].iter_mut().zip(dci) {
                            *t += pij * dcv;
                        }
                    }
                }
            }
            // softmax backward, then the scaled scores
            for i in 0..n {
                let prow = &p[i * n..(i + 1) * n];
                let drow = &mut dprobs[i * n..(i + 1) * n];
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (dd, pp) in drow.iter_mut().zip(prow) {
                    *dd = pp * (*dd - dot) * scale;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let ds = dprobs[i * n + j];
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dk {
                        dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                        dk_full[j * d + off + c] += ds * lc.q[i * d + off + c];
                    }
                }
            }
        }
        for (w, dgrad, gw, gb) in [
            (&layer.wq, &dq, &mut g.wq.data, &mut g.bq.data),
            (&layer.wk, &dk_full, &mut g.wk.data, &mut g.bk.data),
            (&layer.wv, &dv, &mut g.wv.data, &mut g.bv.data),
        ] {
            matmul_at_b_acc(&lc.x, dgrad, gw, n, d, d);
            col_sum_acc(dgrad, gb);
            matmul_a_bt_acc(dgrad, &w.data, &mut dx_in, n, d, d);
        }
        dx = dx_in;
    }
    // positional codes are constant; embedding
    matmul_at_b_acc(&cache.inputs, &dx, &mut grads.embed.data, n, config.n_features, d);
}
