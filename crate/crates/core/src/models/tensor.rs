//! Dense row-major matrices and the handful of kernels the models need.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]` with `fan_in = rows`.
    pub fn uniform_fan_in(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }
}

/// `out (m x n) = a (m x k) * b (k x n)`, overwriting `out`.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (oj, bj) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *oj += aip * bj;
            }
        }
    }
}

/// `out (k x n) += a^T * b` for `a (m x k)`, `b (m x n)`.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (oj, bj) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *oj += aip * bj;
            }
        }
    }
}

/// `out (m x k) += a * b^T` for `a (m x n)`, `b (k x n)`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Adds a row vector to every row.
pub fn add_row(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Accumulates column sums of `m` into `out`.
pub fn col_sum_acc(m: &[f64], out: &mut [f64]) {
    for row in m.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_loops() {
        let mut rng = crate::seed::rng(1);
        let (m, k, n) = (4, 3, 5);
        let a = Tensor::uniform_fan_in(m, k, &mut rng);
        let b = Tensor::uniform_fan_in(k, n, &mut rng);
        let mut out = vec![0.0; m * n];
        matmul(&a.data, &b.data, &mut out, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
                assert!((out[i * n + j] - want).abs() < 1e-14);
            }
        }
        // a^T * c with c (m x n)
        let c = Tensor::uniform_fan_in(m, n, &mut rng);
        let mut atc = vec![0.0; k * n];
        matmul_at_b_acc(&a.data, &c.data, &mut atc, m, k, n);
        for p in 0..k {
            for j in 0..n {
                let want: f64 = (0..m).map(|i| a.get(i, p) * c.get(i, j)).sum();
                assert!((atc[p * n + j] - want).abs() < 1e-14);
            }
        }
        // c * b^T with b (k x n)
        let mut cbt = vec![0.0; m * k];
        matmul_a_bt_acc(&c.data, &b.data, &mut cbt, m, n, k);
        for i in 0..m {
            for p in 0..k {
                let want: f64 = (0..n).map(|j| c.get(i, j) * b.get(p, j)).sum();
                assert!((cbt[i * k + p] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = vec![1000.0, 1001.0, -5.0];
        softmax_in_place(&mut row);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(row.iter().all(|v| *v >= 0.0));
    }
}
