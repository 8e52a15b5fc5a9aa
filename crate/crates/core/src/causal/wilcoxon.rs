//! Wilcoxon signed-rank test on paired samples.
//!
//! For up to [`EXACT_MAX_N`] non-zero differences the null distribution of
//! the positive rank sum is counted exactly over all `2^n` sign assignments;
//! the count is built by dynamic programming over doubled ranks so tied
//! (half-integer) ranks stay exact. Larger samples use the normal
//! approximation with tie and continuity corrections.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest effective sample size evaluated exactly.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `a` tends to be smaller than `b` (differences `a - b` negative).
    ALess,
    /// `a` tends to be larger than `b`.
    AGreater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exact when the effective `n` is at most [`EXACT_MAX_N`], normal otherwise.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub exact: bool,
}

impl WilcoxonResult {
    /// True when every difference was zero and the test carries no evidence.
    pub fn all_zero(&self) -> bool {
        self.n_effective == 0
    }
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    wilcoxon_with_method(a, b, alternative, Method::Auto)
}

pub fn wilcoxon_with_method(a: &[f64], b: &[f64], alternative: Alternative, method: Method) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 5 {
        return Err(Error::TooFewPairs(a.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidTestSpec("non-finite paired difference".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { statistic: 0.0, p_value: 1.0, n_effective: 0, exact: true });
    }
    let ranked = doubled_ranks(&diffs);
    let w_plus2: u64 = ranked.iter().filter(|r| r.positive).map(|r| r.rank2).sum();
    let statistic = w_plus2 as f64 / 2.0;
    let exact = match method {
        Method::Auto => n <= EXACT_MAX_N,
        Method::Exact => true,
        Method::Normal => false,
    };
    let p_value = if exact {
        exact_p(&ranked, w_plus2, alternative)
    } else {
        normal_p(&ranked, statistic, alternative)
    };
    Ok(WilcoxonResult { statistic, p_value: p_value.clamp(0.0, 1.0), n_effective: n, exact })
}

struct Ranked {
    /// Twice the (average) rank, always an integer.
    rank2: u64,
    positive: bool,
    /// Size of the tie group this rank belongs to.
    tie: usize,
}

fn doubled_ranks(diffs: &[f64]) -> Vec<Ranked> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut out: Vec<Ranked> = Vec::with_capacity(diffs.len());
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let rank2 = (i + 1 + j + 1) as u64;
        let tie = j - i + 1;
        for &k in &order[i..=j] {
            out.push(Ranked { rank2, positive: diffs[k] > 0.0, tie });
        }
        i = j + 1;
    }
    out
}

/// Null distribution of the doubled positive rank sum: `counts[s]` sign
/// assignments reach sum `s`.
fn null_counts(ranked: &[Ranked]) -> Vec<f64> {
    let total: u64 = ranked.iter().map(|r| r.rank2).sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for r in ranked {
        let step = r.rank2 as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + step] += c;
            }
        }
        reach += step;
    }
    counts
}

fn exact_p(ranked: &[Ranked], w_plus2: u64, alternative: Alternative) -> f64 {
    let counts = null_counts(ranked);
    let denom = 2f64.powi(ranked.len() as i32);
    let w = w_plus2 as usize;
    let lower = counts[..=w].iter().sum::<f64>() / denom;
    let upper = counts[w..].iter().sum::<f64>() / denom;
    match alternative {
        Alternative::ALess => lower,
        Alternative::AGreater => upper,
        Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_p(ranked: &[Ranked], statistic: f64, alternative: Alternative) -> f64 {
    let n = ranked.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // each tie group of size t appears t times in `ranked`
    let tie_term: f64 = ranked
        .iter()
        .filter(|r| r.tie > 1)
        .map(|r| {
            let t = r.tie as f64;
            (t * t * t - t) / t
        })
        .sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    match alternative {
        Alternative::ALess => std_normal_cdf((statistic - mean + 0.5) / sd),
        Alternative::AGreater => 1.0 - std_normal_cdf((statistic - mean - 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((statistic - mean).abs() - 0.5).max(0.0) / sd;
            (2.0 * (1.0 - std_normal_cdf(z))).min(1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Literal enumeration of every sign assignment.
    fn brute_force(diffs: &[f64], alternative: Alternative) -> f64 {
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let mut ranks = vec![0.0; abs.len()];
        for i in 0..abs.len() {
            let less = abs.iter().filter(|&&x| x < abs[i]).count() as f64;
            let equal = abs.iter().filter(|&&x| x == abs[i]).count() as f64;
            ranks[i] = less + (equal + 1.0) / 2.0;
        }
        let observed: f64 = ranks.iter().zip(diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
        let n = diffs.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let total = (1u64 << n) as f64;
        let (lo, hi) = (le as f64 / total, ge as f64 / total);
        match alternative {
            Alternative::ALess => lo,
            Alternative::AGreater => hi,
            Alternative::TwoSided => (2.0 * lo.min(hi)).min(1.0),
        }
    }

    #[test]
    fn all_positive_six() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::AGreater).unwrap();
        assert_eq!(r.p_value, 1.0 / 64.0);
        assert_eq!(r.statistic, 21.0);
        // same pairs seen from the other side
        let r = wilcoxon_signed_rank(&b, &a, Alternative::ALess).unwrap();
        assert_eq!(r.p_value, 1.0 / 64.0);
        assert_eq!(r.statistic, 0.0);
        let r = wilcoxon_signed_rank(&a, &b, Alternative::ALess).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 2.0 / 64.0);
    }

    #[test]
    fn identical_inputs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &a, Alternative::ALess).unwrap();
        assert!(r.all_zero());
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn argument_errors() {
        assert_eq!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4], Alternative::ALess).unwrap_err(), Error::TooFewPairs(4));
        assert_eq!(
            wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5], Alternative::ALess).unwrap_err(),
            Error::LengthMismatch(6, 5)
        );
    }

    #[test]
    fn matches_brute_force_with_ties_and_zeros() {
        let mut rng = crate::seed::rng(11);
        for case in 0..60 {
            let n = 5 + case % 9;
            let a: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
            let b: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            for alt in [Alternative::ALess, Alternative::AGreater, Alternative::TwoSided] {
                let r = wilcoxon_with_method(&a, &b, alt, Method::Exact).unwrap();
                if diffs.is_empty() {
                    assert_eq!(r.p_value, 1.0);
                    continue;
                }
                let oracle = brute_force(&diffs, alt);
                assert!((r.p_value - oracle).abs() < 1e-12, "case {case} {alt:?}: {} vs {oracle}", r.p_value);
            }
        }
    }

    #[test]
    fn symmetric_noise_calibration() {
        let mut passes = 0;
        for seed in 0..100 {
            let mut rng = crate::seed::rng(1000 + seed);
            let a: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b = vec![0.0; 1000];
            let r = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
            assert!(!r.exact);
            if r.p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 98, "{passes}/100");
    }

    #[test]
    fn shift_invariance() {
        let mut rng = crate::seed::rng(5);
        let a: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let r1 = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        let a2: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        let b2: Vec<f64> = b.iter().map(|x| x + 0.25).collect();
        let r2 = wilcoxon_signed_rank(&a2, &b2, Alternative::TwoSided).unwrap();
        assert_eq!(r1.statistic, r2.statistic);
        assert!((0.0..=1.0).contains(&r1.p_value));
    }
}
