//! Exact and screening log-likelihood ratios `log P(y)/Q(y)` for BIS.
//!
//! With per-iteration weights `w_i = exp((2 y_i - 1) / (2 sigma^2))` the
//! likelihood ratio is the normalised elementary symmetric polynomial
//! `e_k(w) / C(T, k)`. Everything here works on `log w` so that small noise
//! multipliers, where the weights are astronomically large, cannot overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::MechanismShape;

/// `log(exp(a) + exp(b))`, with `-inf` absorbing.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` with a max shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log C(n, k)`.
///
/// Small `min(k, n - k)` uses a direct product; larger ones use log-gamma
/// differences, whose absolute error is negligible next to the result.
pub fn log_binomial(n: usize, k: usize) -> f64 {
    assert!(k <= n, "log_binomial: k > n");
    let m = k.min(n - k);
    if m <= 1000 {
        (0..m).map(|i| ((n - i) as f64 / (m - i) as f64).ln()).sum()
    } else {
        let n = n as f64;
        let k = k as f64;
        libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
    }
}

/// Per-iteration log weights `log w_i = (2 y_i - 1) / (2 sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeightVector(Vec<f64>);

impl LogWeightVector {
    pub fn from_output(y: &[f64], sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive and finite, got {sigma}")));
        }
        let mut out = Vec::with_capacity(y.len());
        fill_log_weights(y, sigma, &mut out);
        Self::new(out)
    }

    pub fn new(log_w: Vec<f64>) -> Result<Self> {
        if let Some(i) = log_w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("log weight {i} is {}", log_w[i])));
        }
        Ok(Self(log_w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Overwrites `out` with the log weights of `y`.
#[inline]
pub fn fill_log_weights(y: &[f64], sigma: f64, out: &mut Vec<f64>) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    out.clear();
    out.extend(y.iter().map(|&v| (2.0 * v - 1.0) * inv));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioKind {
    Exact,
    UpperBound,
}

/// A log-likelihood ratio in nats, tagged with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihoodRatio {
    pub value: f64,
    pub kind: RatioKind,
}

/// Log elementary symmetric polynomials `log e_r(w)` for `r = 0..=k`.
///
/// Rolling one-dimensional suffix recursion: after processing iteration `t`,
/// `state[r]` holds `log` of the sum over `r`-subsets of `{t, .., T}`.
/// Iterations run from last to first and `r` from high to low so each cell
/// still reads the previous iteration's value. The weights are shifted by
/// their maximum first so the cells stay small and rounding stays relative
/// to `log C(T, r)` rather than to `r * max(log w)`.
pub fn log_elementary_symmetric_into(log_w: &[f64], k: usize, state: &mut Vec<f64>) {
    let shift = shifted_elementary_symmetric_into(log_w, k, state);
    if shift == f64::NEG_INFINITY {
        return;
    }
    for (r, cell) in state.iter_mut().enumerate().skip(1) {
        *cell += r as f64 * shift;
    }
}

/// Fills `state[r] = log e_r(w / max w)` and returns `log max w`.
fn shifted_elementary_symmetric_into(log_w: &[f64], k: usize, state: &mut Vec<f64>) -> f64 {
    state.clear();
    state.resize(k + 1, f64::NEG_INFINITY);
    state[0] = 0.0;
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return shift;
    }
    for (done, &lw) in log_w.iter().rev().enumerate() {
        let lw = lw - shift;
        let top = k.min(done + 1);
        for r in (1..=top).rev() {
            state[r] = log_add(state[r], lw + state[r - 1]);
        }
    }
    shift
}

pub fn log_elementary_symmetric(log_w: &[f64], k: usize) -> Vec<f64> {
    let mut state = Vec::with_capacity(k + 1);
    log_elementary_symmetric_into(log_w, k, &mut state);
    state
}

/// Reusable evaluator for one shape: caches `log C(T, k)` and the DP row.
#[derive(Debug, Clone)]
pub struct RatioEvaluator {
    shape: MechanismShape,
    log_binom: f64,
    log_t: f64,
    state: Vec<f64>,
}

impl RatioEvaluator {
    pub fn new(shape: MechanismShape) -> Self {
        Self {
            shape,
            log_binom: log_binomial(shape.iterations(), shape.participations()),
            log_t: (shape.iterations() as f64).ln(),
            state: Vec::with_capacity(shape.participations() + 1),
        }
    }

    pub fn shape(&self) -> MechanismShape {
        self.shape
    }

    /// Exact `log P(y)/Q(y)` in `O(Tk)` time and `O(k)` space.
    pub fn exact(&mut self, log_w: &[f64]) -> f64 {
        debug_assert_eq!(log_w.len(), self.shape.iterations());
        let k = self.shape.participations();
        if k == 1 {
            // Same arithmetic as the screening bound, which is tight here.
            return self.screening(log_w);
        }
        if k == log_w.len() {
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return k as f64 * max + log_w.iter().map(|v| v - max).sum::<f64>();
        }
        let shift = shifted_elementary_symmetric_into(log_w, k, &mut self.state);
        k as f64 * shift + (self.state[k] - self.log_binom)
    }

    /// Upper bound `k * log(mean(w))` in `O(T)` time.
    #[inline]
    pub fn screening(&self, log_w: &[f64]) -> f64 {
        let k = self.shape.participations() as f64;
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_w.iter().map(|v| (v - max).exp()).sum();
        k * max + k * (sum.ln() - self.log_t)
    }
}

fn check_len(log_w: &LogWeightVector, shape: MechanismShape) -> Result<()> {
    if log_w.len() != shape.iterations() {
        return Err(Error::InvalidShape(format!(
            "log weight vector has length {}, expected T = {}",
            log_w.len(),
            shape.iterations()
        )));
    }
    Ok(())
}

/// Exact log-likelihood ratio via the elementary symmetric polynomial DP.
pub fn exact_log_ratio(log_w: &LogWeightVector, shape: MechanismShape) -> Result<LogLikelihoodRatio> {
    check_len(log_w, shape)?;
    let value = RatioEvaluator::new(shape).exact(log_w.as_slice());
    Ok(LogLikelihoodRatio { value, kind: RatioKind::Exact })
}

/// Screening upper bound from Maclaurin-type averaging: the normalised
/// `e_k` never exceeds the `k`-th power of the mean weight.
pub fn screening_log_ratio(log_w: &LogWeightVector, shape: MechanismShape) -> Result<LogLikelihoodRatio> {
    check_len(log_w, shape)?;
    let value = RatioEvaluator::new(shape).screening(log_w.as_slice());
    Ok(LogLikelihoodRatio { value, kind: RatioKind::UpperBound })
}
