//! Closed-form privacy-loss expansions at the two noise extremes, and the
//! analytic Gaussian mechanism.
//!
//! These are diagnostics and test oracles for the Monte Carlo engine: at
//! vanishing noise the privacy loss is dominated by the mixture component of
//! the true participation vector, at large noise it follows a second-order
//! expansion in `1 / sigma`, and as `sigma` grows BIS approaches the
//! full-batch Gaussian mechanism with sensitivity `k / sqrt(T)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::likelihood::{log_binomial, log_elementary_symmetric, log_sum_exp};
use crate::sampling::ParticipationVector;
use crate::shape::MechanismShape;

/// `log Phi(x)` for the standard normal CDF, accurate deep into both tails.
pub fn log_ndtr(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -37.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        // Mills ratio asymptotic series; erfc underflows past this point.
        let z = -x;
        let z2 = z * z;
        let mut term = 1.0;
        let mut series = 1.0;
        for n in 1..=6 {
            term *= -((2 * n - 1) as f64) / z2;
            series += term;
        }
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Standard normal CDF.
pub fn ndtr(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - 0.5 * libm::erfc(x * FRAC_1_SQRT_2)
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Exact `delta(epsilon)` for a pair of Gaussians `N(sensitivity, sigma^2)`
/// and `N(0, sigma^2)`:
/// `Phi(D/(2s) - e s/D) - exp(e) Phi(-D/(2s) - e s/D)`.
///
/// The difference is formed as `Phi(a) * (1 - exp(e + log Phi(b) - log Phi(a)))`
/// so that neither tail cancels or underflows before the subtraction.
pub fn gaussian_mechanism_delta(sensitivity: f64, sigma: f64, epsilon: f64) -> f64 {
    assert!(sensitivity > 0.0 && sigma > 0.0, "sensitivity and sigma must be positive");
    assert!(epsilon >= 0.0, "epsilon must be non-negative");
    if epsilon == f64::INFINITY {
        return 0.0;
    }
    let shift = epsilon * sigma / sensitivity;
    let half = sensitivity / (2.0 * sigma);
    let log_a = log_ndtr(half - shift);
    if log_a == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_b = epsilon + log_ndtr(-half - shift);
    let delta = log_a.exp() * -(log_b - log_a).exp_m1();
    delta.max(0.0)
}

/// Smallest `sigma` for which the Gaussian mechanism with `sensitivity`
/// reaches `delta` at `epsilon`. `None` when `delta` is outside `(0, 1)`.
pub fn calibrate_gaussian_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> Option<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return None;
    }
    let (mut lo, mut hi) = (1e-8f64.ln(), 1e8f64.ln());
    if gaussian_mechanism_delta(sensitivity, hi.exp(), epsilon) > delta {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_mechanism_delta(sensitivity, mid.exp(), epsilon) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Some(hi.exp())
}

/// First and second moments of the BIS participation vector.
///
/// The mean is `p * 1` with `p = k / T`; the covariance is
/// `scale * (I - 1 1^T / T)` with `scale = T p (1 - p) / (T - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BisMoments {
    pub mu: Vec<f64>,
    pub p: f64,
    pub scale: f64,
}

impl BisMoments {
    pub fn new(shape: MechanismShape) -> Self {
        let t = shape.iterations();
        let p = shape.rate();
        let scale = if t == 1 { 0.0 } else { t as f64 * p * (1.0 - p) / (t as f64 - 1.0) };
        Self { mu: vec![p; t], p, scale }
    }

    /// `w^T Sigma w` in closed form.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let t = w.len() as f64;
        let sum: f64 = w.iter().sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        self.scale * (sq - sum * sum / t)
    }

    /// `trace(Sigma)`.
    pub fn trace(&self) -> f64 {
        self.scale * (self.mu.len() as f64 - 1.0)
    }
}

fn check_noise(w: &[f64], sigma: f64, shape: MechanismShape) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be positive and finite, got {sigma}")));
    }
    if w.len() != shape.iterations() {
        return Err(Error::InvalidShape(format!(
            "noise vector has length {}, expected T = {}",
            w.len(),
            shape.iterations()
        )));
    }
    Ok(())
}

/// Low-noise privacy loss at `y = x + sigma w`: the log-density ratio of the
/// mixture component belonging to `x` alone,
/// `k / (2 sigma^2) + <x, w> / sigma - log C(T, k)`.
pub fn low_noise_loss(x: &ParticipationVector, w: &[f64], sigma: f64, shape: MechanismShape) -> Result<f64> {
    check_noise(w, sigma, shape)?;
    let k = shape.participations() as f64;
    let inner: f64 = x.indices().iter().map(|&i| w[i]).sum();
    Ok(k / (2.0 * sigma * sigma) + inner / sigma - log_binomial(shape.iterations(), shape.participations()))
}

/// `log(L_exact(y) - low_noise_loss)` at `y = x + sigma w`, computed without
/// forming either large quantity.
///
/// Dividing every subset product by the dominant one leaves
/// `sum_j e_j(w_out) e_j(1 / w_in)` over the `j` swapped-in and swapped-out
/// iterations, so the remainder is `log1p` of the `j >= 1` part. This is
/// finite even when the remainder underflows `f64`.
pub fn low_noise_log_residual(
    x: &ParticipationVector,
    w: &[f64],
    sigma: f64,
    shape: MechanismShape,
) -> Result<f64> {
    check_noise(w, sigma, shape)?;
    let k = shape.participations();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut inside = vec![false; shape.iterations()];
    for &i in x.indices() {
        inside[i] = true;
    }
    let mut log_out = Vec::with_capacity(shape.iterations() - k);
    let mut log_in = Vec::with_capacity(k);
    for (i, &wi) in w.iter().enumerate() {
        if inside[i] {
            log_in.push(-(1.0 + 2.0 * sigma * wi) * inv);
        } else {
            log_out.push((2.0 * sigma * wi - 1.0) * inv);
        }
    }
    let e_out = log_elementary_symmetric(&log_out, k);
    let e_in = log_elementary_symmetric(&log_in, k);
    let terms: Vec<f64> = (1..=k).map(|j| e_out[j] + e_in[j]).collect();
    let log_r = log_sum_exp(&terms);
    if log_r == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    // log(log1p(R)) = log R + log(log1p(R) / R), and the second term is -R/2 + O(R^2).
    Ok(if log_r < -20.0 { log_r - 0.5 * log_r.exp() } else { log_r.exp().ln_1p().ln() })
}

/// High-noise expansion of the privacy loss at `y = sigma w`:
/// `<mu, w> / sigma + w^T Sigma w / (2 sigma^2) - k / (2 sigma^2)`.
pub fn high_noise_loss(w: &[f64], sigma: f64, moments: &BisMoments, shape: MechanismShape) -> Result<f64> {
    check_noise(w, sigma, shape)?;
    if moments.mu.len() != w.len() {
        return Err(Error::InvalidShape("moments do not match the noise vector".into()));
    }
    let s2 = sigma * sigma;
    let first: f64 = moments.mu.iter().zip(w).map(|(m, v)| m * v).sum::<f64>() / sigma;
    let second = moments.quadratic_form(w) / (2.0 * s2);
    Ok(first + second - shape.participations() as f64 / (2.0 * s2))
}
