//! Reference implementations used by the test suites and `validate`.
//!
//! Nothing here calls into [`crate::likelihood`] or [`crate::asymptotics`]:
//! the log-sum-exp and Gaussian density are written out again so that a bug
//! in the production path cannot also hide in its check.

use crate::error::{Error, Result};
use crate::likelihood::LogWeightVector;
use crate::shape::MechanismShape;

/// Largest number of subsets [`enumerate_log_ratio`] will visit.
pub const ENUMERATION_CAP: u64 = 1_000_000;

fn binomial_checked(n: usize, k: usize) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Streaming log-sum-exp accumulator.
struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl LogAccumulator {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    fn push(&mut self, v: f64) {
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.scaled.ln()
    }
}

/// `log( mean over all k-subsets S of prod_{i in S} w_i )` by visiting every
/// subset in lexicographic order. `k = 0` (the empty product) gives 0.
pub fn enumerate_log_ratio_k(log_w: &[f64], k: usize) -> Result<f64> {
    let t = log_w.len();
    if k > t {
        return Err(Error::InvalidShape(format!("k = {k} exceeds T = {t}")));
    }
    match binomial_checked(t, k) {
        Some(c) if c <= ENUMERATION_CAP => {}
        _ => return Err(Error::EnumerationTooLarge { t, k, cap: ENUMERATION_CAP }),
    }
    if k == 0 {
        return Ok(0.0);
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut acc = LogAccumulator::new();
    let mut count: u64 = 0;
    loop {
        acc.push(combo.iter().map(|&i| log_w[i]).sum());
        count += 1;
        // Advance to the lexicographic successor.
        let mut i = k;
        while i > 0 && combo[i - 1] == t - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for j in i..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Ok(acc.value() - (count as f64).ln())
}

/// Brute-force counterpart of [`crate::likelihood::exact_log_ratio`].
pub fn enumerate_log_ratio(log_w: &LogWeightVector, shape: MechanismShape) -> Result<f64> {
    if log_w.len() != shape.iterations() {
        return Err(Error::InvalidShape("log weight length does not match T".into()));
    }
    enumerate_log_ratio_k(log_w.as_slice(), shape.participations())
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integration to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let (value, err) = kronrod(&f, lo, hi);
        if err <= tol || depth >= 60 {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    total
}

/// `delta(epsilon)` of the `T = k = 1` mechanism by numerically integrating
/// `max(p(y) - e^eps q(y), 0)` with `p = N(1, sigma^2)`, `q = N(0, sigma^2)`.
///
/// The integrand is positive exactly for `y > 1/2 + eps sigma^2`; mass more
/// than 40 standard deviations past the mode of `p` is dropped.
pub fn quadrature_delta_1d(sigma: f64, epsilon: f64) -> f64 {
    assert!(sigma > 0.0 && epsilon >= 0.0);
    let start = 0.5 + epsilon * sigma * sigma;
    let end = start.max(1.0) + 40.0 * sigma;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let integrand = |y: f64| {
        let p = norm * (-(y - 1.0) * (y - 1.0) / (2.0 * sigma * sigma)).exp();
        // p - e^eps q = p (1 - exp(eps - (2y - 1) / (2 sigma^2)))
        let log_ratio = (2.0 * y - 1.0) / (2.0 * sigma * sigma);
        (p * -(epsilon - log_ratio).exp_m1()).max(0.0)
    };
    // Split at the mode of p so the peak always lands on a panel boundary.
    if start < 1.0 {
        integrate(integrand, start, 1.0, 5e-11) + integrate(integrand, 1.0, end, 5e-11)
    } else {
        integrate(integrand, start, end, 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumeration() {
        let log_w: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
        let v = enumerate_log_ratio_k(&log_w, 2).unwrap();
        assert!((v - (35.0f64 / 6.0).ln()).abs() < 1e-14);
        assert_eq!(enumerate_log_ratio_k(&log_w, 0).unwrap(), 0.0);
        let all = enumerate_log_ratio_k(&log_w, 4).unwrap();
        assert!((all - 24f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn enumeration_cap() {
        let log_w = vec![0.0; 40];
        assert!(matches!(
            enumerate_log_ratio_k(&log_w, 20),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(enumerate_log_ratio_k(&log_w, 3).is_ok());
        assert!(enumerate_log_ratio_k(&[0.0], 2).is_err());
    }

    #[test]
    fn integrates_polynomials_and_gaussians() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-12);
        let g = integrate(|x| (-x * x / 2.0).exp(), -40.0, 40.0, 1e-12);
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn quadrature_reference_values() {
        // mpmath: Phi(-0.5) - e Phi(-1.5) and 2 Phi(0.5) - 1.
        assert!((quadrature_delta_1d(1.0, 1.0) - 0.126936737506643946).abs() < 1e-10);
        assert!((quadrature_delta_1d(1.0, 0.0) - 0.382924922548026207).abs() < 1e-10);
        assert!(quadrature_delta_1d(1e3, 1.0) < 1e-100);
    }
}
