//! Self-check suite behind `bis-accountant validate`: engine against
//! oracles, screening dominance, closed form against quadrature, and the
//! asymptotic expansions.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::asymptotics::{
    gaussian_mechanism_delta, high_noise_loss, low_noise_log_residual, low_noise_loss, BisMoments,
};
use crate::likelihood::{log_sum_exp, RatioEvaluator};
use crate::oracle::{enumerate_log_ratio_k, quadrature_delta_1d};
use crate::sampling::{sample_participation, RngStream};
use crate::shape::MechanismShape;

/// Deliberate defects for testing that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Reflect the screening bound about the exact value, so it sits below it.
    InvertScreening,
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub max_t: usize,
    pub vectors_per_shape: usize,
    pub dominance_instances: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { max_t: 16, vectors_per_shape: 100, dominance_instances: 100_000, seed: 2024, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {}", self.name, self.detail)
    }
}

/// `|a - b| / max(|b|, 1)`.
pub fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn uniform_log_weights(rng: &mut RngStream, t: usize, range: f64) -> Vec<f64> {
    (0..t).map(|_| rng.random_range(-range..range)).collect()
}

fn screening_under(fault: Option<Fault>, evaluator: &mut RatioEvaluator, log_w: &[f64]) -> (f64, f64) {
    let exact = evaluator.exact(log_w);
    let screen = evaluator.screening(log_w);
    match fault {
        Some(Fault::InvertScreening) => (exact, 2.0 * exact - screen),
        None => (exact, screen),
    }
}

/// Worst scaled error of the DP against brute-force enumeration over every
/// shape with `T <= max_t`.
pub fn enumeration_equivalence(max_t: usize, vectors: usize, seed: u64) -> (f64, usize) {
    let mut rng = RngStream::new(seed, 1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for t in 1..=max_t {
        for k in 1..=t {
            let mut evaluator = RatioEvaluator::new(MechanismShape::new(t, k).unwrap());
            for _ in 0..vectors {
                let log_w = uniform_log_weights(&mut rng, t, 10.0);
                let exact = evaluator.exact(&log_w);
                let brute = enumerate_log_ratio_k(&log_w, k).expect("within enumeration cap");
                worst = worst.max(scaled_error(exact, brute));
                count += 1;
            }
        }
    }
    (worst, count)
}

/// Largest violation `exact - screening` over random instances with
/// `T in [1, 64]`, and the largest gap at constant weights.
pub fn screening_dominance(instances: usize, seed: u64, fault: Option<Fault>) -> (f64, f64) {
    let mut rng = RngStream::new(seed, 2);
    let mut worst_violation = f64::NEG_INFINITY;
    for _ in 0..instances {
        let t = rng.random_range(1..=64);
        let k = rng.random_range(1..=t);
        let mut evaluator = RatioEvaluator::new(MechanismShape::new(t, k).unwrap());
        let log_w = uniform_log_weights(&mut rng, t, 20.0);
        let (exact, screen) = screening_under(fault, &mut evaluator, &log_w);
        worst_violation = worst_violation.max(exact - screen);
    }
    let mut worst_equal_gap: f64 = 0.0;
    for t in 1..=64 {
        let level = rng.random_range(-20.0..20.0);
        for k in 1..=t {
            let mut evaluator = RatioEvaluator::new(MechanismShape::new(t, k).unwrap());
            let (exact, screen) = screening_under(fault, &mut evaluator, &vec![level; t]);
            worst_equal_gap = worst_equal_gap.max((exact - screen).abs());
        }
    }
    (worst_violation, worst_equal_gap)
}

/// Worst absolute gap between the analytic Gaussian mechanism and quadrature
/// on a 20 x 20 grid of sigma in [0.1, 50] (log-spaced) and epsilon in [0, 10].
pub fn closed_form_vs_quadrature() -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let sigma = 0.1 * (500f64).powf(i as f64 / 19.0);
        for j in 0..20 {
            let epsilon = 10.0 * j as f64 / 19.0;
            let closed = gaussian_mechanism_delta(1.0, sigma, epsilon);
            let quad = quadrature_delta_1d(sigma, epsilon);
            worst = worst.max((closed - quad).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSweep {
    pub sigmas: Vec<f64>,
    /// Sup over draws of `|exact - approximation|`, as computed in `f64`.
    pub sup_abs_gap: Vec<f64>,
    /// Sup over draws of `log(exact - approximation)` where that is computed
    /// in a cancellation-free form (low-noise sweep only).
    pub sup_log_residual: Option<Vec<f64>>,
}

/// Low-noise expansion against the exact ratio at `y = x + sigma w`.
pub fn low_noise_sweep(shape: MechanismShape, sigmas: &[f64], draws: usize, seed: u64) -> ConvergenceSweep {
    let t = shape.iterations();
    let mut evaluator = RatioEvaluator::new(shape);
    let mut sup_abs = Vec::new();
    let mut sup_log = Vec::new();
    for (n, &sigma) in sigmas.iter().enumerate() {
        let mut rng = RngStream::new(seed, 100 + n as u64);
        let (mut worst_abs, mut worst_log) = (0.0f64, f64::NEG_INFINITY);
        for _ in 0..draws {
            let x = sample_participation(shape, &mut rng);
            let w: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
            let indicator = x.indicator(t);
            let log_w: Vec<f64> = indicator
                .iter()
                .zip(&w)
                .map(|(xi, wi)| (2.0 * (xi + sigma * wi) - 1.0) / (2.0 * sigma * sigma))
                .collect();
            let exact = evaluator.exact(&log_w);
            let approx = low_noise_loss(&x, &w, sigma, shape).unwrap();
            worst_abs = worst_abs.max((exact - approx).abs());
            worst_log = worst_log.max(low_noise_log_residual(&x, &w, sigma, shape).unwrap());
        }
        sup_abs.push(worst_abs);
        sup_log.push(worst_log);
    }
    ConvergenceSweep { sigmas: sigmas.to_vec(), sup_abs_gap: sup_abs, sup_log_residual: Some(sup_log) }
}

/// High-noise expansion against the exact ratio at `y = sigma w`.
pub fn high_noise_sweep(shape: MechanismShape, sigmas: &[f64], draws: usize, seed: u64) -> ConvergenceSweep {
    let t = shape.iterations();
    let moments = BisMoments::new(shape);
    let mut evaluator = RatioEvaluator::new(shape);
    let mut sup_abs = Vec::new();
    for (n, &sigma) in sigmas.iter().enumerate() {
        let mut rng = RngStream::new(seed, 200 + n as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let w: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
            let log_w: Vec<f64> = w.iter().map(|v| (2.0 * sigma * v - 1.0) / (2.0 * sigma * sigma)).collect();
            let exact = evaluator.exact(&log_w);
            let approx = high_noise_loss(&w, sigma, &moments, shape).unwrap();
            worst = worst.max((exact - approx).abs());
        }
        sup_abs.push(worst);
    }
    ConvergenceSweep { sigmas: sigmas.to_vec(), sup_abs_gap: sup_abs, sup_log_residual: None }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

pub fn run_validation(options: &ValidateOptions) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let seed = options.seed;

    let (worst, count) = enumeration_equivalence(options.max_t, options.vectors_per_shape, seed);
    results.push(CheckResult {
        name: "enumeration-equivalence",
        passed: worst <= 1e-9,
        detail: format!("{count} instances with T <= {}, worst scaled error {worst:.3e} (limit 1e-9)", options.max_t),
    });

    let (violation, equal_gap) = screening_dominance(options.dominance_instances, seed, options.fault);
    results.push(CheckResult {
        name: "screening-dominance",
        passed: violation <= 1e-10 && equal_gap <= 1e-12,
        detail: format!(
            "{} instances, max(exact - screening) = {violation:.3e} (limit 1e-10), constant-weight gap {equal_gap:.3e} (limit 1e-12)",
            options.dominance_instances
        ),
    });

    let mut rng = RngStream::new(seed, 3);
    let mut worst_closed: f64 = 0.0;
    for t in 1..=24 {
        let log_w = uniform_log_weights(&mut rng, t, 30.0);
        let mean = log_sum_exp(&log_w) - (t as f64).ln();
        let k1 = RatioEvaluator::new(MechanismShape::new(t, 1).unwrap()).exact(&log_w);
        let kt = RatioEvaluator::new(MechanismShape::new(t, t).unwrap()).exact(&log_w);
        let total: f64 = log_w.iter().sum();
        worst_closed = worst_closed.max(scaled_error(k1, mean)).max(scaled_error(kt, total));
    }
    results.push(CheckResult {
        name: "closed-forms",
        passed: worst_closed <= 1e-12,
        detail: format!("k = 1 and k = T against mean / product, worst scaled error {worst_closed:.3e}"),
    });

    let quad = closed_form_vs_quadrature();
    results.push(CheckResult {
        name: "closed-form-vs-quadrature",
        passed: quad <= 1e-8,
        detail: format!("20 x 20 grid, worst absolute gap {quad:.3e} (limit 1e-8)"),
    });

    let shape = MechanismShape::new(10, 2).unwrap();
    let low = low_noise_sweep(shape, &[1e-1, 1e-2, 1e-3], 100, seed);
    let log_res = low.sup_log_residual.as_deref().unwrap_or_default();
    results.push(CheckResult {
        name: "low-noise-convergence",
        passed: strictly_decreasing(log_res) && low.sup_abs_gap.iter().all(|g| *g < 1e-4),
        detail: format!(
            "sigma = {}: sup log residual [{}], sup |gap| [{}]",
            fmt_list(&low.sigmas),
            fmt_list(log_res),
            fmt_list(&low.sup_abs_gap)
        ),
    });

    let high = high_noise_sweep(shape, &[1e1, 1e2, 1e3], 100, seed);
    results.push(CheckResult {
        name: "high-noise-convergence",
        passed: strictly_decreasing(&high.sup_abs_gap) && high.sup_abs_gap.last().is_some_and(|g| *g < 1e-4),
        detail: format!("sigma = {}: sup |gap| [{}]", fmt_list(&high.sigmas), fmt_list(&high.sup_abs_gap)),
    });

    results
}
