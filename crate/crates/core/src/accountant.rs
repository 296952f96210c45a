//! Screen-then-exact Monte Carlo estimation of the hockey-stick divergence.
//!
//! Outputs are drawn from `P`, and each contributes
//! `max(1 - exp(epsilon - L(y)), 0)`. Most samples have a screening bound
//! `<= epsilon` and contribute exactly zero without running the `O(Tk)`
//! dynamic program.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{fill_log_weights, RatioEvaluator};
use crate::sampling::{ParticipationSampler, Realization, RngStream, Source};
use crate::shape::MechanismShape;

/// Fewest samples accepted by [`AccountingConfig::validate`].
pub const MIN_SAMPLES: u64 = 1000;

/// Default share of `delta_target` reserved for the verifier's failure
/// probability.
pub const DEFAULT_DELTA_SPLIT: f64 = 0.1;

/// Samples per deterministic work chunk. Chunk `i` always uses stream `i`.
pub const CHUNK_SIZE: u64 = 1 << 14;

/// How a passing verification translates into a released guarantee.
pub const CERTIFICATION_CONVENTION: &str = "additive-split: verify passes iff the empirical-Bernstein \
upper confidence bound at failure probability delta_split*delta_target is <= (1-delta_split)*delta_target; \
the pair (epsilon, delta_target) is then certified; only the released sigma is charged";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingConfig {
    #[serde(flatten)]
    pub shape: MechanismShape,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta_target: f64,
    pub samples: u64,
    pub seed: u64,
    pub delta_split: f64,
}

impl AccountingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive and finite, got {}", self.sigma));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta_target));
        }
        if !(self.delta_split > 0.0 && self.delta_split < 1.0) {
            return bad(format!("delta_split must lie in (0, 1), got {}", self.delta_split));
        }
        if self.failure_probability() <= 0.0 {
            return bad("delta_split * delta_target underflows to zero".into());
        }
        if self.samples < MIN_SAMPLES {
            return bad(format!("samples must be at least {MIN_SAMPLES}, got {}", self.samples));
        }
        Ok(())
    }

    /// `eta = delta_split * delta_target`, the verifier's failure probability.
    pub fn failure_probability(&self) -> f64 {
        self.delta_split * self.delta_target
    }

    /// `(1 - delta_split) * delta_target`, the threshold the UCB must meet.
    pub fn verification_threshold(&self) -> f64 {
        (1.0 - self.delta_split) * self.delta_target
    }
}

/// Result of one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub point: f64,
    pub upper_bound: f64,
    pub samples_used: u64,
    pub screened_out: u64,
    pub exact_evals: u64,
    pub sum_of_values: f64,
    pub sum_of_squares: f64,
}

/// One-sided empirical Bernstein bound (Maurer and Pontil) for the mean of
/// `s` i.i.d. values in `[0, 1]` at failure probability `eta`:
/// `mean + sqrt(2 V ln(1/eta) / s) + 7 ln(1/eta) / (3 (s - 1))`.
pub fn empirical_bernstein_ucb(sum: f64, sum_sq: f64, s: u64, eta: f64) -> f64 {
    assert!(s >= 2, "need at least two samples");
    let n = s as f64;
    let mean = sum / n;
    let variance = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    let log_term = (1.0 / eta).ln();
    let ucb = mean + (2.0 * variance * log_term / n).sqrt() + 7.0 * log_term / (3.0 * (n - 1.0));
    ucb.min(1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ChunkStats {
    sum: f64,
    sum_sq: f64,
    screened: u64,
    exact: u64,
}

/// Knobs that change how a run executes but never what it computes
/// (apart from `screening`, which must not change the point estimate).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimateOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Skip exact evaluation when the screening bound is `<= epsilon`.
    pub screening: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { threads: None, screening: true }
    }
}

/// Contribution of one sample from `P` and whether the exact ratio was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleValue {
    pub value: f64,
    pub exact_evaluated: bool,
}

#[inline]
fn hinge(epsilon: f64, log_ratio: f64) -> f64 {
    if log_ratio > epsilon {
        -(epsilon - log_ratio).exp_m1()
    } else {
        0.0
    }
}

#[inline]
fn evaluate(evaluator: &mut RatioEvaluator, log_w: &[f64], epsilon: f64, screening: bool) -> SampleValue {
    if screening && evaluator.screening(log_w) <= epsilon {
        return SampleValue { value: 0.0, exact_evaluated: false };
    }
    SampleValue { value: hinge(epsilon, evaluator.exact(log_w)), exact_evaluated: true }
}

/// `max(1 - e^eps Q(y)/P(y), 0)` for one realization drawn from `P`.
pub fn per_sample_value(realization: &Realization, config: &AccountingConfig) -> Result<SampleValue> {
    if realization.source != Source::FromP {
        return Err(Error::InvalidConfig("per_sample_value expects a realization from P".into()));
    }
    if realization.y.len() != config.shape.iterations() {
        return Err(Error::InvalidShape("realization length does not match T".into()));
    }
    if let Some(v) = realization.y.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("realization entry {v}")));
    }
    let mut log_w = Vec::with_capacity(realization.y.len());
    fill_log_weights(&realization.y, config.sigma, &mut log_w);
    let mut evaluator = RatioEvaluator::new(config.shape);
    Ok(evaluate(&mut evaluator, &log_w, config.epsilon, true))
}

/// Splits `samples` into chunks of [`CHUNK_SIZE`] and runs `work(chunk, n)`
/// over them, returning results in chunk order.
fn run_chunks<T, F>(samples: u64, threads: Option<usize>, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK_SIZE);
    let job = || {
        (0..chunks)
            .into_par_iter()
            .map(|c| work(c, CHUNK_SIZE.min(samples - c * CHUNK_SIZE)))
            .collect::<Vec<_>>()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build worker pool")
            .install(job),
        None => job(),
    }
}

fn p_side_chunk(config: &AccountingConfig, chunk: u64, n: u64, screening: bool) -> ChunkStats {
    let shape = config.shape;
    let mut rng = RngStream::new(config.seed, chunk);
    let mut sampler = ParticipationSampler::new(shape);
    let mut evaluator = RatioEvaluator::new(shape);
    let mut scratch = Vec::with_capacity(shape.participations());
    let mut y = Vec::with_capacity(shape.iterations());
    let mut log_w = Vec::with_capacity(shape.iterations());
    let mut stats = ChunkStats::default();
    for _ in 0..n {
        sampler.output_into(&mut rng, config.sigma, Source::FromP, &mut scratch, &mut y);
        fill_log_weights(&y, config.sigma, &mut log_w);
        let v = evaluate(&mut evaluator, &log_w, config.epsilon, screening);
        if v.exact_evaluated {
            stats.exact += 1;
        } else {
            stats.screened += 1;
        }
        stats.sum += v.value;
        stats.sum_sq += v.value * v.value;
    }
    stats
}

/// [`estimate_delta`] with explicit execution options.
pub fn estimate_delta_with(config: &AccountingConfig, options: EstimateOptions) -> Result<DeltaEstimate> {
    config.validate()?;
    let parts = run_chunks(config.samples, options.threads, |c, n| {
        p_side_chunk(config, c, n, options.screening)
    });
    let total = parts.into_iter().fold(ChunkStats::default(), |acc, p| ChunkStats {
        sum: acc.sum + p.sum,
        sum_sq: acc.sum_sq + p.sum_sq,
        screened: acc.screened + p.screened,
        exact: acc.exact + p.exact,
    });
    let s = config.samples;
    let point = total.sum / s as f64;
    let upper_bound = empirical_bernstein_ucb(total.sum, total.sum_sq, s, config.failure_probability()).max(point);
    Ok(DeltaEstimate {
        point,
        upper_bound,
        samples_used: s,
        screened_out: total.screened,
        exact_evals: total.exact,
        sum_of_values: total.sum,
        sum_of_squares: total.sum_sq,
    })
}

/// Monte Carlo estimate of `delta(epsilon)` with its one-sided confidence
/// bound at failure probability `delta_split * delta_target`.
pub fn estimate_delta(config: &AccountingConfig) -> Result<DeltaEstimate> {
    estimate_delta_with(config, EstimateOptions::default())
}

/// True iff the upper confidence bound certifies `(epsilon, delta_target)`
/// under [`CERTIFICATION_CONVENTION`].
pub fn verify(config: &AccountingConfig) -> Result<bool> {
    verify_with(config, EstimateOptions::default())
}

pub fn verify_with(config: &AccountingConfig, options: EstimateOptions) -> Result<bool> {
    let estimate = estimate_delta_with(config, options)?;
    Ok(estimate.upper_bound <= config.verification_threshold())
}

/// Estimate from the `Q` side, `E_Q[max(P/Q - e^eps, 0)]`. Values are
/// unbounded, so only a normal-approximation standard error is reported.
/// For cross-checking the `P`-side estimator; never used to certify.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSideEstimate {
    pub point: f64,
    pub std_error: f64,
    pub samples_used: u64,
}

pub fn estimate_delta_q_side(config: &AccountingConfig, options: EstimateOptions) -> Result<QSideEstimate> {
    config.validate()?;
    let shape = config.shape;
    let eps = config.epsilon;
    // Q-side draws live on streams disjoint from the P side.
    let offset = 1u64 << 62;
    let parts = run_chunks(config.samples, options.threads, |c, n| {
        let mut rng = RngStream::new(config.seed, offset + c);
        let mut sampler = ParticipationSampler::new(shape);
        let mut evaluator = RatioEvaluator::new(shape);
        let (mut scratch, mut y, mut log_w) = (Vec::new(), Vec::new(), Vec::new());
        let mut stats = ChunkStats::default();
        for _ in 0..n {
            sampler.output_into(&mut rng, config.sigma, Source::FromQ, &mut scratch, &mut y);
            fill_log_weights(&y, config.sigma, &mut log_w);
            if options.screening && evaluator.screening(&log_w) <= eps {
                continue;
            }
            let l = evaluator.exact(&log_w);
            if l > eps {
                let v = eps.exp() * (l - eps).exp_m1();
                stats.sum += v;
                stats.sum_sq += v * v;
            }
        }
        stats
    });
    let (sum, sum_sq) = parts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.sum, b + p.sum_sq));
    let n = config.samples as f64;
    let point = sum / n;
    let variance = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    Ok(QSideEstimate { point, std_error: (variance / n).sqrt(), samples_used: config.samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::gaussian_mechanism_delta;

    fn config(t: usize, k: usize, sigma: f64, epsilon: f64, samples: u64) -> AccountingConfig {
        AccountingConfig {
            shape: MechanismShape::new(t, k).unwrap(),
            sigma,
            epsilon,
            delta_target: 1e-2,
            samples,
            seed: 7,
            delta_split: DEFAULT_DELTA_SPLIT,
        }
    }

    fn single(y: f64, sigma: f64, epsilon: f64) -> SampleValue {
        let c = config(1, 1, sigma, epsilon, 1000);
        per_sample_value(&Realization { y: vec![y], source: Source::FromP }, &c).unwrap()
    }

    #[test]
    fn per_sample_examples() {
        // log w = (2*3 - 1) / 2 = 2.5 and k = 1 makes that the exact ratio.
        let v = single(3.0, 1.0, 0.0 + f64::MIN_POSITIVE);
        assert!(v.exact_evaluated);
        assert!((v.value - (1.0 - (-2.5f64).exp())).abs() < 1e-15);
        assert!((v.value - 0.9179).abs() < 1e-4);
        // Ratio 1 at the midpoint: screened out.
        let v = single(0.5, 1.0, 1.0);
        assert_eq!(v, SampleValue { value: 0.0, exact_evaluated: false });
    }

    #[test]
    fn per_sample_rejects_q_realizations() {
        let c = config(2, 1, 1.0, 1.0, 1000);
        let r = Realization { y: vec![0.0, 0.0], source: Source::FromQ };
        assert!(per_sample_value(&r, &c).is_err());
        let r = Realization { y: vec![0.0], source: Source::FromP };
        assert!(per_sample_value(&r, &c).is_err());
    }

    #[test]
    fn config_validation() {
        let good = config(4, 2, 1.0, 1.0, 1000);
        assert!(good.validate().is_ok());
        let cases = [
            AccountingConfig { samples: 999, ..good },
            AccountingConfig { sigma: 0.0, ..good },
            AccountingConfig { epsilon: 0.0, ..good },
            AccountingConfig { delta_target: 1.0, ..good },
            AccountingConfig { delta_split: 1.0, ..good },
            AccountingConfig { delta_split: 0.0, ..good },
            AccountingConfig { sigma: f64::NAN, ..good },
        ];
        for c in cases {
            assert!(c.validate().unwrap_err().is_usage(), "{c:?}");
        }
    }

    #[test]
    fn bernstein_constant_term_for_all_zero_samples() {
        let eta: f64 = 1e-3;
        let ucb = empirical_bernstein_ucb(0.0, 0.0, 1000, eta);
        assert!((ucb - 7.0 * (1.0 / eta).ln() / (3.0 * 999.0)).abs() < 1e-15);
        assert_eq!(empirical_bernstein_ucb(0.0, 0.0, 2, 1e-9), 1.0);
    }

    #[test]
    fn infinite_epsilon_screens_everything() {
        let c = config(5, 2, 1.0, f64::INFINITY, 5000);
        let e = estimate_delta(&c).unwrap();
        assert_eq!(e.point, 0.0);
        assert_eq!(e.screened_out, 5000);
        assert_eq!(e.exact_evals, 0);
    }

    #[test]
    fn counters_and_invariants() {
        let c = config(20, 3, 0.8, 1.0, 50_000);
        let e = estimate_delta(&c).unwrap();
        assert_eq!(e.screened_out + e.exact_evals, e.samples_used);
        assert!(e.point <= e.upper_bound);
        assert_eq!(e.point, e.sum_of_values / e.samples_used as f64);
        assert!(e.exact_evals > 0 && e.screened_out > 0);
    }

    #[test]
    fn filter_does_not_change_the_estimate() {
        let c = config(30, 4, 0.7, 2.0, 40_000);
        let on = estimate_delta_with(&c, EstimateOptions { threads: Some(2), screening: true }).unwrap();
        let off = estimate_delta_with(&c, EstimateOptions { threads: Some(3), screening: false }).unwrap();
        assert_eq!(on.point.to_bits(), off.point.to_bits());
        assert_eq!(off.screened_out, 0);
        assert!(on.exact_evals < off.exact_evals);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let c = config(12, 2, 1.0, 0.5, 70_000);
        let a = estimate_delta_with(&c, EstimateOptions { threads: Some(1), ..Default::default() }).unwrap();
        let b = estimate_delta_with(&c, EstimateOptions { threads: Some(5), ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn high_noise_matches_full_batch_bound() {
        // Sensitivity k / sqrt(T) = 1; epsilon small enough that delta is observable.
        let e = estimate_delta(&config(100, 10, 20.0, 0.05, 400_000)).unwrap();
        let want = gaussian_mechanism_delta(1.0, 20.0, 0.05);
        assert!((e.point - want).abs() < 0.05 * want, "{} vs {want}", e.point);
    }

    #[test]
    fn full_batch_approaches_gaussian_mechanism() {
        // T = k makes P a single Gaussian with sensitivity sqrt(T), so the
        // estimate targets the closed form at every sigma.
        let eps = 0.05;
        for sigma in [1.0, 5.0, 20.0] {
            let c = config(5, 5, sigma, eps, 400_000);
            let e = estimate_delta(&c).unwrap();
            let want = gaussian_mechanism_delta(5f64.sqrt(), sigma, eps);
            let var = e.sum_of_squares / e.samples_used as f64 - e.point * e.point;
            let se = (var / e.samples_used as f64).sqrt();
            assert!((e.point - want).abs() < 4.0 * se, "sigma={sigma}: {} vs {want}", e.point);
        }
    }

    #[test]
    fn q_side_agrees_with_p_side() {
        let c = config(6, 2, 0.9, 0.5, 300_000);
        let p = estimate_delta(&c).unwrap();
        let q = estimate_delta_q_side(&c, EstimateOptions::default()).unwrap();
        let var_p = p.sum_of_squares / p.samples_used as f64 - p.point * p.point;
        let se_p = (var_p / p.samples_used as f64).sqrt();
        let combined = (se_p * se_p + q.std_error * q.std_error).sqrt();
        assert!((p.point - q.point).abs() < 4.0 * combined, "{} vs {} ({combined})", p.point, q.point);
    }

    #[test]
    fn verify_examples() {
        let mut c = config(1, 1, 10.0, 1.0, 1_000_000);
        c.delta_target = 1e-2;
        c.delta_split = 0.1;
        assert!(verify(&c).unwrap());

        let mut c = config(1, 1, 0.1, 1.0, 10_000);
        c.delta_target = 1e-5;
        assert!(verify(&c).is_ok_and(|v| !v));

        // The constant term alone exceeds the threshold.
        let mut c = config(1, 1, 100.0, 1.0, 1000);
        c.delta_target = 1e-3;
        let constant = 7.0 * (1.0 / c.failure_probability()).ln() / (3.0 * 999.0);
        assert!(constant > c.verification_threshold());
        assert!(!verify(&c).unwrap());
    }
}
