//! Line search for the smallest noise multiplier meeting `(epsilon, delta)`.
//!
//! A cheap bracketing phase runs low-sample optimistic estimates, starting
//! at the full-batch Gaussian calibration (no uniform-marginal scheme can do
//! better) and doubling until one passes, then bisecting. The fine phase
//! walks a three-significant-digit grid downward from the top of the
//! bracket, one unit of the third digit per step, until a candidate fails.

use serde::{Deserialize, Serialize};

use crate::accountant::{estimate_delta_with, AccountingConfig, DeltaEstimate, EstimateOptions};
use crate::asymptotics::calibrate_gaussian_sigma;
use crate::error::{Error, Result};
use crate::shape::MechanismShape;

/// Smallest candidate on the grid; returned when every sigma passes.
pub const MIN_SIGMA: f64 = 0.001;

/// Default upper limit for the bracketing phase.
pub const DEFAULT_SIGMA_CEILING: f64 = 1e3;

/// Fewest samples accepted for a bracketing estimate.
pub const MIN_COARSE_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Pass iff the upper confidence bound meets the split threshold.
    Certified,
    /// Pass iff the point estimate is at most `delta_target`. Not a formal
    /// guarantee.
    Optimistic,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "certified" => Ok(SearchMode::Certified),
            "optimistic" => Ok(SearchMode::Optimistic),
            other => Err(format!("unknown mode `{other}`, expected certified or optimistic")),
        }
    }
}

/// A value `mantissa * 10^(exponent - 2)` with `100 <= mantissa <= 999`,
/// i.e. a number with exactly three significant digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridPoint {
    exponent: i32,
    mantissa: u32,
}

impl GridPoint {
    /// Smallest grid point `>= sigma`.
    pub fn round_up(sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite());
        let mut exponent = sigma.log10().floor() as i32;
        // log10 can land one decade off near powers of ten.
        if 10f64.powi(exponent) > sigma {
            exponent -= 1;
        } else if 10f64.powi(exponent + 1) <= sigma {
            exponent += 1;
        }
        let scaled = sigma / 10f64.powi(exponent - 2);
        let mantissa = ((scaled * (1.0 - 1e-12)).ceil() as u32).max(100);
        let mut point = if mantissa >= 1000 {
            Self { exponent: exponent + 1, mantissa: 100 }
        } else {
            Self { exponent, mantissa }
        };
        // Guard against ceil landing one unit low after the tolerance.
        if point.value() < sigma * (1.0 - 1e-12) {
            point = point.step_up();
        }
        point
    }

    pub fn value(&self) -> f64 {
        let shift = self.exponent - 2;
        if shift < 0 {
            self.mantissa as f64 / 10f64.powi(-shift)
        } else {
            self.mantissa as f64 * 10f64.powi(shift)
        }
    }

    /// One unit of the third significant digit, `10^(exponent - 2)`.
    pub fn step(&self) -> f64 {
        10f64.powi(self.exponent - 2)
    }

    pub fn step_down(&self) -> Self {
        if self.mantissa == 100 {
            Self { exponent: self.exponent - 1, mantissa: 999 }
        } else {
            Self { mantissa: self.mantissa - 1, ..*self }
        }
    }

    pub fn step_up(&self) -> Self {
        if self.mantissa == 999 {
            Self { exponent: self.exponent + 1, mantissa: 100 }
        } else {
            Self { mantissa: self.mantissa + 1, ..*self }
        }
    }

    /// Unique integer position on the grid, used to derive seeds.
    pub fn index(&self) -> u64 {
        ((self.exponent + 1000) as u64) * 1000 + self.mantissa as u64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the fine-phase candidate at `point`. Depends only on the run
/// seed and the grid position, so both modes see the same samples at the
/// same sigma.
pub fn candidate_seed(seed: u64, point: GridPoint) -> u64 {
    splitmix64(seed ^ splitmix64(point.index()))
}

fn bracket_seed(seed: u64, step: u64) -> u64 {
    splitmix64(seed ^ splitmix64(0xB4AC_0000_0000_0000 ^ step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Bracket,
    Ascend,
    Descend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub sigma: f64,
    pub phase: Phase,
    pub seed: u64,
    pub estimate: DeltaEstimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSearchResult {
    pub sigma: f64,
    pub status: SearchMode,
    pub trace: Vec<TraceEntry>,
    pub total_samples: u64,
    /// Set when `delta_target >= 1` and no estimation was needed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub coarse_samples: u64,
    pub ceiling: f64,
    /// Bisection steps in the bracketing phase.
    pub max_bisections: u32,
    pub threads: Option<usize>,
}

impl SearchSettings {
    pub fn for_samples(samples: u64) -> Self {
        Self {
            coarse_samples: (samples / 10).max(MIN_COARSE_SAMPLES),
            ceiling: DEFAULT_SIGMA_CEILING,
            max_bisections: 12,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub low: f64,
    pub high: f64,
    pub trace: Vec<TraceEntry>,
}

struct Problem {
    shape: MechanismShape,
    epsilon: f64,
    delta_target: f64,
    delta_split: f64,
    threads: Option<usize>,
}

impl Problem {
    fn estimate(&self, sigma: f64, samples: u64, seed: u64) -> Result<DeltaEstimate> {
        let config = AccountingConfig {
            shape: self.shape,
            sigma,
            epsilon: self.epsilon,
            delta_target: self.delta_target,
            samples,
            seed,
            delta_split: self.delta_split,
        };
        estimate_delta_with(&config, EstimateOptions { threads: self.threads, screening: true })
    }
}

fn validate_target(epsilon: f64, delta_target: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta_target > 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta_target}")));
    }
    Ok(())
}

fn bracket_impl(problem: &Problem, settings: &SearchSettings, seed: u64) -> Result<Bracket> {
    if problem.delta_target >= 1.0 {
        return Ok(Bracket { low: 0.0, high: 0.0, trace: Vec::new() });
    }
    if settings.coarse_samples < MIN_COARSE_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "coarse samples must be at least {MIN_COARSE_SAMPLES}, got {}",
            settings.coarse_samples
        )));
    }
    let shape = problem.shape;
    let sensitivity = shape.participations() as f64 / (shape.iterations() as f64).sqrt();
    let anchor = calibrate_gaussian_sigma(sensitivity, problem.epsilon, problem.delta_target)
        .ok_or(Error::BracketFailed { ceiling: settings.ceiling })?
        .max(MIN_SIGMA);
    if anchor > settings.ceiling {
        return Err(Error::BracketFailed { ceiling: settings.ceiling });
    }

    let mut trace = Vec::new();
    let mut step = 0u64;
    let mut probe = |sigma: f64, trace: &mut Vec<TraceEntry>| -> Result<bool> {
        let seed = bracket_seed(seed, step);
        step += 1;
        let estimate = problem.estimate(sigma, settings.coarse_samples, seed)?;
        let passed = estimate.point < problem.delta_target;
        trace.push(TraceEntry { sigma, phase: Phase::Bracket, seed, estimate, passed });
        Ok(passed)
    };

    let (mut low, mut high);
    if probe(anchor, &mut trace)? {
        high = anchor;
        low = anchor / 2.0;
        while probe(low, &mut trace)? {
            high = low;
            if low <= MIN_SIGMA {
                return Ok(Bracket { low: 0.0, high, trace });
            }
            low = (low / 2.0).max(MIN_SIGMA);
        }
    } else {
        low = anchor;
        high = 2.0 * anchor;
        loop {
            if high > settings.ceiling {
                return Err(Error::BracketFailed { ceiling: settings.ceiling });
            }
            if probe(high, &mut trace)? {
                break;
            }
            low = high;
            high *= 2.0;
        }
    }

    for _ in 0..settings.max_bisections {
        if high - low <= 2.0 * GridPoint::round_up(high).step() {
            break;
        }
        let mid = 0.5 * (low + high);
        if probe(mid, &mut trace)? {
            high = mid;
        } else {
            low = mid;
        }
    }
    Ok(Bracket { low, high, trace })
}

/// Brackets the optimistic crossing `delta_hat(sigma) = delta_target` using
/// low-sample estimates. Returns `(0, 0)` when `delta_target >= 1`.
pub fn bracket_sigma(
    shape: MechanismShape,
    epsilon: f64,
    delta_target: f64,
    settings: &SearchSettings,
    seed: u64,
) -> Result<Bracket> {
    validate_target(epsilon, delta_target)?;
    let problem = Problem { shape, epsilon, delta_target, delta_split: 0.5, threads: settings.threads };
    bracket_impl(&problem, settings, seed)
}

/// Smallest grid sigma that passes verification (certified) or whose point
/// estimate meets `delta_target` (optimistic).
pub fn find_min_sigma(
    shape: MechanismShape,
    epsilon: f64,
    delta_target: f64,
    mode: SearchMode,
    samples: u64,
    delta_split: f64,
    seed: u64,
) -> Result<NoiseSearchResult> {
    find_min_sigma_with(shape, epsilon, delta_target, mode, samples, delta_split, seed, &SearchSettings::for_samples(samples))
}

#[allow(clippy::too_many_arguments)]
pub fn find_min_sigma_with(
    shape: MechanismShape,
    epsilon: f64,
    delta_target: f64,
    mode: SearchMode,
    samples: u64,
    delta_split: f64,
    seed: u64,
    settings: &SearchSettings,
) -> Result<NoiseSearchResult> {
    validate_target(epsilon, delta_target)?;
    if delta_target >= 1.0 {
        return Ok(NoiseSearchResult {
            sigma: MIN_SIGMA,
            status: mode,
            trace: Vec::new(),
            total_samples: 0,
            note: Some("delta_target >= 1: every sigma passes, returning the smallest grid value".into()),
        });
    }
    if !(delta_split > 0.0 && delta_split < 1.0) {
        return Err(Error::InvalidConfig(format!("delta_split must lie in (0, 1), got {delta_split}")));
    }
    let problem = Problem { shape, epsilon, delta_target, delta_split, threads: settings.threads };
    let threshold = match mode {
        SearchMode::Certified => (1.0 - delta_split) * delta_target,
        SearchMode::Optimistic => delta_target,
    };

    let bracket = bracket_impl(&problem, settings, seed)?;
    let mut trace = bracket.trace;

    let test = |point: GridPoint, phase: Phase, trace: &mut Vec<TraceEntry>| -> Result<bool> {
        let seed = candidate_seed(seed, point);
        let estimate = problem.estimate(point.value(), samples, seed)?;
        let statistic = match mode {
            SearchMode::Certified => estimate.upper_bound,
            SearchMode::Optimistic => estimate.point,
        };
        let passed = statistic <= threshold;
        trace.push(TraceEntry { sigma: point.value(), phase, seed, estimate, passed });
        Ok(passed)
    };

    // The coarse bracket can sit below the true crossing; climb until a
    // candidate passes at full sample size.
    let mut best = GridPoint::round_up(bracket.high.max(MIN_SIGMA));
    let mut known_fail = None;
    while !test(best, Phase::Ascend, &mut trace)? {
        known_fail = Some(best);
        let next = GridPoint::round_up(best.value() * 1.01);
        if next.value() > settings.ceiling {
            return Err(Error::BracketFailed { ceiling: settings.ceiling });
        }
        best = if next == best { best.step_up() } else { next };
    }

    loop {
        let next = best.step_down();
        if next.value() < MIN_SIGMA * (1.0 - 1e-9) || Some(next) == known_fail {
            break;
        }
        if test(next, Phase::Descend, &mut trace)? {
            best = next;
        } else {
            break;
        }
    }

    let total_samples = trace.iter().map(|e| e.estimate.samples_used).sum();
    Ok(NoiseSearchResult { sigma: best.value(), status: mode, trace, total_samples, note: None })
}
