//! Newline-delimited JSON run records emitted by the CLI.

use serde::{Deserialize, Serialize};

use crate::accountant::{DeltaEstimate, CERTIFICATION_CONVENTION};
use crate::search::{NoiseSearchResult, SearchMode};
use crate::ARTIFACT_VERSION;

/// Default cap on the sample-count heuristic.
pub const DEFAULT_MAX_SAMPLES: u64 = 10_000_000;

/// `50 ln(1/delta) / delta`, capped at `max_samples`.
pub fn heuristic_samples(delta: f64, max_samples: u64) -> u64 {
    let n = 50.0 * (1.0 / delta).ln() / delta;
    if !n.is_finite() || n >= max_samples as f64 {
        max_samples
    } else {
        (n.ceil() as u64).max(crate::accountant::MIN_SAMPLES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Explicit,
    Heuristic,
}

/// Every input needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub t: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub epsilon: f64,
    pub delta_target: f64,
    pub samples: u64,
    pub samples_source: SampleSource,
    pub max_samples: u64,
    pub seed: u64,
    pub delta_split: f64,
    pub screening: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SearchMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RunResult {
    DeltaEstimate(DeltaEstimate),
    NoiseSearch(NoiseSearchResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub artifact_version: String,
    pub command: String,
    pub config: ConfigEcho,
    pub result: RunResult,
    pub certification_convention: String,
    /// Omitted in reproducible mode so records compare byte-for-byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_count: Option<usize>,
}

impl RunRecord {
    pub fn new(command: &str, config: ConfigEcho, result: RunResult) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            config,
            result,
            certification_convention: CERTIFICATION_CONVENTION.to_string(),
            wall_time_seconds: None,
            worker_count: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("run records always serialize")
    }

    /// Parses one output line and checks the record's internal invariants.
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        if line.contains('\n') {
            return Err("record spans more than one line".into());
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        record.check()?;
        Ok(record)
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.artifact_version.starts_with("bis-accountant/") {
            return Err(format!("unexpected artifact_version {}", self.artifact_version));
        }
        if !matches!(self.command.as_str(), "estimate-delta" | "find-sigma") {
            return Err(format!("unknown command {}", self.command));
        }
        let c = &self.config;
        if c.k == 0 || c.k > c.t {
            return Err("config echo has an invalid shape".into());
        }
        match &self.result {
            RunResult::DeltaEstimate(e) => check_estimate(e)?,
            RunResult::NoiseSearch(r) => {
                if !(r.sigma > 0.0) {
                    return Err("search sigma must be positive".into());
                }
                for entry in &r.trace {
                    check_estimate(&entry.estimate)?;
                }
                let total: u64 = r.trace.iter().map(|e| e.estimate.samples_used).sum();
                if total != r.total_samples {
                    return Err("total_samples does not match the trace".into());
                }
            }
        }
        Ok(())
    }
}

fn check_estimate(e: &DeltaEstimate) -> Result<(), String> {
    if e.screened_out + e.exact_evals != e.samples_used {
        return Err("screened_out + exact_evals != samples_used".into());
    }
    if !(0.0..1.0).contains(&e.point) || !(0.0..=1.0).contains(&e.upper_bound) {
        return Err("estimate out of range".into());
    }
    if e.point > e.upper_bound {
        return Err("point estimate exceeds the upper bound".into());
    }
    if e.point != e.sum_of_values / e.samples_used as f64 {
        return Err("point != sum_of_values / samples_used".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo() -> ConfigEcho {
        ConfigEcho {
            t: 4,
            k: 2,
            sigma: Some(1.0),
            epsilon: 1.0,
            delta_target: 1e-5,
            samples: 1000,
            samples_source: SampleSource::Explicit,
            max_samples: DEFAULT_MAX_SAMPLES,
            seed: 1,
            delta_split: 0.1,
            screening: true,
            mode: None,
            coarse_samples: None,
            sigma_ceiling: None,
        }
    }

    fn estimate() -> DeltaEstimate {
        DeltaEstimate {
            point: 0.25,
            upper_bound: 0.5,
            samples_used: 1000,
            screened_out: 600,
            exact_evals: 400,
            sum_of_values: 250.0,
            sum_of_squares: 100.0,
        }
    }

    #[test]
    fn heuristic() {
        let n = heuristic_samples(1e-2, DEFAULT_MAX_SAMPLES);
        assert_eq!(n, (5000.0 * 100f64.ln()).ceil() as u64);
        assert_eq!(heuristic_samples(1e-9, DEFAULT_MAX_SAMPLES), DEFAULT_MAX_SAMPLES);
        assert_eq!(heuristic_samples(0.9, DEFAULT_MAX_SAMPLES), 1000);
    }

    #[test]
    fn round_trip_and_checks() {
        let mut r = RunRecord::new("estimate-delta", echo(), RunResult::DeltaEstimate(estimate()));
        r.wall_time_seconds = Some(0.5);
        let line = r.to_line();
        assert!(!line.contains('\n'));
        assert_eq!(RunRecord::parse_line(&line).unwrap(), r);

        let mut bad = estimate();
        bad.exact_evals = 1;
        let r = RunRecord::new("estimate-delta", echo(), RunResult::DeltaEstimate(bad));
        assert!(RunRecord::parse_line(&r.to_line()).is_err());

        assert!(RunRecord::parse_line(r#"{"artifact_version":"x"}"#).is_err());
        let extra = line.replacen('{', r#"{"surprise":1,"#, 1);
        assert!(RunRecord::parse_line(&extra).is_err());
    }

    #[test]
    fn reproducible_records_omit_timing() {
        let r = RunRecord::new("estimate-delta", echo(), RunResult::DeltaEstimate(estimate()));
        let line = r.to_line();
        assert!(!line.contains("wall_time_seconds") && !line.contains("worker_count"));
    }
}
