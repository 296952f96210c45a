use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use bis_accountant::accountant::{estimate_delta_with, AccountingConfig, EstimateOptions, DEFAULT_DELTA_SPLIT};
use bis_accountant::record::{heuristic_samples, ConfigEcho, RunRecord, RunResult, SampleSource, DEFAULT_MAX_SAMPLES};
use bis_accountant::search::{find_min_sigma_with, SearchMode, SearchSettings, DEFAULT_SIGMA_CEILING};
use bis_accountant::validate::{run_validation, Fault, ValidateOptions};
use bis_accountant::{Error, MechanismShape};

const DEFAULT_SEED: u64 = 0;
const DEFAULT_ESTIMATE_DELTA: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "bis-accountant", version, about = "Monte Carlo privacy accounting for balanced iteration subsampling")]
struct Cli {
    /// Worker threads (defaults to all available cores).
    #[arg(long, global = true, env = "BIS_ACCOUNTANT_THREADS")]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Omit wall time and worker count so records are byte-reproducible.
    #[arg(long, global = true)]
    reproducible: bool,

    /// Write records to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate delta(epsilon) at a fixed noise multiplier.
    EstimateDelta(EstimateArgs),
    /// Search for the smallest noise multiplier meeting (epsilon, delta).
    FindSigma(FindArgs),
    /// Run the oracle and property self-checks.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long, required_unless_present = "batch")]
    t: Option<usize>,
    #[arg(long, required_unless_present = "batch")]
    k: Option<usize>,
    #[arg(long, required_unless_present = "batch")]
    sigma: Option<f64>,
    #[arg(long, required_unless_present = "batch")]
    epsilon: Option<f64>,
    /// Target delta; sets the confidence level of the upper bound.
    #[arg(long)]
    delta: Option<f64>,
    /// Defaults to 50 ln(1/delta) / delta, capped at --max-samples.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta_split: Option<f64>,
    /// Evaluate the exact ratio for every sample.
    #[arg(long)]
    no_screening: bool,
    /// JSON array of run configurations.
    #[arg(long, conflicts_with_all = ["t", "k", "sigma", "epsilon"])]
    batch: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FindArgs {
    #[arg(long, required_unless_present = "batch")]
    t: Option<usize>,
    #[arg(long, required_unless_present = "batch")]
    k: Option<usize>,
    #[arg(long, required_unless_present = "batch")]
    epsilon: Option<f64>,
    #[arg(long, required_unless_present = "batch")]
    delta: Option<f64>,
    #[arg(long)]
    mode: Option<SearchMode>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: u64,
    /// Samples per bracketing estimate (defaults to samples / 10, at least 10^4).
    #[arg(long)]
    coarse_samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta_split: Option<f64>,
    #[arg(long)]
    ceiling: Option<f64>,
    #[arg(long, conflicts_with_all = ["t", "k", "epsilon", "delta"])]
    batch: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Largest T in the enumeration sweep.
    #[arg(long, default_value_t = 16)]
    max_t: usize,
    #[arg(long, default_value_t = 100)]
    vectors: usize,
    #[arg(long, default_value_t = 100_000)]
    instances: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    InvertScreening,
}

/// One estimate-delta run, from flags or a batch entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateRequest {
    t: usize,
    k: usize,
    sigma: f64,
    epsilon: f64,
    delta: Option<f64>,
    samples: Option<u64>,
    max_samples: Option<u64>,
    seed: Option<u64>,
    delta_split: Option<f64>,
    #[serde(default)]
    no_screening: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FindRequest {
    t: usize,
    k: usize,
    epsilon: f64,
    delta: f64,
    mode: Option<SearchMode>,
    samples: Option<u64>,
    max_samples: Option<u64>,
    coarse_samples: Option<u64>,
    seed: Option<u64>,
    delta_split: Option<f64>,
    ceiling: Option<f64>,
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn resolve_samples(samples: Option<u64>, delta: f64, max_samples: u64) -> (u64, SampleSource) {
    match samples {
        Some(n) => (n, SampleSource::Explicit),
        None => (heuristic_samples(delta.min(0.5), max_samples), SampleSource::Heuristic),
    }
}

fn check_finite(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--{name} must be finite, got {v}")))
    }
}

fn read_batch<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<Vec<T>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid batch file {}: {e}", path.display())))
}

/// Validated, fully-resolved estimate run.
fn prepare_estimate(req: &EstimateRequest) -> Result<(AccountingConfig, ConfigEcho), Failure> {
    for (name, v) in [("sigma", req.sigma), ("epsilon", req.epsilon)] {
        check_finite(name, v)?;
    }
    let shape = MechanismShape::new(req.t, req.k)?;
    let delta = req.delta.unwrap_or(DEFAULT_ESTIMATE_DELTA);
    let max_samples = req.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES);
    let (samples, samples_source) = resolve_samples(req.samples, delta, max_samples);
    let config = AccountingConfig {
        shape,
        sigma: req.sigma,
        epsilon: req.epsilon,
        delta_target: delta,
        samples,
        seed: req.seed.unwrap_or(DEFAULT_SEED),
        delta_split: req.delta_split.unwrap_or(DEFAULT_DELTA_SPLIT),
    };
    config.validate()?;
    let echo = ConfigEcho {
        t: req.t,
        k: req.k,
        sigma: Some(req.sigma),
        epsilon: req.epsilon,
        delta_target: delta,
        samples,
        samples_source,
        max_samples,
        seed: config.seed,
        delta_split: config.delta_split,
        screening: !req.no_screening,
        mode: None,
        coarse_samples: None,
        sigma_ceiling: None,
    };
    Ok((config, echo))
}

struct Runner {
    threads: usize,
    reproducible: bool,
}

impl Runner {
    fn finish(&self, mut record: RunRecord, started: Instant) -> RunRecord {
        if !self.reproducible {
            record.wall_time_seconds = Some(started.elapsed().as_secs_f64());
            record.worker_count = Some(self.threads);
        }
        record
    }

    fn estimate(&self, req: &EstimateRequest) -> Result<RunRecord, Failure> {
        let (config, echo) = prepare_estimate(req)?;
        let started = Instant::now();
        let options = EstimateOptions { threads: Some(self.threads), screening: echo.screening };
        let estimate = estimate_delta_with(&config, options)?;
        Ok(self.finish(RunRecord::new("estimate-delta", echo, RunResult::DeltaEstimate(estimate)), started))
    }

    fn find(&self, req: &FindRequest) -> Result<RunRecord, Failure> {
        check_finite("epsilon", req.epsilon)?;
        check_finite("delta", req.delta)?;
        let shape = MechanismShape::new(req.t, req.k)?;
        let max_samples = req.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES);
        let (samples, samples_source) = resolve_samples(req.samples, req.delta, max_samples);
        if samples < bis_accountant::accountant::MIN_SAMPLES {
            return Err(Failure::Usage(format!(
                "samples must be at least {}, got {samples}",
                bis_accountant::accountant::MIN_SAMPLES
            )));
        }
        let mode = req.mode.unwrap_or(SearchMode::Certified);
        let delta_split = req.delta_split.unwrap_or(DEFAULT_DELTA_SPLIT);
        let defaults = SearchSettings::for_samples(samples);
        let settings = SearchSettings {
            coarse_samples: req.coarse_samples.unwrap_or(defaults.coarse_samples),
            ceiling: req.ceiling.unwrap_or(DEFAULT_SIGMA_CEILING),
            threads: Some(self.threads),
            ..defaults
        };
        let seed = req.seed.unwrap_or(DEFAULT_SEED);
        let echo = ConfigEcho {
            t: req.t,
            k: req.k,
            sigma: None,
            epsilon: req.epsilon,
            delta_target: req.delta,
            samples,
            samples_source,
            max_samples,
            seed,
            delta_split,
            screening: true,
            mode: Some(mode),
            coarse_samples: Some(settings.coarse_samples),
            sigma_ceiling: Some(settings.ceiling),
        };
        let started = Instant::now();
        let result = find_min_sigma_with(shape, req.epsilon, req.delta, mode, samples, delta_split, seed, &settings)?;
        Ok(self.finish(RunRecord::new("find-sigma", echo, RunResult::NoiseSearch(result)), started))
    }
}

fn table_header(command: &Command) -> &'static str {
    match command {
        Command::FindSigma(_) => {
            "   eps        delta      T      k  mode          sigma   total_samples"
        }
        _ => "   eps        delta      T      k      sigma        point  upper_bound   screened      exact",
    }
}

fn table_row(record: &RunRecord) -> String {
    let c = &record.config;
    match &record.result {
        RunResult::DeltaEstimate(e) => format!(
            "{:>6} {:>12.3e} {:>6} {:>6} {:>10.4} {:>12.5e} {:>12.5e} {:>10} {:>10}",
            c.epsilon,
            c.delta_target,
            c.t,
            c.k,
            c.sigma.unwrap_or(f64::NAN),
            e.point,
            e.upper_bound,
            e.screened_out,
            e.exact_evals
        ),
        RunResult::NoiseSearch(r) => {
            let mode = match r.status {
                SearchMode::Certified => "certified",
                SearchMode::Optimistic => "optimistic",
            };
            format!(
                "{:>6} {:>12.3e} {:>6} {:>6}  {:<10} {:>8} {:>15}",
                c.epsilon, c.delta_target, c.t, c.k, mode, format!("{}", r.sigma), r.total_samples
            )
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Validate(args) = &cli.command {
        let options = ValidateOptions {
            max_t: args.max_t,
            vectors_per_shape: args.vectors,
            dominance_instances: args.instances,
            seed: args.seed,
            fault: args.inject_fault.map(|FaultArg::InvertScreening| Fault::InvertScreening),
        };
        if options.max_t > 20 {
            return Err(Failure::Usage("--max-t above 20 makes the enumeration intractable".into()));
        }
        let results = run_validation(&options);
        let failed = results.iter().filter(|r| !r.passed).count();
        for r in &results {
            println!("{r}");
        }
        println!("{} checks, {} failed", results.len(), failed);
        return if failed == 0 { Ok(()) } else { Err(Failure::Internal(format!("{failed} validation checks failed"))) };
    }

    let threads = match cli.threads {
        Some(0) => return Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let runner = Runner { threads, reproducible: cli.reproducible };

    let mut sink: Box<dyn Write> = match &cli.output {
        Some(path) => Box::new(
            fs::File::create(path).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))?,
        ),
        None => Box::new(io::stdout().lock()),
    };
    let table = cli.format == Format::Table;
    if table {
        writeln!(sink, "{}", table_header(&cli.command)).map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let mut emit = |record: &RunRecord| -> Result<(), Failure> {
        let line = if table { table_row(record) } else { record.to_line() };
        writeln!(sink, "{line}").and_then(|_| sink.flush()).map_err(|e| Failure::Internal(e.to_string()))
    };

    match &cli.command {
        Command::EstimateDelta(a) => {
            let requests = match &a.batch {
                Some(path) => read_batch::<EstimateRequest>(path)?,
                None => vec![EstimateRequest {
                    t: a.t.unwrap_or_default(),
                    k: a.k.unwrap_or_default(),
                    sigma: a.sigma.unwrap_or_default(),
                    epsilon: a.epsilon.unwrap_or_default(),
                    delta: a.delta,
                    samples: a.samples,
                    max_samples: Some(a.max_samples),
                    seed: a.seed,
                    delta_split: a.delta_split,
                    no_screening: a.no_screening,
                }],
            };
            // Reject the whole batch up front rather than failing halfway.
            for req in &requests {
                prepare_estimate(req)?;
            }
            for req in &requests {
                emit(&runner.estimate(req)?)?;
            }
        }
        Command::FindSigma(a) => {
            let requests = match &a.batch {
                Some(path) => read_batch::<FindRequest>(path)?,
                None => vec![FindRequest {
                    t: a.t.unwrap_or_default(),
                    k: a.k.unwrap_or_default(),
                    epsilon: a.epsilon.unwrap_or_default(),
                    delta: a.delta.unwrap_or_default(),
                    mode: a.mode,
                    samples: a.samples,
                    max_samples: Some(a.max_samples),
                    coarse_samples: a.coarse_samples,
                    seed: a.seed,
                    delta_split: a.delta_split,
                    ceiling: a.ceiling,
                }],
            };
            for req in &requests {
                emit(&runner.find(req)?)?;
            }
        }
        Command::Validate(_) => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
