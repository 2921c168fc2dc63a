//! Command-line driver: calibrate offspring schedules, draw exact samples,
//! run the release-gate checks, and run the displacement-scaling study.
//!
//! One process runs one experiment. Results land as files under `--out`
//! (JSON, JSON-lines, CSV), each embedding the resolved configuration that
//! produced it; stdout carries a human summary. Replicates are spread over a
//! thread pool sized by `--threads`, and every replicate derives its own seed
//! from the master seed, so outputs are byte-identical across thread counts.
//!
//! Exit codes: 0 success; 1 internal error; 2 configuration rejected;
//! 3 a cap was breached (population, depth or cell scan); 4 verification
//! criteria failed.

mod config;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::{build_law, BuiltModel, RunConfig};
use fkps::apps::scaling::{scaling_experiment, CellFailure, ScalingResult};
use fkps::bounds::{continuous_bound, lattice_bound, verify_contraction, BoundCertificate, ScanParams};
use fkps::kernel::{cftp_sample, CftpResult, KernelParams};
use fkps::model::{Model, OffspringLaw};
use fkps::rng::{derive_seed, KeyedStream};
use fkps::verify::{run_one, CriterionReport, CRITERION_COUNT};
use fkps::{SimError, SimResult};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const CODE_INTERNAL: u8 = 1;
const CODE_CONFIG: u8 = 2;
const CODE_CAP: u8 = 3;
const CODE_VERIFY: u8 = 4;

/// Contraction spot-check budget for continuous-state sampling runs.
const CONTRACTION_TRIALS: u32 = 64;
const CONTRACTION_STEPS: usize = 32;

#[derive(Parser)]
#[command(
    name = "fkps",
    version,
    about = "Exact sampling of weighted path measures",
    after_help = "Exit codes: 0 success, 1 internal error, 2 bad configuration, \
                  3 cap breached, 4 verification failed."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (required by calibrate, sample and scaling).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the replicate count of the configuration.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Worker threads for the replicate pool (default: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for result files.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the offspring schedule and report it with the normalizer
    /// estimate (writes calibration.json).
    Calibrate,
    /// Draw exact samples, one JSON line per draw (writes samples.jsonl and
    /// sample_summary.json).
    Sample,
    /// Run the release-gate criteria, one line each (writes
    /// verify_report.json).
    Verify {
        /// Run only this criterion id; repeatable. Default: all.
        #[arg(long, value_name = "ID")]
        only: Vec<u8>,
    },
    /// Run the displacement-scaling study (writes scaling.csv and
    /// scaling_summary.json).
    Scaling,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Classify an error chain into the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            return match sim {
                SimError::Config { .. } | SimError::Calibration { .. } => CODE_CONFIG,
                SimError::PopulationCap { .. }
                | SimError::DepthCap { .. }
                | SimError::CellCap { .. } => CODE_CAP,
                _ => CODE_INTERNAL,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return CODE_CONFIG;
        }
    }
    CODE_INTERNAL
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing the worker pool")?;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match &cli.command {
        Command::Calibrate => {
            let config = load_config(&cli)?;
            cmd_calibrate(&config, &cli.out)
        }
        Command::Sample => {
            let config = load_config(&cli)?;
            cmd_sample(&config, &cli.out)
        }
        Command::Scaling => {
            let config = load_config(&cli)?;
            cmd_scaling(&config, &cli.out)
        }
        Command::Verify { only } => cmd_verify(only, &cli.out),
    }
}

/// Load the config file and fold the command-line overrides into it, so the
/// copy embedded in every output is the resolved one.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().ok_or_else(|| SimError::Config {
        reason: "this command needs --config <PATH>".into(),
    })?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
        if let Some(scaling) = &mut config.scaling {
            scaling.seed = seed;
        }
    }
    if let Some(replicates) = cli.replicates {
        config.replicates = replicates;
        if let Some(scaling) = &mut config.scaling {
            scaling.replicates = replicates;
        }
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CalibrationStep {
    /// Weighted time whose potential feeds this step.
    time: usize,
    /// Generation the step gives birth into.
    child_generation: usize,
    /// Certified potential bound at that time.
    bound: f64,
    /// Calibrated (or overridden) offspring support size.
    q: u32,
    /// Pilot-run mean potential; absent under a uniform_q override.
    #[serde(skip_serializing_if = "Option::is_none")]
    pilot_mean: Option<f64>,
    /// Mean offspring count at the pilot mean — the calibration target is
    /// 1.0, reached up to integer rounding of q.
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_offspring_at_pilot_mean: Option<f64>,
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    config: &'a RunConfig,
    steps: Vec<CalibrationStep>,
    /// Unbiased log-normalizer estimate from the pilot run; absent under a
    /// uniform_q override.
    #[serde(skip_serializing_if = "Option::is_none")]
    log_z_estimate: Option<f64>,
}

fn cmd_calibrate(config: &RunConfig, out: &Path) -> Result<ExitCode> {
    let (law, pilot) = match config.build_model()? {
        BuiltModel::Polymer(model) => build_law(&model, &config.algorithm)?,
        BuiltModel::Gaussian(model) => build_law(&model, &config.algorithm)?,
    };
    let means = pilot.as_ref().map(|p| p.mean_potentials.as_slice());
    let steps: Vec<CalibrationStep> = law
        .steps()
        .iter()
        .enumerate()
        .map(|(j, step)| {
            let pilot_mean = means.map(|m| m[j]);
            CalibrationStep {
                time: j + 1,
                child_generation: j + 2,
                bound: step.beta,
                q: step.q,
                pilot_mean,
                mean_offspring_at_pilot_mean: pilot_mean
                    .map(|mean| law.mean_offspring(j + 2, mean)),
            }
        })
        .collect();
    let report = CalibrationReport {
        config,
        steps,
        log_z_estimate: pilot.as_ref().map(|p| p.log_z),
    };

    let path = out.join("calibration.json");
    write_json(&path, &report)?;
    for step in &report.steps {
        match (step.pilot_mean, step.mean_offspring_at_pilot_mean) {
            (Some(mean), Some(at_mean)) => println!(
                "time {:3}: bound {:.6}, q {:4}, pilot mean {:.6}, mean offspring there {:.6}",
                step.time, step.bound, step.q, mean, at_mean
            ),
            _ => println!(
                "time {:3}: bound {:.6}, q {:4} (fixed by uniform_q)",
                step.time, step.bound, step.q
            ),
        }
    }
    if let Some(log_z) = report.log_z_estimate {
        println!("log-normalizer estimate: {log_z:.6}");
    }
    println!("calibration report written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReplicateFailure {
    replicate: usize,
    seed: u64,
    /// True when a configured cap (population, depth, cell scan) stopped the
    /// draw; such runs exit with the cap-breach code.
    cap_breach: bool,
    reason: String,
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    config: &'a RunConfig,
    replicates: usize,
    successes: usize,
    failures: &'a [ReplicateFailure],
    /// Statistics of the coalescence depth T over successful draws.
    mean_coalescence_depth: Option<f64>,
    median_coalescence_depth: Option<f64>,
    /// T histogram: depth -> count.
    depth_histogram: BTreeMap<usize, usize>,
}

fn cmd_sample(config: &RunConfig, out: &Path) -> Result<ExitCode> {
    let params = config.algorithm.kernel_params();
    match config.build_model()? {
        BuiltModel::Polymer(model) => {
            let (law, _) = build_law(&model, &config.algorithm)?;
            let bound = |stream: &KeyedStream| {
                lattice_bound(&model, &law, stream, params.n1, params.population_cap)
            };
            finish_sample(config, out, draw_replicates(&model, &law, &params, config, &bound))
        }
        BuiltModel::Gaussian(model) => {
            let (law, _) = build_law(&model, &config.algorithm)?;
            // Spot-check the contraction certificate once per run; its seed
            // uses a two-coordinate derivation, disjoint from the
            // one-coordinate replicate seeds.
            let cert = verify_contraction(
                &model,
                CONTRACTION_TRIALS,
                CONTRACTION_STEPS,
                derive_seed(config.seed, &[u64::MAX, 0]),
            )?;
            let scan = ScanParams {
                delta: config.algorithm.delta,
                population_cap: config.algorithm.population_cap,
                ..ScanParams::default()
            };
            let bound = |stream: &KeyedStream| {
                continuous_bound(&model, &law, stream, params.n1, &cert, &scan)
            };
            finish_sample(config, out, draw_replicates(&model, &law, &params, config, &bound))
        }
    }
}

/// Draw `config.replicates` exact samples in parallel, replicate r seeded by
/// coordinate r of the master seed. Results come back in replicate order
/// whatever the pool size.
fn draw_replicates<M, F>(
    model: &M,
    law: &OffspringLaw,
    params: &KernelParams,
    config: &RunConfig,
    bound: &F,
) -> (Vec<CftpResult<M::State>>, Vec<ReplicateFailure>)
where
    M: Model + Sync,
    M::State: Send,
    F: Fn(&KeyedStream) -> SimResult<BoundCertificate> + Sync,
{
    let outcomes: Vec<Result<CftpResult<M::State>, ReplicateFailure>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, &[r as u64]);
            cftp_sample(model, law, params, seed, bound).map_err(|e| ReplicateFailure {
                replicate: r,
                seed,
                cap_breach: matches!(
                    e,
                    SimError::PopulationCap { .. }
                        | SimError::DepthCap { .. }
                        | SimError::CellCap { .. }
                ),
                reason: e.to_string(),
            })
        })
        .collect();

    let mut draws = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(draw) => draws.push(draw),
            Err(failure) => failures.push(failure),
        }
    }
    (draws, failures)
}

fn finish_sample<S: Serialize>(
    config: &RunConfig,
    out: &Path,
    (draws, failures): (Vec<CftpResult<S>>, Vec<ReplicateFailure>),
) -> Result<ExitCode> {
    let samples_path = out.join("samples.jsonl");
    write_jsonl(&samples_path, &draws)?;

    let mut depths: Vec<usize> = draws.iter().map(|d| d.coalescence_depth).collect();
    depths.sort_unstable();
    let mut histogram = BTreeMap::new();
    for &depth in &depths {
        *histogram.entry(depth).or_insert(0usize) += 1;
    }
    let summary = SampleSummary {
        config,
        replicates: config.replicates,
        successes: draws.len(),
        failures: &failures,
        mean_coalescence_depth: (!depths.is_empty())
            .then(|| depths.iter().sum::<usize>() as f64 / depths.len() as f64),
        median_coalescence_depth: median(&depths),
        depth_histogram: histogram,
    };
    let summary_path = out.join("sample_summary.json");
    write_json(&summary_path, &summary)?;

    println!(
        "{} of {} draws succeeded; {} failed",
        summary.successes,
        summary.replicates,
        failures.len()
    );
    if let (Some(mean), Some(median)) =
        (summary.mean_coalescence_depth, summary.median_coalescence_depth)
    {
        println!("coalescence depth: mean {mean:.3}, median {median}");
    }
    for failure in &failures {
        eprintln!("replicate {} (seed {}): {}", failure.replicate, failure.seed, failure.reason);
    }
    println!("samples written to {}", samples_path.display());
    println!("summary written to {}", summary_path.display());

    if failures.iter().any(|f| f.cap_breach) {
        Ok(ExitCode::from(CODE_CAP))
    } else if !failures.is_empty() {
        Ok(ExitCode::from(CODE_INTERNAL))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

/// Median of a sorted slice; even lengths average the two central values.
fn median(sorted: &[usize]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    })
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScalingSummary<'a> {
    config: &'a RunConfig,
    completed_cells: usize,
    per_horizon_mean: &'a [(usize, f64)],
    zeta: Option<f64>,
    zeta_stderr: Option<f64>,
    low_confidence: bool,
    failures: &'a [CellFailure],
}

fn cmd_scaling(config: &RunConfig, out: &Path) -> Result<ExitCode> {
    let result: ScalingResult = scaling_experiment(config.scaling()?)?;

    let csv_path = out.join("scaling.csv");
    fs::write(&csv_path, result.csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let summary = ScalingSummary {
        config,
        completed_cells: result.cells.len(),
        per_horizon_mean: &result.per_horizon_mean,
        zeta: result.zeta,
        zeta_stderr: result.zeta_stderr,
        low_confidence: result.low_confidence,
        failures: &result.failures,
    };
    let summary_path = out.join("scaling_summary.json");
    write_json(&summary_path, &summary)?;

    for (horizon, mean) in result.per_horizon_mean.iter() {
        println!("horizon {horizon:4}: mean max displacement {mean:.4}");
    }
    match (result.zeta, result.zeta_stderr) {
        (Some(zeta), Some(se)) => println!("zeta = {zeta:.4} (stderr {se:.4})"),
        (Some(zeta), None) => println!("zeta = {zeta:.4}"),
        _ => println!("zeta not identified (fewer than two fitted horizons)"),
    }
    if result.low_confidence {
        println!("warning: fit rests on too little data to be trusted");
    }
    for failure in &result.failures {
        eprintln!(
            "cell (horizon {}, replicate {}) failed: {}",
            failure.horizon, failure.replicate, failure.reason
        );
    }
    println!("cell table written to {}", csv_path.display());
    println!("summary written to {}", summary_path.display());

    if result.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        // Cells only fail by running into a configured cap.
        Ok(ExitCode::from(CODE_CAP))
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyReport {
    passed: bool,
    criteria: Vec<CriterionReport>,
}

fn cmd_verify(only: &[u8], out: &Path) -> Result<ExitCode> {
    let ids: Vec<u8> = if only.is_empty() { (1..=CRITERION_COUNT).collect() } else { only.to_vec() };
    for &id in &ids {
        if !(1..=CRITERION_COUNT).contains(&id) {
            return Err(SimError::Config {
                reason: format!("--only {id}: criteria are numbered 1 through {CRITERION_COUNT}"),
            }
            .into());
        }
    }

    let mut criteria = Vec::with_capacity(ids.len());
    for id in ids {
        let report = run_one(id).expect("ids validated above");
        println!("{}", report.line());
        std::io::stdout().flush().ok();
        criteria.push(report);
    }
    let report = VerifyReport { passed: criteria.iter().all(|c| c.passed), criteria };
    let path = out.join("verify_report.json");
    write_json(&path, &report)?;
    println!("report written to {}", path.display());

    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(CODE_VERIFY) })
}

// ---------------------------------------------------------------------------
// output helpers
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One compact JSON document per line, in replicate order.
fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut writer, row).context("serializing sample")?;
        writer.write_all(b"\n").context("writing sample")?;
    }
    writer.flush().with_context(|| format!("flushing {}", path.display()))
}
