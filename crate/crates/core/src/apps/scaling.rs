//! Endpoint-scaling experiment for the lattice polymer.
//!
//! Draws exact samples over a grid of horizons, many replicates each, and
//! fits the growth exponent of the mean maximal displacement against the
//! horizon in log-log scale. Every cell (horizon, replicate) derives its own
//! seeds for the disorder field, the pilot run and the sampler, so cells are
//! independent, individually replayable, and safe to run in parallel: the
//! jobs are collected in index order, which makes the output bitwise
//! identical no matter how many threads execute them.

use crate::apps::polymer::{polymer_model, PolymerEnvironment};
use crate::apps::smc::smc_prerun;
use crate::bounds::lattice_bound;
use crate::error::{SimError, SimResult};
use crate::kernel::{cftp_sample, KernelParams};
use crate::model::OffspringLaw;
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Full description of one scaling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// Bernoulli parameter of the disorder field, in (0, 1).
    pub p: f64,
    /// Inverse temperature, >= 0.
    pub beta: f64,
    /// Horizons to sample at; strictly increasing, each >= 2.
    pub horizons: Vec<usize>,
    /// Exact draws per horizon.
    pub replicates: usize,
    /// Master seed; every cell seed is derived from it.
    pub seed: u64,
    /// Root count of every forest.
    pub n1: usize,
    /// Particle count of the calibration pre-run.
    pub pilot_particles: usize,
    /// Fix the offspring support size for every step instead of calibrating
    /// from a pilot run; `Some(1)` turns the sampler into plain prior
    /// sampling, the control arm of the experiment.
    pub uniform_q: Option<u32>,
    /// Cap on total particles per forest build.
    pub population_cap: u64,
    /// Backward depths scanned before a cell is declared failed.
    pub depth_cap: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            p: 0.5,
            beta: 1.0,
            horizons: vec![8, 16, 32],
            replicates: 50,
            seed: 1,
            n1: 1,
            pilot_particles: 512,
            uniform_q: None,
            population_cap: 1 << 32,
            depth_cap: 10_000,
        }
    }
}

/// One completed exact draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub horizon: usize,
    pub replicate: usize,
    /// Sampler seed of the cell, enough to replay it given the config.
    pub seed: u64,
    pub coalescence_depth: usize,
    /// max_k |z_k| over the sampled path.
    pub max_abs: i64,
}

/// A cell that gave up (depth cap, population cap, degenerate pilot, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub horizon: usize,
    pub replicate: usize,
    pub seed: u64,
    pub reason: String,
}

/// Everything a scaling run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub cells: Vec<ScalingCell>,
    /// Failed cells, excluded from the fit but reported with their reasons.
    pub failures: Vec<CellFailure>,
    /// (horizon, mean of max |z_k| over that horizon's completed cells);
    /// horizons whose cells all failed are omitted.
    pub per_horizon_mean: Vec<(usize, f64)>,
    /// Least-squares slope of ln(mean max |z_k|) against ln(horizon);
    /// absent with fewer than two fitted points.
    pub zeta: Option<f64>,
    /// Standard error of the slope; absent with fewer than three.
    pub zeta_stderr: Option<f64>,
    /// Set when the fit rests on too little data to be trusted: fewer than
    /// three horizons survived, or some horizon kept fewer than ten cells.
    pub low_confidence: bool,
}

impl ScalingResult {
    /// Per-cell table as CSV with a header row.
    pub fn csv(&self) -> String {
        let mut out = String::from("horizon,replicate,coalescence_depth,max_abs,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.horizon, c.replicate, c.coalescence_depth, c.max_abs, c.seed
            ));
        }
        out
    }
}

fn validate(config: &ScalingConfig) -> SimResult<()> {
    if config.horizons.is_empty() {
        return Err(SimError::Config { reason: "scaling run needs at least one horizon".into() });
    }
    if !config.horizons.windows(2).all(|w| w[0] < w[1]) {
        return Err(SimError::Config { reason: "horizons must be strictly increasing".into() });
    }
    if config.horizons[0] < 2 {
        return Err(SimError::Config { reason: "every horizon must be at least 2".into() });
    }
    if config.replicates == 0 {
        return Err(SimError::Config { reason: "replicates must be positive".into() });
    }
    if config.n1 == 0 {
        return Err(SimError::Config { reason: "the root count must be positive".into() });
    }
    if config.uniform_q.is_none() && config.pilot_particles == 0 {
        return Err(SimError::Config {
            reason: "calibrating from a pilot run needs a positive particle count".into(),
        });
    }
    // Field parameters are validated by the environment constructor; probe
    // once up front so a bad (p, beta) pair fails the run, not every cell.
    PolymerEnvironment::generate(0, config.p, config.beta, config.horizons[0]).map(|_| ())
}

fn run_cell(config: &ScalingConfig, horizon: usize, replicate: usize) -> Result<ScalingCell, CellFailure> {
    let coords = [horizon as u64, replicate as u64];
    let env_seed = derive_seed(config.seed, &[coords[0], coords[1], 1]);
    let pilot_seed = derive_seed(config.seed, &[coords[0], coords[1], 2]);
    let run_seed = derive_seed(config.seed, &[coords[0], coords[1], 3]);
    let fail =
        |e: SimError| CellFailure { horizon, replicate, seed: run_seed, reason: e.to_string() };

    let run = || -> SimResult<ScalingCell> {
        let env = PolymerEnvironment::generate(env_seed, config.p, config.beta, horizon)?;
        let model = polymer_model(env);
        let law = match config.uniform_q {
            Some(q) => OffspringLaw::with_uniform_q(&model, q)?,
            None => {
                let pilot = smc_prerun(&model, config.pilot_particles, pilot_seed)?;
                OffspringLaw::from_pilot_means(&model, &pilot.mean_potentials)?
            }
        };
        let params = KernelParams {
            n1: config.n1,
            population_cap: config.population_cap,
            depth_cap: config.depth_cap,
        };
        let draw = cftp_sample(&model, &law, &params, run_seed, |stream| {
            lattice_bound(&model, &law, stream, config.n1, config.population_cap)
        })?;
        let max_abs = draw.path.iter().map(|site| site.abs()).max().unwrap_or(0);
        Ok(ScalingCell {
            horizon,
            replicate,
            seed: run_seed,
            coalescence_depth: draw.coalescence_depth,
            max_abs,
        })
    };
    run().map_err(fail)
}

/// Least-squares fit of ln(mean) against ln(horizon): (slope, stderr).
fn log_log_slope(points: &[(usize, f64)]) -> (Option<f64>, Option<f64>) {
    let n = points.len();
    if n < 2 {
        return (None, None);
    }
    let xs: Vec<f64> = points.iter().map(|&(p, _)| (p as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, m)| m.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / n as f64;
    let y_bar = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    if n < 3 {
        return (Some(slope), None);
    }
    let intercept = y_bar - slope * x_bar;
    let rss: f64 =
        xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (rss / (n - 2) as f64 / sxx).sqrt();
    (Some(slope), Some(stderr))
}

/// Run the whole grid and fit the displacement exponent.
///
/// Cells that hit a cap (or degenerate otherwise) are excluded from the fit
/// and reported in `failures` with their reasons; only a broken configuration
/// aborts the run as a whole.
pub fn scaling_experiment(config: &ScalingConfig) -> SimResult<ScalingResult> {
    validate(config)?;
    let jobs: Vec<(usize, usize)> = config
        .horizons
        .iter()
        .flat_map(|&p| (0..config.replicates).map(move |r| (p, r)))
        .collect();
    let outcomes: Vec<Result<ScalingCell, CellFailure>> =
        jobs.par_iter().map(|&(p, r)| run_cell(config, p, r)).collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(cell) => cells.push(cell),
            Err(failure) => failures.push(failure),
        }
    }

    let mut per_horizon_mean = Vec::new();
    let mut min_survivors = usize::MAX;
    for &p in &config.horizons {
        let maxima: Vec<f64> =
            cells.iter().filter(|c| c.horizon == p).map(|c| c.max_abs as f64).collect();
        min_survivors = min_survivors.min(maxima.len());
        if !maxima.is_empty() {
            per_horizon_mean.push((p, maxima.iter().sum::<f64>() / maxima.len() as f64));
        }
    }
    let (zeta, zeta_stderr) = log_log_slope(&per_horizon_mean);
    let low_confidence = per_horizon_mean.len() < 3 || min_survivors < 10;

    Ok(ScalingResult { cells, failures, per_horizon_mean, zeta, zeta_stderr, low_confidence })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScalingConfig {
        ScalingConfig {
            p: 0.5,
            beta: 0.7,
            horizons: vec![4, 6],
            replicates: 4,
            seed: 11,
            pilot_particles: 64,
            ..ScalingConfig::default()
        }
    }

    #[test]
    fn runs_are_deterministic_and_account_for_every_cell() {
        let config = small_config();
        let a = scaling_experiment(&config).unwrap();
        let b = scaling_experiment(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len() + a.failures.len(), 8);
        assert!(a.per_horizon_mean.iter().all(|&(_, m)| m >= 1.0));
        let csv = a.csv();
        assert_eq!(csv.lines().count(), a.cells.len() + 1);
        assert!(csv.starts_with("horizon,replicate,coalescence_depth,max_abs,seed\n"));
    }

    #[test]
    fn unit_support_control_coalesces_at_depth_zero() {
        let config = ScalingConfig {
            beta: 0.0,
            uniform_q: Some(1),
            replicates: 6,
            ..small_config()
        };
        let result = scaling_experiment(&config).unwrap();
        assert!(result.failures.is_empty());
        assert!(result.cells.iter().all(|c| c.coalescence_depth == 0));
        assert!(result.zeta.unwrap().is_finite());
    }

    #[test]
    fn thin_grids_are_flagged_low_confidence() {
        let config = ScalingConfig { replicates: 1, ..small_config() };
        let result = scaling_experiment(&config).unwrap();
        assert!(result.low_confidence);
    }

    #[test]
    fn depth_capped_cells_become_failures_not_errors() {
        // A cold, dense field makes proposals die almost surely, and support
        // size 1 keeps the sampler from compensating, so a depth cap of 0
        // leaves (almost) every cell unable to coalesce.
        let config = ScalingConfig {
            p: 0.8,
            beta: 4.0,
            uniform_q: Some(1),
            depth_cap: 0,
            horizons: vec![6, 8],
            replicates: 3,
            seed: 5,
            ..ScalingConfig::default()
        };
        let result = scaling_experiment(&config).unwrap();
        assert!(!result.failures.is_empty());
        assert_eq!(result.cells.len() + result.failures.len(), 6);
        assert!(result.failures.iter().all(|f| f.reason.contains("no coalescence")));
    }

    #[test]
    fn bad_grids_are_rejected() {
        let mut config = small_config();
        config.horizons = vec![6, 4];
        assert!(matches!(scaling_experiment(&config), Err(SimError::Config { .. })));
        config.horizons = vec![];
        assert!(matches!(scaling_experiment(&config), Err(SimError::Config { .. })));
        config.horizons = vec![4, 6];
        config.replicates = 0;
        assert!(matches!(scaling_experiment(&config), Err(SimError::Config { .. })));
    }
}
