//! Run configuration: JSON schema, validation and translation into core
//! types.
//!
//! A run is described by one JSON document. The `model` block picks and
//! parameterizes the target law, the `algorithm` block sets sampler knobs
//! (all optional, with the library defaults), `seed`/`replicates` drive the
//! sampling commands, and the optional `scaling` block configures the
//! displacement-scaling study. Unknown fields anywhere are rejected before
//! any computation starts, and every output file embeds the resolved
//! configuration that produced it.

use anyhow::{Context, Result};
use fkps::apps::gaussian::{gaussian_model, simulate_observations, GaussianChain};
use fkps::apps::polymer::{polymer_model, Polymer, PolymerEnvironment};
use fkps::apps::scaling::ScalingConfig;
use fkps::apps::smc::{smc_prerun, SmcEstimate};
use fkps::kernel::KernelParams;
use fkps::model::{Model, OffspringLaw};
use fkps::{SimError, SimResult};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Target-law selection. `kind` picks the family, the remaining fields are
/// its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Random walk on the integers reweighted by a Bernoulli(`p`) site field
    /// at inverse temperature `beta`; the field is drawn from `seed`.
    Polymer { p: f64, beta: f64, horizon: usize, seed: u64 },
    /// Linear-Gaussian chain X_{t+1} = a X_t + b W conditioned on
    /// observations Y_t = c X_t + V. Provide either `seed` (observations are
    /// then simulated from the chain itself) or an explicit `observations`
    /// array of length `horizon - 1`.
    Gaussian {
        a: f64,
        b: f64,
        c: f64,
        horizon: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observations: Option<Vec<f64>>,
    },
}

/// Sampler knobs; every field has a default, so the block (or any subset of
/// it) may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    /// Root count of every forest.
    pub n1: usize,
    /// Cap on total particles per forest build.
    pub population_cap: u64,
    /// Backward depths scanned before a draw is declared failed.
    pub depth_cap: usize,
    /// Cell width of the certified-bound scan for continuous-state models.
    pub delta: f64,
    /// Fix this offspring support size at every step instead of calibrating.
    pub uniform_q: Option<u32>,
    /// Particle count of the calibration pre-run.
    pub pilot_particles: usize,
    /// Seed of the calibration pre-run.
    pub pilot_seed: u64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let kernel = KernelParams::default();
        AlgorithmConfig {
            n1: kernel.n1,
            population_cap: kernel.population_cap,
            depth_cap: kernel.depth_cap,
            delta: 0.05,
            uniform_q: None,
            pilot_particles: 512,
            pilot_seed: 7,
        }
    }
}

impl AlgorithmConfig {
    pub fn kernel_params(&self) -> KernelParams {
        KernelParams {
            n1: self.n1,
            population_cap: self.population_cap,
            depth_cap: self.depth_cap,
        }
    }
}

fn default_replicates() -> usize {
    100
}

/// One experiment, one document. Serialized verbatim into every output.
///
/// `calibrate` and `sample` need the `model` block; `scaling` needs the
/// self-contained `scaling` block. A document may carry both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    /// Master seed of the sampling commands; replicate r uses the seed
    /// derived from it at coordinate r.
    #[serde(default)]
    pub seed: u64,
    /// Replicate count of the `sample` command.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Configuration of the `scaling` command; ignored by the others.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
}

impl RunConfig {
    /// Read and schema-check a configuration file. Violations (bad JSON,
    /// unknown or missing fields, out-of-range values) are reported with the
    /// file path before any computation starts.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("config {} does not match the schema", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// The model block, demanded by the commands that sample from it.
    pub fn model(&self) -> SimResult<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| SimError::Config {
            reason: "this command needs a model block in the config".into(),
        })
    }

    /// The scaling block, demanded by the scaling command.
    pub fn scaling(&self) -> SimResult<&ScalingConfig> {
        self.scaling.as_ref().ok_or_else(|| SimError::Config {
            reason: "the scaling command needs a scaling block in the config".into(),
        })
    }

    /// Range checks beyond what the type system enforces. Model parameters
    /// are re-checked by the constructors; this catches what would otherwise
    /// surface mid-run.
    fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(SimError::Config { reason }.into());
        if self.model.is_none() && self.scaling.is_none() {
            return fail("config needs a model block, a scaling block, or both".into());
        }
        if let Some(ModelConfig::Gaussian { seed, observations, horizon, .. }) = &self.model {
            match (seed, observations) {
                (Some(_), Some(_)) => {
                    return fail("model: give either seed or observations, not both".into());
                }
                (None, None) => {
                    return fail("model: give either seed or observations".into());
                }
                (None, Some(obs)) => {
                    if obs.len() + 1 != *horizon {
                        return fail(format!(
                            "model: {} observations do not fit horizon {} (need horizon - 1)",
                            obs.len(),
                            horizon
                        ));
                    }
                }
                (Some(_), None) => {}
            }
        }
        if self.algorithm.n1 == 0 {
            return fail("algorithm: n1 must be at least 1".into());
        }
        if !(self.algorithm.delta.is_finite() && self.algorithm.delta > 0.0) {
            return fail(format!("algorithm: delta {} must be positive", self.algorithm.delta));
        }
        if self.algorithm.uniform_q == Some(0) {
            return fail("algorithm: uniform_q must be at least 1".into());
        }
        if self.algorithm.pilot_particles == 0 && self.algorithm.uniform_q.is_none() {
            return fail("algorithm: calibration needs pilot_particles >= 1".into());
        }
        Ok(())
    }

    /// Build the configured model.
    pub fn build_model(&self) -> SimResult<BuiltModel> {
        match self.model()? {
            ModelConfig::Polymer { p, beta, horizon, seed } => {
                let env = PolymerEnvironment::generate(*seed, *p, *beta, *horizon)?;
                Ok(BuiltModel::Polymer(polymer_model(env)))
            }
            ModelConfig::Gaussian { a, b, c, horizon, seed, observations } => {
                let obs = match (seed, observations) {
                    (Some(s), None) => simulate_observations(*a, *b, *c, *horizon, *s)?,
                    (None, Some(o)) => o.clone(),
                    _ => unreachable!("validated on load"),
                };
                Ok(BuiltModel::Gaussian(gaussian_model(*a, *b, *c, obs)?))
            }
        }
    }
}

/// The configured model, dispatched by the commands. The two families need
/// different bound providers (lattice enumeration vs. certified cell scan),
/// so the dispatch stays explicit rather than behind a trait object.
pub enum BuiltModel {
    Polymer(Polymer),
    Gaussian(GaussianChain),
}

/// Offspring schedule for `model` per the algorithm block: either the fixed
/// uniform support size, or calibration from a pilot particle run (whose
/// normalizer estimate is returned alongside).
pub fn build_law<M: Model>(
    model: &M,
    algorithm: &AlgorithmConfig,
) -> SimResult<(OffspringLaw, Option<SmcEstimate>)> {
    match algorithm.uniform_q {
        Some(q) => Ok((OffspringLaw::with_uniform_q(model, q)?, None)),
        None => {
            let pilot = smc_prerun(model, algorithm.pilot_particles, algorithm.pilot_seed)?;
            let law = OffspringLaw::from_pilot_means(model, &pilot.mean_potentials)?;
            Ok((law, Some(pilot)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text).map_err(anyhow::Error::from)?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn minimal_polymer_config_fills_defaults() {
        let config = parse(
            r#"{"model": {"kind": "polymer", "p": 0.5, "beta": 1.0, "horizon": 6, "seed": 3}}"#,
        )
        .unwrap();
        assert_eq!(config.replicates, 100);
        assert_eq!(config.algorithm, AlgorithmConfig::default());
        assert!(config.scaling.is_none());
        let BuiltModel::Polymer(model) = config.build_model().unwrap() else {
            panic!("expected the polymer model");
        };
        assert_eq!(model.horizon(), 6);
    }

    #[test]
    fn unknown_fields_are_rejected_everywhere() {
        for text in [
            r#"{"model": {"kind": "polymer", "p": 0.5, "beta": 1.0, "horizon": 6, "seed": 3}, "extra": 1}"#,
            r#"{"model": {"kind": "polymer", "p": 0.5, "beta": 1.0, "horizon": 6, "seed": 3, "extra": 1}}"#,
            r#"{"model": {"kind": "polymer", "p": 0.5, "beta": 1.0, "horizon": 6, "seed": 3},
                "algorithm": {"extra": 1}}"#,
        ] {
            assert!(parse(text).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn gaussian_needs_exactly_one_data_source() {
        let both = r#"{"model": {"kind": "gaussian", "a": 0.9, "b": 0.5, "c": 0.5,
            "horizon": 4, "seed": 1, "observations": [0.1, 0.2, 0.3]}}"#;
        let neither =
            r#"{"model": {"kind": "gaussian", "a": 0.9, "b": 0.5, "c": 0.5, "horizon": 4}}"#;
        let wrong_len = r#"{"model": {"kind": "gaussian", "a": 0.9, "b": 0.5, "c": 0.5,
            "horizon": 4, "observations": [0.1]}}"#;
        let good = r#"{"model": {"kind": "gaussian", "a": 0.9, "b": 0.5, "c": 0.5,
            "horizon": 4, "observations": [0.1, 0.2, 0.3]}}"#;
        assert!(parse(both).is_err());
        assert!(parse(neither).is_err());
        assert!(parse(wrong_len).is_err());
        assert!(parse(good).is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = parse(
            r#"{"model": {"kind": "gaussian", "a": 0.9, "b": 0.5, "c": 0.5, "horizon": 5, "seed": 11},
                "algorithm": {"delta": 0.1, "uniform_q": 3},
                "seed": 9, "replicates": 12}"#,
        )
        .unwrap();
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn law_builder_honours_the_override_and_the_pilot() {
        let config = parse(
            r#"{"model": {"kind": "polymer", "p": 0.5, "beta": 1.0, "horizon": 5, "seed": 3},
                "algorithm": {"uniform_q": 4}}"#,
        )
        .unwrap();
        let BuiltModel::Polymer(model) = config.build_model().unwrap() else { unreachable!() };
        let (law, pilot) = build_law(&model, &config.algorithm).unwrap();
        assert!(pilot.is_none());
        assert!(law.steps().iter().all(|s| s.q == 4));

        let calibrated = AlgorithmConfig { uniform_q: None, ..config.algorithm.clone() };
        let (law, pilot) = build_law(&model, &calibrated).unwrap();
        assert!(pilot.is_some());
        assert_eq!(law.horizon(), model.horizon());
    }
}
