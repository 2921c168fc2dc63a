//! Model contract and the two-point-family offspring law.
//!
//! A model supplies an initial law, a transition kernel (both as samplers
//! driven by an explicit uniform source, plus log-densities) and a weight
//! function ("potential") per interior time, together with a certified upper
//! bound on each potential. Times run 1..=P; potentials exist for times
//! 1..=P-1, so the horizon states are unweighted.
//!
//! The offspring law used by the branching constructions has, for the step
//! into generation k (2..=P), a support {0, 1, .., q_k} with
//!
//! ```text
//! f_k(g, 0) = 1 - g / beta_k,     f_k(g, i) = g / (q_k * beta_k)  (1 <= i <= q_k)
//! ```
//!
//! where g is the parent's potential and beta_k its certified bound, so the
//! mean count is (q_k + 1) g / (2 beta_k). Conditioning on at least one child
//! removes g entirely: the conditioned law is uniform on {1, .., q_k}. That
//! cancellation is what keeps a distinguished line's offspring draws
//! independent of the states along it.

use crate::error::{SimError, SimResult};
use crate::rng::UniformSource;
use serde::{Deserialize, Serialize};

/// A weighted path-space model over states of type `State`.
pub trait Model {
    type State: Clone + PartialEq + std::fmt::Debug + Send + Sync;

    /// Number of time steps P (at least 2).
    fn horizon(&self) -> usize;

    /// Draw from the initial law.
    fn sample_initial(&self, u: &mut dyn UniformSource) -> Self::State;

    /// Log-density (or log-mass) of the initial law at `x`.
    fn log_initial_density(&self, x: &Self::State) -> f64;

    /// Draw one transition from `from`.
    fn sample_transition(&self, from: &Self::State, u: &mut dyn UniformSource) -> Self::State;

    /// Log-density of one transition.
    fn log_transition_density(&self, from: &Self::State, to: &Self::State) -> f64;

    /// Weight at `time` in 1..=P-1; must be finite and non-negative.
    fn potential(&self, time: usize, x: &Self::State) -> f64;

    /// Certified bound: potential(time, x) <= potential_bound(time) for all x.
    fn potential_bound(&self, time: usize) -> f64;
}

/// Models whose per-time state supports can be enumerated exactly.
///
/// Drives the exhaustive reference computations and the lattice bound
/// provider. `time_support(k)` must contain every state reachable at time k.
pub trait EnumerableModel: Model {
    fn initial_support(&self) -> Vec<Self::State>;
    fn transition_support(&self, from: &Self::State) -> Vec<Self::State>;
    fn time_support(&self, time: usize) -> Vec<Self::State>;
}

/// Draw a path of length `horizon` from the unweighted model (initial law
/// plus transitions, ignoring potentials).
pub fn sample_prior_path<M: Model>(model: &M, u: &mut dyn UniformSource) -> Vec<M::State> {
    let mut path = Vec::with_capacity(model.horizon());
    path.push(model.sample_initial(u));
    for _ in 1..model.horizon() {
        let next = model.sample_transition(path.last().unwrap(), u);
        path.push(next);
    }
    path
}

/// Parameters of one offspring step: children born into generation k carry
/// `beta` = certified bound of time k-1 and support size `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringStep {
    pub beta: f64,
    pub q: u32,
}

/// The full offspring schedule for generations 2..=P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    steps: Vec<OffspringStep>,
}

const MAX_Q: f64 = (1u64 << 31) as f64;

impl OffspringLaw {
    /// Build from explicit steps (entry j describes generation j + 2).
    pub fn from_steps(steps: Vec<OffspringStep>) -> SimResult<Self> {
        if steps.is_empty() {
            return Err(SimError::Config { reason: "offspring law needs a horizon of at least 2".into() });
        }
        for (j, s) in steps.iter().enumerate() {
            if !(s.beta.is_finite() && s.beta > 0.0) || s.q == 0 {
                return Err(SimError::Config {
                    reason: format!("offspring step into generation {}: beta={}, q={}", j + 2, s.beta, s.q),
                });
            }
        }
        Ok(OffspringLaw { steps })
    }

    /// Same support size q at every step, bounds taken from the model.
    pub fn with_uniform_q<M: Model>(model: &M, q: u32) -> SimResult<Self> {
        let p = model.horizon();
        let steps = (2..=p)
            .map(|k| OffspringStep { beta: model.potential_bound(k - 1), q })
            .collect();
        Self::from_steps(steps)
    }

    /// Calibrate support sizes from pilot means of the potentials.
    ///
    /// `pilot_means[j]` estimates the typical potential at time j+1; the
    /// support size into generation j+2 is chosen so the mean offspring count
    /// at that typical potential is as close to one as the integer grid
    /// allows: q = max(1, round(2 B / mean - 1)).
    pub fn from_pilot_means<M: Model>(model: &M, pilot_means: &[f64]) -> SimResult<Self> {
        let p = model.horizon();
        if pilot_means.len() != p - 1 {
            return Err(SimError::Config {
                reason: format!("expected {} pilot means, got {}", p - 1, pilot_means.len()),
            });
        }
        let mut steps = Vec::with_capacity(p - 1);
        for (j, &mean) in pilot_means.iter().enumerate() {
            let time = j + 1;
            let beta = model.potential_bound(time);
            if !(mean.is_finite() && mean > 0.0 && mean <= beta) {
                return Err(SimError::Calibration { time, value: mean, bound: beta });
            }
            let raw = (2.0 * beta / mean - 1.0).round();
            if raw > MAX_Q {
                return Err(SimError::Calibration { time, value: mean, bound: beta });
            }
            steps.push(OffspringStep { beta, q: raw.max(1.0) as u32 });
        }
        Self::from_steps(steps)
    }

    /// Horizon implied by the schedule.
    pub fn horizon(&self) -> usize {
        self.steps.len() + 1
    }

    /// Parameters of the step into `child_gen` (2..=P).
    pub fn step(&self, child_gen: usize) -> &OffspringStep {
        &self.steps[child_gen - 2]
    }

    pub fn steps(&self) -> &[OffspringStep] {
        &self.steps
    }

    fn check_potential(&self, child_gen: usize, g: f64) -> SimResult<&OffspringStep> {
        let step = self.step(child_gen);
        let time = child_gen - 1;
        if !g.is_finite() || g < 0.0 {
            return Err(SimError::InvalidPotential { time, value: g });
        }
        if g > step.beta {
            return Err(SimError::PotentialAboveBound { time, value: g, bound: step.beta });
        }
        Ok(step)
    }

    /// Probability vector (index = count) of the step into `child_gen` at
    /// parent potential `g`.
    pub fn offspring_pmf(&self, child_gen: usize, g: f64) -> SimResult<Vec<f64>> {
        let step = self.check_potential(child_gen, g)?;
        let atom = g / (step.q as f64 * step.beta);
        let mut pmf = vec![atom; step.q as usize + 1];
        pmf[0] = 1.0 - g / step.beta;
        Ok(pmf)
    }

    /// Mean count of the step into `child_gen` at parent potential `g`.
    pub fn mean_offspring(&self, child_gen: usize, g: f64) -> f64 {
        let step = self.step(child_gen);
        (step.q as f64 + 1.0) * g / (2.0 * step.beta)
    }

    /// Generalized inverse CDF of the offspring count at potential `g`:
    /// the count whose cumulative probability first reaches `w`.
    pub fn offspring_icdf(&self, child_gen: usize, g: f64, w: f64) -> SimResult<u32> {
        let step = self.check_potential(child_gen, g)?;
        debug_assert!(w > 0.0 && w < 1.0);
        if w <= 1.0 - g / step.beta {
            return Ok(0);
        }
        // On (1 - g/beta, 1) the CDF climbs in q equal steps of g/(q beta).
        let q = step.q as f64;
        let j = q - ((1.0 - w) * q * step.beta / g).floor();
        Ok(j.clamp(1.0, q) as u32)
    }

    /// Inverse CDF of the count conditioned on being at least one: uniform on
    /// {1, .., q}, independent of the parent potential. The potential is still
    /// validated, because conditioning on survival at a zero-weight parent is
    /// meaningless.
    pub fn spine_icdf(&self, child_gen: usize, g: f64, w: f64) -> SimResult<u32> {
        self.check_potential(child_gen, g)?;
        if g == 0.0 {
            return Err(SimError::NonPositivePotential { time: child_gen - 1 });
        }
        Ok(self.spine_count(child_gen, w))
    }

    /// The survival-conditioned count as a pure function of the uniform.
    ///
    /// Used where no parent weight is in play (bound certification replays
    /// the distinguished line's draws without committing to any path); the
    /// count never depends on the weight anyway.
    pub fn spine_count(&self, child_gen: usize, w: f64) -> u32 {
        let step = self.step(child_gen);
        debug_assert!(w > 0.0 && w < 1.0);
        let j = 1 + (w * step.q as f64) as u32;
        j.min(step.q)
    }

    /// Log-probability of observing `count` children at potential `g`.
    pub fn log_offspring_prob(&self, child_gen: usize, g: f64, count: u32) -> SimResult<f64> {
        let step = self.check_potential(child_gen, g)?;
        if count > step.q {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(if count == 0 {
            (1.0 - g / step.beta).ln()
        } else {
            (g / (step.q as f64 * step.beta)).ln()
        })
    }

    /// Log-probability of `count` under the survival-conditioned law.
    pub fn log_spine_prob(&self, child_gen: usize, count: u32) -> f64 {
        let step = self.step(child_gen);
        if count == 0 || count > step.q {
            f64::NEG_INFINITY
        } else {
            -(step.q as f64).ln()
        }
    }
}
