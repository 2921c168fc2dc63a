//! Bootstrap particle filter pre-run.
//!
//! Calibrating the offspring law needs one number per weighted time: a rough
//! estimate of the mean potential seen there. A plain bootstrap filter
//! (propagate, weight, resample) supplies those means, and as a byproduct an
//! unbiased estimate of the normalizing constant — the product of the
//! per-step mean weights. The exact sampler never consumes the constant, but
//! it is a useful cross-check against the reference computations.
//!
//! All draws sit under [`Tag::Pilot`] with their own lead word, so a pre-run
//! may share its seed with the sampler it calibrates without any overlap in
//! consumed randomness.

use crate::error::{SimError, SimResult};
use crate::model::Model;
use crate::rng::{KeyedStream, Tag};
use serde::{Deserialize, Serialize};

/// Summary of one bootstrap-filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcEstimate {
    /// Mean observed potential at each weighted time; entry `k - 1` holds the
    /// estimate for time `k` in `1..=P-1`.
    pub mean_potentials: Vec<f64>,
    /// Log of the unbiased normalizing-constant estimate: the sum of the
    /// logged per-step means.
    pub log_z: f64,
}

/// Run a bootstrap filter with `particles` particles and return the per-step
/// mean potentials together with the log normalizing-constant estimate.
///
/// Draw layout under [`Tag::Pilot`], all coordinates 1-based: key
/// `[1, s, i]` feeds particle `i`'s move at step `s` (s = 1 is the initial
/// draw, s = k + 1 the transition out of time k), and key `[2, k, j]` picks
/// slot `j`'s ancestor in the resampling after the weighting at time k. Lead
/// word 3 is reserved for the contraction spot checks. Errors with
/// [`SimError::PilotDegenerate`] when every particle carries zero weight at
/// some step.
pub fn smc_prerun<M: Model>(model: &M, particles: usize, seed: u64) -> SimResult<SmcEstimate> {
    if particles == 0 {
        return Err(SimError::Config { reason: "pilot particle count must be positive".into() });
    }
    if particles > u32::MAX as usize {
        return Err(SimError::Config { reason: "pilot particle count exceeds u32 range".into() });
    }
    let p = model.horizon();
    let stream = KeyedStream::new(seed, 0);
    let mut states: Vec<M::State> = (0..particles)
        .map(|i| {
            let mut seq =
                stream.tree_seq(Tag::Pilot, stream.genealogy_hash(&[1, 1, i as u32 + 1]));
            model.sample_initial(&mut seq)
        })
        .collect();

    let mut mean_potentials = Vec::with_capacity(p - 1);
    let mut log_z = 0.0;
    for k in 1..p {
        let mut weights = Vec::with_capacity(particles);
        for x in &states {
            let w = model.potential(k, x);
            if !w.is_finite() || w < 0.0 {
                return Err(SimError::InvalidPotential { time: k, value: w });
            }
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        let mean = total / particles as f64;
        // Weights were validated finite and non-negative above, so the mean
        // can only fail by being zero.
        if mean <= 0.0 {
            return Err(SimError::PilotDegenerate { time: k });
        }
        mean_potentials.push(mean);
        log_z += mean.ln();
        if k + 1 == p {
            break; // the last time carries no weight, so the filter stops here
        }

        // Multinomial resampling by inverse CDF over the cumulative weights.
        // A zero-weight particle leaves the cumulative sum flat across its
        // slot, so it can never be selected.
        let cumulative: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        states = (0..particles)
            .map(|j| {
                let u = stream.uniform_at(Tag::Pilot, &[2, k as u32, j as u32 + 1]);
                let target = u * total;
                let ancestor = cumulative.partition_point(|&c| c <= target).min(particles - 1);
                let key = stream.genealogy_hash(&[1, k as u32 + 1, j as u32 + 1]);
                let mut seq = stream.tree_seq(Tag::Pilot, key);
                model.sample_transition(&states[ancestor], &mut seq)
            })
            .collect();
    }
    Ok(SmcEstimate { mean_potentials, log_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::polymer::{polymer_model, PolymerEnvironment};
    use crate::testutil::ParityWalk;

    // ParityWalk's potential depends only on site parity, and at time k every
    // particle sits on a site of parity k-1, so each per-step mean equals the
    // shared deterministic weight exactly: 1 at odd times, `lo` at even ones.
    #[test]
    fn per_step_means_are_exact_for_parity_constant_weights() {
        let model = ParityWalk { p: 7, lo: 0.25 };
        let est = smc_prerun(&model, 128, 99).unwrap();
        assert_eq!(est.mean_potentials.len(), 6);
        for (idx, &m) in est.mean_potentials.iter().enumerate() {
            let time = idx + 1;
            let expected = if time % 2 == 1 { 1.0 } else { 0.25 };
            assert_eq!(m, expected, "time {time}");
        }
        let expected_log_z = 3.0 * 0.25f64.ln();
        assert!((est.log_z - expected_log_z).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic_in_the_seed() {
        // A walk in a rough disorder field, so the weights actually depend on
        // where the particles went (ParityWalk's don't).
        let env = PolymerEnvironment::generate(3, 0.5, 1.0, 6).unwrap();
        let model = polymer_model(env);
        let a = smc_prerun(&model, 64, 7).unwrap();
        let b = smc_prerun(&model, 64, 7).unwrap();
        assert_eq!(a, b);
        let c = smc_prerun(&model, 64, 8).unwrap();
        assert_ne!(a.log_z.to_bits(), c.log_z.to_bits());
    }

    #[test]
    fn all_zero_weights_signal_degeneracy_with_the_failing_time() {
        let model = ParityWalk { p: 5, lo: 0.0 };
        match smc_prerun(&model, 32, 1) {
            Err(SimError::PilotDegenerate { time }) => assert_eq!(time, 2),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn zero_particles_is_a_configuration_error() {
        let model = ParityWalk { p: 3, lo: 1.0 };
        assert!(matches!(smc_prerun(&model, 0, 1), Err(SimError::Config { .. })));
    }
}
