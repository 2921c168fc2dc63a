//! Directed polymer: a simple random walk on the integers reweighted by a
//! quenched Bernoulli site field.
//!
//! The walk starts at 0 and steps by ±1 with equal probability. A field
//! xi_{k,i} of independent Bernoulli(p) marks sits on the space-time cone
//! |i| <= k-1, and visiting a marked site costs a factor exp(-beta): the
//! weight at time k is V_k(i) = exp(-beta * xi_{k,i}), so every weight lies
//! in {exp(-beta), 1} and 1 is a certified bound by construction.
//!
//! The field is a pure function of (seed, k, i), generated once and stored
//! densely over the cone (P^2 cells). Since the walk cannot leave the cone,
//! every state the samplers or the bound enumeration can visit is covered.

use crate::error::{SimError, SimResult};
use crate::model::{EnumerableModel, Model};
use crate::rng::{KeyedStream, Tag, UniformSource};
use serde::{Deserialize, Serialize};

/// Quenched Bernoulli site field on the walk's cone, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerEnvironment {
    /// Bernoulli parameter of the field, in (0, 1).
    pub p: f64,
    /// Inverse temperature, >= 0 (0 turns every weight into 1).
    pub beta: f64,
    /// Number of time steps P (>= 2).
    pub horizon: usize,
    /// Seed the field was generated from (0 for explicit fields).
    pub seed: u64,
    /// xi[k-1][i + k - 1] for time k in 1..=P, site i in -(k-1)..=k-1.
    xi: Vec<Vec<u8>>,
}

impl PolymerEnvironment {
    /// Draw the field over the full cone as a pure function of the seed.
    pub fn generate(seed: u64, p: f64, beta: f64, horizon: usize) -> SimResult<Self> {
        validate_params(p, beta, horizon)?;
        let stream = KeyedStream::new(seed, 0);
        let xi = (1..=horizon)
            .map(|k| {
                (0..2 * k - 1)
                    .map(|offset| {
                        let u = stream.flat_uniform(Tag::Path, &[k as u64, offset as u64], 0);
                        u8::from(u < p)
                    })
                    .collect()
            })
            .collect();
        Ok(PolymerEnvironment { p, beta, horizon, seed, xi })
    }

    /// Wrap an explicit field (tests, replaying a published environment).
    /// Row k must have exactly 2k-1 entries, each 0 or 1.
    pub fn from_field(p: f64, beta: f64, xi: Vec<Vec<u8>>) -> SimResult<Self> {
        let horizon = xi.len();
        validate_params(p, beta, horizon)?;
        for (row, cells) in xi.iter().enumerate() {
            let k = row + 1;
            if cells.len() != 2 * k - 1 {
                return Err(SimError::Config {
                    reason: format!(
                        "field row for time {k} has {} cells, expected {}",
                        cells.len(),
                        2 * k - 1
                    ),
                });
            }
            if cells.iter().any(|&v| v > 1) {
                return Err(SimError::Config {
                    reason: format!("field row for time {k} contains a non-binary mark"),
                });
            }
        }
        Ok(PolymerEnvironment { p, beta, horizon, seed: 0, xi })
    }

    /// Field mark at (time, site); site must lie in the cone |site| <= time-1.
    pub fn mark(&self, time: usize, site: i64) -> u8 {
        let row = &self.xi[time - 1];
        let offset = site + time as i64 - 1;
        assert!(
            offset >= 0 && (offset as usize) < row.len(),
            "site {site} outside the cone at time {time}"
        );
        row[offset as usize]
    }

    /// V_time(site) = exp(-beta * mark).
    pub fn weight(&self, time: usize, site: i64) -> f64 {
        if self.mark(time, site) == 1 {
            (-self.beta).exp()
        } else {
            1.0
        }
    }

    /// Fraction of marked cells over the whole cone (diagnostics).
    pub fn mean_occupation(&self) -> f64 {
        let total: usize = self.xi.iter().map(|row| row.len()).sum();
        let marked: u64 = self.xi.iter().flatten().map(|&v| v as u64).sum();
        marked as f64 / total as f64
    }
}

fn validate_params(p: f64, beta: f64, horizon: usize) -> SimResult<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SimError::Config { reason: format!("field parameter p={p} must lie in (0,1)") });
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(SimError::Config {
            reason: format!("inverse temperature beta={beta} must be finite and >= 0"),
        });
    }
    if horizon < 2 {
        return Err(SimError::Config { reason: format!("horizon {horizon} must be at least 2") });
    }
    Ok(())
}

/// The walk-in-random-environment path model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polymer {
    pub env: PolymerEnvironment,
}

/// Package an environment as a samplable model.
pub fn polymer_model(env: PolymerEnvironment) -> Polymer {
    Polymer { env }
}

impl Model for Polymer {
    type State = i64;

    fn horizon(&self) -> usize {
        self.env.horizon
    }

    fn sample_initial(&self, _u: &mut dyn UniformSource) -> i64 {
        0
    }

    fn log_initial_density(&self, x: &i64) -> f64 {
        if *x == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample_transition(&self, from: &i64, u: &mut dyn UniformSource) -> i64 {
        if u.next_uniform() < 0.5 {
            from - 1
        } else {
            from + 1
        }
    }

    fn log_transition_density(&self, from: &i64, to: &i64) -> f64 {
        if (to - from).abs() == 1 {
            -(2.0f64.ln())
        } else {
            f64::NEG_INFINITY
        }
    }

    fn potential(&self, time: usize, x: &i64) -> f64 {
        self.env.weight(time, *x)
    }

    fn potential_bound(&self, _time: usize) -> f64 {
        1.0
    }
}

impl EnumerableModel for Polymer {
    fn initial_support(&self) -> Vec<i64> {
        vec![0]
    }

    fn transition_support(&self, from: &i64) -> Vec<i64> {
        vec![from - 1, from + 1]
    }

    fn time_support(&self, time: usize) -> Vec<i64> {
        let k = time as i64;
        (-(k - 1)..=k - 1).step_by(2).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{KeyedStream, Tag};

    #[test]
    fn field_is_deterministic_and_cone_shaped() {
        let a = PolymerEnvironment::generate(5, 0.5, 1.0, 12).unwrap();
        let b = PolymerEnvironment::generate(5, 0.5, 1.0, 12).unwrap();
        assert_eq!(a, b);
        let c = PolymerEnvironment::generate(6, 0.5, 1.0, 12).unwrap();
        assert_ne!(a, c, "different seeds should give different fields");
        for k in 1..=12usize {
            assert_eq!(a.xi[k - 1].len(), 2 * k - 1);
        }
        // A longer horizon extends the field without rewriting the shared cone.
        let d = PolymerEnvironment::generate(5, 0.5, 1.0, 20).unwrap();
        for k in 1..=12usize {
            assert_eq!(a.xi[k - 1], d.xi[k - 1]);
        }
    }

    #[test]
    fn field_mean_matches_its_parameter() {
        // 100 x 100 cone = 10^4 cells; binomial s.e. = sqrt(p(1-p)/n).
        let p = 0.3;
        let env = PolymerEnvironment::generate(9, p, 1.0, 100).unwrap();
        let n = 100.0 * 100.0;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!(
            (env.mean_occupation() - p).abs() < 4.0 * se,
            "field mean {} too far from p={p}",
            env.mean_occupation()
        );
    }

    #[test]
    fn weights_take_exactly_two_values_under_the_certified_bound() {
        let beta = 1.3;
        let model = polymer_model(PolymerEnvironment::generate(2, 0.5, beta, 9).unwrap());
        let lo = (-beta).exp();
        for k in 1..9usize {
            for x in model.time_support(k) {
                let g = model.potential(k, &x);
                assert!(g == 1.0 || g == lo, "unexpected weight {g}");
                assert!(g <= model.potential_bound(k));
            }
        }
    }

    #[test]
    fn explicit_field_round_trips_and_clean_field_frees_the_walk() {
        let xi = vec![vec![0], vec![0, 0, 0], vec![0, 0, 0, 0, 0]];
        let env = PolymerEnvironment::from_field(0.5, 2.0, xi).unwrap();
        let model = polymer_model(env);
        for k in 1..3usize {
            for x in model.time_support(k) {
                assert_eq!(model.potential(k, &x), 1.0);
            }
        }

        let bad_shape = PolymerEnvironment::from_field(0.5, 1.0, vec![vec![0, 1]]);
        assert!(matches!(bad_shape, Err(SimError::Config { .. })));
        let bad_mark = PolymerEnvironment::from_field(0.5, 1.0, vec![vec![2]]);
        assert!(matches!(bad_mark, Err(SimError::Config { .. })));
        assert!(matches!(
            PolymerEnvironment::generate(0, 1.0, 1.0, 4),
            Err(SimError::Config { .. })
        ));
        assert!(matches!(
            PolymerEnvironment::generate(0, 0.5, -1.0, 4),
            Err(SimError::Config { .. })
        ));
    }

    #[test]
    fn walk_steps_are_fair_and_stay_on_parity() {
        let model = polymer_model(PolymerEnvironment::generate(3, 0.5, 1.0, 6).unwrap());
        let stream = KeyedStream::new(40, 0);
        let mut downs = 0u32;
        let n = 20_000u32;
        for i in 0..n {
            let mut seq = stream.tree_seq(Tag::Pilot, stream.genealogy_hash(&[i + 1]));
            let next = model.sample_transition(&0, &mut seq);
            assert_eq!(next.abs(), 1);
            if next == -1 {
                downs += 1;
            }
        }
        let se = (0.25 / n as f64).sqrt();
        assert!((downs as f64 / n as f64 - 0.5).abs() < 4.0 * se);

        assert_eq!(model.log_transition_density(&2, &3), -(2.0f64.ln()));
        assert_eq!(model.log_transition_density(&2, &4), f64::NEG_INFINITY);
        assert_eq!(model.log_initial_density(&0), 0.0);
        assert_eq!(model.log_initial_density(&2), f64::NEG_INFINITY);
    }

    #[test]
    fn per_time_support_is_the_parity_set() {
        let model = polymer_model(PolymerEnvironment::generate(1, 0.5, 1.0, 5).unwrap());
        assert_eq!(model.time_support(1), vec![0]);
        assert_eq!(model.time_support(2), vec![-1, 1]);
        assert_eq!(model.time_support(3), vec![-2, 0, 2]);
        assert_eq!(model.time_support(4), vec![-3, -1, 1, 3]);
        assert_eq!(model.initial_support(), vec![0]);
        assert_eq!(model.transition_support(&-1), vec![-2, 0]);
    }

    #[test]
    #[should_panic(expected = "outside the cone")]
    fn out_of_cone_lookup_panics() {
        let env = PolymerEnvironment::generate(0, 0.5, 1.0, 4).unwrap();
        env.mark(2, 5);
    }
}
