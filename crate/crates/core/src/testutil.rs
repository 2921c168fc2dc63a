//! Tiny models shared by unit tests across modules.

use crate::model::{EnumerableModel, Model, OffspringLaw, OffspringStep};
use crate::rng::UniformSource;

/// +-1 walk from the origin; potential 1.0 on even sites, `lo` on odd sites.
pub(crate) struct ParityWalk {
    pub p: usize,
    pub lo: f64,
}

impl Model for ParityWalk {
    type State = i64;
    fn horizon(&self) -> usize {
        self.p
    }
    fn sample_initial(&self, _: &mut dyn UniformSource) -> i64 {
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
            (0.5f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn potential(&self, _: usize, x: &i64) -> f64 {
        if x.rem_euclid(2) == 0 {
            1.0
        } else {
            self.lo
        }
    }
    fn potential_bound(&self, _: usize) -> f64 {
        1.0
    }
}

impl EnumerableModel for ParityWalk {
    fn initial_support(&self) -> Vec<i64> {
        vec![0]
    }
    fn transition_support(&self, from: &i64) -> Vec<i64> {
        vec![from - 1, from + 1]
    }
    fn time_support(&self, time: usize) -> Vec<i64> {
        let r = time as i64 - 1;
        (-r..=r).step_by(2).collect()
    }
}

pub(crate) fn unit_law(p: usize, q: u32) -> OffspringLaw {
    OffspringLaw::from_steps(vec![OffspringStep { beta: 1.0, q }; p - 1]).unwrap()
}
