//! Linear-Gaussian chain: an AR(1) signal observed in Gaussian noise.
//!
//! The signal is X_1 ~ N(0,1), X_{k+1} = a X_k + b V_{k+1}; an observation
//! Y_k = X_k + c W_k exists for each weighted time k = 1..P-1, and the
//! weight is the observation likelihood
//!
//! ```text
//! G_k(x) = (2 pi c^2)^{-1/2} exp(-(x - Y_k)^2 / (2 c^2)),
//! ```
//!
//! so the weighted path law is exactly the smoothing posterior of the state
//! path given the observations. Each weight peaks at Y_k and attains the
//! certified bound (2 pi c^2)^{-1/2} there, and the keyed transition map
//! u -> a x + b Phi^{-1}(u) is nondecreasing in x with exact Lipschitz
//! constant a < 1 — everything the continuous bound provider needs.

use crate::bounds::ScalarModel;
use crate::error::{SimError, SimResult};
use crate::model::Model;
use crate::rng::{KeyedStream, Tag, UniformSource};
use statrs::distribution::{ContinuousCDF, Normal};

/// ln of the normal density with the given mean and standard deviation.
fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// The AR(1)-plus-noise path model; the target is its smoothing law.
#[derive(Debug, Clone)]
pub struct GaussianChain {
    /// Signal autoregression coefficient, in (0, 1).
    pub a: f64,
    /// Signal innovation standard deviation, > 0.
    pub b: f64,
    /// Observation noise standard deviation, > 0.
    pub c: f64,
    /// Y_k for k = 1..=P-1 (index k-1); the horizon is their count + 1.
    pub observations: Vec<f64>,
    std_normal: Normal,
}

/// Package parameters and observations as a samplable model.
pub fn gaussian_model(a: f64, b: f64, c: f64, observations: Vec<f64>) -> SimResult<GaussianChain> {
    if !(a > 0.0 && a < 1.0) {
        return Err(SimError::Config {
            reason: format!("autoregression a={a} must lie in (0,1): no contraction certificate"),
        });
    }
    if b <= 0.0 || !b.is_finite() {
        return Err(SimError::Config {
            reason: format!("innovation deviation b={b} must be positive and finite"),
        });
    }
    if c <= 0.0 || !c.is_finite() {
        return Err(SimError::Config {
            reason: format!("observation deviation c={c} must be positive and finite"),
        });
    }
    if observations.is_empty() {
        return Err(SimError::Config { reason: "at least one observation is required".into() });
    }
    if observations.iter().any(|y| !y.is_finite()) {
        return Err(SimError::Config { reason: "observations must be finite".into() });
    }
    Ok(GaussianChain {
        a,
        b,
        c,
        observations,
        std_normal: Normal::new(0.0, 1.0).expect("standard normal"),
    })
}

/// Simulate an observation record from the model itself (synthetic-data
/// experiments): returns Y_1..Y_{P-1}.
pub fn simulate_observations(
    a: f64,
    b: f64,
    c: f64,
    horizon: usize,
    seed: u64,
) -> SimResult<Vec<f64>> {
    if horizon < 2 {
        return Err(SimError::Config { reason: format!("horizon {horizon} must be at least 2") });
    }
    // Parameter checks are shared with the model constructor.
    let probe = gaussian_model(a, b, c, vec![0.0])?;
    let stream = KeyedStream::new(seed, 0);
    let normal = probe.std_normal;
    let mut x = normal.inverse_cdf(stream.flat_uniform(Tag::Path, &[0], 0));
    let mut observations = Vec::with_capacity(horizon - 1);
    for k in 1..horizon as u64 {
        observations.push(x + c * normal.inverse_cdf(stream.flat_uniform(Tag::Path, &[k], 1)));
        x = a * x + b * normal.inverse_cdf(stream.flat_uniform(Tag::Path, &[k], 2));
    }
    Ok(observations)
}

impl Model for GaussianChain {
    type State = f64;

    fn horizon(&self) -> usize {
        self.observations.len() + 1
    }

    fn sample_initial(&self, u: &mut dyn UniformSource) -> f64 {
        self.std_normal.inverse_cdf(u.next_uniform())
    }

    fn log_initial_density(&self, x: &f64) -> f64 {
        log_normal_pdf(*x, 0.0, 1.0)
    }

    fn sample_transition(&self, from: &f64, u: &mut dyn UniformSource) -> f64 {
        self.a * from + self.b * self.std_normal.inverse_cdf(u.next_uniform())
    }

    fn log_transition_density(&self, from: &f64, to: &f64) -> f64 {
        log_normal_pdf(*to, self.a * from, self.b)
    }

    fn potential(&self, time: usize, x: &f64) -> f64 {
        log_normal_pdf(*x, self.observations[time - 1], self.c).exp()
    }

    fn potential_bound(&self, _time: usize) -> f64 {
        1.0 / (self.c * (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl ScalarModel for GaussianChain {
    fn potential_sup(&self, time: usize, x: f64, r: f64) -> f64 {
        let y = self.observations[time - 1];
        let d = (x - y).abs();
        if d <= r {
            // The ball contains the peak.
            self.potential_bound(time)
        } else {
            // Unimodal: the sup sits at the ball edge nearest the peak.
            log_normal_pdf(d - r, 0.0, self.c).exp()
        }
    }

    fn potential_mode(&self, time: usize) -> f64 {
        self.observations[time - 1]
    }

    fn contraction_rate(&self) -> f64 {
        self.a
    }
}
