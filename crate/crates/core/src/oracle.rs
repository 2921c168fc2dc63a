//! Independent ground truth at desk scale.
//!
//! Everything here recomputes quantities the samplers are supposed to
//! reproduce, by routes that share no code with them: exhaustive path
//! enumeration and a second, recursive summation for the normalizing
//! constant on finite models; the Kalman filter/smoother and a brute-force
//! quadrature for the linear-Gaussian chain; dynamic programs for forest
//! population moments; and a chi-squared / total-variation test harness.
//! Accumulations use compensated summation so the 1e-12 agreement claims in
//! the test suite rest on the arithmetic, not on luck.

use crate::error::{SimError, SimResult};
use crate::model::{EnumerableModel, OffspringLaw};
use crate::rng::{KeyedStream, Tag};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Largest path count `exact_path_law` will enumerate.
pub const MAX_ENUMERATED_PATHS: usize = 1 << 20;

/// Kahan-Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.carry += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// The weighted path law of a finite model, enumerated exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPathLaw<S> {
    /// Every path of positive prior mass, in a fixed enumeration order.
    pub paths: Vec<Vec<S>>,
    /// Probability of each path; sums to 1 within 1e-12.
    pub probabilities: Vec<f64>,
    /// Normalizing constant: the expected product of weights along a prior
    /// path.
    pub z: f64,
    pub log_z: f64,
}

impl<S: PartialEq> ExactPathLaw<S> {
    /// Enumeration index of a path, if it carries prior mass.
    pub fn index_of(&self, path: &[S]) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }

    pub fn probability_of(&self, path: &[S]) -> Option<f64> {
        self.index_of(path).map(|i| self.probabilities[i])
    }
}

/// Enumerate the weighted path law of a finite model.
///
/// A path's unnormalized weight is its prior mass (initial mass times
/// transition masses) times the product of its weights at times 1..=P-1; the
/// normalizing constant is the compensated sum over all paths. Errors when
/// the path count exceeds [`MAX_ENUMERATED_PATHS`] or every path has zero
/// weight.
pub fn exact_path_law<M: EnumerableModel>(model: &M) -> SimResult<ExactPathLaw<M::State>> {
    let p = model.horizon();
    let mut level: Vec<(Vec<M::State>, f64)> = model
        .initial_support()
        .into_iter()
        .map(|x| {
            let mass = model.log_initial_density(&x).exp() * model.potential(1, &x);
            (vec![x], mass)
        })
        .collect();
    for k in 1..p {
        let mut next = Vec::with_capacity(level.len() * 2);
        for (path, mass) in &level {
            let last = path.last().unwrap();
            for to in model.transition_support(last) {
                let mut m = mass * model.log_transition_density(last, &to).exp();
                if k + 1 < p {
                    m *= model.potential(k + 1, &to);
                }
                let mut longer = path.clone();
                longer.push(to);
                next.push((longer, m));
                if next.len() > MAX_ENUMERATED_PATHS {
                    return Err(SimError::Config {
                        reason: format!(
                            "path enumeration exceeds {MAX_ENUMERATED_PATHS} paths at time {}",
                            k + 1
                        ),
                    });
                }
            }
        }
        level = next;
    }

    let mut z = Kahan::default();
    for (path, mass) in &level {
        if !mass.is_finite() || *mass < 0.0 {
            return Err(SimError::Structural {
                reason: format!("path {path:?} has weight {mass}"),
            });
        }
        z.add(*mass);
    }
    let z = z.value();
    if z <= 0.0 {
        return Err(SimError::Config { reason: "the weighted path law has zero mass".into() });
    }
    let (paths, probabilities) =
        level.into_iter().map(|(path, mass)| (path, mass / z)).unzip();
    Ok(ExactPathLaw { paths, probabilities, z, log_z: z.ln() })
}

/// The normalizing constant by forward recursion over per-time state masses —
/// the same number as [`exact_path_law`]'s `z`, reached through a different
/// order of operations, which is what makes their agreement evidence.
pub fn recursive_sum_z<M: EnumerableModel>(model: &M) -> SimResult<f64> {
    let p = model.horizon();
    let mut alpha: Vec<(M::State, Kahan)> = Vec::new();
    for x in model.initial_support() {
        let mass = model.log_initial_density(&x).exp() * model.potential(1, &x);
        accumulate(&mut alpha, x, mass);
    }
    for k in 1..p {
        let mut next: Vec<(M::State, Kahan)> = Vec::new();
        for (x, a) in &alpha {
            let a = a.value();
            if a == 0.0 {
                continue;
            }
            for y in model.transition_support(x) {
                let mut mass = a * model.log_transition_density(x, &y).exp();
                if k + 1 < p {
                    mass *= model.potential(k + 1, &y);
                }
                accumulate(&mut next, y, mass);
            }
        }
        next.retain(|(_, a)| a.value() != 0.0);
        alpha = next;
    }
    let mut z = Kahan::default();
    for (_, a) in &alpha {
        z.add(a.value());
    }
    let z = z.value();
    if z <= 0.0 {
        return Err(SimError::Config { reason: "the weighted path law has zero mass".into() });
    }
    Ok(z)
}

fn accumulate<S: PartialEq>(cells: &mut Vec<(S, Kahan)>, state: S, mass: f64) {
    match cells.iter_mut().find(|(s, _)| *s == state) {
        Some((_, a)) => a.add(mass),
        None => {
            let mut a = Kahan::default();
            a.add(mass);
            cells.push((state, a));
        }
    }
}

/// Draw `n` independent paths from an exact law by inverse CDF over its
/// enumeration order, under the flat stream of `Tag::Path`.
pub fn sample_from_law<S: Clone>(law: &ExactPathLaw<S>, n: usize, seed: u64) -> Vec<Vec<S>> {
    let stream = KeyedStream::new(seed, 0);
    let cumulative: Vec<f64> = law
        .probabilities
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    (0..n)
        .map(|i| {
            let u = stream.flat_uniform(Tag::Path, &[i as u64], 0);
            let idx = cumulative.partition_point(|&c| c <= u).min(law.paths.len() - 1);
            law.paths[idx].clone()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Linear-Gaussian ground truth
// ---------------------------------------------------------------------------

/// Exact posterior summaries of the AR(1)-plus-noise chain: X_1 ~ N(0,1),
/// X_{k+1} = a X_k + b V_k, with observations Y_k = X_k + c W_k at times
/// 1..=P-1 (the weighted times of the path law).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanSummary {
    /// Posterior mean of X_k given all observations, times 1..=P at index
    /// k-1.
    pub smoothed_means: Vec<f64>,
    pub smoothed_vars: Vec<f64>,
    /// Filtered (past-only) summaries; the horizon entry is the one-step
    /// prediction, since time P carries no observation.
    pub filtered_means: Vec<f64>,
    pub filtered_vars: Vec<f64>,
    /// Log marginal likelihood of the observations — the log normalizing
    /// constant of the weighted path law.
    pub log_likelihood: f64,
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let standardized = (x - mean) / sd;
    -0.5 * standardized * standardized - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Forward Kalman filter and backward (RTS) smoother.
pub fn kalman_smoother(a: f64, b: f64, c: f64, observations: &[f64]) -> SimResult<KalmanSummary> {
    if b <= 0.0 || c <= 0.0 || !a.is_finite() || !b.is_finite() || !c.is_finite() {
        return Err(SimError::Config {
            reason: "the chain needs finite a and positive b, c".into(),
        });
    }
    if observations.is_empty() || observations.iter().any(|y| !y.is_finite()) {
        return Err(SimError::Config {
            reason: "observations must be a nonempty list of finite values".into(),
        });
    }
    let p = observations.len() + 1;
    let mut pred_mean = vec![0.0; p];
    let mut pred_var = vec![0.0; p];
    let mut filt_mean = vec![0.0; p];
    let mut filt_var = vec![0.0; p];
    pred_var[0] = 1.0;
    let mut log_likelihood = 0.0;
    for k in 1..p {
        let i = k - 1;
        let innovation_var = pred_var[i] + c * c;
        let gain = pred_var[i] / innovation_var;
        filt_mean[i] = pred_mean[i] + gain * (observations[i] - pred_mean[i]);
        filt_var[i] = (1.0 - gain) * pred_var[i];
        log_likelihood += log_normal_pdf(observations[i], pred_mean[i], innovation_var.sqrt());
        pred_mean[k] = a * filt_mean[i];
        pred_var[k] = a * a * filt_var[i] + b * b;
    }
    // No observation at the horizon: filtered = predicted there.
    filt_mean[p - 1] = pred_mean[p - 1];
    filt_var[p - 1] = pred_var[p - 1];

    let mut smoothed_means = filt_mean.clone();
    let mut smoothed_vars = filt_var.clone();
    for i in (0..p - 1).rev() {
        let gain = filt_var[i] * a / pred_var[i + 1];
        smoothed_means[i] = filt_mean[i] + gain * (smoothed_means[i + 1] - pred_mean[i + 1]);
        smoothed_vars[i] = filt_var[i] + gain * gain * (smoothed_vars[i + 1] - pred_var[i + 1]);
    }
    Ok(KalmanSummary {
        smoothed_means,
        smoothed_vars,
        filtered_means: filt_mean,
        filtered_vars: filt_var,
        log_likelihood,
    })
}

/// Brute-force check of the three-step chain by two-dimensional trapezoid
/// quadrature: returns (log Z, posterior mean of X_1, posterior mean of X_2)
/// for observations (y1, y2). The time-3 coordinate integrates out exactly.
/// The grid spans `half_width` standard deviations of padding around 0 with
/// `points` nodes per axis; the integrand decays like a Gaussian, so the
/// trapezoid rule converges far faster than its worst case.
pub fn quadrature_three_step(
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
    half_width: f64,
    points: usize,
) -> (f64, f64, f64) {
    let h = 2.0 * half_width / (points - 1) as f64;
    let node = |i: usize| -> f64 { -half_width + i as f64 * h };
    let mut mass = Kahan::default();
    let mut moment1 = Kahan::default();
    let mut moment2 = Kahan::default();
    for i in 0..points {
        let x1 = node(i);
        let wi = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let outer = log_normal_pdf(x1, 0.0, 1.0) + log_normal_pdf(y1, x1, c);
        for j in 0..points {
            let x2 = node(j);
            let wj = if j == 0 || j == points - 1 { 0.5 } else { 1.0 };
            let log_density = outer + log_normal_pdf(x2, a * x1, b) + log_normal_pdf(y2, x2, c);
            let w = wi * wj * log_density.exp();
            mass.add(w);
            moment1.add(w * x1);
            moment2.add(w * x2);
        }
    }
    let z = mass.value() * h * h;
    ((z).ln(), moment1.value() * h * h / z, moment2.value() * h * h / z)
}

// ---------------------------------------------------------------------------
// Forest population moments
// ---------------------------------------------------------------------------

fn lookup<S: PartialEq>(cells: &[(S, f64)], state: &S) -> SimResult<f64> {
    cells
        .iter()
        .find(|(s, _)| s == state)
        .map(|(_, v)| *v)
        .ok_or_else(|| SimError::Structural {
            reason: "transition reached a state missing from the declared time support".into(),
        })
}

/// Expected horizon population of a free forest with `n1` roots, by backward
/// recursion over expected subtree sizes.
pub fn mean_final_population<M: EnumerableModel>(
    model: &M,
    law: &OffspringLaw,
    n1: usize,
) -> SimResult<f64> {
    let p = model.horizon();
    let mut subtree: Vec<(M::State, f64)> =
        model.time_support(p).into_iter().map(|x| (x, 1.0)).collect();
    for k in (1..p).rev() {
        let mut current = Vec::new();
        for x in model.time_support(k) {
            let mut mean_child = Kahan::default();
            for y in model.transition_support(&x) {
                let mass = model.log_transition_density(&x, &y).exp();
                mean_child.add(mass * lookup(&subtree, &y)?);
            }
            let g = model.potential(k, &x);
            let value = law.mean_offspring(k + 1, g) * mean_child.value();
            current.push((x, value));
        }
        subtree = current;
    }
    let mut per_root = Kahan::default();
    for x in model.initial_support() {
        let mass = model.log_initial_density(&x).exp();
        per_root.add(mass * lookup(&subtree, &x)?);
    }
    Ok(n1 as f64 * per_root.value())
}

/// Probability that a free forest with `n1` roots carries at least one
/// particle to the horizon, by backward recursion over per-state extinction
/// probabilities.
pub fn survival_probability<M: EnumerableModel>(
    model: &M,
    law: &OffspringLaw,
    n1: usize,
) -> SimResult<f64> {
    let p = model.horizon();
    let mut extinct: Vec<(M::State, f64)> =
        model.time_support(p).into_iter().map(|x| (x, 0.0)).collect();
    for k in (1..p).rev() {
        let mut current = Vec::new();
        for x in model.time_support(k) {
            let mut mean_extinct = Kahan::default();
            for y in model.transition_support(&x) {
                let mass = model.log_transition_density(&x, &y).exp();
                mean_extinct.add(mass * lookup(&extinct, &y)?);
            }
            let e = mean_extinct.value();
            let g = model.potential(k, &x);
            let pmf = law.offspring_pmf(k + 1, g)?;
            // All children's subtrees die independently given their count.
            let value: f64 =
                pmf.iter().enumerate().map(|(count, pr)| pr * e.powi(count as i32)).sum();
            current.push((x, value));
        }
        extinct = current;
    }
    let mut root_extinct = Kahan::default();
    for x in model.initial_support() {
        let mass = model.log_initial_density(&x).exp();
        root_extinct.add(mass * lookup(&extinct, &x)?);
    }
    Ok(1.0 - root_extinct.value().powi(n1 as i32))
}

// ---------------------------------------------------------------------------
// Statistical test harness
// ---------------------------------------------------------------------------

/// Result of testing a path sample against an exact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    /// Pearson chi-squared statistic over the pooled cells; infinite when a
    /// sample fell outside the law's support.
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Plug-in total-variation distance between the empirical law and the
    /// exact one, over the unpooled paths.
    pub tv_distance: f64,
    /// Number of chi-squared cells after pooling rare paths.
    pub cells: usize,
}

/// Pearson chi-squared test of `samples` against `law`, with paths of
/// expected count below 5 pooled into one cell (merged into the smallest
/// retained cell when the pool itself stays below 5), plus a plug-in
/// total-variation estimate over the raw, unpooled paths.
///
/// A sample outside the law's support is a certain rejection: the report
/// carries an infinite statistic and a zero p-value. Errors on an empty
/// sample set and when pooling leaves fewer than two cells.
pub fn goodness_of_fit<S: PartialEq>(
    samples: &[Vec<S>],
    law: &ExactPathLaw<S>,
) -> SimResult<GofReport> {
    if samples.is_empty() {
        return Err(SimError::Config { reason: "empty sample set".into() });
    }
    let n = samples.len() as f64;
    let mut counts = vec![0u64; law.paths.len()];
    let mut foreign = 0u64;
    for sample in samples {
        match law.index_of(sample) {
            Some(i) => counts[i] += 1,
            None => foreign += 1,
        }
    }

    let mut tv = Kahan::default();
    for (i, &p) in law.probabilities.iter().enumerate() {
        tv.add((counts[i] as f64 / n - p).abs());
    }
    tv.add(foreign as f64 / n);
    let tv_distance = 0.5 * tv.value();

    if foreign > 0 {
        return Ok(GofReport {
            statistic: f64::INFINITY,
            dof: 0,
            p_value: 0.0,
            tv_distance,
            cells: 0,
        });
    }

    let mut retained: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut pooled = (0.0f64, 0.0f64);
    for (i, &p) in law.probabilities.iter().enumerate() {
        let expected = n * p;
        if expected < 5.0 {
            pooled.0 += counts[i] as f64;
            pooled.1 += expected;
        } else {
            retained.push((counts[i] as f64, expected));
        }
    }
    if pooled.1 > 0.0 {
        if pooled.1 >= 5.0 || retained.is_empty() {
            retained.push(pooled);
        } else {
            let smallest = retained
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("retained is nonempty here");
            smallest.0 += pooled.0;
            smallest.1 += pooled.1;
        }
    }
    if retained.len() < 2 {
        return Err(SimError::Config {
            reason: format!(
                "{} samples leave fewer than two chi-squared cells after pooling",
                samples.len()
            ),
        });
    }

    let mut statistic = Kahan::default();
    for &(observed, expected) in &retained {
        let d = observed - expected;
        statistic.add(d * d / expected);
    }
    let statistic = statistic.value();
    let dof = retained.len() - 1;
    let chi2 = ChiSquared::new(dof as f64)
        .map_err(|e| SimError::Structural { reason: format!("chi-squared setup: {e}") })?;
    let p_value = 1.0 - chi2.cdf(statistic);
    Ok(GofReport { statistic, dof, p_value, tv_distance, cells: retained.len() })
}
