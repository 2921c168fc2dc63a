//! Exhaustive-enumeration cross-checks.
//!
//! Forest densities are verified to be genuine probability mass functions by
//! summing them over every forest a small lattice model can produce, and the
//! samplers are checked against expectations computed without running them.
//!
//! Counting convention: the density functions carry a 1/n_k! factor per child
//! generation, the mass of one uniformly drawn relabeling. Summing over
//! block-ordered forests therefore weighs each by the number of relabelings,
//! `mult` = prod n_k!, so that (forest, relabeling) pairs are each counted
//! once.

use fkps::apps::polymer::{polymer_model, Polymer, PolymerEnvironment};
use fkps::apps::smc::smc_prerun;
use fkps::conditional::build_conditional;
use fkps::forest::{
    log_free_density, log_pinned_density, log_proposal_density, sample_proposal, Forest,
    Generation,
};
use fkps::kernel::{mcmc_chain, KernelParams};
use fkps::model::{EnumerableModel, Model, OffspringLaw, OffspringStep};
use fkps::oracle::{
    exact_path_law, goodness_of_fit, mean_final_population, survival_probability, ExactPathLaw,
};
use fkps::rng::{derive_seed, KeyedStream};

fn factorial(n: u32) -> f64 {
    (2..=n as u64).map(|i| i as f64).product()
}

/// Every way of picking one entry per slot.
fn cartesian<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut acc: Vec<Vec<T>> = vec![Vec::with_capacity(options.len())];
    for opts in options {
        let mut next = Vec::with_capacity(acc.len() * opts.len());
        for prefix in &acc {
            for o in opts {
                let mut row = prefix.clone();
                row.push(o.clone());
                next.push(row);
            }
        }
        acc = next;
    }
    acc
}

fn environment(horizon: usize) -> Polymer {
    polymer_model(PolymerEnvironment::generate(42, 0.5, 1.0, horizon).unwrap())
}

// ---------------------------------------------------------------------------
// Enumerators. Forests are built in the exact block layout the samplers use:
// children grouped by parent in parent order, the spine first.
// ---------------------------------------------------------------------------

/// All free forests from `n1` roots with their relabeling multiplicities.
fn enumerate_free(model: &Polymer, law: &OffspringLaw, n1: usize) -> Vec<(Forest<i64>, f64)> {
    let mut out = Vec::new();
    for roots in cartesian(&vec![model.initial_support(); n1]) {
        let forest = Forest {
            horizon: model.horizon(),
            generations: vec![Generation { states: roots, offspring: vec![], parent: vec![] }],
            spine: None,
            permutations: None,
        };
        grow_free(model, law, forest, 1.0, &mut out);
    }
    out
}

fn grow_free(
    model: &Polymer,
    law: &OffspringLaw,
    forest: Forest<i64>,
    mult: f64,
    out: &mut Vec<(Forest<i64>, f64)>,
) {
    let k = forest.generations.len();
    if k == model.horizon() {
        out.push((forest, mult));
        return;
    }
    let q = law.step(k + 1).q;
    let parent_states = forest.generations[k - 1].states.clone();
    let count_options: Vec<Vec<u32>> = vec![(0..=q).collect(); parent_states.len()];
    for counts in cartesian(&count_options) {
        let n_next: u32 = counts.iter().sum();
        let mut with_counts = forest.clone();
        with_counts.generations[k - 1].offspring = counts.clone();
        if n_next == 0 {
            out.push((with_counts, mult));
            continue;
        }
        let mut parent = Vec::with_capacity(n_next as usize);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                parent.push(i);
            }
        }
        let state_options: Vec<Vec<i64>> =
            parent.iter().map(|&i| model.transition_support(&parent_states[i])).collect();
        for states in cartesian(&state_options) {
            let mut next = with_counts.clone();
            next.generations.push(Generation {
                states,
                offspring: vec![],
                parent: parent.clone(),
            });
            grow_free(model, law, next, mult * factorial(n_next), out);
        }
    }
}

/// All forests pinned along `z` (spine root at every slot, spine child first
/// among its parent's children), with relabeling multiplicities.
fn enumerate_pinned(
    model: &Polymer,
    law: &OffspringLaw,
    z: &[i64],
    n1: usize,
) -> Vec<(Forest<i64>, f64)> {
    let mut out = Vec::new();
    for spine_slot in 0..n1 {
        let other_options: Vec<Vec<i64>> = vec![model.initial_support(); n1 - 1];
        for others in cartesian(&other_options) {
            let mut roots = others.clone();
            roots.insert(spine_slot, z[0]);
            let forest = Forest {
                horizon: model.horizon(),
                generations: vec![Generation { states: roots, offspring: vec![], parent: vec![] }],
                spine: Some(vec![spine_slot]),
                permutations: None,
            };
            grow_pinned(model, law, z, forest, 1.0, &mut out);
        }
    }
    out
}

fn grow_pinned(
    model: &Polymer,
    law: &OffspringLaw,
    z: &[i64],
    forest: Forest<i64>,
    mult: f64,
    out: &mut Vec<(Forest<i64>, f64)>,
) {
    let k = forest.generations.len();
    if k == model.horizon() {
        out.push((forest, mult));
        return;
    }
    let q = law.step(k + 1).q;
    let spine_idx = forest.spine.as_ref().unwrap()[k - 1];
    let parent_states = forest.generations[k - 1].states.clone();
    let count_options: Vec<Vec<u32>> = (0..parent_states.len())
        .map(|i| if i == spine_idx { (1..=q).collect() } else { (0..=q).collect() })
        .collect();
    for counts in cartesian(&count_options) {
        let n_next: u32 = counts.iter().sum();
        let mut with_counts = forest.clone();
        with_counts.generations[k - 1].offspring = counts.clone();
        let mut parent = Vec::with_capacity(n_next as usize);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                parent.push(i);
            }
        }
        let spine_child: usize = counts[..spine_idx].iter().map(|&c| c as usize).sum();
        let state_options: Vec<Vec<i64>> = parent
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                if slot == spine_child {
                    vec![z[k]]
                } else {
                    model.transition_support(&parent_states[i])
                }
            })
            .collect();
        for states in cartesian(&state_options) {
            let mut next = with_counts.clone();
            next.generations.push(Generation {
                states,
                offspring: vec![],
                parent: parent.clone(),
            });
            next.spine.as_mut().unwrap().push(spine_child);
            grow_pinned(model, law, z, next, mult * factorial(n_next), out);
        }
    }
}

// ---------------------------------------------------------------------------
// Density normalization.
// ---------------------------------------------------------------------------

#[test]
fn free_density_is_a_probability_mass_function() {
    // Two roots, horizon 2, generated field.
    let model = environment(2);
    let law = OffspringLaw::with_uniform_q(&model, 2).unwrap();
    let total: f64 = enumerate_free(&model, &law, 2)
        .iter()
        .map(|(f, mult)| mult * log_free_density(&model, &law, f).unwrap().exp())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "free mass {total}");

    // One root, horizon 3: the sum runs through two branching layers.
    let model = environment(3);
    let law = OffspringLaw::with_uniform_q(&model, 2).unwrap();
    let total: f64 = enumerate_free(&model, &law, 1)
        .iter()
        .map(|(f, mult)| mult * log_free_density(&model, &law, f).unwrap().exp())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "free mass {total}");
}

#[test]
fn free_density_accounts_for_extinction() {
    // A fully marked field under an inflated bound gives every particle a
    // real chance to die, so dead forests carry mass of their own.
    let model = polymer_model(
        PolymerEnvironment::from_field(0.5, 0.5, vec![vec![1], vec![1, 1, 1]]).unwrap(),
    );
    let law = OffspringLaw::from_steps(vec![OffspringStep { beta: 1.0, q: 2 }]).unwrap();
    let forests = enumerate_free(&model, &law, 2);
    let dead_mass: f64 = forests
        .iter()
        .filter(|(f, _)| !f.survived())
        .map(|(f, mult)| mult * log_free_density(&model, &law, f).unwrap().exp())
        .sum();
    let total: f64 = forests
        .iter()
        .map(|(f, mult)| mult * log_free_density(&model, &law, f).unwrap().exp())
        .sum();
    assert!(dead_mass > 0.05, "dead forests should carry mass, got {dead_mass}");
    assert!((total - 1.0).abs() < 1e-9, "free mass {total}");
}

#[test]
fn pinned_density_is_a_probability_mass_function() {
    // Horizon 2, two roots: exercises the uniform root anchor with the spine
    // at either slot.
    let model = environment(2);
    let law = OffspringLaw::with_uniform_q(&model, 2).unwrap();
    let exact = exact_path_law(&model).unwrap();
    let total: f64 = exact
        .paths
        .iter()
        .flat_map(|z| enumerate_pinned(&model, &law, z, 2))
        .map(|(f, mult)| {
            mult * log_pinned_density(&model, &law, &f, exact.log_z).unwrap().exp()
        })
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "pinned mass {total}");

    // Horizon 3, one root: exercises spine offspring over two layers.
    let model = environment(3);
    let law = OffspringLaw::with_uniform_q(&model, 2).unwrap();
    let exact = exact_path_law(&model).unwrap();
    let total: f64 = exact
        .paths
        .iter()
        .flat_map(|z| enumerate_pinned(&model, &law, z, 1))
        .map(|(f, mult)| {
            mult * log_pinned_density(&model, &law, &f, exact.log_z).unwrap().exp()
        })
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "pinned mass {total}");
}

#[test]
fn proposal_density_sums_to_the_survival_probability() {
    // The proposal law divides the free mass of a surviving forest among its
    // horizon leaves, so over (forest, leaf) pairs it recovers exactly the
    // survival probability.
    for (horizon, n1, q) in [(2usize, 2usize, 2u32), (3, 1, 2)] {
        let model = environment(horizon);
        let law = OffspringLaw::with_uniform_q(&model, q).unwrap();
        let expected = survival_probability(&model, &law, n1).unwrap();
        let total: f64 = enumerate_free(&model, &law, n1)
            .iter()
            .filter(|(f, _)| f.survived())
            .map(|(f, mult)| {
                let leaves = f.final_population() as f64;
                mult * leaves * log_proposal_density(&model, &law, f).unwrap().exp()
            })
            .sum();
        assert!(
            (total - expected).abs() < 1e-9,
            "horizon {horizon}: proposal mass {total} vs survival {expected}"
        );
    }
}

// ---------------------------------------------------------------------------
// Sampler distributions against first-principles expectations.
// ---------------------------------------------------------------------------

/// Every forest the pinned builder can produce for `z` with one root, along
/// with its probability: spine counts are uniform on {1..q}, side counts
/// follow the potential-tilted family, side states the walk's transitions.
fn conditional_outcomes(
    model: &Polymer,
    law: &OffspringLaw,
    z: &[i64],
) -> Vec<(Forest<i64>, f64)> {
    let root = Forest {
        horizon: model.horizon(),
        generations: vec![Generation { states: vec![z[0]], offspring: vec![], parent: vec![] }],
        spine: Some(vec![0]),
        permutations: None,
    };
    let mut out = Vec::new();
    grow_outcomes(model, law, z, root, 1.0, &mut out);
    out
}

fn grow_outcomes(
    model: &Polymer,
    law: &OffspringLaw,
    z: &[i64],
    forest: Forest<i64>,
    prob: f64,
    out: &mut Vec<(Forest<i64>, f64)>,
) {
    let k = forest.generations.len();
    if k == model.horizon() {
        out.push((forest, prob));
        return;
    }
    let step_q = law.step(k + 1).q;
    let spine_idx = forest.spine.as_ref().unwrap()[k - 1];
    let parent_states = forest.generations[k - 1].states.clone();

    let mut count_options: Vec<Vec<(u32, f64)>> = Vec::with_capacity(parent_states.len());
    for (i, x) in parent_states.iter().enumerate() {
        if i == spine_idx {
            count_options
                .push((1..=step_q).map(|a| (a, 1.0 / step_q as f64)).collect());
        } else {
            let pmf = law.offspring_pmf(k + 1, model.potential(k, x)).unwrap();
            count_options
                .push(pmf.iter().enumerate().map(|(a, &p)| (a as u32, p)).collect());
        }
    }
    for weighted_counts in cartesian(&count_options) {
        let counts: Vec<u32> = weighted_counts.iter().map(|&(a, _)| a).collect();
        let count_prob: f64 = weighted_counts.iter().map(|&(_, p)| p).product();
        if count_prob == 0.0 {
            continue;
        }
        let n_next: u32 = counts.iter().sum();
        let mut with_counts = forest.clone();
        with_counts.generations[k - 1].offspring = counts.clone();
        let mut parent = Vec::with_capacity(n_next as usize);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                parent.push(i);
            }
        }
        let spine_child: usize = counts[..spine_idx].iter().map(|&c| c as usize).sum();
        let state_options: Vec<Vec<(i64, f64)>> = parent
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                if slot == spine_child {
                    vec![(z[k], 1.0)]
                } else {
                    let support = model.transition_support(&parent_states[i]);
                    let p = 1.0 / support.len() as f64;
                    support.into_iter().map(|s| (s, p)).collect()
                }
            })
            .collect();
        for weighted_states in cartesian(&state_options) {
            let states: Vec<i64> = weighted_states.iter().map(|&(s, _)| s).collect();
            let state_prob: f64 = weighted_states.iter().map(|&(_, p)| p).product();
            let mut next = with_counts.clone();
            next.generations.push(Generation {
                states,
                offspring: vec![],
                parent: parent.clone(),
            });
            next.spine.as_mut().unwrap().push(spine_child);
            grow_outcomes(model, law, z, next, prob * count_prob * state_prob, out);
        }
    }
}

#[test]
fn conditional_builder_matches_its_enumerated_distribution() {
    let model = environment(3);
    let law = OffspringLaw::with_uniform_q(&model, 2).unwrap();
    let z = vec![0i64, 1, 0];

    let outcomes = conditional_outcomes(&model, &law, &z);
    let mass: f64 = outcomes.iter().map(|&(_, p)| p).sum();
    assert!((mass - 1.0).abs() < 1e-12, "outcome mass {mass}");

    let reference = ExactPathLaw {
        paths: outcomes.iter().map(|(f, _)| vec![format!("{f:?}")]).collect(),
        probabilities: outcomes.iter().map(|&(_, p)| p).collect(),
        z: 1.0,
        log_z: 0.0,
    };

    let n = 100_000;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let stream = KeyedStream::new(derive_seed(0xB111D, &[i as u64]), 0);
        let cond = build_conditional(&model, &law, &stream, &z, 1, 1 << 24).unwrap();
        samples.push(vec![format!("{:?}", cond.forest)]);
    }
    let gof = goodness_of_fit(&samples, &reference).unwrap();
    assert!(
        gof.p_value > 0.001,
        "builder deviates from enumerated law: chi2={} p={} over {} cells",
        gof.statistic,
        gof.p_value,
        gof.cells
    );
}

#[test]
fn proposal_population_mean_matches_the_recursive_expectation() {
    let model = environment(4);
    let pilot = smc_prerun(&model, 256, 7).unwrap();
    let law = OffspringLaw::from_pilot_means(&model, &pilot.mean_potentials).unwrap();
    let expected = mean_final_population(&model, &law, 2).unwrap();

    let n = 10_000;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for i in 0..n {
        let stream = KeyedStream::new(derive_seed(0x9EAA, &[i as u64]), 0);
        let pop = sample_proposal(&model, &law, &stream, 2, 1 << 24)
            .unwrap()
            .final_population() as f64;
        sum += pop;
        sumsq += pop * pop;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - expected).abs() <= 4.0 * se,
        "population mean {mean} vs expectation {expected} (se {se})"
    );
}

#[test]
fn chain_acceptance_rate_matches_the_survival_probability() {
    // Fully marked field, support size one, inflated bound: the pinned forest
    // is always exactly the spine, the proposal is a single line that
    // survives each step with probability g = exp(-1/2). Acceptance is then
    // the state-free event {proposal survives}, of probability g^2 = e^{-1}.
    let model = polymer_model(
        PolymerEnvironment::from_field(0.5, 0.5, vec![vec![1], vec![1, 1, 1], vec![1; 5]])
            .unwrap(),
    );
    let law = OffspringLaw::from_steps(vec![
        OffspringStep { beta: 1.0, q: 1 },
        OffspringStep { beta: 1.0, q: 1 },
    ])
    .unwrap();
    let expected = survival_probability(&model, &law, 1).unwrap();
    assert!(
        (expected - (-1.0f64).exp()).abs() < 1e-12,
        "closed form: survival {expected} vs e^-1"
    );

    let params = KernelParams { n1: 1, ..KernelParams::default() };
    let n_steps = 20_000;
    let chain = mcmc_chain(&model, &law, &params, 0xACC3, &[0, 1, 0], n_steps).unwrap();
    let se = (expected * (1.0 - expected) / n_steps as f64).sqrt();
    assert!(
        (chain.acceptance_rate - expected).abs() <= 4.0 * se,
        "acceptance rate {} vs survival {expected} (se {se})",
        chain.acceptance_rate
    );
}

#[test]
fn normalizer_estimate_is_unbiased() {
    let model = environment(4);
    let exact = exact_path_law(&model).unwrap();
    let reps = 200;
    let mut zs = Vec::with_capacity(reps);
    for r in 0..reps {
        let estimate = smc_prerun(&model, 128, derive_seed(0x5AC, &[r as u64])).unwrap();
        zs.push(estimate.log_z.exp());
    }
    let mean = zs.iter().sum::<f64>() / reps as f64;
    let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - exact.z).abs() <= 4.0 * se,
        "normalizer estimate {mean} vs exact {} (se {se})",
        exact.z
    );
}
