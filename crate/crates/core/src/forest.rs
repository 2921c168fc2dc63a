//! Branching forests in block order, their sampler and their densities.
//!
//! A forest stores one `Generation` per realized time step. Children are laid
//! out in parent order ("block order"): the children of particle i form a
//! contiguous run, so `parent` is non-decreasing and offspring counts,
//! parents and block layout determine each other. The optional spine is an
//! ancestral line of particle indices; the optional permutations carry the
//! per-generation relabelings of the sampling space. Densities never depend
//! on the relabeling (the per-generation factor 1/n_k! is included, and the
//! product of transition terms is relabeling-invariant), so permutations are
//! materialized only when a caller wants the full sampling-space object.
//!
//! All densities are returned in log space; impossible configurations yield
//! negative infinity rather than an error, while malformed structures error.

use crate::error::{SimError, SimResult};
use crate::model::{Model, OffspringLaw};
use crate::rng::{KeyedStream, Tag, UniformSource};
use serde::{Deserialize, Serialize};

/// One realized generation in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation<S> {
    pub states: Vec<S>,
    /// Children counts into the next generation. Empty for the horizon
    /// generation of a surviving forest; explicit zeros where a forest died.
    pub offspring: Vec<u32>,
    /// Index of each particle's parent in the previous generation; empty for
    /// the first generation. Non-decreasing by construction.
    pub parent: Vec<usize>,
}

impl<S> Generation<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A branching forest over times 1..=generations.len(), targeting `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest<S> {
    pub horizon: usize,
    pub generations: Vec<Generation<S>>,
    /// Ancestral line of particle indices, one per realized generation.
    pub spine: Option<Vec<usize>>,
    /// Relabelings for generations 2..=p', present only on demand.
    pub permutations: Option<Vec<Vec<usize>>>,
}

impl<S: Clone> Forest<S> {
    /// States along the spine, if one is attached.
    pub fn spine_path(&self) -> Option<Vec<S>> {
        let spine = self.spine.as_ref()?;
        Some(
            spine
                .iter()
                .zip(&self.generations)
                .map(|(&i, g)| g.states[i].clone())
                .collect(),
        )
    }
}

impl<S> Forest<S> {
    /// Population at `time` (1-based); zero past the realized generations.
    pub fn population(&self, time: usize) -> usize {
        self.generations.get(time - 1).map_or(0, Generation::len)
    }

    /// Population at the target horizon (zero if the forest died early).
    pub fn final_population(&self) -> usize {
        if self.survived() {
            self.generations[self.horizon - 1].len()
        } else {
            0
        }
    }

    /// Whether the forest reached its horizon.
    pub fn survived(&self) -> bool {
        self.generations.len() == self.horizon
    }

    /// Total number of particles across generations.
    pub fn total_particles(&self) -> u64 {
        self.generations.iter().map(|g| g.len() as u64).sum()
    }

    /// Draw and attach the per-generation relabelings.
    pub fn attach_permutations(&mut self, stream: &KeyedStream) {
        let perms = (2..=self.generations.len())
            .map(|k| stream.permutation(k, self.generations[k - 1].len()))
            .collect();
        self.permutations = Some(perms);
    }

    /// Structural consistency: block layout, counts, spine ancestry,
    /// permutation shape.
    pub fn validate(&self) -> SimResult<()> {
        let fail = |reason: String| Err(SimError::Structural { reason });
        if self.horizon < 2 {
            return fail(format!("horizon {} below 2", self.horizon));
        }
        if self.generations.is_empty() || self.generations.len() > self.horizon {
            return fail(format!(
                "{} generations against horizon {}",
                self.generations.len(),
                self.horizon
            ));
        }
        let last = self.generations.len() - 1;
        for (gi, gen) in self.generations.iter().enumerate() {
            if gen.is_empty() {
                return fail(format!("generation {} is empty", gi + 1));
            }
            let want_offspring = if gi < last {
                Some(gen.len())
            } else if self.survived() {
                None
            } else {
                Some(gen.len())
            };
            match want_offspring {
                Some(n) if gen.offspring.len() != n => {
                    return fail(format!("generation {}: offspring length mismatch", gi + 1))
                }
                None if !gen.offspring.is_empty() => {
                    return fail("horizon generation carries offspring".into())
                }
                _ => {}
            }
            if gi == last && !self.survived() && gen.offspring.iter().any(|&a| a != 0) {
                return fail(format!("dead forest has live counts at generation {}", gi + 1));
            }
            if gi == 0 {
                if !gen.parent.is_empty() {
                    return fail("first generation has parents".into());
                }
                continue;
            }
            if gen.parent.len() != gen.len() {
                return fail(format!("generation {}: parent length mismatch", gi + 1));
            }
            let prev = &self.generations[gi - 1];
            let mut counts = vec![0u32; prev.len()];
            let mut last_parent = 0usize;
            for &p in &gen.parent {
                if p >= prev.len() {
                    return fail(format!("generation {}: parent index {} out of range", gi + 1, p));
                }
                if p < last_parent {
                    return fail(format!("generation {}: parents not in block order", gi + 1));
                }
                last_parent = p;
                counts[p] += 1;
            }
            if counts != prev.offspring {
                return fail(format!("generation {}: children do not match counts", gi + 1));
            }
        }
        if let Some(spine) = &self.spine {
            if spine.len() != self.generations.len() {
                return fail("spine length mismatch".into());
            }
            for (gi, &idx) in spine.iter().enumerate() {
                if idx >= self.generations[gi].len() {
                    return fail(format!("spine index out of range at generation {}", gi + 1));
                }
                if gi > 0 && self.generations[gi].parent[idx] != spine[gi - 1] {
                    return fail(format!("spine broken between generations {} and {}", gi, gi + 1));
                }
            }
        }
        if let Some(perms) = &self.permutations {
            if perms.len() != self.generations.len().saturating_sub(1) {
                return fail("permutation count mismatch".into());
            }
            for (j, p) in perms.iter().enumerate() {
                let n = self.generations[j + 1].len();
                let mut seen = vec![false; n];
                if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                    return fail(format!("invalid permutation for generation {}", j + 2));
                }
            }
        }
        Ok(())
    }
}

/// Result of growing a free forest.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalOutcome<S> {
    /// Reached the horizon; the spine is the ancestry of a uniformly chosen
    /// horizon particle.
    Survived(Forest<S>),
    /// Went extinct: `died_at` is the first empty generation.
    Died { died_at: usize, forest: Forest<S> },
}

impl<S> ProposalOutcome<S> {
    pub fn final_population(&self) -> usize {
        match self {
            ProposalOutcome::Survived(f) => f.final_population(),
            ProposalOutcome::Died { .. } => 0,
        }
    }

    pub fn forest(&self) -> &Forest<S> {
        match self {
            ProposalOutcome::Survived(f) => f,
            ProposalOutcome::Died { forest, .. } => forest,
        }
    }
}

/// Grow a free forest from `n1` roots and pick one horizon particle uniformly.
///
/// Consumes a flat cursor under the proposal tag in a fixed order (roots,
/// then per generation: counts, then children states, finally the leaf
/// pick), so a fixed stream always yields the identical forest.
pub fn sample_proposal<M: Model>(
    model: &M,
    law: &OffspringLaw,
    stream: &KeyedStream,
    n1: usize,
    population_cap: u64,
) -> SimResult<ProposalOutcome<M::State>> {
    assert!(n1 >= 1, "need at least one root");
    assert_eq!(law.horizon(), model.horizon(), "offspring schedule does not match model horizon");
    let p = model.horizon();
    let mut cur = stream.flat_cursor(Tag::Proposal);

    let roots: Vec<M::State> = (0..n1).map(|_| model.sample_initial(&mut cur)).collect();
    let mut forest = Forest {
        horizon: p,
        generations: vec![Generation { states: roots, offspring: vec![], parent: vec![] }],
        spine: None,
        permutations: None,
    };
    let mut total = n1 as u64;

    for k in 1..p {
        let counts: Vec<u32> = {
            let gen = &forest.generations[k - 1];
            gen.states
                .iter()
                .map(|x| {
                    let g = model.potential(k, x);
                    law.offspring_icdf(k + 1, g, cur.next_uniform())
                })
                .collect::<SimResult<_>>()?
        };
        let n_next: u64 = counts.iter().map(|&a| a as u64).sum();
        forest.generations[k - 1].offspring = counts;
        if n_next == 0 {
            return Ok(ProposalOutcome::Died { died_at: k + 1, forest });
        }
        total += n_next;
        if total > population_cap {
            return Err(SimError::PopulationCap { cap: population_cap, generation: k + 1 });
        }

        let mut states = Vec::with_capacity(n_next as usize);
        let mut parent = Vec::with_capacity(n_next as usize);
        for i in 0..forest.generations[k - 1].len() {
            for _ in 0..forest.generations[k - 1].offspring[i] {
                let x = model.sample_transition(&forest.generations[k - 1].states[i], &mut cur);
                states.push(x);
                parent.push(i);
            }
        }
        forest.generations.push(Generation { states, offspring: vec![], parent });
    }

    // Uniform pick among horizon particles, then walk the ancestry back.
    let n_final = forest.generations[p - 1].len();
    let pick = ((cur.next_uniform() * n_final as f64) as usize).min(n_final - 1);
    let mut spine = vec![0usize; p];
    spine[p - 1] = pick;
    for gi in (1..p).rev() {
        spine[gi - 1] = forest.generations[gi].parent[spine[gi]];
    }
    forest.spine = Some(spine);
    Ok(ProposalOutcome::Survived(forest))
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Log-density of growing exactly this forest unconditionally: initial
/// masses, offspring counts (including the extinction step of a dead
/// forest), per-generation relabeling factors 1/n_k!, and transition terms.
pub fn log_free_density<M: Model>(
    model: &M,
    law: &OffspringLaw,
    forest: &Forest<M::State>,
) -> SimResult<f64> {
    forest.validate()?;
    let mut lp = 0.0f64;
    for root in &forest.generations[0].states {
        lp += model.log_initial_density(root);
    }
    for (gi, gen) in forest.generations.iter().enumerate() {
        let k = gi + 1;
        if gi > 0 {
            lp -= ln_factorial(gen.len());
            let prev = &forest.generations[gi - 1];
            for (j, x) in gen.states.iter().enumerate() {
                lp += model.log_transition_density(&prev.states[gen.parent[j]], x);
            }
        }
        if !gen.offspring.is_empty() {
            for (i, x) in gen.states.iter().enumerate() {
                let g = model.potential(k, x);
                lp += law.log_offspring_prob(k + 1, g, gen.offspring[i])?;
            }
        }
    }
    Ok(lp)
}

/// Log-density of the proposal: free growth plus the uniform choice of one
/// horizon particle. Negative infinity for forests that died early.
pub fn log_proposal_density<M: Model>(
    model: &M,
    law: &OffspringLaw,
    forest: &Forest<M::State>,
) -> SimResult<f64> {
    if !forest.survived() {
        forest.validate()?;
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_free_density(model, law, forest)? - (forest.final_population() as f64).ln())
}

/// Log-density of a forest pinned along its spine: the target weight of the
/// spine path (which requires the normalizer `log_z`), the uniform root
/// anchor, survival-conditioned offspring draws along the spine, and the
/// free factors everywhere else.
pub fn log_pinned_density<M: Model>(
    model: &M,
    law: &OffspringLaw,
    forest: &Forest<M::State>,
    log_z: f64,
) -> SimResult<f64> {
    forest.validate()?;
    let p = forest.horizon;
    let spine = forest
        .spine
        .as_ref()
        .ok_or_else(|| SimError::Structural { reason: "pinned density needs a spine".into() })?;
    if !forest.survived() {
        return Err(SimError::Structural { reason: "pinned forest must reach its horizon".into() });
    }
    for (gi, (generation, &slot)) in forest.generations[..p - 1].iter().zip(spine).enumerate() {
        if generation.offspring[slot] == 0 {
            return Err(SimError::Structural {
                reason: format!("spine has no child at generation {}", gi + 1),
            });
        }
    }

    // Spine path factors under the target.
    let mut lp = -log_z;
    let z: Vec<&M::State> =
        spine.iter().zip(&forest.generations).map(|(&i, g)| &g.states[i]).collect();
    lp += model.log_initial_density(z[0]);
    for k in 2..=p {
        lp += model.log_transition_density(z[k - 2], z[k - 1]);
    }
    for k in 1..p {
        let g = model.potential(k, z[k - 1]);
        if !g.is_finite() || g < 0.0 {
            return Err(SimError::InvalidPotential { time: k, value: g });
        }
        lp += g.ln();
    }

    // Root anchor and the remaining roots.
    lp -= (forest.generations[0].len() as f64).ln();
    for (i, x) in forest.generations[0].states.iter().enumerate() {
        if i != spine[0] {
            lp += model.log_initial_density(x);
        }
    }

    // Offspring draws, relabeling factors and off-spine transitions.
    for gi in 0..p - 1 {
        let k = gi + 1;
        let gen = &forest.generations[gi];
        for (i, x) in gen.states.iter().enumerate() {
            if i == spine[gi] {
                lp += law.log_spine_prob(k + 1, gen.offspring[i]);
            } else {
                let g = model.potential(k, x);
                lp += law.log_offspring_prob(k + 1, g, gen.offspring[i])?;
            }
        }
        let child = &forest.generations[gi + 1];
        lp -= ln_factorial(child.len());
        for (j, x) in child.states.iter().enumerate() {
            if j != spine[gi + 1] {
                lp += model.log_transition_density(&gen.states[child.parent[j]], x);
            }
        }
    }
    Ok(lp)
}
