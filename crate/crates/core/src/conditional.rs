//! Keyed construction of a forest around a pinned path.
//!
//! Given a path z, a forest is grown whose distinguished line ("spine") is
//! forced through z while everything else branches freely. All randomness is
//! addressed by genealogy keys: a particle's key is the sequence of birth
//! ranks from its root, the spine occupies rank 1 everywhere (key 1,1,..,1),
//! non-spine roots are keyed by their root slot. Offspring counts read one
//! uniform under the offspring tag at the parent's key; a child's state reads
//! uniforms under the transition tag at the child's own key; non-spine roots
//! read under the root-init tag.
//!
//! Two consequences carry the whole method and are worth stating:
//!
//! * the spine's offspring counts come from the survival-conditioned law,
//!   which does not depend on the parent's potential — so the branching
//!   pattern hanging off spine slot t reacts to z_t only through the side
//!   children's states;
//! * re-running the construction with the same stream and a different path
//!   reuses identical uniforms at identical keys, so the two forests agree
//!   exactly outside the subtrees whose root states changed.
//!
//! The same machinery builds forests under a replacement weight family
//! ("majorant") that dominates the model's potentials pointwise; with
//! unchanged keys the dominated forest embeds into the dominating one.

use crate::error::{SimError, SimResult};
use crate::forest::{Forest, Generation};
use crate::model::{Model, OffspringLaw};
use crate::rng::{KeyedStream, Tag};
use serde::{Deserialize, Serialize};

/// A forest grown around a pinned path, with per-particle genealogy keys.
///
/// The spine sits at block index 0 of every generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalForest<S> {
    pub forest: Forest<S>,
    /// Genealogy key of every particle, parallel to `forest.generations`.
    pub keys: Vec<Vec<Vec<u32>>>,
}

impl<S> ConditionalForest<S> {
    pub fn key(&self, gen_index: usize, particle: usize) -> &[u32] {
        &self.keys[gen_index][particle]
    }

    /// Horizon population (at least 1: the spine survives by construction).
    pub fn total_leaves(&self) -> usize {
        self.forest.final_population()
    }

    /// Iterate (key, generation index, particle index).
    pub fn iter_keys(&self) -> impl Iterator<Item = (&[u32], usize, usize)> {
        self.keys.iter().enumerate().flat_map(|(gi, gen)| {
            gen.iter().enumerate().map(move |(i, k)| (k.as_slice(), gi, i))
        })
    }
}

/// Counts of horizon particles classified by where their ancestry leaves the
/// spine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescendantCounts {
    /// Horizon population (spine particle included).
    pub total: u64,
    /// `per_spine[t-1]`: horizon descendants of side children born to spine
    /// slot t, for t in 1..=P-1.
    pub per_spine: Vec<u64>,
    /// Horizon descendants of non-spine roots.
    pub common: u64,
}

/// Build the forest pinned along `z` using the model's own potentials.
pub fn build_conditional<M: Model>(
    model: &M,
    law: &OffspringLaw,
    stream: &KeyedStream,
    z: &[M::State],
    n1: usize,
    population_cap: u64,
) -> SimResult<ConditionalForest<M::State>> {
    build_conditional_with(model, law, stream, z, n1, population_cap, &|t, x| {
        Ok(model.potential(t, x))
    })
}

/// Build the pinned forest under a dominating weight family.
///
/// `majorant(t, x)` must be at least the model potential wherever it is
/// evaluated; the first violation aborts the build.
pub fn build_majorized<M: Model>(
    model: &M,
    law: &OffspringLaw,
    stream: &KeyedStream,
    z: &[M::State],
    n1: usize,
    population_cap: u64,
    majorant: &dyn Fn(usize, &M::State) -> f64,
) -> SimResult<ConditionalForest<M::State>> {
    build_conditional_with(model, law, stream, z, n1, population_cap, &|t, x| {
        let h = majorant(t, x);
        let g = model.potential(t, x);
        if h < g {
            return Err(SimError::MajorantBelowPotential { time: t, h, g });
        }
        Ok(h)
    })
}

/// Shared builder: potentials come from `weight`, everything else from the
/// model. The consumed uniforms depend only on (stream, tag, key), never on
/// the expansion order or on `z`.
pub fn build_conditional_with<M: Model>(
    model: &M,
    law: &OffspringLaw,
    stream: &KeyedStream,
    z: &[M::State],
    n1: usize,
    population_cap: u64,
    weight: &dyn Fn(usize, &M::State) -> SimResult<f64>,
) -> SimResult<ConditionalForest<M::State>> {
    let p = model.horizon();
    assert!(n1 >= 1, "need at least one root");
    assert_eq!(z.len(), p, "pinned path must have horizon length");
    assert_eq!(law.horizon(), p, "offspring schedule does not match model horizon");

    // The survival-conditioned draws are only meaningful at positive weight.
    for t in 1..p {
        if weight(t, &z[t - 1])? <= 0.0 {
            return Err(SimError::NonPositivePotential { time: t });
        }
    }

    // Generation 1: spine root at slot 0 (key [1]), free roots at keys [i].
    let mut states = Vec::with_capacity(n1);
    let mut hashes = Vec::with_capacity(n1);
    let mut keys = Vec::with_capacity(n1);
    states.push(z[0].clone());
    hashes.push(stream.extend(stream.root_hash(), 1));
    keys.push(vec![1u32]);
    for slot in 2..=n1 as u32 {
        let kh = stream.extend(stream.root_hash(), slot);
        let mut seq = stream.tree_seq(Tag::RootInit, kh);
        states.push(model.sample_initial(&mut seq));
        hashes.push(kh);
        keys.push(vec![slot]);
    }

    let mut forest = Forest {
        horizon: p,
        generations: vec![Generation { states, offspring: vec![], parent: vec![] }],
        spine: None,
        permutations: None,
    };
    let mut all_keys = vec![keys];
    let mut gen_hashes = vec![hashes];
    let mut total = n1 as u64;

    for k in 1..p {
        let gen_len = forest.generations[k - 1].len();
        let mut counts = Vec::with_capacity(gen_len);
        for (i, (x, &hash)) in
            forest.generations[k - 1].states.iter().zip(&gen_hashes[k - 1]).enumerate()
        {
            let g = weight(k, x)?;
            let w = stream.tree_uniform(Tag::Offspring, hash, 0);
            let a = if i == 0 {
                law.spine_icdf(k + 1, g, w)?
            } else {
                law.offspring_icdf(k + 1, g, w)?
            };
            counts.push(a);
        }
        let n_next: u64 = counts.iter().map(|&a| a as u64).sum();
        total += n_next;
        if total > population_cap {
            return Err(SimError::PopulationCap { cap: population_cap, generation: k + 1 });
        }
        forest.generations[k - 1].offspring = counts;

        let n_next = n_next as usize;
        let mut states = Vec::with_capacity(n_next);
        let mut parent = Vec::with_capacity(n_next);
        let mut hashes = Vec::with_capacity(n_next);
        let mut keys: Vec<Vec<u32>> = Vec::with_capacity(n_next);
        for i in 0..gen_len {
            for rank in 1..=forest.generations[k - 1].offspring[i] {
                let kh = stream.extend(gen_hashes[k - 1][i], rank);
                let mut key = all_keys[k - 1][i].clone();
                key.push(rank);
                if i == 0 && rank == 1 {
                    // The spine child: pinned state, key of all ones.
                    states.push(z[k].clone());
                } else {
                    let mut seq = stream.tree_seq(Tag::Transition, kh);
                    states.push(
                        model.sample_transition(&forest.generations[k - 1].states[i], &mut seq),
                    );
                }
                parent.push(i);
                hashes.push(kh);
                keys.push(key);
            }
        }
        forest.generations.push(Generation { states, offspring: vec![], parent });
        all_keys.push(keys);
        gen_hashes.push(hashes);
    }

    forest.spine = Some(vec![0; p]);
    debug_assert!(forest.validate().is_ok());
    Ok(ConditionalForest { forest, keys: all_keys })
}

/// Classify horizon particles by the spine slot their ancestry hangs off.
///
/// The identity `total = 1 + sum(per_spine) + common` holds exactly: every
/// horizon particle other than the spine either left the spine at some slot
/// t <= P-1 or descends from a non-spine root.
pub fn descendant_counts<S>(cond: &ConditionalForest<S>) -> DescendantCounts {
    let forest = &cond.forest;
    let p = forest.horizon;
    debug_assert!(forest.survived());
    let mut per_spine = vec![0u64; p - 1];
    let mut common = 0u64;
    let leaves = forest.generations[p - 1].len();
    for leaf in 0..leaves {
        let (mut gi, mut idx) = (p - 1, leaf);
        if idx == 0 {
            continue; // the spine particle itself
        }
        loop {
            if gi == 0 {
                common += 1;
                break;
            }
            let up = forest.generations[gi].parent[idx];
            if up == 0 {
                // First spine ancestor: the line attaches at time gi.
                per_spine[gi - 1] += 1;
                break;
            }
            idx = up;
            gi -= 1;
        }
    }
    DescendantCounts { total: leaves as u64, per_spine, common }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{unit_law, ParityWalk};
    use std::collections::HashMap;

    fn walk_path(p: usize, seed: u64) -> Vec<i64> {
        // An arbitrary valid +-1 path from the origin.
        let stream = KeyedStream::new(seed, 99);
        let mut z = vec![0i64];
        for t in 0..p - 1 {
            let u = stream.flat_uniform(Tag::Path, &[t as u64], 0);
            z.push(z[t] + if u < 0.5 { -1 } else { 1 });
        }
        z
    }

    #[test]
    fn saturated_weights_pin_parallel_chains() {
        let model = ParityWalk { p: 5, lo: 1.0 };
        let law = unit_law(5, 1);
        let z = walk_path(5, 1);
        let stream = KeyedStream::new(8, 0);
        let cond = build_conditional(&model, &law, &stream, &z, 3, 1_000_000).unwrap();
        for k in 1..=5 {
            assert_eq!(cond.forest.population(k), 3);
        }
        assert_eq!(cond.forest.spine_path().unwrap(), z);
        // Spine keys are all ones.
        for gi in 0..5 {
            assert!(cond.key(gi, 0).iter().all(|&r| r == 1));
            assert_eq!(cond.key(gi, 0).len(), gi + 1);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let model = ParityWalk { p: 6, lo: 0.6 };
        let law = unit_law(6, 3);
        let z = walk_path(6, 2);
        for seed in 0..30 {
            let stream = KeyedStream::new(seed, 5);
            let a = build_conditional(&model, &law, &stream, &z, 2, 1_000_000).unwrap();
            let b = build_conditional(&model, &law, &stream, &z, 2, 1_000_000).unwrap();
            assert_eq!(a, b);
            a.forest.validate().unwrap();
        }
    }

    #[test]
    fn perturbing_one_coordinate_only_touches_its_side_subtrees() {
        let model = ParityWalk { p: 6, lo: 0.6 };
        let law = unit_law(6, 3);
        let stream = KeyedStream::new(21, 0);
        let z = walk_path(6, 3);
        let t = 3usize; // perturbed time
        let mut z2 = z.clone();
        z2[t - 1] += 2; // keep parity so potentials stay comparable

        let a = build_conditional(&model, &law, &stream, &z, 1, 1_000_000).unwrap();
        let b = build_conditional(&model, &law, &stream, &z2, 1, 1_000_000).unwrap();

        let index = |c: &ConditionalForest<i64>| -> HashMap<Vec<u32>, (i64, Option<u32>)> {
            c.iter_keys()
                .map(|(key, gi, i)| {
                    let count = c.forest.generations[gi].offspring.get(i).copied();
                    (key.to_vec(), (c.forest.generations[gi].states[i], count))
                })
                .collect()
        };
        let ia = index(&a);
        let ib = index(&b);

        // A key is exempt if it is the spine slot at time t or lies in a side
        // subtree hanging off that slot.
        let exempt = |key: &[u32]| -> bool {
            if key.len() == t && key.iter().all(|&r| r == 1) {
                return true;
            }
            key.len() > t && key[..t].iter().all(|&r| r == 1) && key[t] != 1
        };

        for (key, val) in &ia {
            if exempt(key) {
                continue;
            }
            match ib.get(key) {
                Some(v) => assert_eq!(v, val, "mismatch outside the perturbed subtree at {key:?}"),
                None => panic!("key {key:?} missing after perturbation"),
            }
        }
        for key in ib.keys() {
            if !exempt(key) {
                assert!(ia.contains_key(key), "new key {key:?} outside the perturbed subtree");
            }
        }

        // Spine offspring counts never react to the path.
        for gi in 0..5 {
            assert_eq!(a.forest.generations[gi].offspring[0], b.forest.generations[gi].offspring[0]);
        }
    }

    #[test]
    fn majorant_forest_embeds_the_base_forest() {
        let model = ParityWalk { p: 6, lo: 0.5 };
        let law = unit_law(6, 3);
        let z = walk_path(6, 7);
        for seed in 0..40 {
            let stream = KeyedStream::new(seed, 1);
            let base = build_conditional(&model, &law, &stream, &z, 2, 1_000_000).unwrap();

            // Identity majorant: bitwise identical forest.
            let same = build_majorized(&model, &law, &stream, &z, 2, 1_000_000, &|t, x| {
                let _ = t;
                model.potential(t, x)
            })
            .unwrap();
            assert_eq!(base, same);

            // Saturating majorant: keys of the base forest embed with equal
            // states.
            let big = build_majorized(&model, &law, &stream, &z, 2, 1_000_000, &|_, _| 1.0).unwrap();
            let big_index: HashMap<Vec<u32>, i64> = big
                .iter_keys()
                .map(|(key, gi, i)| (key.to_vec(), big.forest.generations[gi].states[i]))
                .collect();
            for (key, gi, i) in base.iter_keys() {
                let state = base.forest.generations[gi].states[i];
                assert_eq!(big_index.get(key), Some(&state), "missing or moved key {key:?}");
            }
            assert!(big.forest.total_particles() >= base.forest.total_particles());
        }
    }

    #[test]
    fn majorant_below_potential_is_rejected() {
        let model = ParityWalk { p: 4, lo: 0.5 };
        let law = unit_law(4, 2);
        let z = walk_path(4, 4);
        let stream = KeyedStream::new(2, 0);
        let r = build_majorized(&model, &law, &stream, &z, 1, 1_000_000, &|_, x| {
            if x.rem_euclid(2) == 0 {
                0.9
            } else {
                0.5
            }
        });
        assert!(matches!(r, Err(SimError::MajorantBelowPotential { .. })));
    }

    #[test]
    fn descendant_classification_partitions_the_horizon() {
        let model = ParityWalk { p: 7, lo: 0.7 };
        let law = unit_law(7, 3);
        for seed in 0..60 {
            let stream = KeyedStream::new(seed, 2);
            let z = walk_path(7, seed + 100);
            let cond = build_conditional(&model, &law, &stream, &z, 3, 1_000_000).unwrap();
            let d = descendant_counts(&cond);
            assert_eq!(d.total, cond.total_leaves() as u64);
            assert_eq!(d.total, 1 + d.per_spine.iter().sum::<u64>() + d.common);
            assert_eq!(d.per_spine.len(), 6);
        }
    }

    #[test]
    fn parallel_chain_descendants() {
        // Saturated weights, q = 1, three roots: the horizon holds the spine
        // plus one leaf per free root and no side lines at all.
        let model = ParityWalk { p: 5, lo: 1.0 };
        let law = unit_law(5, 1);
        let z = walk_path(5, 9);
        let stream = KeyedStream::new(3, 0);
        let cond = build_conditional(&model, &law, &stream, &z, 3, 1_000_000).unwrap();
        let d = descendant_counts(&cond);
        assert_eq!(d.total, 3);
        assert_eq!(d.common, 2);
        assert!(d.per_spine.iter().all(|&c| c == 0));
    }

    #[test]
    fn zero_weight_on_the_path_is_rejected() {
        let model = ParityWalk { p: 4, lo: 0.0 };
        let law = unit_law(4, 2);
        // Force the path onto an odd (zero-weight) site at time 2.
        let z = vec![0i64, 1, 0, 1];
        let stream = KeyedStream::new(1, 0);
        assert!(matches!(
            build_conditional(&model, &law, &stream, &z, 1, 1_000_000),
            Err(SimError::NonPositivePotential { time: 2 })
        ));
    }

    #[test]
    fn population_cap_aborts_the_build() {
        let model = ParityWalk { p: 12, lo: 1.0 };
        let law = unit_law(12, 4);
        let z = walk_path(12, 5);
        let stream = KeyedStream::new(17, 0);
        assert!(matches!(
            build_conditional(&model, &law, &stream, &z, 1, 40),
            Err(SimError::PopulationCap { cap: 40, .. })
        ));
    }
}
