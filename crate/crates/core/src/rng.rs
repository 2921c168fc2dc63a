//! Counter-based random streams addressed by structured keys.
//!
//! The samplers in this crate never consume randomness sequentially from a
//! stateful generator. Every uniform is a pure function of
//!
//! ```text
//! (seed, depth, tag, key, sub-index)
//! ```
//!
//! where `depth` selects one step of the backward scan, `tag` separates the
//! independent roles a single step needs (conditional-forest transitions and
//! offspring draws, the proposal forest, the accept uniform, ...), and `key`
//! is either a genealogy key — the sequence of birth ranks leading to a
//! particle — or a flat counter. Two invocations with equal coordinates give
//! bitwise-equal results, which is what lets a forest be re-expanded node by
//! node, in any order, while reusing exactly the uniforms of the original
//! construction. Keys that differ in any coordinate give independent draws.
//!
//! Bits are produced by chaining a splitmix64-style finalizer over the
//! absorbed words; the float mapping keeps the top 53 bits and centers them
//! in the unit interval, so draws lie in the open interval (0, 1).

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const DOM_TREE: u64 = 0x7472_6565; // b"tree"
const DOM_FLAT: u64 = 0x666c_6174; // b"flat"

/// splitmix64 finalizer: a 64-bit permutation with full avalanche.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold one word into a running hash state.
#[inline]
pub(crate) fn absorb(state: u64, word: u64) -> u64 {
    mix64(state ^ word.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    // Top 53 bits, centered: (k + 1/2) / 2^53 lies in (0, 1) strictly.
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Derive an independent child seed from a parent seed and coordinates.
///
/// Experiments that fan out into many runs (replicates over a grid of
/// horizons, say) give each run its own seed so that the runs stay
/// independent and each one remains individually replayable. Distinct
/// coordinate slices give unrelated seeds; the same slice always gives the
/// same seed.
pub fn derive_seed(seed: u64, coordinates: &[u64]) -> u64 {
    let mut state = absorb(mix64(seed ^ GOLDEN.rotate_left(17)), seed);
    for &word in coordinates {
        state = absorb(state, word);
    }
    absorb(state, coordinates.len() as u64)
}

/// Independent roles a single stream serves.
///
/// `RootInit`, `Transition` and `Offspring` drive the keyed (conditional)
/// forest construction; `Proposal` feeds the free forest's flat cursor;
/// `Accept` is the one Metropolis uniform of the step; `Permutation` houses
/// the per-generation relabelings; `Pilot` and `Path` serve the pilot runs
/// and plain path sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    RootInit,
    Transition,
    Offspring,
    Proposal,
    Accept,
    Permutation,
    Pilot,
    Path,
}

impl Tag {
    #[inline]
    fn id(self) -> u64 {
        match self {
            Tag::RootInit => 1,
            Tag::Transition => 2,
            Tag::Offspring => 3,
            Tag::Proposal => 4,
            Tag::Accept => 5,
            Tag::Permutation => 6,
            Tag::Pilot => 7,
            Tag::Path => 8,
        }
    }
}

/// Incrementally built hash of a genealogy key.
///
/// Extending a parent's hash by a birth rank equals hashing the child's full
/// key from scratch, so tree walks can carry one `u64` per node instead of
/// the whole rank sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyHash {
    state: u64,
    len: u32,
}

impl KeyHash {
    /// Number of ranks absorbed so far.
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One addressed random stream: the randomness of a single backward-scan step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedStream {
    seed: u64,
    depth: u64,
    tree_base: u64,
    flat_base: u64,
}

impl KeyedStream {
    pub fn new(seed: u64, depth: u64) -> Self {
        let base = absorb(absorb(mix64(GOLDEN ^ seed), seed), depth);
        KeyedStream {
            seed,
            depth,
            tree_base: absorb(base, DOM_TREE),
            flat_base: absorb(base, DOM_FLAT),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    /// Hash state for the empty genealogy key (no ranks absorbed yet).
    #[inline]
    pub fn root_hash(&self) -> KeyHash {
        KeyHash { state: self.tree_base, len: 0 }
    }

    /// Hash of `parent`'s key extended by one birth rank (ranks start at 1).
    #[inline]
    pub fn extend(&self, parent: KeyHash, rank: u32) -> KeyHash {
        debug_assert!(rank >= 1, "genealogy ranks are 1-based");
        KeyHash { state: absorb(parent.state, rank as u64), len: parent.len + 1 }
    }

    /// Hash a full genealogy key.
    pub fn genealogy_hash(&self, key: &[u32]) -> KeyHash {
        let mut h = self.root_hash();
        for &r in key {
            h = self.extend(h, r);
        }
        h
    }

    /// Hash of the all-ones key of the given length (the distinguished line).
    pub fn spine_hash(&self, len: usize) -> KeyHash {
        let mut h = self.root_hash();
        for _ in 0..len {
            h = self.extend(h, 1);
        }
        h
    }

    #[inline]
    fn finish(state: u64, len: u32, tag: Tag, sub: u32) -> u64 {
        let h = absorb(state, ((len as u64) << 8) | tag.id());
        absorb(h, sub as u64)
    }

    /// Uniform addressed by (tag, genealogy key, sub-index).
    #[inline]
    pub fn tree_uniform(&self, tag: Tag, key: KeyHash, sub: u32) -> f64 {
        to_unit(Self::finish(key.state, key.len, tag, sub))
    }

    /// Uniform addressed by a full genealogy key (sub-index 0).
    pub fn uniform_at(&self, tag: Tag, key: &[u32]) -> f64 {
        self.tree_uniform(tag, self.genealogy_hash(key), 0)
    }

    /// Uniform addressed by (tag, flat word list, sub-index).
    #[inline]
    pub fn flat_uniform(&self, tag: Tag, words: &[u64], sub: u32) -> f64 {
        let mut state = self.flat_base;
        for &w in words {
            state = absorb(state, w);
        }
        to_unit(Self::finish(state, words.len() as u32, tag, sub))
    }

    /// Lazily indexed uniforms under one (tag, key): element `i` is
    /// `tree_uniform(tag, key, i)`.
    pub fn tree_seq(&self, tag: Tag, key: KeyHash) -> KeySeq<'_> {
        KeySeq { stream: self, tag, key, next: 0 }
    }

    /// Sequential cursor over flat draws under one tag.
    pub fn flat_cursor(&self, tag: Tag) -> Cursor<'_> {
        Cursor { stream: self, tag, counter: 0 }
    }

    /// The relabeling of `n` slots attached to `generation`.
    ///
    /// For fixed (stream, generation, n) the permutation is a constant;
    /// distinct coordinates give independent uniform permutations.
    pub fn permutation(&self, generation: usize, n: usize) -> Vec<usize> {
        assert!(n >= 1, "permutation of an empty generation is undefined");
        let mut p: Vec<usize> = (0..n).collect();
        for j in (1..n).rev() {
            let u = self.flat_uniform(Tag::Permutation, &[generation as u64, n as u64], j as u32);
            let i = (u * (j as f64 + 1.0)) as usize;
            p.swap(i.min(j), j);
        }
        p
    }
}

/// A source of i.i.d. uniforms; how many a sampler pulls is its own business.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

/// Indexed uniforms under one (stream, tag, genealogy key).
pub struct KeySeq<'a> {
    stream: &'a KeyedStream,
    tag: Tag,
    key: KeyHash,
    next: u32,
}

impl UniformSource for KeySeq<'_> {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        let u = self.stream.tree_uniform(self.tag, self.key, self.next);
        self.next += 1;
        u
    }
}

/// Flat counter cursor under one (stream, tag).
pub struct Cursor<'a> {
    stream: &'a KeyedStream,
    tag: Tag,
    counter: u64,
}

impl UniformSource for Cursor<'_> {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        let u = self.stream.flat_uniform(self.tag, &[self.counter], 0);
        self.counter += 1;
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_deterministic() {
        let a = KeyedStream::new(42, 7);
        let b = KeyedStream::new(42, 7);
        let key = [3u32, 1, 4, 1, 5];
        assert_eq!(
            a.uniform_at(Tag::Transition, &key).to_bits(),
            b.uniform_at(Tag::Transition, &key).to_bits()
        );
        assert_eq!(
            a.flat_uniform(Tag::Proposal, &[99], 2).to_bits(),
            b.flat_uniform(Tag::Proposal, &[99], 2).to_bits()
        );
    }

    #[test]
    fn incremental_hash_equals_full_key_hash() {
        let s = KeyedStream::new(987, 3);
        let key = [2u32, 1, 7, 1];
        let mut h = s.root_hash();
        for &r in &key {
            h = s.extend(h, r);
        }
        assert_eq!(h, s.genealogy_hash(&key));
        assert_eq!(
            s.tree_uniform(Tag::Offspring, h, 0).to_bits(),
            s.uniform_at(Tag::Offspring, &key).to_bits()
        );
    }

    #[test]
    fn coordinates_separate_streams() {
        let s = KeyedStream::new(1, 0);
        let key = [1u32, 2];
        // Same key, different tags.
        assert_ne!(s.uniform_at(Tag::Transition, &key), s.uniform_at(Tag::Offspring, &key));
        // Same tag, sibling keys.
        assert_ne!(s.uniform_at(Tag::Transition, &[1, 2]), s.uniform_at(Tag::Transition, &[1, 3]));
        // A key must not collide with its own extension.
        assert_ne!(s.uniform_at(Tag::Transition, &[1]), s.uniform_at(Tag::Transition, &[1, 1]));
        // Different depth index.
        let t = KeyedStream::new(1, 1);
        assert_ne!(s.uniform_at(Tag::Transition, &key), t.uniform_at(Tag::Transition, &key));
    }

    #[test]
    fn derived_seeds_depend_on_every_coordinate() {
        assert_eq!(derive_seed(9, &[4, 2]), derive_seed(9, &[4, 2]));
        assert_ne!(derive_seed(9, &[4, 2]), derive_seed(9, &[4, 3]));
        assert_ne!(derive_seed(9, &[4, 2]), derive_seed(8, &[4, 2]));
        // Length is part of the identity: a slice must not collide with its
        // own prefix, ruling out accidental nesting collisions.
        assert_ne!(derive_seed(9, &[4]), derive_seed(9, &[4, 0]));
    }

    #[test]
    fn sequences_are_prefix_stable() {
        let s = KeyedStream::new(5, 11);
        let key = s.genealogy_hash(&[2, 2, 1]);
        let take = |n: usize| -> Vec<u64> {
            let mut seq = s.tree_seq(Tag::Transition, key);
            (0..n).map(|_| seq.next_uniform().to_bits()).collect()
        };
        let two = take(2);
        let five = take(5);
        assert_eq!(two[..], five[..2]);
    }

    #[test]
    fn unit_interval_is_open() {
        let s = KeyedStream::new(0, 0);
        for i in 0..10_000u64 {
            let u = s.flat_uniform(Tag::Path, &[i], 0);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn no_bit_collisions_across_tags() {
        let s = KeyedStream::new(1234, 0);
        let mut collisions = 0u32;
        for i in 0..100_000u32 {
            let key = s.genealogy_hash(&[i + 1]);
            let v = s.tree_uniform(Tag::Transition, key, 0);
            let w = s.tree_uniform(Tag::Offspring, key, 0);
            if v.to_bits() == w.to_bits() {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn marginals_are_uniform_by_ks() {
        // Kolmogorov-Smirnov over a million draws across distinct keys;
        // critical value at the 0.1% level is 1.94947 / sqrt(n).
        let s = KeyedStream::new(777, 13);
        let n = 1_000_000usize;
        let mut draws: Vec<f64> = (0..n)
            .map(|i| s.flat_uniform(Tag::Path, &[i as u64], (i % 3) as u32))
            .collect();
        draws.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, x) in draws.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((hi - x).abs());
        }
        let critical = 1.94947 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} over critical value {critical}");
    }

    #[test]
    fn cross_key_correlation_is_flat() {
        // Draws at a key and at its sibling should be uncorrelated.
        let s = KeyedStream::new(31, 2);
        let n = 200_000;
        let mut acc = 0.0f64;
        for i in 0..n {
            let a = s.flat_uniform(Tag::Path, &[i, 0], 0) - 0.5;
            let b = s.flat_uniform(Tag::Path, &[i, 1], 0) - 0.5;
            acc += a * b;
        }
        // Var(ab) = 1/144; four standard errors.
        let tol = 4.0 / 12.0 / (n as f64).sqrt();
        assert!((acc / n as f64).abs() < tol);
    }

    #[test]
    fn permutations_are_fixed_per_coordinate_and_uniform() {
        let s = KeyedStream::new(9, 4);
        assert_eq!(s.permutation(3, 1), vec![0]);
        assert_eq!(s.permutation(5, 4), s.permutation(5, 4));

        // Empirical law over distinct generations: all 6 orderings of n=3
        // within four standard errors of 1/6.
        let trials = 60_000usize;
        let mut counts = [0u32; 6];
        for g in 0..trials {
            let p = s.permutation(g, 3);
            let idx = match (p[0], p[1], p[2]) {
                (0, 1, 2) => 0,
                (0, 2, 1) => 1,
                (1, 0, 2) => 2,
                (1, 2, 0) => 3,
                (2, 0, 1) => 4,
                (2, 1, 0) => 5,
                _ => unreachable!(),
            };
            counts[idx] += 1;
        }
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - p).abs() < 4.0 * se, "permutation frequency {f} too far from 1/6");
        }
    }

    #[test]
    #[should_panic(expected = "empty generation")]
    fn empty_permutation_panics() {
        KeyedStream::new(0, 0).permutation(1, 0);
    }
}
