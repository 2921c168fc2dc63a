//! Exact sampling of weighted path measures.
//!
//! A target law on paths of length P is specified by a Markov proposal and
//! per-time weight functions ("potentials"). Instead of approximating it,
//! this crate simulates a branching forest whose distinguished line is a
//! draw from the *exact* target: a Metropolis kernel on forests combined
//! with a backward coupling scan whose acceptance event is monotone, so the
//! first depth at which the chain coalesces yields an unbiased sample.
//!
//! Layout:
//! * [`rng`] — keyed, counter-based uniforms (pure functions of coordinates);
//! * [`model`] — the model trait, offspring laws and their calibration;
//! * [`forest`] — forest storage, free/proposal/pinned log-densities;
//! * [`conditional`] — keyed construction of forests around a pinned path;
//! * [`bounds`] — certified upper bounds on descendant counts;
//! * [`kernel`] — the Metropolis step, backward coupling, chain driver;
//! * [`apps`] — concrete models: a directed polymer and a Gaussian chain;
//! * [`oracle`] — small-case exact references (enumeration, Kalman, DP);
//! * [`verify`] — end-to-end checks with pinned tolerances.

pub mod apps;
pub mod bounds;
pub mod conditional;
pub mod error;
pub mod forest;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{SimError, SimResult};
