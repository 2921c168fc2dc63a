//! Concrete path models and the experiments built on them.

pub mod gaussian;
pub mod polymer;
pub mod scaling;
pub mod smc;
