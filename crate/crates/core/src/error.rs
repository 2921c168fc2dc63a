use thiserror::Error;

/// Errors surfaced by samplers, density evaluators and bound providers.
///
/// Domain violations (`PotentialAboveBound`, `NonPositivePotential`) indicate a
/// broken model contract, not bad luck: every potential value fed to an
/// offspring draw is checked against the certified per-step bound at the call
/// site, so a violation is caught the first time it occurs.
#[derive(Debug, Error)]
pub enum SimError {
    /// A potential evaluated above its certified step bound.
    #[error("potential {value} exceeds certified bound {bound} at time {time}")]
    PotentialAboveBound { time: usize, value: f64, bound: f64 },

    /// A spine state carried zero potential, so the conditioned offspring law
    /// is undefined there.
    #[error("conditioning path has zero potential at time {time}")]
    NonPositivePotential { time: usize },

    /// A potential evaluated to a negative or non-finite value.
    #[error("potential {value} at time {time} is not a finite non-negative number")]
    InvalidPotential { time: usize, value: f64 },

    /// Calibration needs strictly positive pilot means.
    #[error("calibration step {time}: pilot mean potential {value} must lie in (0, {bound}]")]
    Calibration { time: usize, value: f64, bound: f64 },

    /// Total population crossed the configured cap while growing a forest.
    #[error("population cap {cap} exceeded at generation {generation}")]
    PopulationCap { cap: u64, generation: usize },

    /// The backward scan gave up before the acceptance event fired.
    #[error(
        "no coalescence within depth cap {cap}: best ratio seen {best_ratio:.3e} \
         over {scanned} depths ({dead} dead proposals)"
    )]
    DepthCap { cap: usize, best_ratio: f64, scanned: usize, dead: usize },

    /// Outward cell scan of a bound provider did not terminate within its cap.
    #[error("bound scan at time {time} exceeded {cap} cells without reaching a certified tail")]
    CellCap { time: usize, cap: u64 },

    /// A forest failed structural validation (counts, parents, spine).
    #[error("inconsistent forest: {reason}")]
    Structural { reason: String },

    /// A supplied dominating potential dipped below the base potential.
    #[error("majorant below potential at time {time}: H={h} < G={g}")]
    MajorantBelowPotential { time: usize, h: f64, g: f64 },

    /// A contraction certificate failed its spot check.
    #[error(
        "contraction violated: |T(x,u)-T(y,u)| = {observed} > {allowed} \
         after {steps} steps from |x-y| = {initial}"
    )]
    ContractionViolated { observed: f64, allowed: f64, steps: usize, initial: f64 },

    /// Every pilot particle carried zero weight at some step.
    #[error("pilot run degenerated: all weights zero at time {time}")]
    PilotDegenerate { time: usize },

    /// Bad run configuration (sizes, horizons, parameter ranges).
    #[error("invalid configuration: {reason}")]
    Config { reason: String },
}

pub type SimResult<T> = Result<T, SimError>;
