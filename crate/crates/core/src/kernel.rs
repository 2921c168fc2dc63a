//! The path-space Metropolis transition and the backward-coupling sampler.
//!
//! One transition at stream U works on the target law pi directly: grow the
//! forest pinned along the current path z (population N_P(z,U)), grow a free
//! proposal forest with a uniformly tagged horizon particle (population
//! N̄_P(U), spine z̄), and accept z̄ with probability min(1, N̄_P/N_P). The
//! extended-space densities cancel so exactly that the ratio involves only
//! the two populations; pi is invariant.
//!
//! Crucially, the proposal and the acceptance uniform V read tags that never
//! depend on z, so for a fixed stream the transition is the random map
//! z -> F_U(z) with a *common* accept event candidate. Given a certified
//! bound M(U) >= N_P(z,U) for all admissible z, the event
//! V <= N̄_P(U)/M(U) forces acceptance simultaneously for every z — the map
//! coalesces to the single point z̄(U). Scanning streams backward
//! (depths 0, 1, 2, ...) until that event fires and composing the maps
//! forward from the coalescence depth yields a draw whose law is exactly pi,
//! with no burn-in and no approximation.

use crate::bounds::BoundCertificate;
use crate::conditional::build_conditional;
use crate::error::{SimError, SimResult};
use crate::forest::{sample_proposal, ProposalOutcome};
use crate::model::{Model, OffspringLaw};
use crate::rng::{KeyedStream, Tag};
use serde::{Deserialize, Serialize};

/// Run-size knobs shared by the kernel drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Root count of every forest (pinned and proposal).
    pub n1: usize,
    /// Cap on total particles per forest build.
    pub population_cap: u64,
    /// Backward depths scanned before giving up.
    pub depth_cap: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { n1: 1, population_cap: 1 << 32, depth_cap: 10_000 }
    }
}

/// Everything one Metropolis transition saw and decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord<S> {
    pub input: Vec<S>,
    /// N_P(z, U): horizon population of the forest pinned along the input.
    pub conditional_population: u64,
    /// N̄_P(U): horizon population of the proposal forest (0 = died).
    pub proposal_population: u64,
    /// V(U).
    pub accept_uniform: f64,
    /// min(1, N̄_P / N_P).
    pub threshold: f64,
    pub accepted: bool,
    pub output: Vec<S>,
}

/// One backward depth of a coupling scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub depth: usize,
    /// N̄_P(U_{-depth}); 0 when the proposal died.
    pub proposal_population: u64,
    /// M(U_{-depth}), the certified path-uniform bound.
    pub bound: u64,
    /// V(U_{-depth}).
    pub accept_uniform: f64,
}

impl DepthRecord {
    /// The coalescence test this depth was subjected to.
    pub fn coalesced(&self) -> bool {
        self.proposal_population > 0
            && self.accept_uniform <= self.proposal_population as f64 / self.bound as f64
    }
}

/// An exact draw with its complete backward-scan audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CftpResult<S> {
    pub seed: u64,
    /// First backward depth whose accept event fired.
    pub coalescence_depth: usize,
    pub path: Vec<S>,
    /// One record per scanned depth, 0..=coalescence_depth.
    pub records: Vec<DepthRecord>,
}

/// A Metropolis trajectory (diagnostic driver; for exact draws use
/// [`cftp_sample`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult<S> {
    /// n_steps + 1 paths, starting at the initial one.
    pub paths: Vec<Vec<S>>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
}

/// min(1, proposal/conditional), the Metropolis threshold. The pinned forest
/// always carries its spine to the horizon, so a zero conditional population
/// is a structural impossibility, not a score.
pub fn acceptance_ratio(conditional_population: u64, proposal_population: u64) -> SimResult<f64> {
    if conditional_population == 0 {
        return Err(SimError::Structural {
            reason: "conditional forest reported zero horizon population".into(),
        });
    }
    Ok((proposal_population as f64 / conditional_population as f64).min(1.0))
}

/// One pi-invariant transition from `z` under the given stream.
///
/// The pinned build reads genealogy-keyed tags, the proposal a flat cursor
/// under its own tag, and V a single flat draw — three disjoint tag groups,
/// so the proposal and V are the same no matter what `z` is. A dead proposal
/// yields threshold 0 and V in (0,1) never accepts it.
pub fn metropolis_step<M: Model>(
    model: &M,
    law: &OffspringLaw,
    params: &KernelParams,
    z: &[M::State],
    stream: &KeyedStream,
) -> SimResult<TransitionRecord<M::State>> {
    let cond = build_conditional(model, law, stream, z, params.n1, params.population_cap)?;
    let conditional_population = cond.total_leaves() as u64;

    let proposal = sample_proposal(model, law, stream, params.n1, params.population_cap)?;
    let proposal_population = proposal.final_population() as u64;

    let accept_uniform = stream.flat_uniform(Tag::Accept, &[], 0);
    let threshold = acceptance_ratio(conditional_population, proposal_population)?;
    let accepted = accept_uniform <= threshold;
    let output = if accepted {
        match &proposal {
            ProposalOutcome::Survived(f) => f.spine_path().expect("surviving proposal has a spine"),
            ProposalOutcome::Died { .. } => unreachable!("dead proposal has threshold 0"),
        }
    } else {
        z.to_vec()
    };
    Ok(TransitionRecord {
        input: z.to_vec(),
        conditional_population,
        proposal_population,
        accept_uniform,
        threshold,
        accepted,
        output,
    })
}

/// Draw one exact sample from the target path law.
///
/// `bound` must yield, for each depth's stream, a certified M(u) dominating
/// the pinned-forest population for every admissible path (see the bounds
/// module). The scan walks depths 0, 1, 2, ... drawing only path-independent
/// quantities — proposal population, bound, accept uniform — and stops at the
/// first depth T whose accept event is unconditional. The forward pass then
/// applies the transition at depths T, T-1, ..., 0; its depth-T input is the
/// depth-T proposal spine (any admissible path gives the same composition,
/// which a paired-start check in the tests confirms), and the realized
/// population there is verified against M as a runtime certificate.
pub fn cftp_sample<M, F>(
    model: &M,
    law: &OffspringLaw,
    params: &KernelParams,
    seed: u64,
    bound: F,
) -> SimResult<CftpResult<M::State>>
where
    M: Model,
    F: Fn(&KeyedStream) -> SimResult<BoundCertificate>,
{
    let mut records: Vec<DepthRecord> = Vec::new();
    let mut coalescence: Option<(usize, Vec<M::State>)> = None;
    let mut best_ratio = 0.0f64;
    let mut dead = 0usize;

    for depth in 0..=params.depth_cap {
        let stream = KeyedStream::new(seed, depth as u64);
        let proposal = sample_proposal(model, law, &stream, params.n1, params.population_cap)?;
        let (proposal_population, spine) = match &proposal {
            ProposalOutcome::Survived(f) => (
                f.final_population() as u64,
                Some(f.spine_path().expect("surviving proposal has a spine")),
            ),
            ProposalOutcome::Died { .. } => (0, None),
        };
        let cert = bound(&stream)?;
        debug_assert!(cert.decomposition_holds());
        let accept_uniform = stream.flat_uniform(Tag::Accept, &[], 0);
        let record = DepthRecord {
            depth,
            proposal_population,
            bound: cert.bound,
            accept_uniform,
        };
        let fired = record.coalesced();
        if proposal_population == 0 {
            dead += 1;
        } else {
            best_ratio = best_ratio.max(proposal_population as f64 / cert.bound as f64);
        }
        records.push(record);
        if fired {
            coalescence = Some((depth, spine.expect("a fired event implies survival")));
            break;
        }
    }

    let Some((t, start)) = coalescence else {
        return Err(SimError::DepthCap {
            cap: params.depth_cap,
            best_ratio,
            scanned: records.len(),
            dead,
        });
    };

    let mut z = start;
    for depth in (0..=t).rev() {
        let stream = KeyedStream::new(seed, depth as u64);
        let step = metropolis_step(model, law, params, &z, &stream)?;
        if depth == t {
            // The stopping event promised V <= N̄/M <= N̄/N_P(z); a rejection
            // here can only mean the certificate under-covered this path.
            if step.conditional_population > records[t].bound {
                return Err(SimError::Structural {
                    reason: format!(
                        "bound certificate violated at depth {t}: realized population {} \
                         exceeds M = {}",
                        step.conditional_population, records[t].bound
                    ),
                });
            }
            assert!(step.accepted, "unconditional accept event failed to accept");
        }
        z = step.output;
    }

    Ok(CftpResult { seed, coalescence_depth: t, path: z, records })
}

/// Iterate the transition from `z0` with one stream per step (diagnostics,
/// burn-in studies; the law of step n is pi only asymptotically).
pub fn mcmc_chain<M: Model>(
    model: &M,
    law: &OffspringLaw,
    params: &KernelParams,
    seed: u64,
    z0: &[M::State],
    n_steps: usize,
) -> SimResult<ChainResult<M::State>> {
    let mut paths = Vec::with_capacity(n_steps + 1);
    paths.push(z0.to_vec());
    let mut accepted = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let stream = KeyedStream::new(seed, step as u64);
        let record = metropolis_step(model, law, params, paths.last().unwrap(), &stream)?;
        accepted.push(record.accepted);
        paths.push(record.output);
    }
    let acceptance_rate = if n_steps == 0 {
        0.0
    } else {
        accepted.iter().filter(|&&a| a).count() as f64 / n_steps as f64
    };
    Ok(ChainResult { paths, accepted, acceptance_rate })
}
