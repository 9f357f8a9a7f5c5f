//! Asynchronous tournament evolution with aging.
//!
//! Agents are numbered in creation order. After the initial population of
//! `P` is trained, each tournament samples four agents from the id window
//! `[T*G, Q)`, mutates the fittest, and trains the child from scratch. The
//! sliding window is the aging mechanism: once an agent's id falls below
//! `T*G` it never competes again, whatever its fitness.

mod registry;
mod worker;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{mutate_with_rng, MorphologyGenome, MutationOp};
use crate::ppo::Fitness;
use crate::rng::Rng;

pub use registry::{
    AgentRecord, AgentStatus, Claim, LogEntry, Record, Registry, RegistryError, RegistryState, REGISTRY_FILE,
};
pub use worker::{
    agent_paths, claim_slot, now_ms, release_foreign_claims, slot_seeds, worker_loop, AgentPaths, Assignment,
    ClaimOutcome, FaultPlan, SeedMode, SlotSeeds, WorkerContext, WorkerError, WorkerSummary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Initial population size (P).
    pub population_size: u64,
    /// Tournaments per generation (T).
    pub tournaments_per_generation: u64,
    /// Worker count (W).
    pub workers: u32,
    /// Generation cap (G_max).
    pub max_generations: u64,
    pub tournament_size: usize,
    /// Lower bound on a slot claim's lease.
    pub lease_floor_secs: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 100,
            tournaments_per_generation: 50,
            workers: 10,
            max_generations: 10,
            tournament_size: 4,
            lease_floor_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvolutionConfigError {
    #[error("evolution.population_size ({p}) must be at least the tournament size ({size})")]
    PopulationTooSmall { p: u64, size: usize },
    #[error("evolution.{0} must be at least 1")]
    Zero(&'static str),
    #[error("evolution.lease_floor_secs must be positive and finite")]
    LeaseFloor,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionConfigError> {
        if self.tournament_size == 0 {
            return Err(EvolutionConfigError::Zero("tournament_size"));
        }
        if self.tournaments_per_generation == 0 {
            return Err(EvolutionConfigError::Zero("tournaments_per_generation"));
        }
        if self.workers == 0 {
            return Err(EvolutionConfigError::Zero("workers"));
        }
        if self.population_size < self.tournament_size as u64 {
            return Err(EvolutionConfigError::PopulationTooSmall {
                p: self.population_size,
                size: self.tournament_size,
            });
        }
        if !(self.lease_floor_secs > 0.0 && self.lease_floor_secs.is_finite()) {
            return Err(EvolutionConfigError::LeaseFloor);
        }
        Ok(())
    }

    /// Agents in a finished run: `P + T * G_max`.
    pub fn final_agent_count(&self) -> u64 {
        self.population_size + self.tournaments_per_generation * self.max_generations
    }

    /// Generation a tournament slot's child belongs to. Slots are agent ids,
    /// so the initial population is generation 0 as well.
    pub fn slot_generation(&self, slot: u64) -> u64 {
        slot.saturating_sub(self.population_size) / self.tournaments_per_generation
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("initial population incomplete: Q={q} < P={p}")]
    IncompletePopulation { q: u64, p: u64 },
    #[error("tournaments per generation must be at least 1")]
    ZeroTournaments,
}

/// `G = floor((Q - P) / T)`.
pub fn current_generation(q: u64, p: u64, t: u64) -> Result<u64, GenerationError> {
    if t == 0 {
        return Err(GenerationError::ZeroTournaments);
    }
    if q < p {
        return Err(GenerationError::IncompletePopulation { q, p });
    }
    Ok((q - p) / t)
}

/// The half-open id window `[T*G, Q)` that tournaments sample from.
pub fn eligibility_window(q: u64, p: u64, t: u64) -> Result<std::ops::Range<u64>, GenerationError> {
    let g = current_generation(q, p, t)?;
    Ok(t * g..q)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("eligible pool has {available} agents, a tournament needs {needed}; wait for running workers")]
    Wait { available: usize, needed: usize },
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// Finished agents (trained or failed) inside the window `[T*G, Q)`, where Q
/// counts finished agents. Diverged agents stay in the pool; they just lose.
pub fn eligible_pool(state: &RegistryState, config: &EvolutionConfig) -> Result<Vec<u64>, PoolError> {
    let q = state.finished_count();
    let window = eligibility_window(q, config.population_size, config.tournaments_per_generation)?;
    pool_in(state, window, config.tournament_size)
}

/// The pool a generation-`g` tournament sees in deterministic mode: the
/// eligible pool as it stood at the instant generation `g` began
/// (`Q = P + T*g`). Waits until every agent below that Q has finished.
pub fn generation_pool(state: &RegistryState, config: &EvolutionConfig, generation: u64) -> Result<Vec<u64>, PoolError> {
    let q = config.population_size + config.tournaments_per_generation * generation;
    let finished = state.agents.range(..q).count();
    if finished < q as usize {
        return Err(PoolError::Wait { available: finished, needed: q as usize });
    }
    let window = eligibility_window(q, config.population_size, config.tournaments_per_generation)?;
    pool_in(state, window, config.tournament_size)
}

fn pool_in(state: &RegistryState, window: std::ops::Range<u64>, needed: usize) -> Result<Vec<u64>, PoolError> {
    let pool: Vec<u64> = state.agents.range(window).map(|(id, _)| *id).collect();
    if pool.len() < needed {
        return Err(PoolError::Wait { available: pool.len(), needed });
    }
    Ok(pool)
}

/// Highest fitness wins; equal fitness goes to the lower id. Diverged
/// contestants rank below every finite fitness.
pub fn select_winner(contestants: &[(u64, Fitness)]) -> Option<u64> {
    contestants
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| *id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentOutcome {
    /// Sampled agents, in draw order.
    pub contestants: Vec<u64>,
    pub winner: u64,
    pub child: MorphologyGenome,
    pub mutation: MutationOp,
}

/// Samples `tournament_size` distinct agents from `pool`, picks the winner
/// and mutates it once.
pub fn run_tournament(
    state: &RegistryState,
    pool: &[u64],
    config: &EvolutionConfig,
    rng: &mut Rng,
) -> Result<TournamentOutcome, PoolError> {
    if pool.len() < config.tournament_size {
        return Err(PoolError::Wait { available: pool.len(), needed: config.tournament_size });
    }
    let contestants: Vec<u64> = pool.choose_multiple(rng, config.tournament_size).copied().collect();
    let scored: Vec<(u64, Fitness)> = contestants.iter().map(|id| (*id, state.agents[id].fitness)).collect();
    let winner = select_winner(&scored).expect("tournament is non-empty");
    let (child, mutation) = mutate_with_rng(&state.agents[&winner].genome, rng);
    Ok(TournamentOutcome { contestants, winner, child, mutation })
}
