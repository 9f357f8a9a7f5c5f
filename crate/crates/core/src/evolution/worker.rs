//! Worker loop: claim a slot, produce its agent, commit, repeat.
//!
//! Slot `k` produces agent `k`. Slots below P train the initial population;
//! slot `P + s` runs tournament `s`. A claim carries a lease; an expired
//! lease is released by whichever worker notices it next, and the slot is
//! claimed again. Completing a slot that someone else already completed is
//! a no-op, so a slow worker whose lease lapsed cannot corrupt the log.

use std::fs;
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::{AgentStatus, Record, Registry, RegistryError, RegistryState};
use super::{eligible_pool, generation_pool, run_tournament, EvolutionConfig, PoolError};
use crate::morphology::{initialize_population, serialize_genome, topological_signature, MorphologyGenome, PopulationError};
use crate::ppo::{train_agent, write_policy, Fitness, FitnessReport, PolicyFileError, TrainError, TrainingConfig};
use crate::rng::{derive_seed, rng_from_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Slot seeds derive from the run seed, and a tournament sees the pool
    /// as of the start of its generation. Runs replay bit for bit.
    #[default]
    Deterministic,
    /// Slot seeds mix in the wall clock, and tournaments sample the live
    /// window at claim time.
    WallClock,
}

/// Test hooks that stop workers the way a crash would: the current claim is
/// left in the log and nothing else is written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    /// Every worker stops right after its next claim once this many slots
    /// have completed in the session.
    pub halt_after_completions: Option<u64>,
    /// `(worker, n)`: that worker stops right after its n-th claim.
    pub crash_worker: Option<(u32, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSeeds {
    pub tournament: u64,
    pub training: u64,
}

pub fn slot_seeds(run_seed: u64, slot: u64) -> SlotSeeds {
    SlotSeeds {
        tournament: derive_seed(run_seed, Stream::Tournament, slot),
        training: derive_seed(run_seed, Stream::Training, slot),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPaths {
    pub genome: PathBuf,
    pub policy: PathBuf,
    pub report: PathBuf,
}

pub fn agent_paths(run_dir: &Path, agent_id: u64) -> AgentPaths {
    let dir = run_dir.join("agents");
    AgentPaths {
        genome: dir.join(format!("agent_{agent_id}.xml")),
        policy: dir.join(format!("agent_{agent_id}.policy")),
        report: dir.join(format!("agent_{agent_id}.report.json")),
    }
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("artifact I/O: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Policy(#[from] PolicyFileError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Training(#[from] TrainError),
    #[error("worker {0} halted by fault plan")]
    Halted(u32),
    #[error("worker {0} crashed by fault plan")]
    Crashed(u32),
}

/// Everything a worker needs; shared by reference between worker threads.
#[derive(Debug)]
pub struct WorkerContext {
    pub dir: PathBuf,
    pub evolution: EvolutionConfig,
    pub training: TrainingConfig,
    pub seed: u64,
    pub seed_mode: SeedMode,
    pub session: String,
    pub faults: FaultPlan,
    pub poll_interval: Duration,
    initial_population: Vec<MorphologyGenome>,
    completions: AtomicU64,
}

impl WorkerContext {
    pub fn new(
        dir: &Path,
        evolution: EvolutionConfig,
        training: TrainingConfig,
        seed: u64,
        seed_mode: SeedMode,
        session: String,
    ) -> Result<Self, WorkerError> {
        let initial_population = initialize_population(evolution.population_size as usize, seed)?;
        Ok(WorkerContext {
            dir: dir.to_path_buf(),
            evolution,
            training,
            seed,
            seed_mode,
            session,
            faults: FaultPlan::default(),
            poll_interval: Duration::from_millis(100),
            initial_population,
            completions: AtomicU64::new(0),
        })
    }

    pub fn initial_population(&self) -> &[MorphologyGenome] {
        &self.initial_population
    }

    /// Slots completed by this session so far.
    pub fn completions(&self) -> u64 {
        self.completions.load(Ordering::SeqCst)
    }

    pub fn lease_ms(&self, state: &RegistryState) -> u64 {
        let floor = (self.evolution.lease_floor_secs * 1000.0).ceil() as u64;
        state.median_duration_ms().map_or(floor, |m| floor.max(2 * m))
    }

    fn seeds(&self, slot: u64) -> SlotSeeds {
        match self.seed_mode {
            SeedMode::Deterministic => slot_seeds(self.seed, slot),
            SeedMode::WallClock => slot_seeds(self.seed ^ now_nanos(), slot),
        }
    }
}

fn now_nanos() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

pub fn now_ms() -> u64 {
    now_nanos() / 1_000_000
}

/// What a claimed slot will produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub slot: u64,
    pub genome: MorphologyGenome,
    pub parent_id: Option<u64>,
    pub contestants: Vec<u64>,
    pub mutation: Option<String>,
    pub training_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimOutcome {
    Claimed(Box<Assignment>),
    /// Unfinished slots remain but none can start yet.
    Wait,
    /// Every slot in the range is complete.
    Done,
}

/// Decides the next claim against `state` and returns the records to append:
/// releases for expired leases, then at most one new claim.
pub fn claim_slot(
    state: &RegistryState,
    ctx: &WorkerContext,
    slots: Range<u64>,
    worker: u32,
    now: u64,
) -> (Vec<Record>, ClaimOutcome) {
    let mut records = Vec::new();
    let mut live = |slot: u64| match state.claims.get(&slot) {
        Some(c) if c.lease_expires_ms <= now => {
            records.push(Record::SlotReleased { slot, session: c.session.clone(), reason: "lease expired".into() });
            false
        }
        Some(_) => true,
        None => false,
    };
    let mut pending = false;
    let mut chosen = None;
    for slot in slots.clone() {
        if state.completed.contains(&slot) {
            continue;
        }
        pending = true;
        if live(slot) {
            continue;
        }
        match assignment(state, ctx, slot) {
            Ok(a) => {
                chosen = Some(a);
                break;
            }
            // Later slots need at least as much history as this one.
            Err(_) => break,
        }
    }
    // Expired leases further along still get released.
    if let Some(a) = &chosen {
        for slot in a.slot + 1..slots.end {
            if !state.completed.contains(&slot) {
                live(slot);
            }
        }
    }
    let outcome = match chosen {
        Some(a) => {
            records.push(Record::SlotClaimed {
                slot: a.slot,
                worker,
                session: ctx.session.clone(),
                lease_expires_ms: now + ctx.lease_ms(state),
            });
            ClaimOutcome::Claimed(Box::new(a))
        }
        None if pending => ClaimOutcome::Wait,
        None => ClaimOutcome::Done,
    };
    (records, outcome)
}

fn assignment(state: &RegistryState, ctx: &WorkerContext, slot: u64) -> Result<Assignment, PoolError> {
    let seeds = ctx.seeds(slot);
    let p = ctx.evolution.population_size;
    if slot < p {
        return Ok(Assignment {
            slot,
            genome: ctx.initial_population[slot as usize].clone(),
            parent_id: None,
            contestants: Vec::new(),
            mutation: None,
            training_seed: seeds.training,
        });
    }
    let pool = match ctx.seed_mode {
        SeedMode::Deterministic => generation_pool(state, &ctx.evolution, ctx.evolution.slot_generation(slot))?,
        SeedMode::WallClock => eligible_pool(state, &ctx.evolution)?,
    };
    let mut rng = rng_from_seed(seeds.tournament);
    let t = run_tournament(state, &pool, &ctx.evolution, &mut rng)?;
    Ok(Assignment {
        slot,
        genome: t.child,
        parent_id: Some(t.winner),
        contestants: t.contestants,
        mutation: Some(t.mutation.to_string()),
        training_seed: seeds.training,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Trains the assignment's agent, writes its artifacts, and returns the
/// commit records.
fn produce(ctx: &WorkerContext, a: &Assignment) -> Result<Vec<Record>, WorkerError> {
    let started = Instant::now();
    let outcome = train_agent(&a.genome, &ctx.training, a.training_seed);
    let duration_ms = started.elapsed().as_millis() as u64;
    let paths = agent_paths(&ctx.dir, a.slot);
    fs::create_dir_all(paths.genome.parent().expect("agent dir"))?;
    let xml = serialize_genome(&a.genome);
    write_atomic(&paths.genome, xml.as_bytes())?;
    let (fitness, status, window_steps) = match outcome {
        Ok(out) => {
            write_policy(&paths.policy, &out.params)?;
            let json = serde_json::to_vec_pretty(&out.report).expect("reports serialize");
            write_atomic(&paths.report, &json)?;
            let status = if out.report.diverged { AgentStatus::Failed } else { AgentStatus::Trained };
            (out.report.fitness, status, out.report.window_steps)
        }
        Err(e @ TrainError::Config(_)) => return Err(e.into()),
        Err(e) => {
            log::warn!("agent {} failed to train: {e}", a.slot);
            let report = FitnessReport {
                fitness: Fitness::Diverged,
                window_steps: 0,
                total_steps: ctx.training.total_steps,
                steps_consumed: 0,
                diverged: true,
                learning_curve: Vec::new(),
            };
            write_atomic(&paths.report, &serde_json::to_vec_pretty(&report).expect("reports serialize"))?;
            (Fitness::Diverged, AgentStatus::Failed, 0)
        }
    };
    Ok(vec![
        Record::AgentCreated {
            agent_id: a.slot,
            parent_id: a.parent_id,
            generation: ctx.evolution.slot_generation(a.slot),
            mutation_count: a.genome.mutation_count,
            signature: topological_signature(&a.genome).to_string(),
            genome_xml: xml,
            contestants: a.contestants.clone(),
            mutation: a.mutation.clone(),
        },
        Record::FitnessSet { agent_id: a.slot, fitness, status, window_steps, duration_ms },
        Record::SlotCompleted { slot: a.slot, agent_id: a.slot },
    ])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub worker: u32,
    /// Slots this worker committed.
    pub completed: Vec<u64>,
    /// Slots this worker finished after someone else had committed them.
    pub discarded: Vec<u64>,
    pub waits: u64,
}

/// Claims and runs slots from `slots` until all are complete.
pub fn worker_loop(worker: u32, ctx: &WorkerContext, slots: Range<u64>) -> Result<WorkerSummary, WorkerError> {
    let mut registry = Registry::open(&ctx.dir)?;
    let mut summary = WorkerSummary { worker, ..WorkerSummary::default() };
    let mut claims = 0u64;
    loop {
        let outcome = registry.transact(|state| claim_slot(state, ctx, slots.clone(), worker, now_ms()))?;
        let assignment = match outcome {
            ClaimOutcome::Done => return Ok(summary),
            ClaimOutcome::Wait => {
                summary.waits += 1;
                thread::sleep(ctx.poll_interval);
                continue;
            }
            ClaimOutcome::Claimed(a) => a,
        };
        claims += 1;
        if ctx.faults.crash_worker == Some((worker, claims)) {
            return Err(WorkerError::Crashed(worker));
        }
        if ctx.faults.halt_after_completions.is_some_and(|n| ctx.completions() >= n) {
            return Err(WorkerError::Halted(worker));
        }
        log::info!("worker {worker}: slot {} ({} limbs)", assignment.slot, assignment.genome.limb_count());
        let records = produce(ctx, &assignment)?;
        let slot = assignment.slot;
        let committed = registry.transact(|state| {
            if state.completed.contains(&slot) {
                (Vec::new(), false)
            } else {
                (records, true)
            }
        })?;
        if committed {
            ctx.completions.fetch_add(1, Ordering::SeqCst);
            summary.completed.push(slot);
        } else {
            summary.discarded.push(slot);
        }
    }
}

/// Releases every open claim not held by `session`. Used on resume, when
/// the previous session is known to be gone.
pub fn release_foreign_claims(registry: &mut Registry, session: &str) -> Result<usize, RegistryError> {
    registry.transact(|state| {
        let records: Vec<Record> = state
            .claims
            .values()
            .filter(|c| c.session != session)
            .map(|c| Record::SlotReleased { slot: c.slot, session: c.session.clone(), reason: "resume".into() })
            .collect();
        let n = records.len();
        (records, n)
    })
}
