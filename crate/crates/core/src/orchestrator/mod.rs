//! Run configuration, presets and the staged pipeline
//! init -> train -> evolve -> analyze.

mod analysis;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{
    release_foreign_claims, worker_loop, FaultPlan, Registry, RegistryError, SeedMode, WorkerContext, WorkerError,
    WorkerSummary,
};
use crate::ppo::Fitness;

pub use analysis::{
    analyze_diversity, analyze_mutation_cycles, export_learning_curves, founder_ids, lineages_svg, write_diversity,
    write_mutation_cycles, CurveExport, DiversityRow, FitnessSummaryRow, LineageStats, MutationCycleRow,
};
pub use config::{ConfigError, Preset, RunConfig, TrainingSection, CONFIG_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Train,
    Evolve,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Init, Stage::Train, Stage::Evolve, Stage::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Train => "train",
            Stage::Evolve => "evolve",
            Stage::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stages to execute, in pipeline order.
    pub stages: Vec<Stage>,
    /// Continue an interrupted run: claims left by earlier sessions are
    /// released immediately instead of waiting out their leases.
    pub resume: bool,
    pub seed_mode: SeedMode,
    pub faults: FaultPlan,
}

impl RunOptions {
    pub fn all() -> Self {
        RunOptions { stages: Stage::ALL.to_vec(), ..RunOptions::default() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl RunError {
    fn stage(stage: Stage, e: impl std::fmt::Display) -> Self {
        RunError::Stage { stage: stage.name(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub seed_mode: SeedMode,
    pub session: String,
    pub stages: Vec<StageTiming>,
    pub agent_count: u64,
    pub best_agent: Option<u64>,
    pub best_fitness: Option<Fitness>,
    pub population_digest: String,
    pub warnings: Vec<String>,
    pub workers: Vec<WorkerSummary>,
}

fn session_id() -> String {
    format!("{}-{}", std::process::id(), crate::evolution::now_ms())
}

/// Creates the run directory, or checks an existing one: its stored config
/// must match, and reuse must be allowed.
fn init_dir(config: &RunConfig, resume_ok: bool) -> Result<(), ConfigError> {
    let dir = &config.output_dir;
    let stored = dir.join(CONFIG_FILE);
    if stored.exists() {
        let previous = RunConfig::load(&stored)?;
        if previous.without_output_dir() != config.without_output_dir() {
            return Err(ConfigError::Mismatch(stored));
        }
        if !resume_ok {
            return Err(ConfigError::AlreadyInitialized(dir.clone()));
        }
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| ConfigError::Io(dir.clone(), e))?;
    fs::write(&stored, config.to_toml()).map_err(|e| ConfigError::Io(stored.clone(), e))?;
    Ok(())
}

fn run_workers(
    ctx: &WorkerContext,
    stage: Stage,
    slots: std::ops::Range<u64>,
) -> Result<Vec<WorkerSummary>, RunError> {
    let results: Vec<Result<WorkerSummary, WorkerError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..ctx.evolution.workers)
            .map(|w| {
                let slots = slots.clone();
                s.spawn(move || worker_loop(w, ctx, slots))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut out = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(e) => {
                log::error!("{e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(out),
        // A crashed worker is survivable as long as the others drained the
        // slot range; the registry decides.
        Some(WorkerError::Crashed(_)) => Ok(out),
        Some(e) => Err(RunError::stage(stage, e)),
    }
}

/// Executes the requested stages. Interrupted runs resume from the
/// registry; in deterministic seed mode the result is identical to an
/// uninterrupted run.
pub fn run_experiment(config: &RunConfig, options: &RunOptions) -> Result<RunSummary, RunError> {
    config.validate()?;
    let dir = config.output_dir.clone();
    let mut warnings = Vec::new();
    if let crate::env::ScalingCheck::Warning(w) = config.training_config().scaling_check() {
        log::warn!("{w}");
        warnings.push(w);
    }
    let session = session_id();
    let mut timings = Vec::new();
    let mut workers = Vec::new();
    let stages = {
        let mut s = options.stages.clone();
        s.sort();
        s.dedup();
        s
    };
    if !stages.contains(&Stage::Init) {
        if dir.join(CONFIG_FILE).exists() || stages.iter().any(|s| *s != Stage::Analyze) {
            init_dir(config, true)?;
        } else {
            return Err(ConfigError::NotInitialized(dir).into());
        }
    }
    let mut ctx = WorkerContext::new(
        &dir,
        config.evolution.clone(),
        config.training_config(),
        config.seed,
        options.seed_mode,
        session.clone(),
    )
    .map_err(|e| RunError::stage(Stage::Init, e))?;
    ctx.faults = options.faults.clone();
    let p = config.evolution.population_size;
    let total = config.evolution.final_agent_count();
    let mut released = false;

    for stage in stages {
        let started = Instant::now();
        if stage == Stage::Init {
            init_dir(config, options.resume)?;
        }
        if options.resume && !released && stage != Stage::Analyze {
            let mut reg = Registry::open(&dir).map_err(|e| RunError::stage(stage, e))?;
            let n = release_foreign_claims(&mut reg, &session).map_err(|e| RunError::stage(stage, e))?;
            if n > 0 {
                log::info!("released {n} claims left by an earlier session");
            }
            released = true;
        }
        match stage {
            Stage::Init => {
                Registry::open(&dir).map_err(|e| RunError::stage(stage, e))?;
            }
            Stage::Train => workers.extend(run_workers(&ctx, stage, 0..p)?),
            Stage::Evolve => {
                let state = Registry::load(&dir).map_err(|e| RunError::stage(stage, e))?;
                if state.agents.range(..p).count() as u64 != p {
                    return Err(RunError::stage(stage, "initial population is not fully trained; run `train` first"));
                }
                workers.extend(run_workers(&ctx, stage, p..total)?);
            }
            Stage::Analyze => {
                let state = Registry::load(&dir).map_err(|e| RunError::stage(stage, e))?;
                write_analysis(&dir, &state, config).map_err(|e| RunError::stage(stage, e))?;
            }
        }
        timings.push(StageTiming { stage, seconds: started.elapsed().as_secs_f64() });
    }

    let state = Registry::load(&dir).map_err(|e: RegistryError| RunError::stage(Stage::Analyze, e))?;
    for stage in [Stage::Train, Stage::Evolve] {
        if !timings.iter().any(|t| t.stage == stage) {
            continue;
        }
        let want = if stage == Stage::Train { p } else { total };
        let have = state.agents.range(..want).count() as u64;
        if have != want {
            return Err(RunError::stage(stage, format!("{have} of {want} agents finished")));
        }
    }
    let best = state.agents.values().max_by(|a, b| a.fitness.total_cmp(&b.fitness).then(b.agent_id.cmp(&a.agent_id)));
    let summary = RunSummary {
        output_dir: dir.clone(),
        seed: config.seed,
        seed_mode: options.seed_mode,
        session,
        stages: timings,
        agent_count: state.finished_count(),
        best_agent: best.map(|a| a.agent_id),
        best_fitness: best.map(|a| a.fitness),
        population_digest: state.population_digest(),
        warnings,
        workers,
    };
    let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_FILE), json).map_err(|e| RunError::stage(Stage::Analyze, e))?;
    Ok(summary)
}

fn write_analysis(dir: &Path, state: &crate::evolution::RegistryState, config: &RunConfig) -> std::io::Result<()> {
    let cycles = analyze_mutation_cycles(state);
    write_mutation_cycles(&dir.join("mutation_cycles.csv"), &cycles)?;
    let diversity = analyze_diversity(state, &config.evolution);
    write_diversity(&dir.join("diversity.csv"), &diversity)?;
    fs::write(dir.join("lineages.svg"), lineages_svg(state))?;
    export_learning_curves(state, dir)?;
    Ok(())
}
