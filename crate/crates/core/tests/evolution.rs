use std::path::Path;

use evoloco_core::evolution::{
    current_generation, eligible_pool, FaultPlan, Registry, RegistryState, SeedMode, REGISTRY_FILE,
};
use evoloco_core::orchestrator::{run_experiment, RunConfig, RunError, RunOptions, Stage};

fn tiny(dir: &Path, workers: u32) -> RunConfig {
    let mut c = RunConfig::default();
    c.output_dir = dir.to_path_buf();
    c.seed = 11;
    c.evolution.population_size = 4;
    c.evolution.tournaments_per_generation = 2;
    c.evolution.max_generations = 3;
    c.evolution.workers = workers;
    c.evolution.lease_floor_secs = 0.3;
    c.training.num_envs = 2;
    c.training.horizon = 8;
    c.training.total_steps = 64;
    c
}

fn check_lineages(state: &RegistryState) {
    for a in state.agents.values() {
        let mut hops = 0;
        let mut cur = a;
        while let Some(p) = cur.parent_id {
            assert!(p < cur.agent_id);
            cur = &state.agents[&p];
            hops += 1;
        }
        assert_eq!(hops, a.mutation_count, "agent {}", a.agent_id);
        assert!(cur.agent_id < 4);
    }
}

#[test]
fn tiny_run_produces_every_agent_and_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 2);
    let summary = run_experiment(&cfg, &RunOptions::all()).unwrap();
    assert_eq!(summary.agent_count, 10);
    let state = Registry::load(dir.path()).unwrap();
    assert_eq!(state.agents.keys().copied().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
    assert!(state.claims.is_empty());
    check_lineages(&state);
    for id in 0..10 {
        for ext in ["xml", "policy", "report.json"] {
            assert!(dir.path().join(format!("agents/agent_{id}.{ext}")).exists());
        }
        assert!(dir.path().join(format!("curves/agent_{id}.csv")).exists());
    }
    for f in ["mutation_cycles.csv", "diversity.csv", "lineages.svg", "fitness_summary.csv", "summary.json", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // Every tournament drew its contestants from its generation's window.
    for a in state.agents.values().filter(|a| a.parent_id.is_some()) {
        let g = a.created_in_generation;
        assert_eq!(a.contestants.len(), 4);
        for c in &a.contestants {
            assert!((2 * g..4 + 2 * g).contains(c), "agent {} drew {c}", a.agent_id);
        }
    }
    assert_eq!(current_generation(state.finished_count(), 4, 2), Ok(3));
    assert_eq!(eligible_pool(&state, &cfg.evolution).unwrap(), vec![6, 7, 8, 9]);
}

#[test]
fn worker_count_does_not_change_the_result() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = run_experiment(&tiny(a.path(), 1), &RunOptions::all()).unwrap();
    let three = run_experiment(&tiny(b.path(), 3), &RunOptions::all()).unwrap();
    assert_eq!(one.population_digest, three.population_digest);
}

#[test]
fn halted_run_resumes_to_the_same_registry() {
    let a = tempfile::tempdir().unwrap();
    let reference = run_experiment(&tiny(a.path(), 2), &RunOptions::all()).unwrap();

    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(b.path(), 2);
    let faults = FaultPlan { halt_after_completions: Some(6), crash_worker: None };
    let err = run_experiment(&cfg, &RunOptions { faults, ..RunOptions::all() }).unwrap_err();
    assert!(matches!(err, RunError::Stage { stage: "evolve", .. }), "{err}");
    let partial = Registry::load(b.path()).unwrap();
    assert!(partial.finished_count() < 10);
    assert!(!partial.claims.is_empty(), "halted workers leave their claims");

    // Without --resume the existing run is refused.
    assert!(matches!(run_experiment(&cfg, &RunOptions::all()), Err(RunError::Config(_))));
    let resumed = run_experiment(&cfg, &RunOptions { resume: true, ..RunOptions::all() }).unwrap();
    assert_eq!(resumed.population_digest, reference.population_digest);
    let log = std::fs::read_to_string(b.path().join(REGISTRY_FILE)).unwrap();
    assert!(log.contains("\"reason\":\"resume\""));
}

#[test]
fn crashed_worker_slot_is_taken_over_after_its_lease() {
    let a = tempfile::tempdir().unwrap();
    let reference = run_experiment(&tiny(a.path(), 2), &RunOptions::all()).unwrap();
    let b = tempfile::tempdir().unwrap();
    let faults = FaultPlan { halt_after_completions: None, crash_worker: Some((1, 2)) };
    let summary = run_experiment(&tiny(b.path(), 2), &RunOptions { faults, ..RunOptions::all() }).unwrap();
    assert_eq!(summary.agent_count, 10);
    assert_eq!(summary.population_digest, reference.population_digest);
    let log = std::fs::read_to_string(b.path().join(REGISTRY_FILE)).unwrap();
    assert!(log.contains("\"reason\":\"lease expired\""));
}

#[test]
fn stages_run_separately_match_a_full_run() {
    let a = tempfile::tempdir().unwrap();
    let reference = run_experiment(&tiny(a.path(), 2), &RunOptions::all()).unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(b.path(), 2);
    let only = |s: Stage| RunOptions { stages: vec![s], ..RunOptions::default() };
    assert!(matches!(run_experiment(&cfg, &only(Stage::Analyze)), Err(RunError::Config(_))));
    run_experiment(&cfg, &only(Stage::Init)).unwrap();
    let early = run_experiment(&cfg, &only(Stage::Evolve)).unwrap_err();
    assert!(matches!(early, RunError::Stage { stage: "evolve", .. }));
    run_experiment(&cfg, &only(Stage::Train)).unwrap();
    run_experiment(&cfg, &only(Stage::Evolve)).unwrap();
    let done = run_experiment(&cfg, &only(Stage::Analyze)).unwrap();
    assert_eq!(done.population_digest, reference.population_digest);
}

#[test]
fn wall_clock_mode_still_fills_every_slot() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { seed_mode: SeedMode::WallClock, ..RunOptions::all() };
    let summary = run_experiment(&tiny(dir.path(), 2), &opts).unwrap();
    assert_eq!(summary.agent_count, 10);
    check_lineages(&Registry::load(dir.path()).unwrap());
}

#[test]
fn changed_config_is_refused_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 1);
    run_experiment(&cfg, &RunOptions { stages: vec![Stage::Init], ..RunOptions::default() }).unwrap();
    let mut other = cfg.clone();
    other.seed = 12;
    let err = run_experiment(&other, &RunOptions { resume: true, ..RunOptions::all() }).unwrap_err();
    assert!(err.to_string().contains("different configuration"), "{err}");
}
