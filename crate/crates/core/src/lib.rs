//! Evolutionary locomotion: procedurally generated articulated agents learn
//! to walk with PPO in a planar simulator, then evolve through asynchronous
//! tournament selection with aging.

pub mod env;
pub mod evolution;
pub mod morphology;
pub mod nn;
pub mod orchestrator;
pub mod physics;
pub mod ppo;
pub mod rng;

pub use env::{EnvConfig, LocomotionEnv, RewardWeights, VectorEnv};
pub use evolution::{AgentRecord, EvolutionConfig, Registry, RegistryState, SeedMode};
pub use morphology::{
    deserialize_genome, generate_random, initialize_population, mutate, pendulum_walker, serialize_genome,
    topological_signature, LimbGene, MorphologyGenome, MutationOp, TopologicalSignature,
};
pub use orchestrator::{run_experiment, RunConfig, RunOptions, RunSummary};
pub use physics::WorldConfig;
pub use ppo::{train_agent, Fitness, FitnessReport, PolicyParams, PpoConfig, TrainingConfig};
