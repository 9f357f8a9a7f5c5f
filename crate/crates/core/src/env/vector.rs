use super::{EnvError, EpisodeState, LocomotionEnv, StepInfo};
use crate::rng::{derive_seed, Stream};

/// Environment-count times horizon of the reference scaling runs
/// (2048 environments at horizon 64, down to 16384 at horizon 8).
pub const PAPER_ENV_STEP_PRODUCT: usize = 2048 * 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScalingCheck {
    Ok,
    Warning(String),
}

/// Horizon should shrink as the environment count grows so that the batch
/// per update stays constant. Never fails, only warns.
pub fn validate_scaling(envs: usize, horizon: usize, allow_mismatch: bool) -> ScalingCheck {
    let product = envs * horizon;
    if product == PAPER_ENV_STEP_PRODUCT || allow_mismatch {
        ScalingCheck::Ok
    } else {
        ScalingCheck::Warning(format!(
            "{envs} environments x horizon {horizon} = {product} steps per update; the scaling rule keeps \
             this at {PAPER_ENV_STEP_PRODUCT} (try horizon {})",
            (PAPER_ENV_STEP_PRODUCT / envs.max(1)).max(1)
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStep {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub infos: Vec<StepInfo>,
}

/// `M` independent episodes of one task. Finished instances are reset
/// before returning; their last observation moves to
/// `StepInfo::terminal_observation`.
#[derive(Debug, Clone)]
pub struct VectorEnv {
    env: LocomotionEnv,
    seed: u64,
    states: Vec<EpisodeState>,
    episodes: Vec<u64>,
}

impl VectorEnv {
    pub fn new(env: LocomotionEnv, instances: usize, seed: u64) -> Self {
        assert!(instances >= 1, "vector env needs at least one instance");
        let mut venv = VectorEnv { env, seed, states: Vec::with_capacity(instances), episodes: vec![0; instances] };
        for i in 0..instances {
            let (state, _) = venv.env.reset(venv.episode_seed(i));
            venv.states.push(state);
        }
        venv
    }

    pub fn episode_seed(&self, instance: usize) -> u64 {
        let instance_seed = derive_seed(self.seed, Stream::EnvInstance, instance as u64);
        derive_seed(instance_seed, Stream::EnvInstance, self.episodes[instance])
    }

    pub fn env(&self) -> &LocomotionEnv {
        &self.env
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[EpisodeState] {
        &self.states
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(EpisodeState::observation).collect()
    }

    /// Steps every instance with its row of `actions`. Instances run in
    /// index order; results are identical to stepping each alone.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<VectorStep, EnvError> {
        if actions.len() != self.states.len() {
            return Err(EnvError::BatchShape { expected: self.states.len(), got: actions.len() });
        }
        let n = self.states.len();
        let mut out = VectorStep {
            observations: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            infos: Vec::with_capacity(n),
        };
        for i in 0..n {
            let mut res = self.env.step(&mut self.states[i], &actions[i])?;
            if res.done {
                self.episodes[i] += 1;
                let (state, obs) = self.env.reset(self.episode_seed(i));
                self.states[i] = state;
                res.info.terminal_observation = Some(std::mem::replace(&mut res.observation, obs));
            }
            out.observations.push(res.observation);
            out.rewards.push(res.reward);
            out.dones.push(res.done);
            out.infos.push(res.info);
        }
        Ok(out)
    }
}
