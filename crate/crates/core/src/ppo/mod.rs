//! Lifetime learning for one morphology: a tanh-squashed Gaussian MLP policy
//! and MLP value function trained with clipped-surrogate PPO and GAE on the
//! vectorized locomotion task. The agent's fitness is its mean per-step
//! reward over the trailing part of training.

mod policy_file;

use std::cmp::Ordering;
use std::f64::consts::{LN_2, PI};
use std::fmt;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::env::{validate_scaling, EnvConfig, EnvConfigError, LocomotionEnv, ScalingCheck, VectorEnv};
use crate::morphology::MorphologyGenome;
use crate::nn::{Adam, ForwardCache, Mlp, RunningNorm};
use crate::physics::WorldConfigError;
use crate::rng::{derive_seed, derived_rng, Rng, Stream};

pub use policy_file::{decode_policy, encode_policy, read_policy, write_policy, PolicyFileError, POLICY_MAGIC, POLICY_VERSION};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gae_gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Initial rate; decays linearly to zero over training.
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gae_gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatches: 4,
            learning_rate: 3e-4,
            value_coef: 1.0,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            hidden_sizes: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    /// Parallel environment instances (M).
    pub num_envs: usize,
    /// Steps per instance between updates.
    pub horizon: usize,
    /// Environment steps summed over all instances.
    pub total_steps: u64,
    /// Trailing share of training averaged into the fitness.
    pub fitness_window_fraction: f64,
    /// Silences the environments-times-horizon scaling warning.
    pub allow_scaling_mismatch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
            num_envs: 64,
            horizon: 32,
            total_steps: 200_000,
            fitness_window_fraction: 0.1,
            allow_scaling_mismatch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingConfigError {
    #[error("training.{0} must be at least 1")]
    Zero(&'static str),
    #[error("training.clip_epsilon must lie in (0, 1)")]
    ClipEpsilon,
    #[error("training.{0} must lie in (0, 1]")]
    Discount(&'static str),
    #[error("training.total_steps ({total}) must be a multiple of num_envs ({envs})")]
    StepsNotMultiple { total: u64, envs: usize },
    #[error("training.fitness_window_fraction must lie in (0, 1]")]
    WindowFraction,
    #[error("training.{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error(transparent)]
    World(#[from] WorldConfigError),
    #[error(transparent)]
    Reward(#[from] EnvConfigError),
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingConfigError> {
        let p = &self.ppo;
        for (name, v) in [
            ("num_envs", self.num_envs as u64),
            ("horizon", self.horizon as u64),
            ("total_steps", self.total_steps),
            ("epochs", p.epochs as u64),
            ("minibatches", p.minibatches as u64),
            ("max_episode_steps", u64::from(self.env.max_episode_steps)),
        ] {
            if v == 0 {
                return Err(TrainingConfigError::Zero(name));
            }
        }
        if !(p.clip_epsilon > 0.0 && p.clip_epsilon < 1.0) {
            return Err(TrainingConfigError::ClipEpsilon);
        }
        for (name, v) in [("gae_gamma", p.gae_gamma), ("gae_lambda", p.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(TrainingConfigError::Discount(name));
            }
        }
        for (name, v) in [("learning_rate", p.learning_rate), ("max_grad_norm", p.max_grad_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainingConfigError::NotPositive(name));
            }
        }
        if !self.total_steps.is_multiple_of(self.num_envs as u64) {
            return Err(TrainingConfigError::StepsNotMultiple { total: self.total_steps, envs: self.num_envs });
        }
        if !(self.fitness_window_fraction > 0.0 && self.fitness_window_fraction <= 1.0) {
            return Err(TrainingConfigError::WindowFraction);
        }
        self.env.world.validate()?;
        self.env.reward.validate()?;
        Ok(())
    }

    pub fn window_steps(&self) -> u64 {
        ((self.total_steps as f64 * self.fitness_window_fraction).round() as u64).clamp(1, self.total_steps)
    }

    pub fn scaling_check(&self) -> ScalingCheck {
        validate_scaling(self.num_envs, self.horizon, self.allow_scaling_mismatch)
    }
}

/// Scalar fitness, or the sentinel for an agent whose training diverged.
/// Diverged ranks below every value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitness {
    Value(f64),
    Diverged,
}

impl Fitness {
    pub fn as_f64(self) -> f64 {
        match self {
            Fitness::Value(v) => v,
            Fitness::Diverged => f64::NEG_INFINITY,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Fitness::Value(v) => Some(v),
            Fitness::Diverged => None,
        }
    }

    pub fn total_cmp(&self, other: &Fitness) -> Ordering {
        self.as_f64().total_cmp(&other.as_f64())
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fitness::Value(v) => write!(f, "{v}"),
            Fitness::Diverged => f.write_str("diverged"),
        }
    }
}

impl Serialize for Fitness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Fitness::Value(v) if v.is_finite() => s.serialize_f64(*v),
            _ => s.serialize_str("diverged"),
        }
    }
}

impl<'de> Deserialize<'de> for Fitness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Fitness::Value(v)),
            Repr::Str(s) if s == "diverged" => Ok(Fitness::Diverged),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unknown fitness {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub steps_consumed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub fitness: Fitness,
    pub window_steps: u64,
    pub total_steps: u64,
    pub steps_consumed: u64,
    pub diverged: bool,
    pub learning_curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("observation has {got} entries, the policy expects {expected}")]
    ObservationDim { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] TrainingConfigError),
}

/// Policy and value networks plus the observation normalizer they were
/// trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub log_std: Vec<f64>,
    pub value: Mlp,
    pub obs_norm: RunningNorm,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, action_dim: usize, config: &PpoConfig, rng: &mut Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&config.hidden_sizes);
        let mut policy_sizes = sizes.clone();
        policy_sizes.push(action_dim);
        sizes.push(1);
        PolicyParams {
            policy: Mlp::new(&policy_sizes, 0.01, rng),
            log_std: vec![config.init_log_std; action_dim],
            value: Mlp::new(&sizes, 1.0, rng),
            obs_norm: RunningNorm::new(obs_dim),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    /// Length of the flat gradient: policy weights, log-std, value weights.
    pub fn trainable_len(&self) -> usize {
        self.policy.params().len() + self.log_std.len() + self.value.params().len()
    }

    fn apply_delta(&mut self, delta: &[f64]) {
        let np = self.policy.params().len();
        let na = self.log_std.len();
        for (p, d) in self.policy.params_mut().iter_mut().zip(&delta[..np]) {
            *p += d;
        }
        for (p, d) in self.log_std.iter_mut().zip(&delta[np..np + na]) {
            *p = (*p + d).clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        for (p, d) in self.value.params_mut().iter_mut().zip(&delta[np + na..]) {
            *p += d;
        }
    }

    fn all_finite(&self) -> bool {
        self.policy.params().iter().chain(&self.log_std).chain(self.value.params()).all(|v| v.is_finite())
    }

    pub fn value_of(&self, normalized_obs: &[f64]) -> f64 {
        self.value.forward(normalized_obs)[0]
    }
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_tanh_jacobian(u: f64) -> f64 {
    let x = -2.0 * u;
    // softplus(x) = log(1 + e^x)
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (LN_2 - u - softplus)
}

/// Log-density of pre-squash sample `u` under the diagonal Gaussian, plus the
/// tanh change-of-variables term, so the result is the density of `tanh(u)`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, ls), u)| {
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln() - log_tanh_jacobian(*u)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActSample {
    /// Squashed action in [-1, 1].
    pub action: Vec<f64>,
    /// Gaussian sample before squashing.
    pub pre_tanh: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Samples an action for an already-normalized observation.
pub fn act(params: &PolicyParams, normalized_obs: &[f64], rng: &mut Rng) -> Result<ActSample, TrainError> {
    if normalized_obs.len() != params.obs_dim() {
        return Err(TrainError::ObservationDim { expected: params.obs_dim(), got: normalized_obs.len() });
    }
    let mean = params.policy.forward(normalized_obs);
    let value = params.value_of(normalized_obs);
    let pre_tanh: Vec<f64> = mean
        .iter()
        .zip(&params.log_std)
        .map(|(m, ls)| {
            let eps: f64 = StandardNormal.sample(rng);
            m + ls.exp() * eps
        })
        .collect();
    let log_prob = squashed_log_prob(&mean, &params.log_std, &pre_tanh);
    let action: Vec<f64> = pre_tanh.iter().map(|u| u.tanh()).collect();
    if !value.is_finite() || !log_prob.is_finite() || action.iter().any(|a| !a.is_finite()) {
        return Err(TrainError::Diverged("non-finite network output".into()));
    }
    Ok(ActSample { action, pre_tanh, log_prob, value })
}

/// Rollout storage, time-major: entry `t * envs + e`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBuffer {
    pub envs: usize,
    pub horizon: usize,
    pub observations: Vec<Vec<f64>>,
    pub pre_tanh: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl TrajectoryBuffer {
    pub fn new(envs: usize, horizon: usize) -> Self {
        let cap = envs * horizon;
        TrajectoryBuffer {
            envs,
            horizon,
            observations: Vec::with_capacity(cap),
            pre_tanh: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
        }
    }

    pub fn capacity(&self) -> usize {
        self.envs * self.horizon
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }
}

/// Generalized advantage estimation over a time-major batch of `envs`
/// columns. `dones[t]` cuts bootstrapping from step `t` to `t + 1`. Returns
/// raw (unnormalized) advantages and the value targets `advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let envs = last_values.len();
    let n = rewards.len();
    assert!(envs > 0 && n.is_multiple_of(envs) && values.len() == n && dones.len() == n);
    let horizon = n / envs;
    let mut adv = vec![0.0; n];
    for e in 0..envs {
        let mut next_adv = 0.0;
        for t in (0..horizon).rev() {
            let i = t * envs + e;
            let next_value = if t + 1 == horizon { last_values[e] } else { values[i + envs] };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit variance (population variance, epsilon 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) * scale;
    }
}

/// Samples entering one gradient step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Minibatch {
    pub observations: Vec<Vec<f64>>,
    pub pre_tanh: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// PPO objective on a minibatch and, if requested, its gradient with
/// respect to [policy weights, log-std, value weights].
pub fn ppo_loss(params: &PolicyParams, batch: &Minibatch, config: &PpoConfig, with_grad: bool) -> (LossParts, Vec<f64>) {
    let b = batch.advantages.len();
    let np = params.policy.params().len();
    let na = params.log_std.len();
    let mut grad = if with_grad { vec![0.0; params.trainable_len()] } else { Vec::new() };
    let mut parts = LossParts::default();
    if b == 0 {
        return (parts, grad);
    }
    let inv_b = 1.0 / b as f64;
    let eps = config.clip_epsilon;
    let stds: Vec<f64> = params.log_std.iter().map(|ls| ls.exp()).collect();
    let mut pcache = ForwardCache::default();
    let mut vcache = ForwardCache::default();
    let mut d_mean = vec![0.0; na];
    for i in 0..b {
        let obs = &batch.observations[i];
        let u = &batch.pre_tanh[i];
        let adv = batch.advantages[i];
        params.policy.forward_cached(obs, &mut pcache);
        let mean = pcache.output();
        let logp = squashed_log_prob(mean, &params.log_std, u);
        let ratio = (logp - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let (s1, s2) = (ratio * adv, clipped * adv);
        parts.policy_loss -= s1.min(s2) * inv_b;
        if (ratio - 1.0).abs() > eps {
            parts.clip_fraction += inv_b;
        }
        parts.approx_kl += ((ratio - 1.0) - (logp - batch.old_log_probs[i])) * inv_b;

        params.value.forward_cached(obs, &mut vcache);
        let v = vcache.output()[0];
        let err = v - batch.returns[i];
        parts.value_loss += err * err * inv_b;

        if with_grad {
            // d(-min(s1, s2))/d logp: only the unclipped branch carries gradient.
            let d_logp = if s1 <= s2 { -adv * ratio * inv_b } else { 0.0 };
            if d_logp != 0.0 {
                for j in 0..na {
                    let z = (u[j] - mean[j]) / stds[j];
                    d_mean[j] = d_logp * z / stds[j];
                    grad[np + j] += d_logp * (z * z - 1.0);
                }
                params.policy.backward(&pcache, &d_mean, &mut grad[..np]);
            }
            let d_v = [2.0 * config.value_coef * err * inv_b];
            params.value.backward(&vcache, &d_v, &mut grad[np + na..]);
        }
    }
    // Gaussian entropy (the squashing term has no closed form and is omitted).
    parts.entropy = params.log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum();
    if with_grad {
        for j in 0..na {
            grad[np + j] -= config.entropy_coef;
        }
    }
    parts.total = parts.policy_loss + config.value_coef * parts.value_loss - config.entropy_coef * parts.entropy;
    (parts, grad)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// Epochs of shuffled minibatch steps on a full buffer. Advantages are
/// normalized over the whole buffer first.
pub fn ppo_update(
    params: &mut PolicyParams,
    optimizer: &mut Adam,
    buffer: &TrajectoryBuffer,
    last_values: &[f64],
    config: &PpoConfig,
    learning_rate: f64,
    rng: &mut Rng,
) -> Result<UpdateDiagnostics, TrainError> {
    let (mut adv, returns) =
        compute_gae(&buffer.rewards, &buffer.values, &buffer.dones, last_values, config.gae_gamma, config.gae_lambda);
    normalize_advantages(&mut adv);
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let chunk = n.div_ceil(config.minibatches.max(1)).max(1);
    let mut diag = UpdateDiagnostics::default();
    let mut steps = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(chunk) {
            let batch = Minibatch {
                observations: idx.iter().map(|&i| buffer.observations[i].clone()).collect(),
                pre_tanh: idx.iter().map(|&i| buffer.pre_tanh[i].clone()).collect(),
                old_log_probs: idx.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: idx.iter().map(|&i| adv[i]).collect(),
                returns: idx.iter().map(|&i| returns[i]).collect(),
            };
            let (parts, mut grad) = ppo_loss(params, &batch, config, true);
            if !parts.total.is_finite() {
                return Err(TrainError::Diverged("non-finite loss".into()));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(TrainError::Diverged("non-finite gradient".into()));
            }
            if norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let delta = optimizer.step(&grad, learning_rate);
            params.apply_delta(&delta);
            if !params.all_finite() {
                return Err(TrainError::Diverged("non-finite parameters".into()));
            }
            diag.policy_loss += parts.policy_loss;
            diag.value_loss += parts.value_loss;
            diag.clip_fraction += parts.clip_fraction;
            diag.approx_kl += parts.approx_kl;
            diag.grad_norm += norm;
            steps += 1.0;
        }
    }
    if steps > 0.0 {
        diag.policy_loss /= steps;
        diag.value_loss /= steps;
        diag.clip_fraction /= steps;
        diag.approx_kl /= steps;
        diag.grad_norm /= steps;
    }
    Ok(diag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: FitnessReport,
    pub params: PolicyParams,
}

/// Accumulates the trailing-window reward while steps stream in, in
/// time-major order.
struct WindowMean {
    start: u64,
    seen: u64,
    sum: f64,
    count: u64,
}

impl WindowMean {
    fn new(total: u64, window: u64) -> Self {
        WindowMean { start: total - window, seen: 0, sum: 0.0, count: 0 }
    }

    fn push(&mut self, rewards: &[f64]) {
        for r in rewards {
            if self.seen >= self.start {
                self.sum += r;
                self.count += 1;
            }
            self.seen += 1;
        }
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

fn env_seed(seed: u64) -> u64 {
    derive_seed(seed, Stream::EnvInstance, 0)
}

/// Trains a fresh policy on `genome` for exactly `total_steps` environment
/// steps. A pure function of its arguments. Divergence is reported in the
/// returned report rather than as an error.
pub fn train_agent(genome: &MorphologyGenome, config: &TrainingConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let env = LocomotionEnv::new(genome, config.env.clone());
    let (obs_dim, act_dim) = (env.observation_dim(), env.action_dim());
    let mut venv = VectorEnv::new(env, config.num_envs, env_seed(seed));
    let mut rng = derived_rng(seed, Stream::Policy, 0);
    let mut params = PolicyParams::new(obs_dim, act_dim, &config.ppo, &mut rng);
    let mut optimizer = Adam::new(params.trainable_len());

    let envs = config.num_envs;
    let total = config.total_steps;
    let window = config.window_steps();
    let per_update = (envs * config.horizon) as u64;
    let updates = total.div_ceil(per_update);
    let mut fitness = WindowMean::new(total, window);
    let mut curve = Vec::with_capacity(updates as usize);
    let mut consumed = 0u64;
    let mut raw_obs = venv.observations();
    let mut diverged = None;

    'outer: for iteration in 0..updates as usize {
        let horizon = ((total - consumed) / envs as u64).min(config.horizon as u64) as usize;
        let mut buffer = TrajectoryBuffer::new(envs, horizon);
        let mut iter_reward = 0.0;
        for _ in 0..horizon {
            params.obs_norm.update(&raw_obs);
            let mut actions = Vec::with_capacity(envs);
            for o in &raw_obs {
                let norm = params.obs_norm.normalize(o);
                match act(&params, &norm, &mut rng) {
                    Ok(s) => {
                        buffer.observations.push(norm);
                        buffer.pre_tanh.push(s.pre_tanh);
                        buffer.log_probs.push(s.log_prob);
                        buffer.values.push(s.value);
                        actions.push(s.action);
                    }
                    Err(e) => {
                        diverged = Some(e);
                        break 'outer;
                    }
                }
            }
            let step = venv.step(&actions).expect("action batch matches the environment");
            consumed += envs as u64;
            fitness.push(&step.rewards);
            iter_reward += step.rewards.iter().sum::<f64>();
            buffer.rewards.extend_from_slice(&step.rewards);
            buffer.dones.extend_from_slice(&step.dones);
            raw_obs = step.observations;
        }
        curve.push(CurvePoint {
            iteration,
            mean_reward: iter_reward / (horizon * envs) as f64,
            steps_consumed: consumed,
        });
        let last_values: Vec<f64> = raw_obs.iter().map(|o| params.value_of(&params.obs_norm.normalize(o))).collect();
        let lr = config.ppo.learning_rate * (1.0 - iteration as f64 / updates as f64);
        if let Err(e) = ppo_update(&mut params, &mut optimizer, &buffer, &last_values, &config.ppo, lr, &mut rng) {
            diverged = Some(e);
            break;
        }
    }

    let report = match diverged {
        None => FitnessReport {
            fitness: Fitness::Value(fitness.mean()),
            window_steps: window,
            total_steps: total,
            steps_consumed: consumed,
            diverged: false,
            learning_curve: curve,
        },
        Some(e) => {
            log::warn!("agent training diverged: {e}");
            FitnessReport {
                fitness: Fitness::Diverged,
                window_steps: window,
                total_steps: total,
                steps_consumed: consumed,
                diverged: true,
                learning_curve: curve,
            }
        }
    };
    Ok(TrainOutcome { report, params })
}

/// Fitness of the all-zeros controller measured exactly like
/// [`train_agent`] measures a learned one: same instances, same seeds, same
/// trailing window.
pub fn zero_action_fitness(genome: &MorphologyGenome, config: &TrainingConfig, seed: u64) -> Result<f64, TrainError> {
    config.validate()?;
    let env = LocomotionEnv::new(genome, config.env.clone());
    let zeros = vec![vec![0.0; env.action_dim()]; config.num_envs];
    let mut venv = VectorEnv::new(env, config.num_envs, env_seed(seed));
    let mut fitness = WindowMean::new(config.total_steps, config.window_steps());
    for _ in 0..config.total_steps / config.num_envs as u64 {
        let step = venv.step(&zeros).expect("action batch matches the environment");
        fitness.push(&step.rewards);
    }
    Ok(fitness.mean())
}
