//! Flat-terrain go-to-target locomotion task: observations, shaped reward,
//! termination and batched stepping over independent instances.

mod vector;

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::MorphologyGenome;
use crate::physics::{instantiate, ArticulatedBody, ContactReading, StepError, WorldConfig};
use crate::rng::rng_from_seed;

pub use vector::{validate_scaling, ScalingCheck, VectorEnv, VectorStep, PAPER_ENV_STEP_PRODUCT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Per m/s of head velocity toward the target.
    pub w_progress: f64,
    pub w_alive: f64,
    pub w_upright: f64,
    pub w_heading: f64,
    /// Per squared joint torque in kN·m.
    pub w_effort: f64,
    /// Per squared action component.
    pub w_action: f64,
    /// Per joint within 1% of a limit.
    pub w_dof: f64,
    pub w_death: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_progress: 1.0,
            w_alive: 0.5,
            w_upright: 0.1,
            w_heading: 0.1,
            w_effort: 0.005,
            w_action: 0.005,
            w_dof: 0.1,
            w_death: -2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvConfigError {
    #[error("reward.{0} must be finite")]
    NonFinite(&'static str),
    #[error("reward.w_alive must be >= 0")]
    NegativeAlive,
    #[error("reward.w_death must be <= 0")]
    PositiveDeath,
    #[error("max_episode_steps must be at least 1")]
    NoEpisodeSteps,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), EnvConfigError> {
        let all = [
            ("w_progress", self.w_progress),
            ("w_alive", self.w_alive),
            ("w_upright", self.w_upright),
            ("w_heading", self.w_heading),
            ("w_effort", self.w_effort),
            ("w_action", self.w_action),
            ("w_dof", self.w_dof),
            ("w_death", self.w_death),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(EnvConfigError::NonFinite(name));
        }
        if self.w_alive < 0.0 {
            return Err(EnvConfigError::NegativeAlive);
        }
        if self.w_death > 0.0 {
            return Err(EnvConfigError::PositiveDeath);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub world: WorldConfig,
    pub reward: RewardWeights,
    pub max_episode_steps: u32,
    /// Target position on the ground plane, fixed for every episode.
    pub target: [f64; 2],
    /// Half-width of the uniform noise added to initial limb angular
    /// velocities (rad/s).
    pub reset_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            world: WorldConfig::default(),
            reward: RewardWeights::default(),
            max_episode_steps: 1000,
            target: [10.0, 0.0],
            reset_noise: 0.1,
        }
    }
}

/// Heading cosine is zero below this head speed.
pub const HEADING_DEAD_ZONE: f64 = 1e-3;
/// A joint within this fraction of its range from a limit counts as at the limit.
pub const DOF_LIMIT_BAND: f64 = 0.01;
/// Forces enter observations in kN.
pub const FORCE_SCALE: f64 = 1e-3;

/// Index ranges of each observation group for a body with `joints`
/// actuators and `feet` foot sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationLayout {
    pub joints: usize,
    pub feet: usize,
}

/// One group of the observation vector and the row of the 3D observation
/// table it reduces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationGroup {
    pub name: &'static str,
    pub table_row: &'static str,
    /// Degrees of freedom of the 3D row.
    pub spatial_dims: String,
    pub range: Range<usize>,
}

impl ObservationLayout {
    pub fn of(body: &ArticulatedBody) -> Self {
        ObservationLayout { joints: body.joint_count(), feet: body.foot_count() }
    }

    pub fn len(&self) -> usize {
        7 + 3 * self.joints + 2 * self.feet
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn groups(&self) -> Vec<ObservationGroup> {
        let (a, f) = (self.joints, self.feet);
        let spec: [(&str, &str, String, usize); 11] = [
            ("head_height", "Head vertical position", "1".into(), 1),
            ("head_velocity", "Velocity (positional)", "3".into(), 2),
            ("head_angular_velocity", "Velocity (angular)", "3".into(), 1),
            ("angle_to_target", "Yaw, roll, angle to target", "3".into(), 1),
            ("up_projection", "Up and heading vector proj.", "2".into(), 1),
            ("heading_projection", "Up and heading vector proj.", "2".into(), 1),
            ("joint_positions", "DOF measurements (position)", "A".into(), a),
            ("joint_velocities", "DOF measurements (velocity)", "A".into(), a),
            ("foot_normal_forces", "Sensor forces", "F".into(), f),
            ("foot_tangential_forces", "Sensor torques", "F".into(), f),
            ("previous_actions", "Actions", "A".into(), a),
        ];
        let mut start = 0;
        spec.into_iter()
            .map(|(name, row, dims, n)| {
                let range = start..start + n;
                start += n;
                ObservationGroup { name, table_row: row, spatial_dims: dims, range }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub progress: f64,
    pub alive: f64,
    pub upright: f64,
    pub heading: f64,
    pub effort: f64,
    pub action: f64,
    pub dof: f64,
    pub death: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.progress + self.alive + self.upright + self.heading + self.effort + self.action + self.dof + self.death
    }

    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("progress", self.progress),
            ("alive", self.alive),
            ("upright", self.upright),
            ("heading", self.heading),
            ("effort", self.effort),
            ("action", self.action),
            ("dof", self.dof),
            ("death", self.death),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub body: ArticulatedBody,
    pub step_count: u32,
    pub initial_head_height: f64,
    pub termination_height: f64,
    pub target: [f64; 2],
    pub previous_action: Vec<f64>,
    pub episode_return: f64,
    pub contacts: Vec<ContactReading>,
    pub done: bool,
    last_observation: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub breakdown: RewardBreakdown,
    pub diverged: bool,
    pub boundary_contact: bool,
    /// Ended by the episode step cap rather than by failure.
    pub truncated: bool,
    /// Set by [`VectorEnv`] when the instance was auto-reset.
    pub terminal_observation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("expected {expected} action components, got {got}")]
    ActionLength { expected: usize, got: usize },
    #[error("expected {expected} action rows, got {got}")]
    BatchShape { expected: usize, got: usize },
}

/// A task instance bound to one genome: every episode starts from the same
/// instantiated body.
#[derive(Debug, Clone)]
pub struct LocomotionEnv {
    config: EnvConfig,
    template: ArticulatedBody,
    layout: ObservationLayout,
}

fn unit_toward(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if n > 0.0 {
        [d[0] / n, d[1] / n]
    } else {
        [0.0, 0.0]
    }
}

/// Cosine between the head velocity and the direction to the target; zero
/// inside the dead zone.
pub fn heading_projection(velocity: [f64; 2], direction: [f64; 2]) -> f64 {
    let speed = (velocity[0] * velocity[0] + velocity[1] * velocity[1]).sqrt();
    if speed < HEADING_DEAD_ZONE {
        0.0
    } else {
        (velocity[0] * direction[0] + velocity[1] * direction[1]) / speed
    }
}

impl EpisodeState {
    fn head_position(&self) -> [f64; 2] {
        self.body.bodies[0].position
    }

    fn target_direction(&self) -> [f64; 2] {
        unit_toward(self.head_position(), self.target)
    }

    pub fn head_height(&self) -> f64 {
        self.body.bodies[0].position[1]
    }

    /// Alive branch at or above the termination height, death branch below.
    pub fn is_alive(&self) -> bool {
        self.head_height() >= self.termination_height
    }

    pub fn observation(&self) -> Vec<f64> {
        let pose = self.body.head_pose();
        let root = &self.body.bodies[0];
        let head = root.position;
        let bearing = (self.target[1] - head[1]).atan2(self.target[0] - head[0]);
        let mut obs = Vec::with_capacity(ObservationLayout::of(&self.body).len());
        obs.push(pose.height);
        obs.extend_from_slice(&pose.velocity);
        obs.push(pose.angular_velocity);
        obs.push(crate::physics::wrap_angle(bearing - root.angle));
        obs.push(pose.up_projection);
        obs.push(heading_projection(pose.velocity, self.target_direction()));
        obs.extend(self.body.joints.iter().map(|j| j.angle));
        obs.extend(self.body.joints.iter().map(|j| j.velocity));
        obs.extend(self.contacts.iter().map(|c| c.normal_force * FORCE_SCALE));
        obs.extend(self.contacts.iter().map(|c| c.tangential_force * FORCE_SCALE));
        obs.extend_from_slice(&self.previous_action);
        obs
    }
}

/// Shaped reward of the post-step state.
pub fn compute_reward(state: &EpisodeState, action: &[f64], torques: &[f64], weights: &RewardWeights) -> RewardBreakdown {
    let pose = state.body.head_pose();
    let dir = state.target_direction();
    let toward = pose.velocity[0] * dir[0] + pose.velocity[1] * dir[1];
    let alive = state.is_alive();
    let at_limit = state.body.joints.iter().filter(|j| j.at_limit(DOF_LIMIT_BAND)).count();
    RewardBreakdown {
        progress: weights.w_progress * toward,
        alive: if alive { weights.w_alive } else { 0.0 },
        upright: weights.w_upright * pose.up_projection,
        heading: weights.w_heading * heading_projection(pose.velocity, dir),
        effort: -weights.w_effort * torques.iter().map(|t| (t * FORCE_SCALE).powi(2)).sum::<f64>(),
        action: -weights.w_action * action.iter().map(|a| a * a).sum::<f64>(),
        dof: -weights.w_dof * at_limit as f64,
        death: if alive { 0.0 } else { weights.w_death },
    }
}

impl LocomotionEnv {
    pub fn new(genome: &MorphologyGenome, config: EnvConfig) -> Self {
        let template = instantiate(genome, &config.world);
        let layout = ObservationLayout::of(&template);
        LocomotionEnv { config, template, layout }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn layout(&self) -> ObservationLayout {
        self.layout
    }

    pub fn observation_dim(&self) -> usize {
        self.layout.len()
    }

    pub fn action_dim(&self) -> usize {
        self.layout.joints
    }

    /// Fresh episode: body at the origin, termination height half the
    /// initial head height.
    pub fn reset(&self, seed: u64) -> (EpisodeState, Vec<f64>) {
        let mut body = self.template.clone();
        let initial_head_height = body.bodies[0].position[1];
        if self.config.reset_noise > 0.0 {
            let mut rng = rng_from_seed(seed);
            for b in body.bodies.iter_mut().skip(1) {
                b.angular_velocity += rng.random_range(-self.config.reset_noise..=self.config.reset_noise);
            }
        }
        let mut state = EpisodeState {
            contacts: vec![ContactReading::default(); body.foot_count()],
            previous_action: vec![0.0; body.joint_count()],
            body,
            step_count: 0,
            initial_head_height,
            termination_height: 0.5 * initial_head_height,
            target: self.config.target,
            episode_return: 0.0,
            done: false,
            last_observation: Vec::new(),
        };
        let obs = state.observation();
        state.last_observation.clone_from(&obs);
        (state, obs)
    }

    /// One control step. A finished episode yields zero reward until reset.
    pub fn step(&self, state: &mut EpisodeState, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != self.layout.joints {
            return Err(EnvError::ActionLength { expected: self.layout.joints, got: action.len() });
        }
        if state.done {
            return Ok(StepResult {
                observation: state.last_observation.clone(),
                reward: 0.0,
                done: true,
                info: StepInfo::default(),
            });
        }
        let action: Vec<f64> = action.iter().map(|a| if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 }).collect();
        let torques: Vec<f64> = action.iter().zip(&state.body.joints).map(|(a, j)| a * j.torque_limit).collect();
        state.step_count += 1;
        let mut info = StepInfo::default();
        let done;
        match state.body.step(&torques, &self.config.world) {
            Ok(out) => {
                state.contacts = out.contacts;
                state.previous_action.clone_from(&action);
                info.breakdown = compute_reward(state, &action, &torques, &self.config.reward);
                info.boundary_contact = out.boundary_contact;
                let fallen = state.head_height() <= state.termination_height;
                let capped = state.step_count >= self.config.max_episode_steps;
                info.truncated = capped && !fallen && !out.boundary_contact;
                done = fallen || out.boundary_contact || capped;
                state.last_observation = state.observation();
            }
            Err(StepError::Diverged) => {
                info.diverged = true;
                info.breakdown = RewardBreakdown { death: self.config.reward.w_death, ..Default::default() };
                done = true;
            }
            Err(StepError::TorqueCount { expected, got }) => {
                return Err(EnvError::ActionLength { expected, got });
            }
        }
        let reward = info.breakdown.total();
        state.episode_return += reward;
        state.done = done;
        Ok(StepResult { observation: state.last_observation.clone(), reward, done, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{generate_random, LimbGene};
    use std::collections::BTreeMap;

    fn genome_with(joints: usize, feet: usize) -> MorphologyGenome {
        // Root with `feet` legs, the first leg extended into a chain so the
        // joint count comes out right.
        let leaf = |id: u32, parent: u32| LimbGene {
            limb_id: id,
            parent_id: Some(parent),
            attach_angle: -1.5,
            length: 0.3,
            radius: 0.04,
            density: 1000.0,
            joint_limit_lo: -0.5,
            joint_limit_hi: 0.5,
            torque_limit: 200.0,
            is_foot: true,
        };
        let mut limbs = BTreeMap::new();
        limbs.insert(0, LimbGene { parent_id: None, attach_angle: 0.0, ..leaf(0, 0) });
        let mut next = 1;
        for _ in 0..feet {
            limbs.insert(next, leaf(next, 0));
            next += 1;
        }
        let mut tip = 1;
        while (next as usize) <= joints {
            limbs.insert(next, leaf(next, tip));
            tip = next;
            next += 1;
        }
        let mut g = MorphologyGenome { limbs, root_id: 0, mutation_count: 0 };
        g.assign_feet();
        g.validate().unwrap();
        g
    }

    #[test]
    fn observation_length_for_eight_joints_four_feet() {
        let g = genome_with(8, 4);
        assert_eq!((g.joint_count(), g.foot_count()), (8, 4));
        let env = LocomotionEnv::new(&g, EnvConfig::default());
        let (_, obs) = env.reset(1);
        assert_eq!(obs.len(), 39);
    }

    #[test]
    fn termination_height_is_half_initial() {
        for seed in 0..20 {
            let env = LocomotionEnv::new(&generate_random(seed), EnvConfig::default());
            let (state, obs) = env.reset(seed);
            assert_eq!(state.termination_height, 0.5 * state.initial_head_height);
            assert_eq!(obs, env.reset(seed).1);
        }
    }

    #[test]
    fn zero_action_at_rest_reward() {
        let g = genome_with(2, 2);
        let cfg = EnvConfig { reset_noise: 0.0, ..EnvConfig::default() };
        let env = LocomotionEnv::new(&g, cfg.clone());
        let (state, _) = env.reset(0);
        let zeros = vec![0.0; 2];
        let r = compute_reward(&state, &zeros, &zeros, &cfg.reward);
        let w = &cfg.reward;
        assert_eq!(r.effort, 0.0);
        assert_eq!(r.action, 0.0);
        assert_eq!(r.dof, 0.0);
        assert_eq!(r.progress, 0.0);
        assert_eq!(r.total(), w.w_alive + w.w_upright * 1.0 + w.w_heading * 0.0);
    }

    #[test]
    fn progress_and_dof_terms() {
        let g = genome_with(3, 3);
        let weights = RewardWeights { w_progress: 1.0, w_dof: 0.1, ..RewardWeights::default() };
        let env = LocomotionEnv::new(&g, EnvConfig::default());
        let (mut state, _) = env.reset(0);
        state.body.bodies[0].linear_velocity = [1.0, 0.0];
        state.body.bodies[0].position[0] = 0.0;
        state.body.bodies[0].position[1] = state.target[1];
        for j in &mut state.body.joints {
            j.angle = j.limit_hi;
        }
        let r = compute_reward(&state, &[0.0; 3], &[0.0; 3], &weights);
        assert!((r.progress - 1.0).abs() < 1e-15);
        assert!((r.dof + 0.3).abs() < 1e-15);
    }

    #[test]
    fn falling_below_threshold_terminates_with_penalty() {
        let g = genome_with(2, 2);
        let env = LocomotionEnv::new(&g, EnvConfig::default());
        let (mut state, _) = env.reset(0);
        for b in &mut state.body.bodies {
            b.position[1] -= 0.6 * state.initial_head_height;
        }
        let res = env.step(&mut state, &[0.0, 0.0]).unwrap();
        assert!(res.done);
        assert_eq!(res.info.breakdown.death, env.config().reward.w_death);
        assert_eq!(res.info.breakdown.alive, 0.0);
        // Monotone: further steps accrue nothing.
        let again = env.step(&mut state, &[1.0, 1.0]).unwrap();
        assert!(again.done);
        assert_eq!(again.reward, 0.0);
    }

    #[test]
    fn action_length_checked() {
        let env = LocomotionEnv::new(&genome_with(2, 2), EnvConfig::default());
        let (mut state, _) = env.reset(0);
        assert_eq!(env.step(&mut state, &[0.0]), Err(EnvError::ActionLength { expected: 2, got: 1 }));
    }

    #[test]
    fn layout_groups_are_contiguous() {
        let layout = ObservationLayout { joints: 4, feet: 3 };
        let groups = layout.groups();
        assert_eq!(groups.first().unwrap().range.start, 0);
        assert_eq!(groups.last().unwrap().range.end, layout.len());
        for pair in groups.windows(2) {
            assert_eq!(pair[0].range.end, pair[1].range.start);
        }
    }
}
