//! Planar articulated rigid-body simulation.
//!
//! Limbs are capsules in maximal coordinates. Each step applies gravity,
//! joint motor torques, joint-limit springs and penalty ground contact, then
//! integrates with semi-implicit Euler and projects the revolute joint
//! anchors back together (position-based, a fixed number of iterations).
//! Velocities are corrected by the projection displacement so linear
//! momentum exchanged through joints cancels exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::MorphologyGenome;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Magnitude of gravitational acceleration, pointing down.
    pub gravity: f64,
    pub dt: f64,
    /// Integration substeps per `dt`.
    pub substeps: u32,
    pub ground_friction_coeff: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub arena_radius: f64,
    /// Joint anchor projection passes per substep.
    pub constraint_iterations: u32,
    /// Relative joint speed at which a fully saturated motor is balanced by
    /// joint damping (rad/s).
    pub joint_speed_limit: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            gravity: 9.81,
            dt: 1.0 / 60.0,
            substeps: 8,
            ground_friction_coeff: 1.0,
            contact_stiffness: 1.0e5,
            contact_damping: 1.0e3,
            arena_radius: 15.0,
            constraint_iterations: 4,
            joint_speed_limit: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldConfigError {
    #[error("world.{0} must be positive")]
    NotPositive(&'static str),
    #[error("world.{0} must be non-negative")]
    Negative(&'static str),
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldConfigError> {
        let pos = [("dt", self.dt), ("arena_radius", self.arena_radius), ("joint_speed_limit", self.joint_speed_limit)];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(WorldConfigError::NotPositive(name));
            }
        }
        if self.substeps == 0 {
            return Err(WorldConfigError::NotPositive("substeps"));
        }
        if self.constraint_iterations == 0 {
            return Err(WorldConfigError::NotPositive("constraint_iterations"));
        }
        let nonneg = [
            ("gravity", self.gravity),
            ("ground_friction_coeff", self.ground_friction_coeff),
            ("contact_stiffness", self.contact_stiffness),
            ("contact_damping", self.contact_damping),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(WorldConfigError::Negative(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vec2,
    pub angle: f64,
    pub linear_velocity: Vec2,
    pub angular_velocity: f64,
    pub mass: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    /// Distance between the two cap centers, along the local x axis.
    pub length: f64,
    pub radius: f64,
}

impl Capsule {
    pub fn area(&self) -> f64 {
        self.length * 2.0 * self.radius + std::f64::consts::PI * self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub parent: usize,
    pub child: usize,
    /// Anchor in the parent's local frame.
    pub parent_anchor: Vec2,
    /// Anchor in the child's local frame.
    pub child_anchor: Vec2,
    /// Child-minus-parent orientation at joint angle zero.
    pub rest_offset: f64,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub torque_limit: f64,
    pub angle: f64,
    pub velocity: f64,
}

impl Joint {
    /// Fraction-of-range tolerance for "at a limit".
    pub fn at_limit(&self, tolerance: f64) -> bool {
        let band = tolerance * (self.limit_hi - self.limit_lo);
        self.angle - self.limit_lo <= band || self.limit_hi - self.angle <= band
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedBody {
    /// One per limb, root first, parents before children.
    pub bodies: Vec<RigidBodyState>,
    pub shapes: Vec<Capsule>,
    /// Joint `i` actuates body `i + 1`.
    pub joints: Vec<Joint>,
    pub foot_indices: Vec<usize>,
    /// Genome limb id of each body.
    pub limb_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactReading {
    pub normal_force: f64,
    pub tangential_force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Per foot, in `foot_indices` order; averaged over substeps.
    pub contacts: Vec<ContactReading>,
    /// Root crossed |x| > arena_radius.
    pub boundary_contact: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("expected {expected} joint torques, got {got}")]
    TorqueCount { expected: usize, got: usize },
    #[error("simulation diverged (non-finite or runaway state)")]
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub height: f64,
    pub velocity: Vec2,
    pub angular_velocity: f64,
    pub up_projection: f64,
}

/// Placement clearance above the ground at instantiation.
pub const SPAWN_CLEARANCE: f64 = 0.01;
/// States beyond this magnitude count as diverged.
const RUNAWAY: f64 = 1.0e6;

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

/// Builds the phenotype: capsules of the genome's dimensions, joints at
/// parent distal ends (for the root, the end facing the child), joint angles
/// at the middle of their limits, lowest point 1 cm above the ground.
pub fn instantiate(genome: &MorphologyGenome, _world: &WorldConfig) -> ArticulatedBody {
    let order = genome.bfs_order();
    let index_of = |id: u32| order.iter().position(|&x| x == id).expect("limb in order");
    let mut bodies = Vec::with_capacity(order.len());
    let mut shapes = Vec::with_capacity(order.len());
    let mut joints = Vec::new();
    for &id in &order {
        let limb = &genome.limbs[&id];
        let shape = Capsule { length: limb.length, radius: limb.radius };
        let mass = limb.density * shape.area();
        let inertia = mass * limb.length * limb.length / 12.0;
        let (position, angle, joint) = match limb.parent_id {
            None => ([0.0, 0.0], limb.attach_angle, None),
            Some(pid) => {
                let parent_idx = index_of(pid);
                let parent: &RigidBodyState = &bodies[parent_idx];
                let parent_shape: &Capsule = &shapes[parent_idx];
                let side = if pid == genome.root_id && limb.attach_angle.cos() < 0.0 { -1.0 } else { 1.0 };
                let parent_anchor = [side * parent_shape.length / 2.0, 0.0];
                let child_anchor = [-limb.length / 2.0, 0.0];
                let mid = 0.5 * (limb.joint_limit_lo + limb.joint_limit_hi);
                let angle = parent.angle + limb.attach_angle + mid;
                let pa = rotate(parent_anchor, parent.angle);
                let ca = rotate(child_anchor, angle);
                let position = [
                    parent.position[0] + pa[0] - ca[0],
                    parent.position[1] + pa[1] - ca[1],
                ];
                let joint = Joint {
                    parent: parent_idx,
                    child: bodies.len(),
                    parent_anchor,
                    child_anchor,
                    rest_offset: limb.attach_angle,
                    limit_lo: limb.joint_limit_lo,
                    limit_hi: limb.joint_limit_hi,
                    torque_limit: limb.torque_limit,
                    angle: mid,
                    velocity: 0.0,
                };
                (position, angle, Some(joint))
            }
        };
        bodies.push(RigidBodyState {
            position,
            angle,
            linear_velocity: [0.0, 0.0],
            angular_velocity: 0.0,
            mass,
            inertia,
        });
        shapes.push(shape);
        joints.extend(joint);
    }
    let mut body = ArticulatedBody {
        foot_indices: order.iter().enumerate().filter(|(_, id)| genome.limbs[id].is_foot).map(|(i, _)| i).collect(),
        limb_ids: order,
        bodies,
        shapes,
        joints,
    };
    let lift = SPAWN_CLEARANCE - body.lowest_point();
    for b in &mut body.bodies {
        b.position[1] += lift;
    }
    body
}

impl ArticulatedBody {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn foot_count(&self) -> usize {
        self.foot_indices.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn linear_momentum(&self) -> Vec2 {
        self.bodies.iter().fold([0.0, 0.0], |acc, b| {
            [acc[0] + b.mass * b.linear_velocity[0], acc[1] + b.mass * b.linear_velocity[1]]
        })
    }

    /// Kinetic plus gravitational potential energy (ground at y = 0).
    pub fn mechanical_energy(&self, gravity: f64) -> f64 {
        self.bodies
            .iter()
            .map(|b| {
                let v2 = b.linear_velocity[0].powi(2) + b.linear_velocity[1].powi(2);
                0.5 * b.mass * v2 + 0.5 * b.inertia * b.angular_velocity.powi(2) + b.mass * gravity * b.position[1]
            })
            .sum()
    }

    /// The two cap centers of body `i` in world coordinates.
    pub fn endpoints(&self, i: usize) -> [Vec2; 2] {
        let b = &self.bodies[i];
        let half = rotate([self.shapes[i].length / 2.0, 0.0], b.angle);
        [
            [b.position[0] - half[0], b.position[1] - half[1]],
            [b.position[0] + half[0], b.position[1] + half[1]],
        ]
    }

    /// Lowest y reached by any capsule surface.
    pub fn lowest_point(&self) -> f64 {
        (0..self.bodies.len())
            .map(|i| {
                let [a, b] = self.endpoints(i);
                a[1].min(b[1]) - self.shapes[i].radius
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// World positions of a joint's anchor on the parent and on the child.
    pub fn anchor_points(&self, j: usize) -> (Vec2, Vec2) {
        let joint = &self.joints[j];
        let p = &self.bodies[joint.parent];
        let c = &self.bodies[joint.child];
        let rp = rotate(joint.parent_anchor, p.angle);
        let rc = rotate(joint.child_anchor, c.angle);
        (
            [p.position[0] + rp[0], p.position[1] + rp[1]],
            [c.position[0] + rc[0], c.position[1] + rc[1]],
        )
    }

    pub fn max_anchor_separation(&self) -> f64 {
        (0..self.joints.len())
            .map(|j| {
                let (a, b) = self.anchor_points(j);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn raw_joint_angle(&self, j: usize) -> f64 {
        let joint = &self.joints[j];
        wrap_angle(self.bodies[joint.child].angle - self.bodies[joint.parent].angle - joint.rest_offset)
    }

    fn is_finite(&self) -> bool {
        self.bodies.iter().all(|b| {
            [b.position[0], b.position[1], b.angle, b.linear_velocity[0], b.linear_velocity[1], b.angular_velocity]
                .iter()
                .all(|v| v.is_finite() && v.abs() < RUNAWAY)
        })
    }

    /// Advances one `world.dt`. Torques beyond a joint's limit are clamped.
    pub fn step(&mut self, torques: &[f64], world: &WorldConfig) -> Result<StepOutput, StepError> {
        if torques.len() != self.joints.len() {
            return Err(StepError::TorqueCount { expected: self.joints.len(), got: torques.len() });
        }
        let clamped: Vec<f64> = torques
            .iter()
            .zip(&self.joints)
            .map(|(&t, j)| if t.is_finite() { t.clamp(-j.torque_limit, j.torque_limit) } else { 0.0 })
            .collect();
        let h = world.dt / f64::from(world.substeps);
        let mut contact_sum = vec![ContactReading::default(); self.bodies.len()];
        for _ in 0..world.substeps {
            self.substep(&clamped, world, h, &mut contact_sum);
            if !self.is_finite() {
                return Err(StepError::Diverged);
            }
        }
        for j in 0..self.joints.len() {
            let (p, c) = (self.joints[j].parent, self.joints[j].child);
            let q = self.raw_joint_angle(j);
            let joint = &mut self.joints[j];
            joint.angle = q.clamp(joint.limit_lo, joint.limit_hi);
            joint.velocity = self.bodies[c].angular_velocity - self.bodies[p].angular_velocity;
        }
        let n = f64::from(world.substeps);
        let contacts = self
            .foot_indices
            .iter()
            .map(|&i| ContactReading {
                normal_force: contact_sum[i].normal_force / n,
                tangential_force: contact_sum[i].tangential_force / n,
            })
            .collect();
        Ok(StepOutput { contacts, boundary_contact: self.bodies[0].position[0].abs() > world.arena_radius })
    }

    fn substep(&mut self, torques: &[f64], world: &WorldConfig, h: f64, contact_sum: &mut [ContactReading]) {
        let n = self.bodies.len();
        let mut force: Vec<Vec2> = self.bodies.iter().map(|b| [0.0, -b.mass * world.gravity]).collect();
        let mut torque = vec![0.0; n];

        for (j, &tau_motor) in torques.iter().enumerate() {
            let joint = &self.joints[j];
            let (p, c) = (joint.parent, joint.child);
            let q = self.raw_joint_angle(j);
            let qd = self.bodies[c].angular_velocity - self.bodies[p].angular_velocity;
            // Stiffness bounded by what the substep can integrate stably.
            let inv_i = 1.0 / self.bodies[p].inertia + 1.0 / self.bodies[c].inertia;
            let k = (10.0 * joint.torque_limit).min(0.25 / (inv_i * h * h));
            let damping = (0.1 * k).min(0.25 / (inv_i * h));
            let mut tau = tau_motor;
            if q < joint.limit_lo {
                tau += k * (joint.limit_lo - q) - damping * qd.min(0.0);
            } else if q > joint.limit_hi {
                tau -= k * (q - joint.limit_hi) + damping * qd.max(0.0);
            }
            torque[c] += tau;
            torque[p] -= tau;
        }

        for i in 0..n {
            let b = &self.bodies[i];
            let radius = self.shapes[i].radius;
            for end in self.endpoints(i) {
                let depth = radius - end[1];
                if depth <= 0.0 {
                    continue;
                }
                let r = [end[0] - b.position[0], end[1] - radius - b.position[1]];
                let vp = [
                    b.linear_velocity[0] - b.angular_velocity * r[1],
                    b.linear_velocity[1] + b.angular_velocity * r[0],
                ];
                let normal = (world.contact_stiffness * depth - world.contact_damping * vp[1]).max(0.0);
                let inv_mass_t = 1.0 / b.mass + r[1] * r[1] / b.inertia;
                let stop = -0.5 * vp[0] / (inv_mass_t * h);
                let cap = world.ground_friction_coeff * normal;
                let tangential = stop.clamp(-cap, cap);
                force[i][0] += tangential;
                force[i][1] += normal;
                torque[i] += cross(r, [tangential, normal]);
                contact_sum[i].normal_force += normal;
                contact_sum[i].tangential_force += tangential;
            }
        }

        let previous: Vec<(Vec2, f64)> = self.bodies.iter().map(|b| (b.position, b.angle)).collect();
        for (i, b) in self.bodies.iter_mut().enumerate() {
            b.linear_velocity[0] += force[i][0] / b.mass * h;
            b.linear_velocity[1] += force[i][1] / b.mass * h;
            b.angular_velocity += torque[i] / b.inertia * h;
        }
        self.damp_joints(world, h);
        for b in &mut self.bodies {
            b.position[0] += b.linear_velocity[0] * h;
            b.position[1] += b.linear_velocity[1] * h;
            b.angle += b.angular_velocity * h;
        }

        let mut shift: Vec<(Vec2, f64)> = vec![([0.0, 0.0], 0.0); n];
        for _ in 0..world.constraint_iterations {
            self.project_joints(&mut shift);
        }
        for (i, b) in self.bodies.iter_mut().enumerate() {
            let (dx, da) = shift[i];
            b.linear_velocity[0] += dx[0] / h;
            b.linear_velocity[1] += dx[1] / h;
            b.angular_velocity += da / h;
            b.angle = previous[i].1 + wrap_angle(b.angle - previous[i].1);
        }
    }

    /// Implicit viscous damping of relative joint velocity; unconditionally
    /// stable and never adds energy.
    fn damp_joints(&mut self, world: &WorldConfig, h: f64) {
        for joint in &self.joints {
            let (p, c) = (joint.parent, joint.child);
            let (iip, iic) = (1.0 / self.bodies[p].inertia, 1.0 / self.bodies[c].inertia);
            let coeff = joint.torque_limit / world.joint_speed_limit;
            let rel = self.bodies[c].angular_velocity - self.bodies[p].angular_velocity;
            let impulse = rel * coeff * h / (1.0 + coeff * h * (iip + iic));
            self.bodies[c].angular_velocity -= impulse * iic;
            self.bodies[p].angular_velocity += impulse * iip;
        }
    }

    /// One Newton step on every joint constraint at once: two anchor rows
    /// per joint plus one angle row for each joint outside its limits.
    /// Solves `J M^-1 J^T lambda = C` and applies `-M^-1 J^T lambda`.
    fn project_joints(&mut self, shift: &mut [(Vec2, f64)]) {
        if self.joints.is_empty() {
            return;
        }
        // Each row: error and the Jacobian on (parent, child) as (x, y, angle).
        let mut rows: Vec<ConstraintRow> = Vec::with_capacity(3 * self.joints.len());
        for j in 0..self.joints.len() {
            let joint = &self.joints[j];
            let (p, c) = (joint.parent, joint.child);
            let (pa, ca) = self.anchor_points(j);
            let rp = [pa[0] - self.bodies[p].position[0], pa[1] - self.bodies[p].position[1]];
            let rc = [ca[0] - self.bodies[c].position[0], ca[1] - self.bodies[c].position[1]];
            rows.push((ca[0] - pa[0], [(p, [-1.0, 0.0, rp[1]]), (c, [1.0, 0.0, -rc[1]])]));
            rows.push((ca[1] - pa[1], [(p, [0.0, -1.0, -rp[0]]), (c, [0.0, 1.0, rc[0]])]));
            let q = self.raw_joint_angle(j);
            let violation = if q < joint.limit_lo {
                q - joint.limit_lo
            } else if q > joint.limit_hi {
                q - joint.limit_hi
            } else {
                0.0
            };
            if violation != 0.0 {
                rows.push((violation, [(p, [0.0, 0.0, -1.0]), (c, [0.0, 0.0, 1.0])]));
            }
        }
        if rows.iter().all(|r| r.0 == 0.0) {
            return;
        }
        let inv: Vec<[f64; 3]> = self
            .bodies
            .iter()
            .map(|b| [1.0 / b.mass, 1.0 / b.mass, 1.0 / b.inertia])
            .collect();
        let n = rows.len();
        let mut k = vec![0.0; n * n];
        let mut err: Vec<f64> = rows.iter().map(|r| r.0).collect();
        for (a, ra) in rows.iter().enumerate() {
            for (b, rb) in rows.iter().enumerate().skip(a) {
                let mut sum = 0.0;
                for &(ba, ja) in &ra.1 {
                    for &(bb, jb) in &rb.1 {
                        if ba == bb {
                            sum += (0..3).map(|d| ja[d] * inv[ba][d] * jb[d]).sum::<f64>();
                        }
                    }
                }
                k[a * n + b] = sum;
                k[b * n + a] = sum;
            }
        }
        let Some(lambda) = solve_dense(&mut k, &mut err, n) else {
            return;
        };
        let mut delta = vec![[0.0; 3]; self.bodies.len()];
        for (row, l) in rows.iter().zip(&lambda) {
            for &(body, jac) in &row.1 {
                for d in 0..3 {
                    delta[body][d] -= inv[body][d] * jac[d] * l;
                }
            }
        }
        for (i, d) in delta.into_iter().enumerate() {
            self.apply_shift(i, [d[0], d[1]], d[2], shift);
        }
    }

    fn apply_shift(&mut self, i: usize, dx: Vec2, da: f64, shift: &mut [(Vec2, f64)]) {
        let b = &mut self.bodies[i];
        b.position[0] += dx[0];
        b.position[1] += dx[1];
        b.angle += da;
        shift[i].0[0] += dx[0];
        shift[i].0[1] += dx[1];
        shift[i].1 += da;
    }

    pub fn head_pose(&self) -> HeadPose {
        head_pose(self)
    }
}

/// Constraint error and its Jacobian on two bodies as `(body, [x, y, angle])`.
type ConstraintRow = (f64, [(usize, [f64; 3]); 2]);

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            b.swap(pivot, col);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[row * n + c] -= f * a[col * n + c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row * n + c] * x[c];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Root-limb readout; `up_projection` is the cosine of the root's tilt.
pub fn head_pose(body: &ArticulatedBody) -> HeadPose {
    let root = &body.bodies[0];
    HeadPose {
        height: root.position[1],
        velocity: root.linear_velocity,
        angular_velocity: root.angular_velocity,
        up_projection: root.angle.cos(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{generate_random, LimbGene};
    use std::collections::BTreeMap;

    fn limb(id: u32, parent: Option<u32>, attach: f64, length: f64, foot: bool) -> LimbGene {
        LimbGene {
            limb_id: id,
            parent_id: parent,
            attach_angle: attach,
            length,
            radius: 0.05,
            density: 1000.0,
            joint_limit_lo: -1.0,
            joint_limit_hi: 1.0,
            torque_limit: 200.0,
            is_foot: foot,
        }
    }

    fn single() -> MorphologyGenome {
        let mut limbs = BTreeMap::new();
        limbs.insert(0, limb(0, None, 0.0, 0.4, true));
        MorphologyGenome { limbs, root_id: 0, mutation_count: 0 }
    }

    #[test]
    fn single_limb_mass_matches_capsule_area() {
        let body = instantiate(&single(), &WorldConfig::default());
        // Rectangle plus two half-disc caps.
        let oracle = 1000.0 * (0.4 * 0.10 + std::f64::consts::PI * 0.05 * 0.05);
        assert!((body.total_mass() - oracle).abs() < 1e-9);
        assert!((body.total_mass() - 47.85).abs() < 0.01);
        assert_eq!(body.joint_count(), 0);
        assert!((body.lowest_point() - SPAWN_CLEARANCE).abs() < 1e-12);
    }

    #[test]
    fn joint_count_is_limbs_minus_one() {
        for seed in 0..50 {
            let g = generate_random(seed);
            let body = instantiate(&g, &WorldConfig::default());
            assert_eq!(body.joint_count(), g.limb_count() - 1);
            assert_eq!(body.foot_count(), g.foot_count());
            assert!(body.max_anchor_separation() < 1e-12);
            assert_eq!(body, instantiate(&g, &WorldConfig::default()));
        }
    }

    #[test]
    fn free_fall_velocity_drop() {
        let world = WorldConfig::default();
        let mut body = instantiate(&single(), &world);
        for b in &mut body.bodies {
            b.position[1] += 10.0;
        }
        let v0 = body.bodies[0].linear_velocity[1];
        let out = body.step(&[], &world).unwrap();
        let dv = v0 - body.bodies[0].linear_velocity[1];
        assert!((dv - world.gravity * world.dt).abs() < 1e-12);
        assert_eq!(out.contacts[0].normal_force, 0.0);
    }

    #[test]
    fn head_pose_projection() {
        let world = WorldConfig::default();
        let mut body = instantiate(&single(), &world);
        assert_eq!(body.head_pose().up_projection, 1.0);
        assert_eq!(body.head_pose().velocity, [0.0, 0.0]);
        body.bodies[0].angle = std::f64::consts::FRAC_PI_2;
        assert!(body.head_pose().up_projection.abs() < 1e-15);
    }

    #[test]
    fn torque_count_checked() {
        let world = WorldConfig::default();
        let mut body = instantiate(&single(), &world);
        assert_eq!(body.step(&[1.0], &world), Err(StepError::TorqueCount { expected: 0, got: 1 }));
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig::default().validate().is_ok());
        let bad = WorldConfig { dt: 0.0, ..WorldConfig::default() };
        assert_eq!(bad.validate(), Err(WorldConfigError::NotPositive("dt")));
        let bad = WorldConfig { contact_damping: -1.0, ..WorldConfig::default() };
        assert_eq!(bad.validate(), Err(WorldConfigError::Negative("contact_damping")));
    }
}
