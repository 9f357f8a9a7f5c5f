//! Tree-structured agent genomes: random generation, the initial
//! population pool, mutation operators, uniqueness signatures and the XML
//! dialect used to store them on disk.

mod signature;
mod xml;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derived_rng, rng_from_seed, Rng, Stream};

pub use signature::{topological_signature, TopologicalSignature, ANGLE_BIN, DENSITY_BIN, LENGTH_BIN};
pub use xml::{deserialize_genome, serialize_genome, XmlError};

pub const MAX_LIMBS: usize = 10;

/// Admissible parameter ranges for a limb.
pub mod ranges {
    pub const LENGTH: (f64, f64) = (0.1, 0.8);
    pub const RADIUS: (f64, f64) = (0.02, 0.08);
    pub const DENSITY: (f64, f64) = (500.0, 3000.0);
    pub const JOINT: (f64, f64) = (-2.0, 2.0);
    /// Sampling range for fresh limbs; validation only requires a positive limit.
    pub const TORQUE: (f64, f64) = (150.0, 1500.0);
    pub const JOINT_LO: (f64, f64) = (-1.5, -0.25);
    pub const JOINT_HI: (f64, f64) = (0.25, 1.5);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbGene {
    pub limb_id: u32,
    pub parent_id: Option<u32>,
    /// Orientation of this limb's axis relative to the parent's axis. For the
    /// root it is the initial world orientation of the torso.
    pub attach_angle: f64,
    pub length: f64,
    pub radius: f64,
    pub density: f64,
    pub joint_limit_lo: f64,
    pub joint_limit_hi: f64,
    pub torque_limit: f64,
    pub is_foot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyGenome {
    pub limbs: BTreeMap<u32, LimbGene>,
    pub root_id: u32,
    pub mutation_count: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenomeError {
    #[error("genome has no limbs")]
    Empty,
    #[error("genome has {count} limbs, at most {MAX_LIMBS} are allowed")]
    TooManyLimbs { count: usize },
    #[error("limb {limb_id}: stored under key {key}")]
    KeyMismatch { limb_id: u32, key: u32 },
    #[error("limb {limb_id}: parent is itself")]
    SelfLoop { limb_id: u32 },
    #[error("limb {limb_id}: parent chain forms a cycle")]
    Cycle { limb_id: u32 },
    #[error("limb {limb_id}: parent {parent_id} does not exist")]
    Orphan { limb_id: u32, parent_id: u32 },
    #[error("limb {limb_id}: second parentless limb (root is {root_id})")]
    MultipleRoots { limb_id: u32, root_id: u32 },
    #[error("root limb {root_id} is missing or has a parent")]
    BadRoot { root_id: u32 },
    #[error("limb {limb_id}: {field} = {value} outside [{lo}, {hi}]")]
    OutOfRange { limb_id: u32, field: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("limb {limb_id}: joint_limit_lo {lo} must be below joint_limit_hi {hi}")]
    JointLimits { limb_id: u32, lo: f64, hi: f64 },
    #[error("limb {limb_id}: foot flag must be set exactly on leaf limbs")]
    FootFlag { limb_id: u32 },
}

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("only {found} unique genomes found among {tried} candidates (wanted {wanted})")]
    DesignSpaceExhausted { wanted: usize, found: usize, tried: usize },
}

/// Rounds to six significant digits, the precision of the XML dialect, so
/// genomes survive a write/read cycle bit-for-bit.
pub fn round_sig6(x: f64) -> f64 {
    xml::format_sig6(x).parse().expect("formatted float parses")
}

impl LimbGene {
    fn random(limb_id: u32, parent_id: Option<u32>, rng: &mut Rng) -> Self {
        let attach_angle = if parent_id.is_some() { round_angle(rng.random_range(-PI..=PI)) } else { 0.0 };
        let mut uni = |(lo, hi): (f64, f64)| round_sig6(rng.random_range(lo..=hi));
        LimbGene {
            limb_id,
            parent_id,
            attach_angle,
            length: uni(ranges::LENGTH),
            radius: uni(ranges::RADIUS),
            density: uni(ranges::DENSITY),
            joint_limit_lo: uni(ranges::JOINT_LO),
            joint_limit_hi: uni(ranges::JOINT_HI),
            torque_limit: uni(ranges::TORQUE),
            is_foot: true,
        }
    }

    fn validate(&self) -> Result<(), GenomeError> {
        let id = self.limb_id;
        let check = |field: &'static str, value: f64, (lo, hi): (f64, f64)| {
            if value.is_finite() && value >= lo && value <= hi {
                Ok(())
            } else {
                Err(GenomeError::OutOfRange { limb_id: id, field, value, lo, hi })
            }
        };
        check("attach_angle", self.attach_angle, (-PI, PI))?;
        check("length", self.length, ranges::LENGTH)?;
        check("radius", self.radius, ranges::RADIUS)?;
        check("density", self.density, ranges::DENSITY)?;
        check("joint_lo", self.joint_limit_lo, ranges::JOINT)?;
        check("joint_hi", self.joint_limit_hi, ranges::JOINT)?;
        check("torque_limit", self.torque_limit, (f64::MIN_POSITIVE, f64::MAX))?;
        if self.joint_limit_lo >= self.joint_limit_hi {
            return Err(GenomeError::JointLimits {
                limb_id: id,
                lo: self.joint_limit_lo,
                hi: self.joint_limit_hi,
            });
        }
        Ok(())
    }
}

impl MorphologyGenome {
    pub fn root(&self) -> &LimbGene {
        &self.limbs[&self.root_id]
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    /// Number of actuated joints (every limb except the root has one).
    pub fn joint_count(&self) -> usize {
        self.limbs.len().saturating_sub(1)
    }

    pub fn foot_count(&self) -> usize {
        self.limbs.values().filter(|l| l.is_foot).count()
    }

    /// Children of every limb, each list in ascending limb_id order.
    pub fn children(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = self.limbs.keys().map(|&k| (k, Vec::new())).collect();
        for limb in self.limbs.values() {
            if let Some(p) = limb.parent_id {
                if let Some(list) = out.get_mut(&p) {
                    list.push(limb.limb_id);
                }
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<u32> {
        self.children()
            .into_iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(id, _)| id)
            .collect()
    }

    /// Limb ids in breadth-first order from the root; parents always precede
    /// their children.
    pub fn bfs_order(&self) -> Vec<u32> {
        let children = self.children();
        let mut order = vec![self.root_id];
        let mut i = 0;
        while i < order.len() {
            order.extend_from_slice(&children[&order[i]]);
            i += 1;
        }
        order
    }

    /// Number of edges between a limb and the root.
    pub fn depth(&self, limb_id: u32) -> usize {
        let mut depth = 0;
        let mut cur = self.limbs[&limb_id].parent_id;
        while let Some(p) = cur {
            depth += 1;
            cur = self.limbs[&p].parent_id;
        }
        depth
    }

    pub(crate) fn assign_feet(&mut self) {
        let leaves: HashSet<u32> = self.leaves().into_iter().collect();
        for limb in self.limbs.values_mut() {
            limb.is_foot = leaves.contains(&limb.limb_id);
        }
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        if self.limbs.is_empty() {
            return Err(GenomeError::Empty);
        }
        if self.limbs.len() > MAX_LIMBS {
            return Err(GenomeError::TooManyLimbs { count: self.limbs.len() });
        }
        match self.limbs.get(&self.root_id) {
            Some(root) if root.parent_id.is_none() => {}
            _ => return Err(GenomeError::BadRoot { root_id: self.root_id }),
        }
        for (&key, limb) in &self.limbs {
            if key != limb.limb_id {
                return Err(GenomeError::KeyMismatch { limb_id: limb.limb_id, key });
            }
            limb.validate()?;
            match limb.parent_id {
                None if key != self.root_id => {
                    return Err(GenomeError::MultipleRoots { limb_id: key, root_id: self.root_id })
                }
                None => {}
                Some(p) if p == key => return Err(GenomeError::SelfLoop { limb_id: key }),
                Some(p) if !self.limbs.contains_key(&p) => {
                    return Err(GenomeError::Orphan { limb_id: key, parent_id: p })
                }
                Some(_) => {}
            }
        }
        // Every parent chain must reach the root within limb_count hops.
        for &id in self.limbs.keys() {
            let mut cur = id;
            let mut hops = 0;
            while let Some(p) = self.limbs[&cur].parent_id {
                hops += 1;
                if hops > self.limbs.len() {
                    return Err(GenomeError::Cycle { limb_id: id });
                }
                cur = p;
            }
        }
        let leaves: BTreeSet<u32> = self.leaves().into_iter().collect();
        for limb in self.limbs.values() {
            if limb.is_foot != leaves.contains(&limb.limb_id) {
                return Err(GenomeError::FootFlag { limb_id: limb.limb_id });
            }
        }
        Ok(())
    }

    /// Copy with limb ids remapped through `map` (which must be a bijection
    /// over the current ids).
    pub fn relabeled(&self, map: &BTreeMap<u32, u32>) -> MorphologyGenome {
        let limbs = self
            .limbs
            .values()
            .map(|l| {
                let mut l = l.clone();
                l.limb_id = map[&l.limb_id];
                l.parent_id = l.parent_id.map(|p| map[&p]);
                (l.limb_id, l)
            })
            .collect();
        MorphologyGenome { limbs, root_id: map[&self.root_id], mutation_count: self.mutation_count }
    }

    fn next_limb_id(&self) -> u32 {
        self.limbs.keys().next_back().map_or(0, |k| k + 1)
    }
}

fn grow(genome: &mut MorphologyGenome, rng: &mut Rng) {
    let ids: Vec<u32> = genome.limbs.keys().copied().collect();
    let parent = ids[rng.random_range(0..ids.len())];
    let id = genome.next_limb_id();
    genome.limbs.insert(id, LimbGene::random(id, Some(parent), rng));
}

/// Random genome: a root limb followed by 1 to 6 grow operations, each
/// attaching a fresh limb to a uniformly chosen existing limb.
pub fn generate_random(rng_seed: u64) -> MorphologyGenome {
    let mut rng = rng_from_seed(rng_seed);
    generate_with_rng(&mut rng)
}

pub fn generate_with_rng(rng: &mut Rng) -> MorphologyGenome {
    loop {
        let mut limbs = BTreeMap::new();
        limbs.insert(0, LimbGene::random(0, None, rng));
        let mut genome = MorphologyGenome { limbs, root_id: 0, mutation_count: 0 };
        let grows = rng.random_range(1..=6);
        for _ in 0..grows {
            grow(&mut genome, rng);
        }
        genome.assign_feet();
        if genome.validate().is_ok() {
            return genome;
        }
    }
}

/// Draws `10 * p` candidates and keeps the first `p` with distinct
/// signatures, drawing more (up to `100 * p` in total) if needed.
pub fn initialize_population(p: usize, rng_seed: u64) -> Result<Vec<MorphologyGenome>, PopulationError> {
    if p == 0 {
        return Err(PopulationError::EmptyPopulation);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(p);
    let mut tried = 0usize;
    let mut consider = |idx: usize, out: &mut Vec<MorphologyGenome>| {
        let mut rng = derived_rng(rng_seed, Stream::Population, idx as u64);
        let g = generate_with_rng(&mut rng);
        if seen.insert(topological_signature(&g)) && out.len() < p {
            out.push(g);
        }
    };
    while tried < 10 * p {
        consider(tried, &mut out);
        tried += 1;
    }
    while out.len() < p && tried < 100 * p {
        consider(tried, &mut out);
        tried += 1;
    }
    if out.len() < p {
        return Err(PopulationError::DesignSpaceExhausted { wanted: p, found: out.len(), tried });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    AddLimb,
    DeleteLimb,
    ChangeLength,
    ChangeAngle,
    ChangeDensity,
}

impl MutationOp {
    pub const ALL: [MutationOp; 5] = [
        MutationOp::AddLimb,
        MutationOp::DeleteLimb,
        MutationOp::ChangeLength,
        MutationOp::ChangeAngle,
        MutationOp::ChangeDensity,
    ];
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MutationOp::AddLimb => "add_limb",
            MutationOp::DeleteLimb => "delete_limb",
            MutationOp::ChangeLength => "change_length",
            MutationOp::ChangeAngle => "change_angle",
            MutationOp::ChangeDensity => "change_density",
        };
        f.write_str(s)
    }
}

/// Largest six-digit angle inside [-pi, pi].
#[allow(clippy::approx_constant)]
const ANGLE_LIMIT: f64 = 3.14159;

fn round_angle(a: f64) -> f64 {
    round_sig6(a).clamp(-ANGLE_LIMIT, ANGLE_LIMIT)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Moves `value` by a random step of `step` magnitude, reflecting the
/// direction when the step would leave `[lo, hi]`.
fn perturb(value: f64, (lo, hi): (f64, f64), step: (f64, f64), rng: &mut Rng) -> f64 {
    let delta = rng.random_range(step.0..=step.1);
    let up = rng.random_bool(0.5);
    let candidate = if up { value + delta } else { value - delta };
    let v = if candidate < lo || candidate > hi {
        if up {
            value - delta
        } else {
            value + delta
        }
    } else {
        candidate
    };
    round_sig6(v.clamp(lo, hi))
}

/// Applies one specific operator, or returns `None` if it cannot apply
/// (adding at the limb cap, deleting from a root-only genome).
pub fn apply_mutation(genome: &MorphologyGenome, op: MutationOp, rng: &mut Rng) -> Option<MorphologyGenome> {
    let mut child = genome.clone();
    let ids: Vec<u32> = genome.limbs.keys().copied().collect();
    let pick = |rng: &mut Rng| ids[rng.random_range(0..ids.len())];
    match op {
        MutationOp::AddLimb => {
            if genome.limb_count() >= MAX_LIMBS {
                return None;
            }
            grow(&mut child, rng);
            child.assign_feet();
        }
        MutationOp::DeleteLimb => {
            let leaves: Vec<u32> = genome.leaves().into_iter().filter(|&l| l != genome.root_id).collect();
            if leaves.is_empty() {
                return None;
            }
            let victim = leaves[rng.random_range(0..leaves.len())];
            child.limbs.remove(&victim);
            child.assign_feet();
        }
        MutationOp::ChangeLength => {
            let id = pick(rng);
            let limb = child.limbs.get_mut(&id)?;
            limb.length = perturb(limb.length, ranges::LENGTH, (1.05 * LENGTH_BIN, 0.2), rng);
        }
        MutationOp::ChangeDensity => {
            let id = pick(rng);
            let limb = child.limbs.get_mut(&id)?;
            limb.density = perturb(limb.density, ranges::DENSITY, (1.05 * DENSITY_BIN, 750.0), rng);
        }
        MutationOp::ChangeAngle => {
            let id = pick(rng);
            let limb = child.limbs.get_mut(&id)?;
            let delta = rng.random_range(1.05 * ANGLE_BIN..=PI / 4.0);
            let signed = if rng.random_bool(0.5) { delta } else { -delta };
            limb.attach_angle = round_angle(wrap_angle(limb.attach_angle + signed));
        }
    }
    child.mutation_count = genome.mutation_count + 1;
    debug_assert!(child.validate().is_ok());
    Some(child)
}

/// One uniformly drawn mutation; inapplicable draws are resampled.
pub fn mutate(genome: &MorphologyGenome, rng_seed: u64) -> MorphologyGenome {
    let mut rng = rng_from_seed(rng_seed);
    mutate_with_rng(genome, &mut rng).0
}

pub fn mutate_with_rng(genome: &MorphologyGenome, rng: &mut Rng) -> (MorphologyGenome, MutationOp) {
    loop {
        let op = MutationOp::ALL[rng.random_range(0..MutationOp::ALL.len())];
        if let Some(child) = apply_mutation(genome, op, rng) {
            return (child, op);
        }
    }
}

/// Mutation with a forced first draw; if it is inapplicable the operator is
/// resampled like in [`mutate`].
pub fn mutate_forcing(genome: &MorphologyGenome, first: MutationOp, rng: &mut Rng) -> (MorphologyGenome, MutationOp) {
    match apply_mutation(genome, first, rng) {
        Some(child) => (child, first),
        None => mutate_with_rng(genome, rng),
    }
}

/// Two-limb reference body: a level torso with one leg hanging from its
/// front end. Small enough to learn to shuffle forward within a desk-scale
/// training budget.
pub fn pendulum_walker() -> MorphologyGenome {
    let torso = LimbGene {
        limb_id: 0,
        parent_id: None,
        attach_angle: 0.0,
        length: 0.4,
        radius: 0.04,
        density: 1000.0,
        joint_limit_lo: -1.0,
        joint_limit_hi: 1.0,
        torque_limit: 300.0,
        is_foot: false,
    };
    // Straight down, as written to XML.
    #[allow(clippy::approx_constant)]
    let leg = LimbGene { limb_id: 1, parent_id: Some(0), attach_angle: -1.5708, is_foot: true, ..torso.clone() };
    MorphologyGenome { limbs: BTreeMap::from([(0, torso), (1, leg)]), root_id: 0, mutation_count: 0 }
}
