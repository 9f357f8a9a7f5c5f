use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MorphologyGenome;

pub const LENGTH_BIN: f64 = 0.05;
pub const ANGLE_BIN: f64 = PI / 16.0;
pub const DENSITY_BIN: f64 = 250.0;

/// Canonical digest of a genome as an unlabeled rooted tree with quantized
/// limb parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopologicalSignature(pub [u8; 32]);

impl fmt::Display for TopologicalSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

pub(crate) fn quantize(value: f64, bin: f64) -> i64 {
    (value / bin).floor() as i64
}

/// (length bin, angle bin, density bin) of a limb.
pub(crate) fn limb_bins(limb: &super::LimbGene) -> [i64; 3] {
    [
        quantize(limb.length, LENGTH_BIN),
        quantize(limb.attach_angle + PI, ANGLE_BIN),
        quantize(limb.density, DENSITY_BIN),
    ]
}

pub fn topological_signature(genome: &MorphologyGenome) -> TopologicalSignature {
    let children = genome.children();
    let mut digests: BTreeMap<u32, [u8; 32]> = BTreeMap::new();
    // Reverse BFS order visits children before parents.
    for id in genome.bfs_order().into_iter().rev() {
        let mut kids: Vec<[u8; 32]> = children[&id].iter().map(|c| digests[c]).collect();
        kids.sort_unstable();
        let mut h = Sha256::new();
        h.update(b"limb");
        for b in limb_bins(&genome.limbs[&id]) {
            h.update(b.to_le_bytes());
        }
        h.update((kids.len() as u64).to_le_bytes());
        for k in &kids {
            h.update(k);
        }
        digests.insert(id, h.finalize().into());
    }
    TopologicalSignature(digests[&genome.root_id])
}
