#![allow(dead_code)]

use evoloco_core::evolution::{AgentStatus, LogEntry, Record, RegistryState};
use evoloco_core::{generate_random, serialize_genome, topological_signature, Fitness};

/// Records for hand-written `(id, parent, fitness)` rows, given in id order.
pub fn synthetic_records(rows: &[(u64, Option<u64>, Fitness)]) -> Vec<Record> {
    let mut mutation_counts = std::collections::BTreeMap::new();
    let mut out = Vec::new();
    for &(id, parent, fitness) in rows {
        let mc = parent.map_or(0, |p| mutation_counts[&p] + 1);
        mutation_counts.insert(id, mc);
        let mut genome = generate_random(1000 + id);
        genome.mutation_count = mc;
        out.extend([
            Record::AgentCreated {
                agent_id: id,
                parent_id: parent,
                generation: 0,
                mutation_count: mc,
                signature: topological_signature(&genome).to_string(),
                genome_xml: serialize_genome(&genome),
                contestants: Vec::new(),
                mutation: None,
            },
            Record::FitnessSet {
                agent_id: id,
                fitness,
                status: if fitness == Fitness::Diverged { AgentStatus::Failed } else { AgentStatus::Trained },
                window_steps: 1,
                duration_ms: 1,
            },
            Record::SlotCompleted { slot: id, agent_id: id },
        ]);
    }
    out
}

pub fn synthetic_registry(rows: &[(u64, Option<u64>, Fitness)]) -> RegistryState {
    let mut state = RegistryState::default();
    for (seq, r) in synthetic_records(rows).into_iter().enumerate() {
        state.apply(&LogEntry::new(seq as u64, r), seq + 1).unwrap();
    }
    state
}

/// The ten-agent lineage used by the mutation-cycle oracle.
pub fn ten_agent_registry() -> RegistryState {
    let f = Fitness::Value;
    synthetic_registry(&[
        (0, None, f(1.0)),
        (1, None, f(2.0)),
        (2, None, f(-4.0)),
        (3, Some(0), f(1.5)),
        (4, Some(1), f(1.0)),
        (5, Some(2), f(-2.0)),
        (6, Some(3), f(3.0)),
        (7, Some(4), Fitness::Diverged),
        (8, Some(6), f(0.5)),
        (9, Some(5), f(-6.0)),
    ])
}

/// Worked by hand from `ten_agent_registry`:
/// (cycle, count, mean fitness, mean improvement %).
pub fn ten_agent_oracle() -> Vec<(u32, usize, Option<f64>, Option<f64>)> {
    vec![
        // founders 1, 2, -4
        (0, 3, Some(-1.0 / 3.0), None),
        // 1.5 (+50% of 1), 1.0 (-50% of 2), -2 (+50% of -4)
        (1, 3, Some(0.5 / 3.0), Some(50.0 / 3.0)),
        // 3.0 (+200% of 1), diverged (skipped), -6 (-50% of -4)
        (2, 3, Some(-1.5), Some(75.0)),
        // 0.5 (-50% of 1)
        (3, 1, Some(0.5), Some(-50.0)),
    ]
}
