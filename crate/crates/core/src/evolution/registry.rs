//! Append-only agent registry persisted as `registry.ndjson`.
//!
//! Each line is one record with a gap-free sequence number and a truncated
//! SHA-256 checksum over the line's other fields. A finished slot is
//! committed as one write of three lines (`agent_created`, `fitness_set`,
//! `slot_completed`); a torn tail left by a killed process is cut back to the
//! last committed line when the registry is next opened. All mutation goes
//! through [`Registry::transact`], which holds an exclusive lock on a
//! sibling lock file, so threads and processes sharing a directory see one
//! linear history.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::morphology::{deserialize_genome, topological_signature, MorphologyGenome};
use crate::ppo::Fitness;

pub const REGISTRY_FILE: &str = "registry.ndjson";
const LOCK_FILE: &str = "registry.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Trained,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    AgentCreated {
        agent_id: u64,
        parent_id: Option<u64>,
        generation: u64,
        mutation_count: u32,
        signature: String,
        genome_xml: String,
        #[serde(default)]
        contestants: Vec<u64>,
        #[serde(default)]
        mutation: Option<String>,
    },
    FitnessSet {
        agent_id: u64,
        fitness: Fitness,
        status: AgentStatus,
        window_steps: u64,
        duration_ms: u64,
    },
    SlotClaimed {
        slot: u64,
        worker: u32,
        session: String,
        lease_expires_ms: u64,
    },
    SlotCompleted {
        slot: u64,
        agent_id: u64,
    },
    SlotReleased {
        slot: u64,
        session: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub record: Record,
    pub checksum: String,
}

#[derive(Serialize)]
struct Unsigned<'a> {
    seq: u64,
    #[serde(flatten)]
    record: &'a Record,
}

fn checksum(seq: u64, record: &Record) -> String {
    let body = serde_json::to_string(&Unsigned { seq, record }).expect("records serialize");
    hex::encode(&Sha256::digest(body.as_bytes())[..8])
}

impl LogEntry {
    pub fn new(seq: u64, record: Record) -> Self {
        let checksum = checksum(seq, &record);
        LogEntry { seq, record, checksum }
    }

    pub fn verify(&self) -> bool {
        checksum(self.seq, &self.record) == self.checksum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub agent_id: u64,
    pub parent_id: Option<u64>,
    pub genome: MorphologyGenome,
    pub genome_xml: String,
    pub signature: String,
    pub fitness: Fitness,
    pub status: AgentStatus,
    pub mutation_count: u32,
    pub created_in_generation: u64,
    pub contestants: Vec<u64>,
    pub mutation: Option<String>,
    pub window_steps: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub slot: u64,
    pub worker: u32,
    pub session: String,
    pub lease_expires_ms: u64,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry I/O: {0}")]
    Io(#[from] io::Error),
    #[error("registry line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Clone)]
struct Pending {
    created: AgentRecord,
    fitness_set: bool,
}

/// State reconstructed by replaying the log.
#[derive(Debug, Clone, Default)]
pub struct RegistryState {
    /// Finished agents (trained or failed).
    pub agents: BTreeMap<u64, AgentRecord>,
    /// Live slot claims.
    pub claims: BTreeMap<u64, Claim>,
    pub completed: BTreeSet<u64>,
    pub next_seq: u64,
    pending: BTreeMap<u64, Pending>,
}

impl RegistryState {
    /// Q: agents whose training has finished, trained or failed.
    pub fn finished_count(&self) -> u64 {
        self.agents.len() as u64
    }

    pub fn median_duration_ms(&self) -> Option<u64> {
        let mut d: Vec<u64> = self.agents.values().map(|a| a.duration_ms).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_unstable();
        Some(d[d.len() / 2])
    }

    /// True when the log ends on a committed boundary.
    pub fn is_settled(&self) -> bool {
        self.pending.is_empty()
    }

    /// Digest of everything that defines the evolved population: ids,
    /// lineage, genomes, fitness, tournament draws. Timing and claim traffic
    /// are excluded, so a resumed run and an uninterrupted one agree.
    pub fn population_digest(&self) -> String {
        let mut h = Sha256::new();
        for a in self.agents.values() {
            let line = serde_json::json!({
                "agent_id": a.agent_id,
                "parent_id": a.parent_id,
                "genome_xml": a.genome_xml,
                "signature": a.signature,
                "fitness": a.fitness,
                "status": a.status,
                "mutation_count": a.mutation_count,
                "generation": a.created_in_generation,
                "contestants": a.contestants,
                "mutation": a.mutation,
                "window_steps": a.window_steps,
            });
            h.update(line.to_string().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn apply(&mut self, entry: &LogEntry, line: usize) -> Result<(), RegistryError> {
        let bad = |reason: String| RegistryError::Corrupt { line, reason };
        if entry.seq != self.next_seq {
            return Err(bad(format!("sequence {} where {} was expected", entry.seq, self.next_seq)));
        }
        if !entry.verify() {
            return Err(bad("checksum mismatch".into()));
        }
        match &entry.record {
            Record::AgentCreated {
                agent_id,
                parent_id,
                generation,
                mutation_count,
                signature,
                genome_xml,
                contestants,
                mutation,
            } => {
                if self.agents.contains_key(agent_id) || self.pending.contains_key(agent_id) {
                    return Err(bad(format!("agent {agent_id} created twice")));
                }
                if let Some(p) = parent_id {
                    let parent = self.agents.get(p).ok_or_else(|| bad(format!("parent {p} of {agent_id} unknown")))?;
                    if p >= agent_id {
                        return Err(bad(format!("parent {p} not older than {agent_id}")));
                    }
                    if *mutation_count != parent.mutation_count + 1 {
                        return Err(bad(format!("agent {agent_id} mutation_count breaks its lineage")));
                    }
                } else if *mutation_count != 0 {
                    return Err(bad(format!("founder {agent_id} has mutation_count {mutation_count}")));
                }
                let genome = deserialize_genome(genome_xml).map_err(|e| bad(format!("agent {agent_id} genome: {e}")))?;
                if topological_signature(&genome).to_string() != *signature {
                    return Err(bad(format!("agent {agent_id} signature does not match its genome")));
                }
                let created = AgentRecord {
                    agent_id: *agent_id,
                    parent_id: *parent_id,
                    genome,
                    genome_xml: genome_xml.clone(),
                    signature: signature.clone(),
                    fitness: Fitness::Diverged,
                    status: AgentStatus::Failed,
                    mutation_count: *mutation_count,
                    created_in_generation: *generation,
                    contestants: contestants.clone(),
                    mutation: mutation.clone(),
                    window_steps: 0,
                    duration_ms: 0,
                };
                self.pending.insert(*agent_id, Pending { created, fitness_set: false });
            }
            Record::FitnessSet { agent_id, fitness, status, window_steps, duration_ms } => {
                if self.agents.contains_key(agent_id) {
                    return Err(bad(format!("fitness of agent {agent_id} rewritten")));
                }
                let p = self.pending.get_mut(agent_id).ok_or_else(|| bad(format!("fitness for unknown agent {agent_id}")))?;
                if p.fitness_set {
                    return Err(bad(format!("fitness of agent {agent_id} rewritten")));
                }
                p.fitness_set = true;
                p.created.fitness = *fitness;
                p.created.status = *status;
                p.created.window_steps = *window_steps;
                p.created.duration_ms = *duration_ms;
            }
            Record::SlotClaimed { slot, worker, session, lease_expires_ms } => {
                if self.completed.contains(slot) {
                    return Err(bad(format!("claim on completed slot {slot}")));
                }
                if self.claims.contains_key(slot) {
                    return Err(bad(format!("slot {slot} claimed twice")));
                }
                self.claims.insert(
                    *slot,
                    Claim { slot: *slot, worker: *worker, session: session.clone(), lease_expires_ms: *lease_expires_ms },
                );
            }
            Record::SlotCompleted { slot, agent_id } => {
                if slot != agent_id {
                    return Err(bad(format!("slot {slot} completed with agent {agent_id}")));
                }
                if self.completed.contains(slot) {
                    return Err(bad(format!("slot {slot} completed twice")));
                }
                match self.pending.remove(agent_id) {
                    Some(p) if p.fitness_set => {
                        self.agents.insert(*agent_id, p.created);
                    }
                    _ => return Err(bad(format!("slot {slot} completed before its agent was recorded"))),
                }
                self.completed.insert(*slot);
                self.claims.remove(slot);
            }
            Record::SlotReleased { slot, .. } => {
                if self.claims.remove(slot).is_none() {
                    return Err(bad(format!("release of unclaimed slot {slot}")));
                }
            }
        }
        self.next_seq += 1;
        Ok(())
    }
}

/// Handle on a registry directory. Cheap to open several per process.
#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    lock: File,
    state: RegistryState,
    /// Bytes of the log already replayed into `state`.
    offset: u64,
    lines: usize,
}

impl Registry {
    /// Opens (creating if needed) the registry in `dir`, replays it and cuts
    /// off any torn tail.
    pub fn open(dir: &Path) -> Result<Self, RegistryError> {
        fs::create_dir_all(dir)?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(dir.join(LOCK_FILE))?;
        let mut reg = Registry { dir: dir.to_path_buf(), lock, state: RegistryState::default(), offset: 0, lines: 0 };
        reg.lock.lock()?;
        let result = reg.recover();
        reg.lock.unlock()?;
        result.map(|_| reg)
    }

    /// Read-only replay, without touching the directory.
    pub fn load(dir: &Path) -> Result<RegistryState, RegistryError> {
        let bytes = match fs::read(dir.join(REGISTRY_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut state = RegistryState::default();
        replay(&bytes, &mut state, 0)?;
        Ok(state)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(REGISTRY_FILE)
    }

    pub fn state(&self) -> &RegistryState {
        &self.state
    }

    fn recover(&mut self) -> Result<(), RegistryError> {
        let path = self.path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                File::create(&path)?;
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        let mut state = RegistryState::default();
        let replayed = replay(&bytes, &mut state, 0)?;
        // Roll back to the last committed boundary.
        let (keep, keep_state, lines) = if state.is_settled() {
            (replayed.bytes, state, replayed.lines)
        } else {
            let mut settled = RegistryState::default();
            let cut = replayed.settled_bytes;
            let r = replay(&bytes[..cut], &mut settled, 0)?;
            (cut, settled, r.lines)
        };
        if keep < bytes.len() {
            log::warn!("registry: discarding {} bytes of uncommitted tail", bytes.len() - keep);
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(keep as u64)?;
            f.sync_all()?;
        }
        self.state = keep_state;
        self.offset = keep as u64;
        self.lines = lines;
        Ok(())
    }

    fn catch_up(&mut self) -> Result<(), RegistryError> {
        let mut f = File::open(self.path())?;
        f.seek(SeekFrom::Start(self.offset))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        let r = replay(&bytes, &mut self.state, self.lines)?;
        self.offset += r.bytes as u64;
        self.lines += r.lines;
        Ok(())
    }

    /// Picks up records appended by other handles.
    pub fn refresh(&mut self) -> Result<(), RegistryError> {
        self.lock.lock_shared()?;
        let r = self.catch_up();
        self.lock.unlock()?;
        r
    }

    /// Runs `f` on the latest state under the exclusive lock and appends the
    /// records it returns as one write.
    pub fn transact<T>(&mut self, f: impl FnOnce(&RegistryState) -> (Vec<Record>, T)) -> Result<T, RegistryError> {
        self.lock.lock()?;
        let r = self.transact_locked(f);
        self.lock.unlock()?;
        r
    }

    fn transact_locked<T>(&mut self, f: impl FnOnce(&RegistryState) -> (Vec<Record>, T)) -> Result<T, RegistryError> {
        self.catch_up()?;
        let (records, out) = f(&self.state);
        if records.is_empty() {
            return Ok(out);
        }
        let mut next = self.state.clone();
        let mut buf = String::new();
        for record in records {
            let entry = LogEntry::new(next.next_seq, record);
            next.apply(&entry, self.lines + 1)?;
            buf.push_str(&serde_json::to_string(&entry).expect("records serialize"));
            buf.push('\n');
            self.lines += 1;
        }
        let mut file = OpenOptions::new().append(true).open(self.path())?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        self.state = next;
        self.offset += buf.len() as u64;
        Ok(out)
    }
}

struct Replayed {
    /// Bytes consumed (complete lines only).
    bytes: usize,
    /// Prefix length ending on a committed boundary.
    settled_bytes: usize,
    lines: usize,
}

fn replay(bytes: &[u8], state: &mut RegistryState, first_line: usize) -> Result<Replayed, RegistryError> {
    let mut pos = 0;
    let mut settled_bytes = 0;
    let mut lines = 0;
    while let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') {
        let raw = &bytes[pos..pos + nl];
        let line_no = first_line + lines + 1;
        let text = std::str::from_utf8(raw).map_err(|_| RegistryError::Corrupt { line: line_no, reason: "not UTF-8".into() })?;
        let entry: LogEntry = serde_json::from_str(text)
            .map_err(|e| RegistryError::Corrupt { line: line_no, reason: format!("unparsable record: {e}") })?;
        state.apply(&entry, line_no)?;
        pos += nl + 1;
        lines += 1;
        if state.is_settled() {
            settled_bytes = pos;
        }
    }
    Ok(Replayed { bytes: pos, settled_bytes, lines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{generate_random, serialize_genome};

    fn created(id: u64) -> Record {
        let g = generate_random(id);
        Record::AgentCreated {
            agent_id: id,
            parent_id: None,
            generation: 0,
            mutation_count: 0,
            signature: topological_signature(&g).to_string(),
            genome_xml: serialize_genome(&g),
            contestants: vec![],
            mutation: None,
        }
    }

    fn finish(id: u64, fitness: f64) -> Vec<Record> {
        vec![
            created(id),
            Record::FitnessSet {
                agent_id: id,
                fitness: Fitness::Value(fitness),
                status: AgentStatus::Trained,
                window_steps: 10,
                duration_ms: 5,
            },
            Record::SlotCompleted { slot: id, agent_id: id },
        ]
    }

    #[test]
    fn entries_round_trip_and_detect_tampering() {
        let e = LogEntry::new(3, Record::SlotCompleted { slot: 4, agent_id: 4 });
        let line = serde_json::to_string(&e).unwrap();
        let back: LogEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back, e);
        assert!(back.verify());
        let tampered: LogEntry = serde_json::from_str(&line.replace("\"slot\":4", "\"slot\":5")).unwrap();
        assert!(!tampered.verify());
        let f = LogEntry::new(0, finish(0, 0.1 + 0.2)[1].clone());
        let back: LogEntry = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert!(back.verify());
    }

    #[test]
    fn replay_matches_live_state_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path()).unwrap();
        for id in 0..3 {
            reg.transact(|_| (finish(id, id as f64), ())).unwrap();
        }
        let live = reg.state().population_digest();
        assert_eq!(Registry::load(dir.path()).unwrap().population_digest(), live);

        // Torn write: a committed group cut in half.
        let path = dir.path().join(REGISTRY_FILE);
        let clean = fs::read(&path).unwrap();
        let mut next = Registry::open(dir.path()).unwrap();
        next.transact(|_| (finish(3, 3.0), ())).unwrap();
        let full = fs::read(&path).unwrap();
        let cut = clean.len() + (full.len() - clean.len()) / 2;
        fs::write(&path, &full[..cut]).unwrap();
        let reopened = Registry::open(dir.path()).unwrap();
        assert_eq!(reopened.state().finished_count(), 3);
        assert_eq!(reopened.state().population_digest(), live);
        assert_eq!(fs::read(&path).unwrap(), clean);
    }

    #[test]
    fn second_handle_sees_first_handle_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Registry::open(dir.path()).unwrap();
        let mut b = Registry::open(dir.path()).unwrap();
        a.transact(|_| (finish(0, 1.0), ())).unwrap();
        b.transact(|s| {
            assert_eq!(s.finished_count(), 1);
            (finish(1, 2.0), ())
        })
        .unwrap();
        a.refresh().unwrap();
        assert_eq!(a.state().finished_count(), 2);
        assert_eq!(a.state().next_seq, 6);
    }

    #[test]
    fn rejects_fitness_rewrite_and_gaps() {
        let mut s = RegistryState::default();
        let recs = finish(0, 1.0);
        for (i, r) in recs.iter().enumerate() {
            s.apply(&LogEntry::new(i as u64, r.clone()), i + 1).unwrap();
        }
        let again = LogEntry::new(3, recs[1].clone());
        assert!(matches!(s.apply(&again, 4), Err(RegistryError::Corrupt { .. })));
        let gap = LogEntry::new(9, created(1));
        assert!(matches!(s.apply(&gap, 4), Err(RegistryError::Corrupt { .. })));
    }
}
