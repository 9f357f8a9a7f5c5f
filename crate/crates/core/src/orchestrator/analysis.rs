//! Post-hoc lineage analysis over a registry: fitness by mutation cycle,
//! founder diversity by generation, and per-agent learning curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evolution::{agent_paths, AgentStatus, EvolutionConfig, RegistryState};
use crate::ppo::{Fitness, FitnessReport};

/// Initial-population ancestor of every agent. Founders map to themselves.
pub fn founder_ids(state: &RegistryState) -> BTreeMap<u64, u64> {
    let mut out = BTreeMap::new();
    // Parents are always older, so ascending order sees them first.
    for a in state.agents.values() {
        let f = match a.parent_id {
            None => a.agent_id,
            Some(p) => out.get(&p).copied().unwrap_or(p),
        };
        out.insert(a.agent_id, f);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationCycleRow {
    pub mutation_cycle: u32,
    pub agent_count: usize,
    /// Over agents with a finite fitness.
    pub mean_fitness: Option<f64>,
    /// Mean of `100 * (f - f_founder) / |f_founder|`; undefined at cycle 0.
    pub mean_improvement_pct: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn analyze_mutation_cycles(state: &RegistryState) -> Vec<MutationCycleRow> {
    let founders = founder_ids(state);
    let mut buckets: BTreeMap<u32, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for a in state.agents.values() {
        let b = buckets.entry(a.mutation_count).or_default();
        b.0 += 1;
        let Some(f) = a.fitness.value() else { continue };
        b.1.push(f);
        if a.parent_id.is_none() {
            continue;
        }
        let f0 = state.agents.get(&founders[&a.agent_id]).and_then(|r| r.fitness.value());
        if let Some(f0) = f0.filter(|v| *v != 0.0) {
            b.2.push(100.0 * (f - f0) / f0.abs());
        }
    }
    buckets
        .into_iter()
        .map(|(cycle, (n, fit, imp))| MutationCycleRow {
            mutation_cycle: cycle,
            agent_count: n,
            mean_fitness: mean(&fit),
            mean_improvement_pct: mean(&imp),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub generation: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub agent_count: usize,
    pub founder_count: usize,
}

/// Distinct founders among the agents eligible at the start of each
/// generation, for every generation whose start the registry has reached.
pub fn analyze_diversity(state: &RegistryState, config: &EvolutionConfig) -> Vec<DiversityRow> {
    let founders = founder_ids(state);
    let (p, t) = (config.population_size, config.tournaments_per_generation);
    // Length of the gap-free prefix of finished ids.
    let q = state.agents.keys().enumerate().take_while(|(i, id)| *i as u64 == **id).count() as u64;
    if q < p || t == 0 {
        return Vec::new();
    }
    (0..=(q - p) / t)
        .map(|g| {
            let (start, end) = (t * g, p + t * g);
            let distinct: BTreeSet<u64> = (start..end).map(|id| founders[&id]).collect();
            DiversityRow {
                generation: g,
                window_start: start,
                window_end: end,
                agent_count: (end - start) as usize,
                founder_count: distinct.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLineage {
    pub agent_id: u64,
    pub mutation_count: u32,
    pub fitness: Fitness,
    pub founder_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageStats {
    pub agents: Vec<AgentLineage>,
    pub generations: Vec<DiversityRow>,
    pub cycles: Vec<MutationCycleRow>,
}

impl LineageStats {
    pub fn compute(state: &RegistryState, config: &EvolutionConfig) -> Self {
        let founders = founder_ids(state);
        LineageStats {
            agents: state
                .agents
                .values()
                .map(|a| AgentLineage {
                    agent_id: a.agent_id,
                    mutation_count: a.mutation_count,
                    fitness: a.fitness,
                    founder_id: founders[&a.agent_id],
                })
                .collect(),
            generations: analyze_diversity(state, config),
            cycles: analyze_mutation_cycles(state),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_mutation_cycles(path: &Path, rows: &[MutationCycleRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["mutation_cycle", "agent_count", "mean_fitness", "mean_improvement_pct"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.mutation_cycle.to_string(),
            r.agent_count.to_string(),
            opt(r.mean_fitness),
            opt(r.mean_improvement_pct),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_diversity(path: &Path, rows: &[DiversityRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["generation", "window_start", "window_end", "agent_count", "founder_count"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.generation, r.window_start, r.window_end, r.agent_count as u64, r.founder_count as u64].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Fitness against agent id, one colour per founder, with a segment from
/// every child back to its parent.
pub fn lineages_svg(state: &RegistryState) -> String {
    let (w, h, m) = (800.0, 420.0, 50.0);
    let founders = founder_ids(state);
    let finite: Vec<(u64, f64)> =
        state.agents.values().filter_map(|a| a.fitness.value().map(|f| (a.agent_id, f))).collect();
    let max_id = state.agents.keys().next_back().copied().unwrap_or(0).max(1) as f64;
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, f)| (lo.min(*f), hi.max(*f)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 1.0, lo + 1.0) } else { (0.0, 1.0) };
    let x = |id: u64| m + (w - 2.0 * m) * id as f64 / max_id;
    let y = |f: f64| h - m - (h - 2.0 * m) * (f - lo) / (hi - lo);
    let fit: BTreeMap<u64, f64> = finite.iter().copied().collect();
    let colour = |id: u64| {
        let founder_rank = founders.values().collect::<BTreeSet<_>>().iter().position(|f| **f == founders[&id]).unwrap_or(0);
        PALETTE[founder_rank % PALETTE.len()]
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">agent id</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">fitness</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi:.3}</text>"#, m - 4.0, m + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.3}</text>"#, m - 4.0, h - m);
    for a in state.agents.values() {
        let (Some(p), Some(fc)) = (a.parent_id, fit.get(&a.agent_id)) else { continue };
        let Some(fp) = fit.get(&p) else { continue };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.5"/>"#,
            x(p),
            y(*fp),
            x(a.agent_id),
            y(*fc),
            colour(a.agent_id)
        );
    }
    for (id, f) in &finite {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>agent {id} (founder {}): {f}</title></circle>"#,
            x(*id),
            y(*f),
            colour(*id),
            founders[id]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessSummaryRow {
    pub agent_id: u64,
    pub fitness: Fitness,
    pub mutation_count: u32,
    pub parent_id: Option<u64>,
    pub founder_id: u64,
    pub status: AgentStatus,
    pub report_missing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub curves_written: usize,
    pub missing_reports: Vec<u64>,
    pub rows: Vec<FitnessSummaryRow>,
}

/// Writes `curves/agent_<id>.csv` for every agent with a training report and
/// `fitness_summary.csv` for all agents. A missing report flags its row.
pub fn export_learning_curves(state: &RegistryState, run_dir: &Path) -> io::Result<CurveExport> {
    let founders = founder_ids(state);
    let curves = run_dir.join("curves");
    fs::create_dir_all(&curves)?;
    let mut out = CurveExport::default();
    for a in state.agents.values() {
        let report: Option<FitnessReport> = fs::read(agent_paths(run_dir, a.agent_id).report)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        match &report {
            Some(r) => {
                let mut w = csv::Writer::from_path(curves.join(format!("agent_{}.csv", a.agent_id))).map_err(csv_err)?;
                w.write_record(["iteration", "mean_reward", "steps_consumed"]).map_err(csv_err)?;
                for p in &r.learning_curve {
                    w.write_record([p.iteration.to_string(), p.mean_reward.to_string(), p.steps_consumed.to_string()])
                        .map_err(csv_err)?;
                }
                w.flush()?;
                out.curves_written += 1;
            }
            None => out.missing_reports.push(a.agent_id),
        }
        out.rows.push(FitnessSummaryRow {
            agent_id: a.agent_id,
            fitness: a.fitness,
            mutation_count: a.mutation_count,
            parent_id: a.parent_id,
            founder_id: founders[&a.agent_id],
            status: a.status,
            report_missing: report.is_none(),
        });
    }
    let mut w = csv::Writer::from_path(run_dir.join("fitness_summary.csv")).map_err(csv_err)?;
    w.write_record(["agent_id", "fitness", "mutation_count", "parent_id", "founder_id", "status", "report_missing"])
        .map_err(csv_err)?;
    for r in &out.rows {
        w.write_record([
            r.agent_id.to_string(),
            r.fitness.to_string(),
            r.mutation_count.to_string(),
            r.parent_id.map(|p| p.to_string()).unwrap_or_default(),
            r.founder_id.to_string(),
            match r.status {
                AgentStatus::Trained => "trained".to_string(),
                AgentStatus::Failed => "failed".to_string(),
            },
            r.report_missing.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(out)
}
