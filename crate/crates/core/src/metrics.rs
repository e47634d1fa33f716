//! Solution-quality comparisons between consecutive plans and per-run reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::costs::{summarize, CostSummary};
use crate::engine::{old_agents, Method, Simulation, StageOutcome, StagePlans};
use crate::error::{Error, Result};
use crate::grid::{manhattan, path_of, Coord};
use crate::model::{AgentId, PlanSet, Time, Traversal};

/// Widths reported when none are requested.
pub const DEFAULT_WIDTHS: [u32; 3] = [0, 2, 5];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDiff {
    pub agent: AgentId,
    /// Some timed location differs (shorter traversals padded with goal waits).
    pub plan_changed: bool,
    /// Some visited vertex is not on the reference path.
    pub path_changed: bool,
    /// Width -> distinct visited vertices farther than that width from the reference path.
    pub divergence: BTreeMap<u32, usize>,
    /// The visited path equals the reference path as a sequence.
    pub order_preserved: bool,
    /// Same vertex set and the same count for every directed edge.
    pub transitions_preserved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionDiff {
    pub agents: Vec<AgentDiff>,
    pub n_plan_changes: usize,
    pub n_path_changes: usize,
    /// Width -> divergence amounts of the agents with a nonzero amount.
    pub diverted: BTreeMap<u32, Vec<usize>>,
}

impl SolutionDiff {
    pub fn diverted_count(&self, width: u32) -> usize {
        self.diverted.get(&width).map_or(0, Vec::len)
    }
}

fn padded_at(tr: &Traversal, t: Time) -> Option<Coord> {
    if t > tr.end() {
        tr.locs.last().copied()
    } else {
        tr.at(t)
    }
}

fn edge_counts(path: &[Coord]) -> BTreeMap<(Coord, Coord), usize> {
    let mut out = BTreeMap::new();
    for w in path.windows(2) {
        *out.entry((w[0], w[1])).or_default() += 1;
    }
    out
}

/// Compares every agent of `old` with its traversal in `new` from time `from` on.
pub fn diff_solutions(old: &PlanSet, new: &PlanSet, from: Time, widths: &[u32]) -> Result<SolutionDiff> {
    diff_solutions_with(old, new, from, widths, &BTreeMap::new())
}

/// Like [`diff_solutions`], but path comparisons use `reference` paths where given
/// (for instance the paths tunnels were frozen around) instead of `old`'s.
pub fn diff_solutions_with(
    old: &PlanSet,
    new: &PlanSet,
    from: Time,
    widths: &[u32],
    reference: &BTreeMap<AgentId, Vec<Coord>>,
) -> Result<SolutionDiff> {
    let mut diff = SolutionDiff::default();
    for &w in widths {
        diff.diverted.insert(w, Vec::new());
    }
    for o in old.iter() {
        let n = new.get(o.agent).ok_or_else(|| Error::Input(format!("agent {} missing from new plans", o.agent)))?;
        let lo = from.max(o.start).max(n.start);
        let hi = o.end().max(n.end());
        let plan_changed = (lo..=hi).any(|t| padded_at(o, t) != padded_at(n, t));

        let ref_path = reference.get(&o.agent).cloned().unwrap_or_else(|| o.path());
        let ref_set: BTreeSet<Coord> = ref_path.iter().copied().collect();
        let visited = n.vertex_set();
        let new_path = path_of(&n.locs);
        let path_changed = visited.iter().any(|v| !ref_set.contains(v));
        let mut divergence = BTreeMap::new();
        for &w in widths {
            let outside = visited.iter().filter(|v| ref_set.iter().all(|p| manhattan(**v, *p) > w)).count();
            divergence.insert(w, outside);
            if outside > 0 {
                diff.diverted.get_mut(&w).unwrap().push(outside);
            }
        }
        diff.n_plan_changes += usize::from(plan_changed);
        diff.n_path_changes += usize::from(path_changed);
        diff.agents.push(AgentDiff {
            agent: o.agent,
            plan_changed,
            path_changed,
            divergence,
            order_preserved: new_path == ref_path,
            transitions_preserved: visited == ref_set && edge_counts(&new_path) == edge_counts(&ref_path),
        });
    }
    Ok(diff)
}

/// Diff of one stage's old agents, against frozen tunnel paths when the stage has them.
pub fn stage_diff(stage: &StagePlans, k: Time, widths: &[u32]) -> Result<Option<SolutionDiff>> {
    let (Some(before), Some(after)) = (&stage.before, &stage.after) else {
        return Ok(None);
    };
    let olds = old_agents(stage);
    let mut old = PlanSet::new(before.horizon);
    for id in &olds {
        old.insert(before.get(*id).unwrap().clone());
    }
    let reference: BTreeMap<AgentId, Vec<Coord>> =
        stage.tunnels.iter().filter(|(a, _)| olds.contains(a)).map(|(&a, t)| (a, t.path.clone())).collect();
    diff_solutions_with(&old, after, k, widths, &reference).map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub n_plan_changes: usize,
    pub n_path_changes: usize,
    /// Width -> number of diverted agents.
    pub diverted: BTreeMap<u32, usize>,
    pub divergence_amounts: BTreeMap<u32, Vec<usize>>,
}

impl From<&SolutionDiff> for DiffSummary {
    fn from(d: &SolutionDiff) -> Self {
        DiffSummary {
            n_plan_changes: d.n_plan_changes,
            n_path_changes: d.n_path_changes,
            diverted: d.diverted.iter().map(|(&w, v)| (w, v.len())).collect(),
            divergence_amounts: d.diverted.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub index: usize,
    pub k: Time,
    pub agents_added: Vec<AgentId>,
    pub agents_removed: Vec<AgentId>,
    pub obstacles_added: Vec<Coord>,
    pub obstacles_removed: Vec<Coord>,
    pub horizon: Time,
    pub outcome: StageOutcome,
    pub solve_calls: u32,
    pub encode_secs: f64,
    pub solve_secs: f64,
    pub costs: Option<CostSummary>,
    pub changes: Option<DiffSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub width: u32,
    pub following: bool,
    pub seed: u64,
    pub completed: bool,
    pub stages: Vec<StageReport>,
    pub final_costs: Option<CostSummary>,
    pub total_encode_secs: f64,
    pub total_solve_secs: f64,
}

impl RunReport {
    /// Copy with every timing zeroed, for byte-for-byte comparisons.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.total_encode_secs = 0.0;
        r.total_solve_secs = 0.0;
        for s in &mut r.stages {
            s.encode_secs = 0.0;
            s.solve_secs = 0.0;
        }
        r
    }

    pub fn total_path_changes(&self) -> usize {
        self.stages.iter().filter_map(|s| s.changes.as_ref()).map(|c| c.n_path_changes).sum()
    }

    pub fn total_plan_changes(&self) -> usize {
        self.stages.iter().filter_map(|s| s.changes.as_ref()).map(|c| c.n_plan_changes).sum()
    }
}

pub fn stage_report(sim: &Simulation, widths: &[u32]) -> Result<RunReport> {
    let mut stages = Vec::with_capacity(sim.stages.len());
    for (rec, plans) in sim.stages.iter().zip(&sim.stage_plans) {
        let changes = if rec.index == 0 { None } else { stage_diff(plans, rec.k, widths)? };
        stages.push(StageReport {
            index: rec.index,
            k: rec.k,
            agents_added: rec.agents_added.clone(),
            agents_removed: rec.agents_removed.clone(),
            obstacles_added: rec.obstacles_added.clone(),
            obstacles_removed: rec.obstacles_removed.clone(),
            horizon: rec.horizon,
            outcome: rec.outcome,
            solve_calls: rec.solve_calls,
            encode_secs: rec.encode_secs,
            solve_secs: rec.solve_secs,
            costs: plans.after.as_ref().map(summarize),
            changes: changes.as_ref().map(DiffSummary::from),
        });
    }
    Ok(RunReport {
        method: sim.config.method,
        width: sim.config.width,
        following: sim.config.following,
        seed: sim.config.seed,
        completed: sim.completed,
        total_encode_secs: stages.iter().map(|s| s.encode_secs).sum(),
        total_solve_secs: stages.iter().map(|s| s.solve_secs).sum(),
        final_costs: sim.final_plans.as_ref().map(summarize),
        stages,
    })
}

/// One benchmark CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub method: Method,
    pub width: u32,
    pub seed: u64,
    pub stages: usize,
    pub completed: bool,
    pub final_horizon: Time,
    pub makespan: Option<u64>,
    pub soc: Option<u64>,
    pub sop: Option<u64>,
    pub plan_changes: usize,
    pub path_changes: usize,
    pub encode_secs: f64,
    pub solve_secs: f64,
}

impl BenchRow {
    pub fn from_report(name: &str, report: &RunReport) -> Self {
        BenchRow {
            name: name.to_string(),
            method: report.method,
            width: report.width,
            seed: report.seed,
            stages: report.stages.len(),
            completed: report.completed,
            final_horizon: report.stages.last().map_or(0, |s| s.horizon),
            makespan: report.final_costs.map(|c| c.makespan),
            soc: report.final_costs.map(|c| c.soc),
            sop: report.final_costs.map(|c| c.sop),
            plan_changes: report.total_plan_changes(),
            path_changes: report.total_path_changes(),
            encode_secs: report.total_encode_secs,
            solve_secs: report.total_solve_secs,
        }
    }
}
