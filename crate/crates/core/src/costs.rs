//! Per-traversal costs and plan-level aggregates.

use serde::{Deserialize, Serialize};

use crate::model::{PlanSet, Time, Traversal};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    #[default]
    Makespan,
    /// Sum of task completion costs.
    Soc,
    /// Sum of path lengths (moves only).
    Sop,
}

impl std::str::FromStr for CostKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "makespan" => Ok(CostKind::Makespan),
            "soc" => Ok(CostKind::Soc),
            "sop" => Ok(CostKind::Sop),
            other => Err(format!("unknown cost kind '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Waits plus moves over the whole traversal.
    pub length: u64,
    /// Waits plus moves until the final arrival at the goal.
    pub task_cost: u64,
    /// Moves only.
    pub path_cost: u64,
    pub waits: u64,
    pub reach: Time,
}

pub fn traversal_costs(tr: &Traversal) -> CostBreakdown {
    let reach = tr.reach();
    let mut out = CostBreakdown { reach, ..Default::default() };
    for (i, w) in tr.locs.windows(2).enumerate() {
        let t = tr.start + i as Time;
        if w[0] == w[1] {
            out.waits += 1;
        } else {
            out.path_cost += 1;
        }
        out.length += 1;
        if t < reach {
            out.task_cost += 1;
        }
    }
    out
}

/// Aggregates `kind` over every traversal in the plan set.
pub fn aggregate(plans: &PlanSet, kind: CostKind) -> u64 {
    let costs = plans.iter().map(traversal_costs);
    match kind {
        CostKind::Soc => costs.map(|c| c.task_cost).sum(),
        CostKind::Sop => costs.map(|c| c.path_cost).sum(),
        CostKind::Makespan => costs.map(|c| c.task_cost).max().unwrap_or(0),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSummary {
    pub soc: u64,
    pub sop: u64,
    pub makespan: u64,
}

pub fn summarize(plans: &PlanSet) -> CostSummary {
    CostSummary {
        soc: aggregate(plans, CostKind::Soc),
        sop: aggregate(plans, CostKind::Sop),
        makespan: aggregate(plans, CostKind::Makespan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::model::AgentId;
    use proptest::prelude::*;

    const A: Coord = Coord::new(0, 0);
    const B: Coord = Coord::new(0, 1);
    const C: Coord = Coord::new(0, 2);
    const D: Coord = Coord::new(0, 3);

    fn tr(id: u32, goal: Coord, locs: &[Coord]) -> Traversal {
        Traversal::new(AgentId(id), 0, goal, locs.to_vec())
    }

    /// Direct summation of the per-step wait/move indicators.
    fn oracle(locs: &[Coord], start: Time, reach: Time) -> (u64, u64, u64) {
        let y = start + locs.len() as Time - 1;
        let f = |t: Time| locs[(t - start) as usize];
        let (mut len, mut task, mut path) = (0, 0, 0);
        for t in start..y {
            let w = u64::from(f(t) == f(t + 1));
            let m = u64::from(f(t) != f(t + 1));
            len += w + m;
            path += m;
            if t < reach {
                task += w + m;
            }
        }
        (len, task, path)
    }

    #[test]
    fn worked_examples() {
        let c = traversal_costs(&tr(1, D, &[A, A, B, C, C, D]));
        assert_eq!((c.length, c.path_cost, c.reach, c.task_cost), (5, 3, 5, 5));
        assert_eq!(oracle(&[A, A, B, C, C, D], 0, 5), (5, 5, 3));

        let c = traversal_costs(&tr(1, A, &[A]));
        assert_eq!((c.length, c.task_cost, c.path_cost), (0, 0, 0));

        let c = traversal_costs(&tr(1, B, &[A, B, B, B]));
        assert_eq!((c.task_cost, c.length, c.path_cost), (1, 3, 1));
        assert_eq!(oracle(&[A, B, B, B], 0, 1), (3, 1, 1));
    }

    #[test]
    fn aggregates() {
        let mut p = PlanSet::new(5);
        p.insert(tr(1, D, &[A, A, B, C, C, D]));
        assert_eq!((aggregate(&p, CostKind::Soc), aggregate(&p, CostKind::Makespan)), (5, 5));

        let mut p = PlanSet::new(5);
        p.insert(tr(1, D, &[A, B, C, D, D, D]));
        p.insert(tr(2, C, &[A, A, B, B, B, C]));
        assert_eq!(aggregate(&p, CostKind::Soc), 3 + 5);
        assert_eq!(aggregate(&p, CostKind::Makespan), 5);

        let mut p = PlanSet::new(8);
        p.insert(tr(1, D, &[A, B, C, D]));
        p.insert(tr(2, A, &[A, B, C, D, C, B, A]));
        assert_eq!(aggregate(&p, CostKind::Sop), 3 + 6);
    }

    #[test]
    fn goal_waits_only_grow_length() {
        let base = tr(1, D, &[A, B, B, C, D]);
        let mut longer = base.clone();
        longer.locs.extend([D, D, D]);
        let (b, l) = (traversal_costs(&base), traversal_costs(&longer));
        assert_eq!((b.task_cost, b.path_cost), (l.task_cost, l.path_cost));
        assert_eq!(l.length, b.length + 3);
    }

    fn arb_traversal() -> impl Strategy<Value = Traversal> {
        (0u32..5, proptest::collection::vec(0u8..5, 1..12)).prop_map(|(start, steps)| {
            let mut cur = Coord::new(2, 2);
            let mut locs = vec![cur];
            for s in steps {
                cur = match s {
                    0 if cur.row > 0 => Coord::new(cur.row - 1, cur.col),
                    1 => Coord::new(cur.row + 1, cur.col),
                    2 if cur.col > 0 => Coord::new(cur.row, cur.col - 1),
                    3 => Coord::new(cur.row, cur.col + 1),
                    _ => cur,
                };
                locs.push(cur);
            }
            let goal = *locs.last().unwrap();
            Traversal::new(AgentId(0), start, goal, locs)
        })
    }

    proptest! {
        #[test]
        fn costs_match_direct_summation(tr in arb_traversal()) {
            let c = traversal_costs(&tr);
            prop_assert_eq!(oracle(&tr.locs, tr.start, c.reach), (c.length, c.task_cost, c.path_cost));
            prop_assert_eq!(c.length, c.path_cost + c.waits);
            prop_assert!(c.path_cost <= c.task_cost && c.task_cost <= c.length);
            prop_assert_eq!(c.length, (tr.end() - tr.start) as u64);
        }
    }
}
