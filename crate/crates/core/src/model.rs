//! Agents, traversals, plan sets, events and the definitional checks over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costs::{aggregate, CostKind};
use crate::error::{Error, Result};
use crate::grid::{Coord, GridMap};

/// Discrete time step.
pub type Time = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub init: Coord,
    pub goal: Coord,
    #[serde(default)]
    pub join: Time,
}

impl Agent {
    pub fn new(id: u32, init: Coord, goal: Coord) -> Self {
        Self { id: AgentId(id), init, goal, join: 0 }
    }

    pub fn joining_at(mut self, t: Time) -> Self {
        self.join = t;
        self
    }
}

/// The timed realisation of an agent's path: `locs[i]` is the location at `start + i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traversal {
    pub agent: AgentId,
    pub start: Time,
    pub goal: Coord,
    pub locs: Vec<Coord>,
}

impl Traversal {
    pub fn new(agent: AgentId, start: Time, goal: Coord, locs: Vec<Coord>) -> Self {
        Self { agent, start, goal, locs }
    }

    pub fn end(&self) -> Time {
        self.start + self.locs.len().saturating_sub(1) as Time
    }

    /// Location at absolute time `t`, if the traversal covers it.
    pub fn at(&self, t: Time) -> Option<Coord> {
        t.checked_sub(self.start).and_then(|i| self.locs.get(i as usize)).copied()
    }

    pub fn covers(&self, t: Time) -> bool {
        t >= self.start && t <= self.end()
    }

    /// Start of the final stay at the goal; the end time if the traversal does not finish at the goal.
    pub fn reach(&self) -> Time {
        if self.locs.last() != Some(&self.goal) {
            return self.end();
        }
        let trailing = self.locs.iter().rev().take_while(|&&c| c == self.goal).count();
        self.end() + 1 - trailing as Time
    }

    /// Visited path with consecutive duplicates removed.
    pub fn path(&self) -> Vec<Coord> {
        crate::grid::path_of(&self.locs)
    }

    pub fn vertex_set(&self) -> BTreeSet<Coord> {
        self.locs.iter().copied().collect()
    }

    /// Drops every location after `t`.
    pub fn truncate_at(&mut self, t: Time) {
        let keep = (t.saturating_sub(self.start) + 1) as usize;
        self.locs.truncate(keep);
    }
}

/// A traversal for every agent, sharing a common horizon.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSet {
    pub horizon: Time,
    pub traversals: BTreeMap<AgentId, Traversal>,
}

impl PlanSet {
    pub fn new(horizon: Time) -> Self {
        Self { horizon, traversals: BTreeMap::new() }
    }

    pub fn insert(&mut self, tr: Traversal) {
        self.traversals.insert(tr.agent, tr);
    }

    pub fn get(&self, id: AgentId) -> Option<&Traversal> {
        self.traversals.get(&id)
    }

    pub fn len(&self) -> usize {
        self.traversals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traversals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Traversal> {
        self.traversals.values()
    }

    /// Location of every agent whose traversal covers `t`.
    pub fn snapshot(&self, t: Time) -> BTreeMap<AgentId, Coord> {
        self.iter().filter_map(|tr| tr.at(t).map(|c| (tr.agent, c))).collect()
    }
}

/// A change at time `t`: agents leaving or joining, obstacles removed or added.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: Time,
    #[serde(default)]
    pub agents_leave: BTreeSet<AgentId>,
    #[serde(default)]
    pub agents_join: Vec<Agent>,
    #[serde(default)]
    pub obstacles_removed: BTreeSet<Coord>,
    #[serde(default)]
    pub obstacles_added: BTreeSet<Coord>,
}

impl Event {
    pub fn at(t: Time) -> Self {
        Self { t, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.agents_leave.is_empty()
            && self.agents_join.is_empty()
            && self.obstacles_removed.is_empty()
            && self.obstacles_added.is_empty()
    }

    pub fn join(mut self, id: u32, init: Coord, goal: Coord) -> Self {
        let t = self.t;
        self.agents_join.push(Agent::new(id, init, goal).joining_at(t));
        self
    }

    pub fn leave(mut self, id: u32) -> Self {
        self.agents_leave.insert(AgentId(id));
        self
    }

    pub fn add_obstacle(mut self, c: Coord) -> Self {
        self.obstacles_added.insert(c);
        self
    }

    pub fn remove_obstacle(mut self, c: Coord) -> Self {
        self.obstacles_removed.insert(c);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventSequence {
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn new(events: Vec<Event>) -> Self {
        Self { events }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapfInstance {
    pub map: GridMap,
    pub agents: Vec<Agent>,
    pub cost_kind: CostKind,
    pub tau: u32,
}

impl MapfInstance {
    /// A makespan-bounded instance with a loose bound.
    pub fn new(map: GridMap, agents: Vec<Agent>) -> Self {
        Self { map, agents, cost_kind: CostKind::Makespan, tau: u32::MAX }
    }

    pub fn check(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Input("instance has no agents".into()));
        }
        if self.tau == 0 {
            return Err(Error::Input("cost bound must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        let mut inits = BTreeSet::new();
        let mut goals = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return Err(Error::Input(format!("duplicate agent id {}", a.id)));
            }
            if a.join != 0 {
                return Err(Error::Input(format!("initial agent {} must join at 0", a.id)));
            }
            for c in [a.init, a.goal] {
                if !self.map.contains(c) {
                    return Err(Error::Input(format!("agent {} endpoint {c} out of bounds", a.id)));
                }
            }
            if !inits.insert(a.init) {
                return Err(Error::Input(format!("agent {} shares its initial cell", a.id)));
            }
            if !goals.insert(a.goal) {
                return Err(Error::Input(format!("agent {} shares its goal cell", a.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DmapfInstance {
    pub base: MapfInstance,
    pub base_solution: Option<PlanSet>,
    pub events: EventSequence,
    pub cost_kind: CostKind,
    pub tau: u32,
    /// Upper bound on traversal end times.
    pub alpha: Time,
}

impl DmapfInstance {
    pub fn new(base: MapfInstance, events: EventSequence, alpha: Time) -> Self {
        Self {
            cost_kind: base.cost_kind,
            tau: base.tau,
            base,
            base_solution: None,
            events,
            alpha,
        }
    }

    /// Every agent that is present at some time up to `alpha`, with its definition.
    pub fn all_agents(&self) -> BTreeMap<AgentId, Agent> {
        let mut out: BTreeMap<AgentId, Agent> =
            self.base.agents.iter().map(|a| (a.id, a.clone())).collect();
        for e in self.events.iter().filter(|e| e.t <= self.alpha) {
            for a in &e.agents_join {
                out.entry(a.id).or_insert_with(|| a.clone());
            }
        }
        out
    }

    /// Time each agent leaves, if it does.
    pub fn departures(&self) -> BTreeMap<AgentId, Time> {
        let mut out = BTreeMap::new();
        for e in self.events.iter() {
            for &id in &e.agents_leave {
                out.entry(id).or_insert(e.t);
            }
        }
        out
    }
}

fn step_set<T: Ord + Clone>(prev: &BTreeSet<T>, leave: &BTreeSet<T>, join: impl IntoIterator<Item = T>) -> BTreeSet<T> {
    let mut next: BTreeSet<T> = prev.difference(leave).cloned().collect();
    next.extend(join);
    next
}

/// Agents present at time `t` under the event sequence.
///
/// Every event, `e_0` included, takes effect at its own time step.
pub fn active_agents(instance: &DmapfInstance, t: Time) -> BTreeSet<AgentId> {
    let mut present: BTreeSet<AgentId> = instance.base.agents.iter().map(|a| a.id).collect();
    for e in instance.events.iter().take_while(|e| e.t <= t) {
        present = step_set(&present, &e.agents_leave, e.agents_join.iter().map(|a| a.id));
    }
    present
}

/// Cells covered by obstacles at time `t`.
pub fn active_obstacles(instance: &DmapfInstance, t: Time) -> BTreeSet<Coord> {
    let mut present = instance.base.map.blocked().clone();
    for e in instance.events.iter().take_while(|e| e.t <= t) {
        present = step_set(&present, &e.obstacles_removed, e.obstacles_added.iter().copied());
    }
    present
}

/// Which well-formedness condition an event violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCondition {
    /// The event changes nothing.
    NoChange,
    /// Conditions on the first event, checked against the initial agents and obstacles.
    First,
    /// Conditions on later events, checked against the state one step earlier.
    Later,
    /// Event times must increase strictly.
    Order,
    /// A joining agent's declared join time differs from its event time.
    JoinTime,
    /// A coordinate is outside the grid.
    Bounds,
}

impl EventCondition {
    pub fn label(self) -> &'static str {
        match self {
            EventCondition::NoChange => "changes",
            EventCondition::First => "(i)",
            EventCondition::Later => "(ii)",
            EventCondition::Order => "(iii)",
            EventCondition::JoinTime => "join-time",
            EventCondition::Bounds => "bounds",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventViolation {
    pub condition: EventCondition,
    pub event: usize,
    pub detail: String,
}

/// Checks every condition on the event sequence; an empty result means valid.
pub fn validate_events(instance: &DmapfInstance) -> Vec<EventViolation> {
    let mut out = Vec::new();
    let map = &instance.base.map;
    let mut agents: BTreeSet<AgentId> = instance.base.agents.iter().map(|a| a.id).collect();
    let mut ever: BTreeSet<AgentId> = agents.clone();
    let mut obstacles = map.blocked().clone();
    let mut prev_t: Option<Time> = None;

    for (k, e) in instance.events.iter().enumerate() {
        let mut report = |condition, detail: String| out.push(EventViolation { condition, event: k, detail });
        if e.is_empty() {
            report(EventCondition::NoChange, format!("event at t={} has no changes", e.t));
        }
        if let Some(p) = prev_t {
            if e.t <= p {
                report(EventCondition::Order, format!("event at t={} does not follow t={p}", e.t));
            }
        }
        prev_t = Some(e.t);
        let cond = if k == 0 { EventCondition::First } else { EventCondition::Later };

        for id in &e.agents_leave {
            if !agents.contains(id) {
                report(cond, format!("leaving agent {id} is not present"));
            }
        }
        let mut joining = BTreeSet::new();
        for a in &e.agents_join {
            if ever.contains(&a.id) || !joining.insert(a.id) {
                report(cond, format!("joining agent {} is or was already in the environment", a.id));
            }
            if a.join != e.t {
                report(EventCondition::JoinTime, format!("agent {} declares join {} at event t={}", a.id, a.join, e.t));
            }
            for c in [a.init, a.goal] {
                if !map.contains(c) {
                    report(EventCondition::Bounds, format!("agent {} endpoint {c} out of bounds", a.id));
                }
            }
        }
        for c in &e.obstacles_removed {
            if !obstacles.contains(c) {
                report(cond, format!("removed obstacle {c} is not present"));
            }
        }
        for c in &e.obstacles_added {
            if !map.contains(*c) {
                report(EventCondition::Bounds, format!("added obstacle {c} out of bounds"));
            }
            if obstacles.contains(c) && !e.obstacles_removed.contains(c) {
                report(cond, format!("added obstacle {c} is already present"));
            }
        }

        agents = step_set(&agents, &e.agents_leave, e.agents_join.iter().map(|a| a.id));
        ever.extend(e.agents_join.iter().map(|a| a.id));
        obstacles = step_set(&obstacles, &e.obstacles_removed, e.obstacles_added.iter().copied());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Vertex,
    Swap,
    Following,
}

/// A collision between two agents. For following conflicts `agents.0` is the
/// leader (at the cell at `time`) and `agents.1` enters it at `time + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub agents: (AgentId, AgentId),
    pub time: Time,
    pub locations: Vec<Coord>,
}

/// Enumerates every vertex and swapping conflict, plus following conflicts if requested.
pub fn detect_conflicts(plans: &PlanSet, include_following: bool) -> Vec<Conflict> {
    let trs: Vec<&Traversal> = plans.iter().collect();
    let mut out = Vec::new();
    for (i, a) in trs.iter().enumerate() {
        for b in &trs[i + 1..] {
            let lo = a.start.max(b.start);
            let hi = a.end().min(b.end());
            if lo > hi {
                continue;
            }
            for t in lo..=hi {
                let (fa, fb) = (a.at(t).unwrap(), b.at(t).unwrap());
                if fa == fb {
                    out.push(Conflict { kind: ConflictKind::Vertex, agents: (a.agent, b.agent), time: t, locations: vec![fa] });
                }
                if t == hi {
                    continue;
                }
                let (na, nb) = (a.at(t + 1).unwrap(), b.at(t + 1).unwrap());
                if fa != fb && fa == nb && fb == na {
                    out.push(Conflict { kind: ConflictKind::Swap, agents: (a.agent, b.agent), time: t, locations: vec![fa, fb] });
                }
                if include_following {
                    if fa == nb {
                        out.push(Conflict { kind: ConflictKind::Following, agents: (a.agent, b.agent), time: t, locations: vec![fa] });
                    }
                    if fb == na {
                        out.push(Conflict { kind: ConflictKind::Following, agents: (b.agent, a.agent), time: t, locations: vec![fb] });
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationClass {
    MissingAgent,
    UnknownAgent,
    WrongStart,
    WrongEnd,
    WrongInit,
    OutOfBounds,
    Teleport,
    Obstacle,
    GoalMiss,
    VertexConflict,
    SwapConflict,
    FollowingConflict,
    PrefixMismatch,
    CostBound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub class: ViolationClass,
    pub agent: Option<AgentId>,
    pub time: Option<Time>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub violations: Vec<Violation>,
}

impl SolutionReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<ViolationClass> {
        self.violations.iter().map(|v| v.class).collect()
    }

    pub fn has(&self, class: ViolationClass) -> bool {
        self.violations.iter().any(|v| v.class == class)
    }

    fn push(&mut self, class: ViolationClass, agent: Option<AgentId>, time: Option<Time>, detail: String) {
        self.violations.push(Violation { class, agent, time, detail });
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidateOptions<'a> {
    /// Also reject following conflicts.
    pub following: bool,
    /// Executed history the solution must reproduce up to (and including) the given time.
    pub history: Option<(&'a PlanSet, Time)>,
}

pub fn validate_solution(instance: &DmapfInstance, plans: &PlanSet) -> SolutionReport {
    validate_solution_with(instance, plans, &ValidateOptions::default())
}

/// Checks a plan set against every output requirement of the dynamic problem.
pub fn validate_solution_with(instance: &DmapfInstance, plans: &PlanSet, opts: &ValidateOptions<'_>) -> SolutionReport {
    use ViolationClass as V;
    let mut rep = SolutionReport::default();
    let map = &instance.base.map;
    let agents = instance.all_agents();
    let departures = instance.departures();
    let originals: BTreeSet<AgentId> = instance.base.agents.iter().map(|a| a.id).collect();

    for id in agents.keys() {
        if plans.get(*id).is_none() {
            rep.push(V::MissingAgent, Some(*id), None, format!("no traversal for {id}"));
        }
    }
    // Obstacle sets are piecewise constant; precompute one per time step.
    let max_t = plans.iter().map(Traversal::end).max().unwrap_or(0).max(plans.horizon);
    let obstacles: Vec<BTreeSet<Coord>> = (0..=max_t).map(|t| active_obstacles(instance, t)).collect();

    for tr in plans.iter() {
        let id = tr.agent;
        let Some(agent) = agents.get(&id) else {
            rep.push(V::UnknownAgent, Some(id), None, format!("traversal for unknown agent {id}"));
            continue;
        };
        if tr.locs.is_empty() {
            rep.push(V::WrongEnd, Some(id), None, "empty traversal".into());
            continue;
        }
        let expected_start = if originals.contains(&id) { 0 } else { agent.join };
        if tr.start != expected_start {
            rep.push(V::WrongStart, Some(id), Some(tr.start), format!("starts at {} instead of {expected_start}", tr.start));
        }
        if tr.locs[0] != agent.init {
            rep.push(V::WrongInit, Some(id), Some(tr.start), format!("starts at {} instead of {}", tr.locs[0], agent.init));
        }
        let departs = departures.get(&id).copied();
        let expected_end = departs.unwrap_or(plans.horizon);
        if tr.end() != expected_end {
            rep.push(V::WrongEnd, Some(id), Some(tr.end()), format!("ends at {} instead of {expected_end}", tr.end()));
        }
        if tr.end() > instance.alpha {
            rep.push(V::WrongEnd, Some(id), Some(tr.end()), format!("ends after alpha={}", instance.alpha));
        }
        let mut in_bounds = true;
        for (i, &c) in tr.locs.iter().enumerate() {
            let t = tr.start + i as Time;
            if !map.contains(c) {
                rep.push(V::OutOfBounds, Some(id), Some(t), format!("{c} out of bounds"));
                in_bounds = false;
                continue;
            }
            if obstacles.get(t as usize).is_some_and(|o| o.contains(&c)) {
                rep.push(V::Obstacle, Some(id), Some(t), format!("on obstacle {c}"));
            }
            if i > 0 {
                let p = tr.locs[i - 1];
                if p != c && !map.are_adjacent(p, c) {
                    rep.push(V::Teleport, Some(id), Some(t), format!("jumps {p} -> {c}"));
                }
            }
        }
        if in_bounds && departs.is_none() && tr.locs.last() != Some(&agent.goal) {
            rep.push(V::GoalMiss, Some(id), Some(tr.end()), format!("ends at {} instead of goal {}", tr.locs.last().unwrap(), agent.goal));
        }
    }

    for c in detect_conflicts(plans, opts.following) {
        let class = match c.kind {
            ConflictKind::Vertex => V::VertexConflict,
            ConflictKind::Swap => V::SwapConflict,
            ConflictKind::Following => V::FollowingConflict,
        };
        let detail = format!("{} and {} at {:?}", c.agents.0, c.agents.1, c.locations);
        rep.push(class, Some(c.agents.0), Some(c.time), detail);
    }

    if let Some((history, upto)) = opts.history {
        for old in history.iter() {
            let Some(new) = plans.get(old.agent) else { continue };
            let hi = upto.min(old.end());
            for t in old.start..=hi {
                if new.at(t) != old.at(t) {
                    rep.push(V::PrefixMismatch, Some(old.agent), Some(t), format!("executed location {:?} replaced by {:?}", old.at(t), new.at(t)));
                }
            }
        }
    }

    if !plans.is_empty() {
        let cost = aggregate(plans, instance.cost_kind);
        if cost > instance.tau as u64 {
            rep.push(V::CostBound, None, None, format!("{:?} cost {cost} exceeds bound {}", instance.cost_kind, instance.tau));
        }
    }
    rep
}
