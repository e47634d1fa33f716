//! Time-expanded boolean encoding of grid MAPF that grows in place.
//!
//! A variable `x(a, t, v)` states that agent `a` is at `v` at time `t`. Layers
//! are created lazily: an agent only gets variables for cells it can reach
//! from its initial cell (restricted to its tunnel when tunnel-filtered
//! generation is on). Constraints are organised in [`ConstraintGroup`]s; a
//! retractable group carries an activation literal that is assumed while the
//! group is live and permanently negated once it is released.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{path_of, Coord, GridMap, Tunnel};
use crate::model::{Agent, AgentId, PlanSet, Time, Traversal};
use crate::solver::{CdclSolver, Lit, SatBackend, SolveOutcome, SolveStats, Var};

pub type GroupId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupKind {
    Base,
    Step(Time),
    Check(Time),
    NewAgent(AgentId, Time),
    Path(AgentId),
    Forbidden(AgentId),
    TunnelGeneration(AgentId),
    Obstacle(Time),
    Departure(AgentId, Time),
    Prefix(Time),
}

#[derive(Clone, Debug)]
pub struct ConstraintGroup {
    pub id: GroupId,
    pub kind: GroupKind,
    /// Present for retractable groups.
    pub activation: Option<Lit>,
    pub clause_count: usize,
    /// Filled only when clause recording is enabled.
    pub clauses: Vec<Vec<Lit>>,
    pub released: bool,
}

impl ConstraintGroup {
    pub fn is_live(&self) -> bool {
        self.activation.is_some() && !self.released
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncoderOptions {
    /// Forbid an agent from entering a cell another agent occupied one step earlier.
    pub following: bool,
    pub seed: u64,
    /// Keep every clause (per group and globally) for inspection and DIMACS export.
    pub record_clauses: bool,
}

#[derive(Clone, Debug)]
struct AgentVars {
    start: Time,
    goal: Coord,
    guard: Var,
    /// `layers[i]` holds the variables at time `start + i`.
    layers: Vec<BTreeMap<Coord, Var>>,
    departed: Option<Time>,
    forbidden: Option<(Time, BTreeSet<Coord>)>,
    generation: Option<(Time, BTreeSet<Coord>)>,
}

impl AgentVars {
    fn layer(&self, t: Time) -> Option<&BTreeMap<Coord, Var>> {
        t.checked_sub(self.start).and_then(|i| self.layers.get(i as usize))
    }

    fn last_time(&self) -> Time {
        self.start + self.layers.len() as Time - 1
    }
}

/// Location and move variables.
#[derive(Clone, Debug, Default)]
pub struct VarTable {
    agents: BTreeMap<AgentId, AgentVars>,
    moves: HashMap<(Coord, Coord, Time), Var>,
    occupancy: HashMap<(Time, Coord), Var>,
}

impl VarTable {
    /// The variable for "agent at `c` at time `t`", if the cell is reachable.
    pub fn location(&self, agent: AgentId, t: Time, c: Coord) -> Option<Var> {
        self.agents.get(&agent)?.layer(t)?.get(&c).copied()
    }

    /// The shared variable recording some agent moving `from -> to` between `t-1` and `t`.
    pub fn move_var(&self, from: Coord, to: Coord, t: Time) -> Option<Var> {
        self.moves.get(&(from, to, t)).copied()
    }

    /// Cells with a variable for `agent` at `t`, in order.
    pub fn cells_at(&self, agent: AgentId, t: Time) -> Vec<Coord> {
        self.agents
            .get(&agent)
            .and_then(|a| a.layer(t))
            .map(|l| l.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn location_count(&self) -> usize {
        self.agents.values().flat_map(|a| a.layers.iter()).map(BTreeMap::len).sum()
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.keys().copied()
    }
}

#[derive(Clone, Debug, Default)]
struct CellState {
    /// Tail of the incremental at-most-one ladder over the cell's agents.
    tail: Option<Lit>,
    vars: Vec<(AgentId, Var)>,
}

#[derive(Clone, Debug)]
struct Counter {
    target: u32,
    inputs: usize,
    /// `row[j-1]` is true iff at least `j` of the inputs so far are true, for `j` in `1..=target+1`.
    row: Vec<Lit>,
}

pub struct Encoder<B: SatBackend = CdclSolver> {
    backend: B,
    opts: EncoderOptions,
    map: GridMap,
    vt: VarTable,
    cells: HashMap<(Time, Coord), CellState>,
    obstacles: BTreeMap<Coord, Time>,
    gate: Lit,
    horizon: Option<Time>,
    groups: Vec<ConstraintGroup>,
    current: Option<GroupId>,
    false_lit: Lit,
    distances: HashMap<Coord, Vec<Option<u32>>>,
    transitions: HashMap<(AgentId, Coord, Coord, Time), Lit>,
    counters: HashMap<(AgentId, Coord, Coord, u32), Counter>,
    prefix: Vec<Lit>,
    log: Vec<Vec<Lit>>,
    total_clauses: usize,
}

impl Encoder<CdclSolver> {
    pub fn new(map: &GridMap, opts: EncoderOptions) -> Self {
        Self::with_backend(CdclSolver::new(opts.seed), map, opts)
    }
}

impl<B: SatBackend> Encoder<B> {
    pub fn with_backend(mut backend: B, map: &GridMap, opts: EncoderOptions) -> Self {
        let zero = backend.new_var();
        let gate = backend.new_var().positive();
        let mut enc = Encoder {
            backend,
            opts,
            map: GridMap::empty(map.width(), map.height()).expect("dimensions come from a valid map"),
            vt: VarTable::default(),
            cells: HashMap::new(),
            obstacles: BTreeMap::new(),
            gate,
            horizon: None,
            groups: Vec::new(),
            current: None,
            false_lit: zero.positive(),
            distances: HashMap::new(),
            transitions: HashMap::new(),
            counters: HashMap::new(),
            prefix: Vec::new(),
            log: Vec::new(),
            total_clauses: 0,
        };
        enc.add(&[zero.negative()]);
        enc
    }

    pub fn options(&self) -> EncoderOptions {
        self.opts
    }

    pub fn vars(&self) -> &VarTable {
        &self.vt
    }

    pub fn groups(&self) -> &[ConstraintGroup] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> &ConstraintGroup {
        &self.groups[id]
    }

    pub fn horizon(&self) -> Option<Time> {
        self.horizon
    }

    pub fn num_vars(&self) -> usize {
        self.backend.num_vars()
    }

    pub fn num_clauses(&self) -> usize {
        self.total_clauses
    }

    pub fn stats(&self) -> SolveStats {
        self.backend.stats()
    }

    pub fn obstacles(&self) -> BTreeSet<Coord> {
        self.obstacles.keys().copied().collect()
    }

    /// Unit literals fixing executed locations, in the order they were recorded.
    pub fn prefix(&self) -> &[Lit] {
        &self.prefix
    }

    /// Agents that currently take part in the encoding.
    pub fn present_agents(&self) -> Vec<AgentId> {
        self.vt.agents.iter().filter(|(_, a)| a.departed.is_none()).map(|(&id, _)| id).collect()
    }

    pub fn agent_start(&self, agent: AgentId) -> Option<Time> {
        self.vt.agents.get(&agent).map(|a| a.start)
    }

    fn new_var(&mut self) -> Var {
        self.backend.new_var()
    }

    fn add(&mut self, lits: &[Lit]) {
        self.backend.add_clause(lits).expect("encoder only uses allocated variables");
        self.total_clauses += 1;
        if let Some(g) = self.current {
            let group = &mut self.groups[g];
            group.clause_count += 1;
            if self.opts.record_clauses {
                group.clauses.push(lits.to_vec());
            }
        }
        if self.opts.record_clauses {
            self.log.push(lits.to_vec());
        }
    }

    fn begin(&mut self, kind: GroupKind, retractable: bool) -> GroupId {
        let activation = retractable.then(|| self.new_var().positive());
        let id = self.groups.len();
        self.groups.push(ConstraintGroup { id, kind, activation, clause_count: 0, clauses: Vec::new(), released: false });
        self.current = Some(id);
        id
    }

    fn require_horizon(&self) -> Result<Time> {
        self.horizon.ok_or_else(|| Error::State("base program not encoded".into()))
    }

    /// Fixes the initial location of every original agent and records the obstacles.
    pub fn encode_base(&mut self, agents: &[Agent], obstacles: &BTreeSet<Coord>) -> Result<GroupId> {
        if self.horizon.is_some() {
            return Err(Error::State("base program already encoded".into()));
        }
        for a in agents {
            self.check_cell(a.init)?;
            self.check_cell(a.goal)?;
        }
        let g = self.begin(GroupKind::Base, false);
        self.obstacles = obstacles.iter().map(|&c| (c, 0)).collect();
        self.horizon = Some(0);
        for a in agents {
            self.register_agent(a, 0)?;
        }
        Ok(g)
    }

    fn check_cell(&self, c: Coord) -> Result<()> {
        if self.map.contains(c) {
            Ok(())
        } else {
            Err(Error::Input(format!("cell {c} outside {}x{} grid", self.map.width(), self.map.height())))
        }
    }

    fn register_agent(&mut self, agent: &Agent, start: Time) -> Result<()> {
        if self.vt.agents.contains_key(&agent.id) {
            return Err(Error::Input(format!("agent {} already encoded", agent.id)));
        }
        let guard = self.new_var();
        self.vt.agents.insert(
            agent.id,
            AgentVars {
                start,
                goal: agent.goal,
                guard,
                layers: vec![BTreeMap::new()],
                departed: None,
                forbidden: None,
                generation: None,
            },
        );
        let x = self.cell_var(agent.id, start, agent.init);
        self.add(&[x.positive()]);
        Ok(())
    }

    /// Allocates `x(agent, t, c)` and wires it into the per-cell constraints.
    fn cell_var(&mut self, agent: AgentId, t: Time, c: Coord) -> Var {
        let x = self.new_var();
        let a = self.vt.agents.get_mut(&agent).unwrap();
        let idx = (t - a.start) as usize;
        a.layers[idx].insert(c, x);
        let guard = a.guard;
        let forbidden = a.forbidden.as_ref().is_some_and(|(k, keep)| t >= *k && !keep.contains(&c));

        let cell = self.cells.entry((t, c)).or_default();
        cell.vars.push((agent, x));
        let tail = cell.tail;
        match tail {
            None => self.cells.get_mut(&(t, c)).unwrap().tail = Some(x.positive()),
            Some(prev) => {
                let s = self.new_var().positive();
                self.add(&[!prev, x.negative()]);
                self.add(&[!prev, s]);
                self.add(&[x.negative(), s]);
                self.cells.get_mut(&(t, c)).unwrap().tail = Some(s);
            }
        }
        if self.obstacles.get(&c).is_some_and(|&since| t >= since) {
            let gate = self.gate;
            self.add(&[!gate, x.negative()]);
        }
        if forbidden {
            self.add(&[x.negative()]);
        }
        if self.opts.following {
            match self.vt.occupancy.get(&(t, c)) {
                Some(&occ) => self.add(&[guard.negative(), x.negative(), occ.positive()]),
                None => {
                    self.occupancy_var(t, c);
                }
            }
        }
        x
    }

    /// The "someone present at `c` at `t`" variable, implied by every location variable there.
    fn occupancy_var(&mut self, t: Time, c: Coord) -> Var {
        if let Some(&v) = self.vt.occupancy.get(&(t, c)) {
            return v;
        }
        let occ = self.new_var();
        self.vt.occupancy.insert((t, c), occ);
        let present: Vec<(AgentId, Var)> = self.cells.get(&(t, c)).map(|s| s.vars.clone()).unwrap_or_default();
        for (a, x) in present {
            let guard = self.vt.agents[&a].guard;
            self.add(&[guard.negative(), x.negative(), occ.positive()]);
        }
        occ
    }

    fn move_var(&mut self, from: Coord, to: Coord, t: Time) -> Var {
        if let Some(&v) = self.vt.moves.get(&(from, to, t)) {
            return v;
        }
        let mv = self.new_var();
        self.vt.moves.insert((from, to, t), mv);
        if let Some(&back) = self.vt.moves.get(&(to, from, t)) {
            self.add(&[mv.negative(), back.negative()]);
        }
        mv
    }

    /// Adds layer `t` for `agent`, which must currently end at `t - 1`.
    fn extend_agent(&mut self, agent: AgentId, t: Time) {
        let a = &self.vt.agents[&agent];
        debug_assert_eq!(a.last_time() + 1, t);
        let prev: Vec<(Coord, Var)> = a.layer(t - 1).unwrap().iter().map(|(&c, &v)| (c, v)).collect();
        let guard = a.guard;
        let start = a.start;
        let filter = a.generation.as_ref().filter(|(k, _)| t > *k).map(|(_, keep)| keep.clone());

        let mut reach = BTreeSet::new();
        for &(v, _) in &prev {
            reach.insert(v);
            reach.extend(self.map.neighbors_unchecked(v));
        }
        if let Some(keep) = &filter {
            reach.retain(|c| keep.contains(c));
        }
        self.vt.agents.get_mut(&agent).unwrap().layers.push(BTreeMap::new());
        let layer: BTreeMap<Coord, Var> = reach.iter().map(|&c| (c, self.cell_var(agent, t, c))).collect();
        let prev_map: BTreeMap<Coord, Var> = prev.iter().copied().collect();

        for &(v, xv) in &prev {
            let mut clause = vec![guard.negative(), xv.negative()];
            clause.extend(std::iter::once(v).chain(self.map.neighbors_unchecked(v)).filter_map(|u| layer.get(&u)).map(|x| x.positive()));
            self.add(&clause);
        }
        for (&u, &xu) in &layer {
            let mut clause = vec![xu.negative()];
            clause.extend(std::iter::once(u).chain(self.map.neighbors_unchecked(u)).filter_map(|p| prev_map.get(&p)).map(|x| x.positive()));
            self.add(&clause);
        }
        let mut alo = vec![guard.negative()];
        alo.extend(layer.values().map(|x| x.positive()));
        self.add(&alo);
        let lits: Vec<Lit> = layer.values().map(|x| x.positive()).collect();
        self.at_most_one(&lits);

        for &(v, xv) in &prev {
            let succ: Vec<(Coord, Var)> = self.map.neighbors_unchecked(v).filter_map(|u| layer.get(&u).map(|&x| (u, x))).collect();
            for (u, xu) in succ {
                let mv = self.move_var(v, u, t);
                self.add(&[xv.negative(), xu.negative(), mv.positive()]);
            }
        }
        if self.opts.following && t > start {
            for (&u, &xu) in &layer {
                let occ = self.occupancy_var(t - 1, u);
                let mut clause = vec![xu.negative(), occ.negative()];
                if let Some(stay) = prev_map.get(&u) {
                    clause.push(stay.positive());
                }
                self.add(&clause);
            }
        }
    }

    fn at_most_one(&mut self, lits: &[Lit]) {
        if lits.len() <= 6 {
            for i in 0..lits.len() {
                for j in i + 1..lits.len() {
                    self.add(&[!lits[i], !lits[j]]);
                }
            }
            return;
        }
        let mut prev: Option<Lit> = None;
        for (i, &x) in lits.iter().enumerate() {
            let last = i + 1 == lits.len();
            let s = (!last).then(|| self.new_var().positive());
            if let Some(s) = s {
                self.add(&[!x, s]);
            }
            if let Some(p) = prev {
                self.add(&[!p, !x]);
                if let Some(s) = s {
                    self.add(&[!p, s]);
                }
            }
            prev = s;
        }
    }

    /// Extends every present agent to time `t`, which must be the next step.
    pub fn encode_step(&mut self, t: Time) -> Result<GroupId> {
        let m = self.require_horizon()?;
        if t != m + 1 {
            return Err(Error::State(format!("step {t} requested but horizon is {m}")));
        }
        let g = self.begin(GroupKind::Step(t), false);
        for id in self.present_agents() {
            self.extend_agent(id, t);
        }
        self.horizon = Some(t);
        Ok(g)
    }

    fn distances_to(&mut self, goal: Coord) -> &Vec<Option<u32>> {
        if !self.distances.contains_key(&goal) {
            let blocked: BTreeSet<Coord> = self.obstacles.keys().copied().collect();
            let d = self.map.distances_from(goal, &blocked);
            self.distances.insert(goal, d);
        }
        &self.distances[&goal]
    }

    /// Retractable group requiring every present agent to be at its goal at `t`.
    ///
    /// Also excludes locations at times in `[from, t]` from which the goal
    /// cannot be reached in time around the current obstacles.
    pub fn encode_check(&mut self, t: Time, from: Time) -> Result<GroupId> {
        let m = self.require_horizon()?;
        if t > m {
            return Err(Error::State(format!("check at {t} beyond horizon {m}")));
        }
        let g = self.begin(GroupKind::Check(t), true);
        let act = self.groups[g].activation.unwrap();
        for id in self.present_agents() {
            let a = &self.vt.agents[&id];
            let goal = a.goal;
            let at_goal = a.layer(t).and_then(|l| l.get(&goal)).copied();
            let lo = from.max(a.start);
            let layers: Vec<(Time, Vec<(Coord, Var)>)> = (lo..=t)
                .filter_map(|s| a.layer(s).map(|l| (s, l.iter().map(|(&c, &v)| (c, v)).collect())))
                .collect();
            match at_goal {
                Some(x) => self.add(&[!act, x.positive()]),
                None => self.add(&[!act]),
            }
            let dist = self.distances_to(goal).clone();
            for (s, layer) in layers {
                for (c, x) in layer {
                    if dist[self.map.index(c)].is_none_or(|d| d > t - s) {
                        self.add(&[!act, x.negative()]);
                    }
                }
            }
        }
        Ok(g)
    }

    /// Permanently deactivates a retractable group.
    pub fn release(&mut self, group: GroupId) -> Result<()> {
        let g = self.groups.get(group).ok_or_else(|| Error::State(format!("unknown group {group}")))?;
        if let (Some(act), false) = (g.activation, g.released) {
            let saved = self.current.replace(group);
            self.add(&[!act]);
            self.current = saved;
            self.groups[group].released = true;
        }
        Ok(())
    }

    /// Adds an agent that appears at `k` and extends it to the current horizon.
    pub fn encode_new_agent(&mut self, agent: &Agent, k: Time) -> Result<GroupId> {
        let m = self.require_horizon()?;
        if k > m {
            return Err(Error::State(format!("agent joins at {k} beyond horizon {m}")));
        }
        self.check_cell(agent.init)?;
        self.check_cell(agent.goal)?;
        if self.vt.agents.contains_key(&agent.id) {
            return Err(Error::Input(format!("agent {} already encoded", agent.id)));
        }
        let g = self.begin(GroupKind::NewAgent(agent.id, k), false);
        self.register_agent(agent, k)?;
        for t in k + 1..=m {
            self.extend_agent(agent.id, t);
        }
        Ok(g)
    }

    /// Removes an agent from every constraint after time `t`.
    pub fn remove_agent(&mut self, agent: AgentId, t: Time) -> Result<GroupId> {
        let a = self.vt.agents.get(&agent).ok_or_else(|| Error::Input(format!("unknown agent {agent}")))?;
        if a.departed.is_some() {
            return Err(Error::State(format!("agent {agent} already departed")));
        }
        let guard = a.guard;
        let later: Vec<Var> = (t + 1..=a.last_time()).filter_map(|s| a.layer(s)).flat_map(|l| l.values().copied()).collect();
        let g = self.begin(GroupKind::Departure(agent, t), false);
        self.vt.agents.get_mut(&agent).unwrap().departed = Some(t);
        self.add(&[guard.negative()]);
        for x in later {
            self.add(&[x.negative()]);
        }
        Ok(g)
    }

    fn vars_at_or_after(&self, c: Coord, t: Time) -> Vec<Var> {
        let m = self.horizon.unwrap_or(0);
        (t..=m).filter_map(|s| self.cells.get(&(s, c))).flat_map(|cell| cell.vars.iter().map(|&(_, x)| x)).collect()
    }

    /// Blocks the given cells from time `t` on.
    pub fn add_obstacles(&mut self, cells: &BTreeSet<Coord>, t: Time) -> Result<GroupId> {
        for &c in cells {
            self.check_cell(c)?;
        }
        let g = self.begin(GroupKind::Obstacle(t), false);
        self.distances.clear();
        for &c in cells {
            if self.obstacles.contains_key(&c) {
                continue;
            }
            self.obstacles.insert(c, t);
            let gate = self.gate;
            for x in self.vars_at_or_after(c, t) {
                self.add(&[!gate, x.negative()]);
            }
        }
        Ok(g)
    }

    /// Unblocks the given cells from time `t` on.
    ///
    /// Exclusions live behind a shared gate literal; removal retires the gate
    /// and re-issues the remaining obstacles behind a fresh one.
    pub fn remove_obstacles(&mut self, cells: &BTreeSet<Coord>, t: Time) -> Result<GroupId> {
        let g = self.begin(GroupKind::Obstacle(t), false);
        self.distances.clear();
        for c in cells {
            self.obstacles.remove(c);
        }
        let old = self.gate;
        self.add(&[!old]);
        self.gate = self.new_var().positive();
        let remaining: Vec<Coord> = self.obstacles.keys().copied().collect();
        for c in remaining {
            let since = self.obstacles[&c].max(t);
            self.obstacles.insert(c, since);
            let gate = self.gate;
            for x in self.vars_at_or_after(c, since) {
                self.add(&[!gate, x.negative()]);
            }
        }
        Ok(g)
    }

    /// Permanently pins an executed location.
    pub fn fix_location(&mut self, agent: AgentId, t: Time, c: Coord) -> Result<()> {
        let x = self
            .vt
            .location(agent, t, c)
            .ok_or_else(|| Error::State(format!("{agent} cannot be at {c} at time {t} in the encoding")))?;
        self.begin(GroupKind::Prefix(t), false);
        self.add(&[x.positive()]);
        self.prefix.push(x.positive());
        Ok(())
    }

    /// Forbids every cell outside `tunnel` for `agent` from time `k` on (permanent).
    pub fn encode_forbidden(&mut self, agent: AgentId, tunnel: &Tunnel, k: Time) -> Result<GroupId> {
        let a = self.vt.agents.get(&agent).ok_or_else(|| Error::Input(format!("unknown agent {agent}")))?;
        if a.forbidden.is_some() || a.generation.is_some() {
            return Err(Error::State(format!("agent {agent} already confined to a tunnel")));
        }
        let outside: Vec<Var> = (k..=a.last_time())
            .filter_map(|s| a.layer(s))
            .flat_map(|l| l.iter().filter(|(c, _)| !tunnel.contains(**c)).map(|(_, &x)| x))
            .collect();
        let g = self.begin(GroupKind::Forbidden(agent), false);
        self.vt.agents.get_mut(&agent).unwrap().forbidden = Some((k, tunnel.vertices.clone()));
        for x in outside {
            self.add(&[x.negative()]);
        }
        Ok(g)
    }

    /// Restricts `agent`'s future layers (after `k`) to `tunnel`. Locations
    /// already generated outside it lose their support and are set false.
    pub fn restrict_generation(&mut self, agent: AgentId, tunnel: &Tunnel, k: Time) -> Result<GroupId> {
        let a = self.vt.agents.get(&agent).ok_or_else(|| Error::Input(format!("unknown agent {agent}")))?;
        if a.forbidden.is_some() || a.generation.is_some() {
            return Err(Error::State(format!("agent {agent} already confined to a tunnel")));
        }
        let outside: Vec<Var> = (k + 1..=a.last_time())
            .filter_map(|s| a.layer(s))
            .flat_map(|l| l.iter().filter(|(c, _)| !tunnel.contains(**c)).map(|(_, &x)| x))
            .collect();
        let g = self.begin(GroupKind::TunnelGeneration(agent), false);
        self.vt.agents.get_mut(&agent).unwrap().generation = Some((k, tunnel.vertices.clone()));
        for x in outside {
            self.add(&[x.negative()]);
        }
        Ok(g)
    }

    fn transition(&mut self, agent: AgentId, from: Coord, to: Coord, t: Time) -> Lit {
        if let Some(&l) = self.transitions.get(&(agent, from, to, t)) {
            return l;
        }
        let lit = match (self.vt.location(agent, t - 1, from), self.vt.location(agent, t, to)) {
            (Some(x1), Some(x2)) => {
                let tr = self.new_var().positive();
                self.add(&[!tr, x1.positive()]);
                self.add(&[!tr, x2.positive()]);
                self.add(&[x1.negative(), x2.negative(), tr]);
                tr
            }
            _ => self.false_lit,
        };
        self.transitions.insert((agent, from, to, t), lit);
        lit
    }

    /// Extends the cached counter for `agent`'s `from -> to` transitions up to
    /// time `m` and returns its output row.
    fn transition_counter(&mut self, agent: AgentId, from: Coord, to: Coord, target: u32, m: Time) -> Vec<Lit> {
        let start = self.vt.agents[&agent].start;
        let key = (agent, from, to, target);
        let mut counter = self.counters.remove(&key).unwrap_or(Counter {
            target,
            inputs: 0,
            row: vec![self.false_lit; target as usize + 1],
        });
        let truth = !self.false_lit;
        while start + (counter.inputs as Time) < m {
            let t = start + counter.inputs as Time + 1;
            let x = self.transition(agent, from, to, t);
            let mut row = Vec::with_capacity(counter.row.len());
            for j in 0..counter.row.len() {
                let same = counter.row[j];
                let below = if j == 0 { truth } else { counter.row[j - 1] };
                let r = self.new_var().positive();
                self.add(&[!same, r]);
                self.add(&[!below, !x, r]);
                self.add(&[!r, same, below]);
                self.add(&[!r, same, x]);
                row.push(r);
            }
            counter.row = row;
            counter.inputs += 1;
        }
        debug_assert_eq!(counter.target, target);
        let row = counter.row.clone();
        self.counters.insert(key, counter);
        row
    }

    /// Retractable group keeping `agent` on the vertices of `path` with the
    /// same number of traversals of every directed edge, up to the horizon.
    pub fn encode_path_constraints(&mut self, agent: AgentId, path: &[Coord]) -> Result<GroupId> {
        let m = self.require_horizon()?;
        if path.is_empty() {
            return Err(Error::Input("empty path".into()));
        }
        let a = self.vt.agents.get(&agent).ok_or_else(|| Error::Input(format!("unknown agent {agent}")))?;
        let start = a.start;
        let path = path_of(path);
        let on_path: BTreeSet<Coord> = path.iter().copied().collect();
        let mut counts: BTreeMap<(Coord, Coord), u32> = BTreeMap::new();
        for w in path.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1;
        }
        let off_path: Vec<Var> = (start..=m)
            .filter_map(|t| a.layer(t))
            .flat_map(|l| l.iter().filter(|(c, _)| !on_path.contains(*c)).map(|(_, &x)| x))
            .collect();
        let visits: Vec<(Coord, Vec<Lit>)> = on_path
            .iter()
            .map(|&c| (c, (start..=m).filter_map(|t| a.layer(t)?.get(&c)).map(|x| x.positive()).collect()))
            .collect();

        let g = self.begin(GroupKind::Path(agent), true);
        let act = self.groups[g].activation.unwrap();
        for x in off_path {
            self.add(&[!act, x.negative()]);
        }
        for (_, lits) in visits {
            let mut clause = vec![!act];
            clause.extend(lits);
            self.add(&clause);
        }
        for &from in &on_path {
            let succ: Vec<Coord> = self.map.neighbors_unchecked(from).filter(|c| on_path.contains(c)).collect();
            for to in succ {
                let target = counts.get(&(from, to)).copied().unwrap_or(0);
                if target == 0 {
                    for t in start + 1..=m {
                        if let (Some(x1), Some(x2)) = (self.vt.location(agent, t - 1, from), self.vt.location(agent, t, to)) {
                            self.add(&[!act, x1.negative(), x2.negative()]);
                        }
                    }
                } else {
                    let row = self.transition_counter(agent, from, to, target, m);
                    self.add(&[!act, row[target as usize - 1]]);
                    self.add(&[!act, !row[target as usize]]);
                }
            }
        }
        Ok(g)
    }

    fn assumptions(&self) -> Vec<Lit> {
        let mut out = vec![self.gate];
        out.extend(self.vt.agents.values().filter(|a| a.departed.is_none()).map(|a| a.guard.positive()));
        out.extend(self.groups.iter().filter(|g| g.is_live()).filter_map(|g| g.activation));
        out
    }

    /// Solves with every live group and every present agent enabled.
    pub fn solve(&mut self, deadline: Option<Instant>) -> SolveOutcome {
        self.current = None;
        let assumptions = self.assumptions();
        self.backend.solve(&assumptions, deadline)
    }

    /// Solves with additional assumed literals (used to test candidate plans).
    pub fn solve_with(&mut self, extra: &[Lit], deadline: Option<Instant>) -> SolveOutcome {
        self.current = None;
        let mut assumptions = self.assumptions();
        assumptions.extend_from_slice(extra);
        self.backend.solve(&assumptions, deadline)
    }

    /// Reads the plans of the last satisfiable solve, cut at `horizon`.
    pub fn decode(&self, horizon: Time) -> Result<PlanSet> {
        let mut plans = PlanSet::new(horizon);
        for (&id, a) in &self.vt.agents {
            if a.start > horizon {
                continue;
            }
            let end = a.departed.unwrap_or(horizon).min(horizon).min(a.last_time());
            let mut locs = Vec::with_capacity((end - a.start + 1) as usize);
            for t in a.start..=end {
                let layer = a.layer(t).unwrap();
                let mut at = layer.iter().filter(|(_, &x)| self.backend.model_value(x.positive()) == Some(true)).map(|(&c, _)| c);
                let c = at.next().ok_or_else(|| Error::State(format!("no location for {id} at {t} in model")))?;
                if at.next().is_some() {
                    return Err(Error::State(format!("several locations for {id} at {t} in model")));
                }
                locs.push(c);
            }
            plans.insert(Traversal::new(id, a.start, a.goal, locs));
        }
        Ok(plans)
    }

    /// The recorded clause database plus the current assumptions as DIMACS text.
    pub fn to_dimacs(&self) -> Result<String> {
        if !self.opts.record_clauses {
            return Err(Error::State("clause recording is disabled".into()));
        }
        let mut out = String::new();
        let assumptions = self.assumptions();
        let _ = writeln!(out, "c assumptions {}", assumptions.iter().map(|l| l.to_dimacs().to_string()).collect::<Vec<_>>().join(" "));
        let _ = writeln!(out, "p cnf {} {}", self.backend.num_vars(), self.log.len());
        for c in &self.log {
            for l in c {
                let _ = write!(out, "{} ", l.to_dimacs());
            }
            out.push_str("0\n");
        }
        Ok(out)
    }
}
