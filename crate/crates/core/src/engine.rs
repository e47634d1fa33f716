//! Planning sessions: horizon deepening, step-by-step execution and re-planning on events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::costs::CostKind;
use crate::encoder::{Encoder, EncoderOptions, GroupId};
use crate::error::{Error, Result};
use crate::grid::{compute_tunnel, path_of, Coord, Tunnel};
use crate::model::{validate_events, validate_solution, Agent, AgentId, DmapfInstance, Event, EventSequence, MapfInstance, PlanSet, Time};
use crate::solver::SolveOutcome;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Re-solve every agent from its current location.
    #[default]
    Replan,
    /// Old agents keep their vertices and directed-edge counts; only timing may change.
    ReviseAugment,
    /// Old agents are confined to tunnels via explicit exclusions.
    TunnelsTc,
    /// Old agents are confined to tunnels by only generating tunnel locations.
    TunnelsTg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Replan, Method::ReviseAugment, Method::TunnelsTc, Method::TunnelsTg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Replan => "replan",
            Method::ReviseAugment => "revise_augment",
            Method::TunnelsTc => "tunnels_tc",
            Method::TunnelsTg => "tunnels_tg",
        }
    }

    pub fn uses_tunnels(self) -> bool {
        matches!(self, Method::TunnelsTc | Method::TunnelsTg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected replan, revise_augment, tunnels_tc or tunnels_tg)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub width: u32,
    pub following: bool,
    /// Wall-clock budget per stage.
    pub deadline_secs: f64,
    /// Horizon cap in addition to alpha and, for makespan, the cost bound.
    pub max_horizon: Option<Time>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { method: Method::Replan, width: 0, following: false, deadline_secs: 200.0, max_horizon: None, seed: 0 }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<()> {
        if self.deadline_secs.is_nan() || self.deadline_secs <= 0.0 {
            return Err(Error::Input(format!("deadline must be positive, got {}", self.deadline_secs)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Sat,
    UnsatAtCap,
    Timeout,
}

impl StageOutcome {
    pub fn name(self) -> &'static str {
        match self {
            StageOutcome::Sat => "sat",
            StageOutcome::UnsatAtCap => "unsat_at_cap",
            StageOutcome::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    /// Time of the triggering change (0 for the initial solve).
    pub k: Time,
    pub agents_added: Vec<AgentId>,
    pub agents_removed: Vec<AgentId>,
    pub obstacles_added: Vec<Coord>,
    pub obstacles_removed: Vec<Coord>,
    /// Last horizon tried; the plan horizon when the outcome is sat.
    pub horizon: Time,
    pub solve_calls: u32,
    pub encode_secs: f64,
    pub solve_secs: f64,
    pub outcome: StageOutcome,
    pub vars: usize,
    pub clauses: usize,
}

/// One planning episode's plans: what was in force before it and what it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlans {
    pub before: Option<PlanSet>,
    pub after: Option<PlanSet>,
    /// Frozen tunnels in force for this stage.
    pub tunnels: BTreeMap<AgentId, Tunnel>,
}

pub struct Session {
    instance: DmapfInstance,
    config: RunConfig,
    enc: Encoder,
    now: Time,
    plans: Option<PlanSet>,
    tunnels: BTreeMap<AgentId, Tunnel>,
    live: Vec<GroupId>,
    departed: BTreeMap<AgentId, Time>,
    stages: Vec<StageRecord>,
    stage_plans: Vec<StagePlans>,
    applied: Vec<Event>,
}

struct Clock {
    encode: Duration,
    solve: Duration,
    calls: u32,
}

impl Clock {
    fn new() -> Self {
        Clock { encode: Duration::ZERO, solve: Duration::ZERO, calls: 0 }
    }

    fn encode<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.encode += t0.elapsed();
        out
    }
}

impl Session {
    pub fn new(instance: DmapfInstance, config: RunConfig) -> Result<Self> {
        config.check()?;
        instance.base.check()?;
        let opts = EncoderOptions { following: config.following, seed: config.seed, record_clauses: false };
        let enc = Encoder::new(&instance.base.map, opts);
        Ok(Session {
            instance,
            config,
            enc,
            now: 0,
            plans: None,
            tunnels: BTreeMap::new(),
            live: Vec::new(),
            departed: BTreeMap::new(),
            stages: Vec::new(),
            stage_plans: Vec::new(),
            applied: Vec::new(),
        })
    }

    /// A session over a plain MAPF instance with no events.
    pub fn for_mapf(base: MapfInstance, alpha: Time, config: RunConfig) -> Result<Self> {
        Self::new(DmapfInstance::new(base, EventSequence::default(), alpha), config)
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn instance(&self) -> &DmapfInstance {
        &self.instance
    }

    pub fn plans(&self) -> Option<&PlanSet> {
        self.plans.as_ref()
    }

    pub fn horizon(&self) -> Option<Time> {
        self.enc.horizon()
    }

    pub fn tunnels(&self) -> &BTreeMap<AgentId, Tunnel> {
        &self.tunnels
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn stage_plans(&self) -> &[StagePlans] {
        &self.stage_plans
    }

    pub fn encoder(&self) -> &Encoder {
        &self.enc
    }

    /// Number of executed-location units recorded so far.
    pub fn prefix_len(&self) -> usize {
        self.enc.prefix().len()
    }

    /// The instance with the events applied so far, for validating current plans.
    pub fn applied_instance(&self) -> DmapfInstance {
        let mut inst = self.instance.clone();
        inst.events = EventSequence::new(self.applied.clone());
        inst
    }

    /// Largest horizon any stage may reach.
    pub fn horizon_cap(&self) -> Time {
        let mut cap = self.instance.alpha;
        if let Some(m) = self.config.max_horizon {
            cap = cap.min(m);
        }
        if self.instance.cost_kind == CostKind::Makespan {
            cap = cap.min(self.instance.tau);
        }
        cap
    }

    fn release_live(&mut self) -> Result<()> {
        for g in std::mem::take(&mut self.live) {
            self.enc.release(g)?;
        }
        Ok(())
    }

    /// Initial solve by horizon deepening from 0.
    pub fn solve_mapf(&mut self) -> Result<StageOutcome> {
        if self.enc.horizon().is_some() {
            return Err(Error::State("initial problem already solved".into()));
        }
        let mut clock = Clock::new();
        let base = self.instance.base.clone();
        clock.encode(|| self.enc.encode_base(&base.agents, base.map.blocked()))?;
        let added: Vec<AgentId> = base.agents.iter().map(|a| a.id).collect();
        let started = Instant::now();

        let outcome = match self.instance.base_solution.clone() {
            Some(given) => {
                let report = validate_solution(&DmapfInstance::new(base.clone(), EventSequence::default(), self.instance.alpha), &given);
                if !report.is_ok() {
                    return Err(Error::Input(format!("base solution is invalid: {:?}", report.classes())));
                }
                clock.encode(|| -> Result<()> {
                    for t in 1..=given.horizon {
                        self.enc.encode_step(t)?;
                    }
                    Ok(())
                })?;
                self.plans = Some(given);
                StageOutcome::Sat
            }
            None => self.deepen(&BTreeMap::new(), started, &mut clock)?,
        };
        self.record(0, added, Vec::new(), &Event::at(0), outcome, clock, None);
        Ok(outcome)
    }

    /// Horizon deepening from the current encoder horizon. Path groups for
    /// `paths` are re-issued at every horizon.
    fn deepen(&mut self, paths: &BTreeMap<AgentId, Vec<Coord>>, started: Instant, clock: &mut Clock) -> Result<StageOutcome> {
        let deadline = started + Duration::from_secs_f64(self.config.deadline_secs);
        let cap = self.horizon_cap();
        loop {
            let m = self.enc.horizon().expect("base encoded");
            let now = self.now;
            let groups = clock.encode(|| -> Result<Vec<GroupId>> {
                let mut gs = vec![self.enc.encode_check(m, now)?];
                for (&a, path) in paths {
                    gs.push(self.enc.encode_path_constraints(a, path)?);
                }
                Ok(gs)
            })?;
            self.live = groups;
            let t0 = Instant::now();
            let outcome = self.enc.solve(Some(deadline));
            clock.solve += t0.elapsed();
            clock.calls += 1;
            match outcome {
                SolveOutcome::Sat => {
                    let plans = self.enc.decode(m)?;
                    log::debug!("sat at horizon {m}");
                    self.plans = Some(plans);
                    return Ok(StageOutcome::Sat);
                }
                SolveOutcome::Timeout => {
                    self.release_live()?;
                    return Ok(StageOutcome::Timeout);
                }
                SolveOutcome::Unsat { .. } => {
                    self.release_live()?;
                    if m >= cap {
                        return Ok(StageOutcome::UnsatAtCap);
                    }
                    if Instant::now() >= deadline {
                        return Ok(StageOutcome::Timeout);
                    }
                    clock.encode(|| self.enc.encode_step(m + 1))?;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, k: Time, added: Vec<AgentId>, removed: Vec<AgentId>, e: &Event, outcome: StageOutcome, clock: Clock, before: Option<PlanSet>) {
        let index = self.stages.len();
        self.stages.push(StageRecord {
            index,
            k,
            agents_added: added,
            agents_removed: removed,
            obstacles_added: e.obstacles_added.iter().copied().collect(),
            obstacles_removed: e.obstacles_removed.iter().copied().collect(),
            horizon: self.enc.horizon().unwrap_or(0),
            solve_calls: clock.calls,
            encode_secs: clock.encode.as_secs_f64(),
            solve_secs: clock.solve.as_secs_f64(),
            outcome,
            vars: self.enc.num_vars(),
            clauses: self.enc.num_clauses(),
        });
        let after = (outcome == StageOutcome::Sat).then(|| self.plans.clone()).flatten();
        self.stage_plans.push(StagePlans { before, after, tunnels: self.tunnels.clone() });
    }

    /// Advances execution by one step and pins every present agent's new location.
    pub fn step_execute(&mut self) -> Result<()> {
        let plans = self.plans.as_ref().ok_or_else(|| Error::State("no plans to execute".into()))?;
        if self.now >= plans.horizon {
            return Err(Error::State(format!("cannot execute past horizon {}", plans.horizon)));
        }
        let t = self.now + 1;
        let fixes: Vec<(AgentId, Coord)> = plans
            .iter()
            .filter(|tr| !self.departed.contains_key(&tr.agent))
            .filter_map(|tr| tr.at(t).map(|c| (tr.agent, c)))
            .collect();
        for (a, c) in fixes {
            self.enc.fix_location(a, t, c)?;
        }
        self.now = t;
        Ok(())
    }

    /// Extends the current plans with goal waits up to time `t`.
    pub fn extend_to(&mut self, t: Time) -> Result<()> {
        let m = self.plans.as_ref().ok_or_else(|| Error::State("no plans to extend".into()))?.horizon;
        if t <= m {
            return Ok(());
        }
        self.release_live()?;
        for s in self.enc.horizon().unwrap() + 1..=t {
            self.enc.encode_step(s)?;
        }
        let departed = self.departed.clone();
        let plans = self.plans.as_mut().unwrap();
        for tr in plans.traversals.values_mut() {
            if departed.contains_key(&tr.agent) {
                continue;
            }
            let last = *tr.locs.last().unwrap();
            while tr.end() < t {
                tr.locs.push(last);
            }
        }
        plans.horizon = t;
        Ok(())
    }

    /// Computes and stores the tunnel of every present agent that has none yet.
    pub fn freeze_tunnels(&mut self, k: Time) -> Result<Vec<AgentId>> {
        let plans = self.plans.as_ref().ok_or_else(|| Error::State("no plans to freeze".into()))?;
        let mut frozen = Vec::new();
        for tr in plans.iter() {
            if self.departed.contains_key(&tr.agent) || self.tunnels.contains_key(&tr.agent) {
                continue;
            }
            let tunnel = compute_tunnel(&self.instance.base.map, &tr.path(), self.config.width)?;
            frozen.push((tr.agent, tunnel));
        }
        let mut ids = Vec::new();
        for (a, tunnel) in frozen {
            match self.config.method {
                Method::TunnelsTg => self.enc.restrict_generation(a, &tunnel, k)?,
                _ => self.enc.encode_forbidden(a, &tunnel, k)?,
            };
            self.tunnels.insert(a, tunnel);
            ids.push(a);
        }
        Ok(ids)
    }

    /// Applies a change happening now and re-plans with the configured method.
    pub fn apply_event(&mut self, e: &Event) -> Result<StageOutcome> {
        if e.t != self.now {
            return Err(Error::Input(format!("event at {} applied at time {}", e.t, self.now)));
        }
        let before = self.plans.clone().ok_or_else(|| Error::State("no plans in force".into()))?;
        let started = Instant::now();
        let mut clock = Clock::new();
        self.release_live()?;

        for &a in &e.agents_leave {
            if self.departed.contains_key(&a) || before.get(a).is_none() {
                return Err(Error::Input(format!("agent {a} cannot leave: not present")));
            }
        }
        let positions: BTreeMap<AgentId, Coord> = before
            .iter()
            .filter(|tr| !self.departed.contains_key(&tr.agent) && !e.agents_leave.contains(&tr.agent))
            .filter_map(|tr| tr.at(self.now).map(|c| (tr.agent, c)))
            .collect();
        if let Some((a, c)) = positions.iter().find(|(_, c)| e.obstacles_added.contains(c)) {
            return Err(Error::Input(format!("obstacle added on {c} occupied by {a} at {}", self.now)));
        }
        for j in &e.agents_join {
            if before.get(j.id).is_some() || self.enc.agent_start(j.id).is_some() {
                return Err(Error::Input(format!("agent {} joins twice", j.id)));
            }
        }

        let now = self.now;
        clock.encode(|| -> Result<()> {
            for &a in &e.agents_leave {
                self.enc.remove_agent(a, now)?;
                self.departed.insert(a, now);
            }
            if !e.obstacles_removed.is_empty() {
                self.enc.remove_obstacles(&e.obstacles_removed, now)?;
            }
            if !e.obstacles_added.is_empty() {
                self.enc.add_obstacles(&e.obstacles_added, now)?;
            }
            Ok(())
        })?;
        if let Some(p) = self.plans.as_mut() {
            for &a in &e.agents_leave {
                if let Some(tr) = p.traversals.get_mut(&a) {
                    tr.truncate_at(now);
                }
            }
        }

        let mut paths = BTreeMap::new();
        match self.config.method {
            Method::Replan => {}
            Method::ReviseAugment => {
                for &a in positions.keys() {
                    paths.insert(a, path_of(&before.get(a).unwrap().locs));
                }
            }
            Method::TunnelsTc | Method::TunnelsTg => {
                clock.encode(|| self.freeze_tunnels(now))?;
            }
        }
        clock.encode(|| -> Result<()> {
            for j in &e.agents_join {
                self.enc.encode_new_agent(&j.clone().joining_at(now), now)?;
            }
            Ok(())
        })?;

        let outcome = self.deepen(&paths, started, &mut clock)?;
        if outcome != StageOutcome::Sat {
            self.plans = None;
        }
        self.applied.push(e.clone());
        let added = e.agents_join.iter().map(|a| a.id).collect();
        let removed = e.agents_leave.iter().copied().collect();
        self.record(now, added, removed, e, outcome, clock, Some(before));
        Ok(outcome)
    }
}

/// Result of replaying an event script.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub stage_plans: Vec<StagePlans>,
    /// Plans after the last successful stage.
    pub final_plans: Option<PlanSet>,
    /// True when every stage succeeded.
    pub completed: bool,
}

impl Simulation {
    /// Horizon reached by each stage, in order.
    pub fn horizons(&self) -> Vec<Time> {
        self.stages.iter().map(|s| s.horizon).collect()
    }
}

/// Solves the base problem, then executes step by step, applying each event at its time.
pub fn simulate(instance: &DmapfInstance, config: &RunConfig) -> Result<Simulation> {
    let violations = validate_events(instance);
    if let Some(v) = violations.first() {
        return Err(Error::Input(format!("event {} violates {}: {}", v.event, v.condition.label(), v.detail)));
    }
    let mut session = Session::new(instance.clone(), config.clone())?;
    let mut completed = session.solve_mapf()? == StageOutcome::Sat;
    if completed {
        let mut events: Vec<&Event> = instance.events.iter().filter(|e| !e.is_empty()).collect();
        events.sort_by_key(|e| e.t);
        for e in events {
            if e.t > instance.alpha {
                break;
            }
            session.extend_to(e.t)?;
            while session.now() < e.t {
                session.step_execute()?;
            }
            if session.apply_event(e)? != StageOutcome::Sat {
                completed = false;
                break;
            }
        }
    }
    Ok(Simulation {
        config: config.clone(),
        stages: session.stages.clone(),
        stage_plans: session.stage_plans.clone(),
        final_plans: session.plans.clone(),
        completed,
    })
}

/// Agents that were present before stage `index` and are still present after it.
pub fn old_agents(stage: &StagePlans) -> BTreeSet<AgentId> {
    let (Some(before), Some(after)) = (&stage.before, &stage.after) else {
        return BTreeSet::new();
    };
    before
        .iter()
        .filter(|tr| tr.end() == before.horizon)
        .filter(|tr| after.get(tr.agent).is_some_and(|n| n.end() == after.horizon))
        .map(|tr| tr.agent)
        .collect()
}

/// Builds an agent that appears at `t`.
pub fn joiner(id: u32, init: Coord, goal: Coord, t: Time) -> Agent {
    Agent::new(id, init, goal).joining_at(t)
}
