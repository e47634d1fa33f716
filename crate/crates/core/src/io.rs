//! File formats and instance generators.
//!
//! Maps and scenarios use the grid benchmark text formats. Instances, event
//! scripts and solutions are JSON with coordinates written as `[row, col]`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::CostKind;
use crate::error::{Error, Result};
use crate::grid::{manhattan, Coord, GridMap};
use crate::model::{Agent, AgentId, DmapfInstance, Event, EventSequence, MapfInstance, PlanSet, Time};

fn cell_blocked(ch: char) -> Option<bool> {
    match ch {
        '.' | 'G' | 'S' => Some(false),
        '@' | 'O' | 'T' | 'W' => Some(true),
        _ => None,
    }
}

fn parse_rows<'a>(rows: impl Iterator<Item = (usize, &'a str)>, width: u32, height: u32) -> Result<GridMap> {
    let mut blocked = Vec::new();
    let mut seen = 0u32;
    let mut last_line = 0;
    for (line, row) in rows {
        last_line = line;
        if seen == height {
            if row.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(line, format!("more than {height} map rows")));
        }
        let row = row.trim_end_matches(['\r', '\n']);
        let n = row.chars().count() as u32;
        if n != width {
            return Err(Error::parse(line, format!("row has {n} cells, expected {width}")));
        }
        for (col, ch) in row.chars().enumerate() {
            match cell_blocked(ch) {
                Some(true) => blocked.push(Coord::new(seen, col as u32)),
                Some(false) => {}
                None => return Err(Error::parse(line, format!("unknown map character '{ch}'"))),
            }
        }
        seen += 1;
    }
    if seen != height {
        return Err(Error::parse(last_line, format!("map has {seen} rows, expected {height}")));
    }
    GridMap::new(width, height, blocked)
}

/// Parses a map in the grid benchmark format (`type`, `height`, `width`, `map`, then rows).
///
/// `.`, `G` and `S` are passable; `@`, `O`, `T` and `W` are blocked.
pub fn parse_map(text: &str) -> Result<GridMap> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (mut width, mut height) = (None, None);
    loop {
        let Some((line, l)) = lines.next() else {
            return Err(Error::parse(text.lines().count().max(1), "missing 'map' line"));
        };
        let mut parts = l.split_whitespace();
        match (parts.next(), parts.next()) {
            (None, _) => continue,
            (Some("map"), None) => break,
            (Some("type"), Some(_)) => {}
            (Some(key @ ("height" | "width")), Some(v)) => {
                let v: u32 = v.parse().map_err(|_| Error::parse(line, format!("bad {key} '{v}'")))?;
                if key == "height" {
                    height = Some(v);
                } else {
                    width = Some(v);
                }
            }
            _ => return Err(Error::parse(line, format!("unexpected header line '{l}'"))),
        }
    }
    let (Some(width), Some(height)) = (width, height) else {
        return Err(Error::parse(1, "header lacks height or width"));
    };
    parse_rows(lines, width, height)
}

fn map_rows(map: &GridMap) -> Vec<String> {
    (0..map.height())
        .map(|r| (0..map.width()).map(|c| if map.is_blocked(Coord::new(r, c)) { '@' } else { '.' }).collect())
        .collect()
}

pub fn write_map(map: &GridMap) -> String {
    let mut out = format!("type octile\nheight {}\nwidth {}\nmap\n", map.height(), map.width());
    for row in map_rows(map) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// One usable scenario row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenPair {
    pub init: Coord,
    pub goal: Coord,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scenario {
    pub pairs: Vec<ScenPair>,
    /// One message per dropped row.
    pub warnings: Vec<String>,
}

/// Parses tab-separated scenario rows (`bucket map width height x0 y0 x1 y1 optimal`),
/// where `x` is the column and `y` the row. Rows with an endpoint on an obstacle are dropped.
pub fn parse_scen(text: &str, map: &GridMap) -> Result<Scenario> {
    let mut out = Scenario::default();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let l = l.trim_end_matches('\r');
        if l.trim().is_empty() || l.starts_with("version") {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() < 8 {
            return Err(Error::parse(line, format!("expected at least 8 tab-separated fields, got {}", fields.len())));
        }
        let num = |k: usize| -> Result<u32> {
            fields[k].trim().parse().map_err(|_| Error::parse(line, format!("bad number '{}'", fields[k])))
        };
        let init = Coord::new(num(5)?, num(4)?);
        let goal = Coord::new(num(7)?, num(6)?);
        for c in [init, goal] {
            if !map.contains(c) {
                return Err(Error::parse(line, format!("cell {c} outside the {}x{} map", map.height(), map.width())));
            }
        }
        if map.is_blocked(init) || map.is_blocked(goal) {
            out.warnings.push(format!("line {line}: endpoint on an obstacle, row skipped"));
            continue;
        }
        out.pairs.push(ScenPair { init, goal });
    }
    Ok(out)
}

pub fn write_scen(pairs: &[ScenPair], map_name: &str, map: &GridMap) -> String {
    let mut out = String::from("version 1\n");
    for p in pairs {
        let opt = map.distances_from(p.init, &BTreeSet::new())[map.index(p.goal)].map_or(-1.0, f64::from);
        out.push_str(&format!(
            "0\t{map_name}\t{}\t{}\t{}\t{}\t{}\t{}\t{opt:.8}\n",
            map.width(),
            map.height(),
            p.init.col,
            p.init.row,
            p.goal.col,
            p.goal.row
        ));
    }
    out
}

/// The first `n` pairs whose initial cells and goals are all distinct.
pub fn select_agents(pairs: &[ScenPair], n: usize) -> Result<Vec<Agent>> {
    let mut inits = BTreeSet::new();
    let mut goals = BTreeSet::new();
    let mut out = Vec::new();
    for p in pairs {
        if out.len() == n {
            break;
        }
        if inits.contains(&p.init) || goals.contains(&p.goal) {
            continue;
        }
        inits.insert(p.init);
        goals.insert(p.goal);
        out.push(Agent::new(out.len() as u32 + 1, p.init, p.goal));
    }
    if out.len() < n {
        return Err(Error::Input(format!("scenario has only {} compatible pairs, {n} requested", out.len())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub id: AgentId,
    pub init: Coord,
    pub goal: Coord,
}

/// One entry of an event script.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub t: Time,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joins: Vec<JoinSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaves: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs_add: Vec<Coord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs_remove: Vec<Coord>,
}

impl From<&Event> for ScriptEntry {
    fn from(e: &Event) -> Self {
        ScriptEntry {
            t: e.t,
            joins: e.agents_join.iter().map(|a| JoinSpec { id: a.id, init: a.init, goal: a.goal }).collect(),
            leaves: e.agents_leave.iter().copied().collect(),
            obs_add: e.obstacles_added.iter().copied().collect(),
            obs_remove: e.obstacles_removed.iter().copied().collect(),
        }
    }
}

impl From<&ScriptEntry> for Event {
    fn from(s: &ScriptEntry) -> Self {
        Event {
            t: s.t,
            agents_leave: s.leaves.iter().copied().collect(),
            agents_join: s.joins.iter().map(|j| Agent::new(j.id.0, j.init, j.goal).joining_at(s.t)).collect(),
            obstacles_removed: s.obs_remove.iter().copied().collect(),
            obstacles_added: s.obs_add.iter().copied().collect(),
        }
    }
}

/// Checks the script shape: strictly increasing times and no empty entries.
pub fn check_script(script: &[ScriptEntry]) -> Result<()> {
    for (i, e) in script.iter().enumerate() {
        if e.joins.is_empty() && e.leaves.is_empty() && e.obs_add.is_empty() && e.obs_remove.is_empty() {
            return Err(Error::Input(format!("event at t={} changes nothing", e.t)));
        }
        if i > 0 && script[i - 1].t >= e.t {
            return Err(Error::Input(format!("event times must increase strictly, got {} after {}", e.t, script[i - 1].t)));
        }
    }
    Ok(())
}

pub fn parse_event_script(text: &str) -> Result<EventSequence> {
    let script: Vec<ScriptEntry> = serde_json::from_str(text)?;
    check_script(&script)?;
    Ok(EventSequence::new(script.iter().map(Event::from).collect()))
}

pub fn write_event_script(events: &EventSequence) -> Result<String> {
    let script: Vec<ScriptEntry> = events.iter().map(ScriptEntry::from).collect();
    Ok(serde_json::to_string_pretty(&script)?)
}

/// JSON form of a dynamic instance. The map is given as rows of map characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub map: Vec<String>,
    pub agents: Vec<JoinSpec>,
    #[serde(default)]
    pub events: Vec<ScriptEntry>,
    pub alpha: Time,
    #[serde(default)]
    pub cost: CostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_solution: Option<PlanSet>,
}

impl InstanceFile {
    pub fn from_instance(inst: &DmapfInstance) -> Self {
        InstanceFile {
            map: map_rows(&inst.base.map),
            agents: inst.base.agents.iter().map(|a| JoinSpec { id: a.id, init: a.init, goal: a.goal }).collect(),
            events: inst.events.iter().map(ScriptEntry::from).collect(),
            alpha: inst.alpha,
            cost: inst.cost_kind,
            tau: (inst.tau != u32::MAX).then_some(inst.tau),
            base_solution: inst.base_solution.clone(),
        }
    }

    pub fn to_instance(&self) -> Result<DmapfInstance> {
        let height = self.map.len() as u32;
        let width = self.map.first().map_or(0, |r| r.chars().count() as u32);
        let map = parse_rows(self.map.iter().enumerate().map(|(i, r)| (i + 1, r.as_str())), width, height)?;
        check_script(&self.events)?;
        let agents = self.agents.iter().map(|j| Agent::new(j.id.0, j.init, j.goal)).collect();
        let mut base = MapfInstance::new(map, agents);
        base.cost_kind = self.cost;
        base.tau = self.tau.unwrap_or(u32::MAX);
        let mut inst = DmapfInstance::new(base, EventSequence::new(self.events.iter().map(Event::from).collect()), self.alpha);
        inst.base_solution = self.base_solution.clone();
        Ok(inst)
    }
}

pub fn parse_instance(text: &str) -> Result<DmapfInstance> {
    serde_json::from_str::<InstanceFile>(text)?.to_instance()
}

pub fn write_instance(inst: &DmapfInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceFile::from_instance(inst))?)
}

/// Hex SHA-256 of the instance's compact JSON form.
pub fn instance_hash(inst: &DmapfInstance) -> String {
    let bytes = serde_json::to_vec(&InstanceFile::from_instance(inst)).expect("instance serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub instance_hash: String,
    pub plans: PlanSet,
}

impl SolutionFile {
    pub fn new(inst: &DmapfInstance, plans: PlanSet) -> Self {
        SolutionFile { instance_hash: instance_hash(inst), plans }
    }

    pub fn matches(&self, inst: &DmapfInstance) -> bool {
        self.instance_hash == instance_hash(inst)
    }
}

pub fn parse_solution(text: &str) -> Result<SolutionFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_solution(sol: &SolutionFile) -> Result<String> {
    Ok(serde_json::to_string_pretty(sol)?)
}

fn mirror(c: Coord, size: u32) -> Coord {
    Coord::new(size - 1 - c.row, size - 1 - c.col)
}

/// Cells of the upper-left triangle in order of distance from the corner,
/// shuffled within each distance by `seed`.
fn corner_cells(size: u32, seed: u64) -> Vec<Coord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for d in 0..size.saturating_sub(1) {
        let mut ring: Vec<Coord> = (0..=d).map(|r| Coord::new(r, d - r)).collect();
        ring.shuffle(&mut rng);
        out.extend(ring);
    }
    out
}

/// `n` agents on an empty `size`×`size` grid, each starting near the top-left
/// corner with its goal at the cell mirrored through the grid center.
pub fn gen_diagonal_instance(n: usize, size: u32, seed: u64) -> Result<MapfInstance> {
    let map = GridMap::empty(size, size)?;
    let cells = corner_cells(size, seed);
    if n == 0 || n > cells.len() {
        return Err(Error::Input(format!("cannot place {n} diagonal agents on a {size}x{size} grid (at most {})", cells.len())));
    }
    let agents = cells[..n].iter().enumerate().map(|(i, &c)| Agent::new(i as u32 + 1, c, mirror(c, size))).collect();
    Ok(MapfInstance::new(map, agents))
}

/// Parses a setup such as `20+5` or `30+2+2+2+2+2`: the initial agent count
/// followed by the number of agents joining at times 1, 2, ...
pub fn parse_setup(setup: &str) -> Result<(usize, Vec<usize>)> {
    let parts: Vec<usize> = setup
        .split('+')
        .map(|p| p.trim().parse().map_err(|_| Error::Input(format!("bad setup '{setup}'"))))
        .collect::<Result<_>>()?;
    let (&base, joins) = parts.split_first().ok_or_else(|| Error::Input("empty setup".into()))?;
    if joins.contains(&0) {
        return Err(Error::Input(format!("setup '{setup}' has an empty join stage")));
    }
    Ok((base, joins.to_vec()))
}

/// Diagonal instance for a setup string. Joiners start near the bottom-right
/// corner and head to the mirrored cell; their initial cells are farther from
/// every earlier agent's start than that agent can have moved by the join time.
pub fn gen_setup(setup: &str, size: u32, seed: u64, alpha: Time) -> Result<DmapfInstance> {
    let (n, joins) = parse_setup(setup)?;
    let base = gen_diagonal_instance(n, size, seed)?;
    let mut placed: Vec<(Coord, Time)> = base.agents.iter().map(|a| (a.init, 0)).collect();
    let mut used: BTreeSet<Coord> = base.agents.iter().flat_map(|a| [a.init, a.goal]).collect();
    let candidates: Vec<Coord> = corner_cells(size, seed ^ 0x9e37_79b9).into_iter().map(|c| mirror(c, size)).collect();
    let mut next_id = n as u32 + 1;
    let mut events = Vec::new();
    for (i, &count) in joins.iter().enumerate() {
        let k = i as Time + 1;
        let mut ev = Event::at(k);
        for _ in 0..count {
            let init = candidates
                .iter()
                .copied()
                .find(|&c| {
                    !used.contains(&c)
                        && !used.contains(&mirror(c, size))
                        && placed.iter().all(|&(p, t)| manhattan(c, p) > k - t)
                })
                .ok_or_else(|| Error::Input(format!("no room for joiner {next_id} on a {size}x{size} grid")))?;
            let goal = mirror(init, size);
            used.insert(init);
            used.insert(goal);
            placed.push((init, k));
            ev = ev.join(next_id, init, goal);
            next_id += 1;
        }
        events.push(ev);
    }
    Ok(DmapfInstance::new(base, EventSequence::new(events), alpha))
}

/// Downsamples `map` to `width`×`height`. Each target cell covers a block of
/// source cells and is blocked when at least half of that block is blocked.
pub fn scale_map(map: &GridMap, width: u32, height: u32) -> Result<GridMap> {
    if width == 0 || height == 0 || width > map.width() || height > map.height() {
        return Err(Error::Input(format!(
            "cannot scale a {}x{} map to {width}x{height}",
            map.width(),
            map.height()
        )));
    }
    let span = |i: u32, from: u32, to: u32| (i * from / to, ((i + 1) * from / to).max(i * from / to + 1));
    let mut blocked = Vec::new();
    for r in 0..height {
        let (r0, r1) = span(r, map.height(), height);
        for c in 0..width {
            let (c0, c1) = span(c, map.width(), width);
            let total = (r1 - r0) * (c1 - c0);
            let count = (r0..r1)
                .flat_map(|rr| (c0..c1).map(move |cc| Coord::new(rr, cc)))
                .filter(|&x| map.is_blocked(x))
                .count() as u32;
            if 2 * count >= total {
                blocked.push(Coord::new(r, c));
            }
        }
    }
    GridMap::new(width, height, blocked)
}
