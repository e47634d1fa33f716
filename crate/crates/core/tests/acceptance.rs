//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmapf_core::encoder::{Encoder, EncoderOptions};
use dmapf_core::io::gen_setup;
use dmapf_core::metrics::stage_diff;
use dmapf_core::model::ValidateOptions;
use dmapf_core::solver::Lit;
use dmapf_core::{
    aggregate, compute_tunnel, manhattan, path_of, simulate, traversal_costs, validate_solution,
    validate_solution_with, Agent, AgentId, CostKind, Coord, DmapfInstance, Event, EventSequence, GridMap,
    MapfInstance, Method, PlanSet, RunConfig, Session, Simulation, StageOutcome, Time, Traversal, ViolationClass,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn c(r: u32, col: u32) -> Coord {
    Coord::new(r, col)
}

fn free_cells(map: &GridMap) -> Vec<Coord> {
    map.cells().filter(|p| !map.is_blocked(*p)).collect()
}

fn random_map(rng: &mut ChaCha8Rng, w: u32, h: u32, obstacles: usize) -> GridMap {
    let mut cells: Vec<Coord> = (0..h).flat_map(|r| (0..w).map(move |col| c(r, col))).collect();
    cells.shuffle(rng);
    GridMap::new(w, h, cells.into_iter().take(obstacles)).unwrap()
}

fn random_agents(rng: &mut ChaCha8Rng, map: &GridMap, n: usize) -> Vec<Agent> {
    let free = free_cells(map);
    let inits: Vec<Coord> = free.choose_multiple(rng, n).copied().collect();
    let goals: Vec<Coord> = free.choose_multiple(rng, n).copied().collect();
    (0..n).map(|i| Agent::new(i as u32 + 1, inits[i], goals[i])).collect()
}

/// Minimal makespan by breadth-first search over joint positions.
fn joint_bfs(map: &GridMap, agents: &[Agent], cap: Time) -> Option<Time> {
    let start: Vec<Coord> = agents.iter().map(|a| a.init).collect();
    let goal: Vec<Coord> = agents.iter().map(|a| a.goal).collect();
    if start.iter().chain(&goal).any(|p| map.is_blocked(*p)) {
        return None;
    }
    let mut dist: HashMap<Vec<Coord>, Time> = HashMap::from([(start.clone(), 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        if s == goal {
            return Some(d);
        }
        if d == cap {
            continue;
        }
        let moves: Vec<Vec<Coord>> = s
            .iter()
            .map(|&p| {
                let mut m = vec![p];
                m.extend(map.neighbors(p).unwrap().into_iter().filter(|q| !map.is_blocked(*q)));
                m
            })
            .collect();
        let mut stack = vec![Vec::new()];
        while let Some(partial) = stack.pop() {
            let i = partial.len();
            if i == s.len() {
                if !dist.contains_key(&partial) {
                    dist.insert(partial.clone(), d + 1);
                    queue.push_back(partial);
                }
                continue;
            }
            for &q in &moves[i] {
                let clash = (0..i).any(|j| partial[j] == q || (partial[j] == s[i] && s[j] == q));
                if !clash {
                    let mut next = partial.clone();
                    next.push(q);
                    stack.push(next);
                }
            }
        }
    }
    None
}

fn oracle_optimality() -> Verdict {
    const CAP: Time = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut matched, mut solvable, mut slowest) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for i in 0..50 {
        let (w, h) = loop {
            let (w, h) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            if w * h >= 3 {
                break (w, h);
            }
        };
        let n = rng.gen_range(1..=2usize);
        let obstacles = rng.gen_range(0..=2usize).min((w * h) as usize - n - 1);
        let map = random_map(&mut rng, w, h, obstacles);
        let agents = random_agents(&mut rng, &map, n);
        let expected = joint_bfs(&map, &agents, CAP);
        let started = Instant::now();
        let config = RunConfig { deadline_secs: 5.0, ..Default::default() };
        let mut session = Session::for_mapf(MapfInstance::new(map.clone(), agents.clone()), CAP, config).unwrap();
        let got = match session.solve_mapf().unwrap() {
            StageOutcome::Sat => Some(session.horizon().unwrap()),
            StageOutcome::UnsatAtCap => None,
            StageOutcome::Timeout => {
                failures.push(format!("case {i}: timeout"));
                continue;
            }
        };
        let secs = started.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        if let Some(plans) = session.plans() {
            let inst = DmapfInstance::new(MapfInstance::new(map, agents), EventSequence::default(), CAP);
            if !validate_solution(&inst, plans).is_ok() {
                failures.push(format!("case {i}: invalid plan"));
            }
        }
        solvable += usize::from(expected.is_some());
        if got == expected && secs < 5.0 {
            matched += 1;
        } else {
            failures.push(format!("case {i}: solver {got:?}, oracle {expected:?}, {secs:.2} s"));
        }
    }
    verdict(
        matched == 50,
        format!("{matched}/50 minimal makespans equal the joint BFS ({solvable} solvable), slowest {slowest:.3} s {failures:?}"),
    )
}

fn candidate(enc: &Encoder, locs: &[Coord]) -> Vec<Lit> {
    locs.iter()
        .enumerate()
        .map(|(t, &p)| enc.vars().location(AgentId(1), t as Time, p).expect("location variable").positive())
        .collect()
}

fn pair_counts(locs: &[Coord]) -> BTreeMap<(Coord, Coord), usize> {
    let mut out = BTreeMap::new();
    for w in path_of(locs).windows(2) {
        *out.entry((w[0], w[1])).or_default() += 1;
    }
    out
}

fn revised_traversal_fixture() -> Verdict {
    let (a, b, cc, d) = (c(0, 0), c(0, 1), c(0, 2), c(0, 3));
    let original = [a, a, b, cc, cc, d];
    let revised = [a, a, b, cc, b, cc, d];
    let map = GridMap::empty(4, 2).unwrap();
    let fresh = |confine: &dyn Fn(&mut Encoder)| {
        let mut enc = Encoder::new(&map, EncoderOptions::default());
        enc.encode_base(&[Agent::new(1, a, d)], &BTreeSet::new()).unwrap();
        enc.encode_step(1).unwrap();
        confine(&mut enc);
        for t in 2..=6 {
            enc.encode_step(t).unwrap();
        }
        enc
    };
    let tunnel = compute_tunnel(&map, &path_of(&original), 0).unwrap();

    let mut plain = fresh(&|_| {});
    let mut ra = fresh(&|_| {});
    ra.encode_path_constraints(AgentId(1), &original).unwrap();
    let mut tc = fresh(&|e| {
        e.encode_forbidden(AgentId(1), &tunnel, 1).unwrap();
    });
    let mut tg = fresh(&|e| {
        e.restrict_generation(AgentId(1), &tunnel, 1).unwrap();
    });
    let lits = candidate(&plain, &revised);
    let unconstrained = plain.solve_with(&lits, None).is_sat();
    let ra_excludes = ra.solve_with(&candidate(&ra, &revised), None).is_unsat();
    let ra_keeps_original = ra.solve_with(&candidate(&ra, &[a, a, b, cc, cc, d, d]), None).is_sat();
    let tc_accepts = tc.solve_with(&candidate(&tc, &revised), None).is_sat();
    let tg_accepts = tg.solve_with(&candidate(&tg, &revised), None).is_sat();

    // Independent view: same vertex set, inside the width-0 tunnel, but a different transition multiset.
    let same_vertices = original.iter().collect::<BTreeSet<_>>() == revised.iter().collect::<BTreeSet<_>>();
    let inside = revised.iter().all(|p| tunnel.vertices.contains(p));
    let counts_differ = pair_counts(&original) != pair_counts(&revised);

    let pass = unconstrained && ra_excludes && ra_keeps_original && tc_accepts && tg_accepts && same_vertices && inside && counts_differ;
    verdict(
        pass,
        format!(
            "revised traversal: unconstrained sat={unconstrained}, revise_augment unsat={ra_excludes} (original sat={ra_keeps_original}), \
             tunnels w=0 tc sat={tc_accepts} tg sat={tg_accepts}; oracle: vertices equal={same_vertices}, in tunnel={inside}, pair counts differ={counts_differ}"
        ),
    )
}

/// Random 8x8 instance with 4 initial agents and 2 joiners at t=1 whose initial
/// cells are more than one step from every initial cell.
fn joiner_instance(rng: &mut ChaCha8Rng) -> DmapfInstance {
    let map = random_map(rng, 8, 8, 6);
    let agents = random_agents(rng, &map, 4);
    let inits: Vec<Coord> = agents.iter().map(|a| a.init).collect();
    let mut goals: BTreeSet<Coord> = agents.iter().map(|a| a.goal).collect();
    let mut free = free_cells(&map);
    free.shuffle(rng);
    let mut event = Event::at(1);
    let mut used = BTreeSet::new();
    for id in 5..=6 {
        let init = *free
            .iter()
            .find(|p| !used.contains(*p) && !goals.contains(*p) && inits.iter().all(|q| manhattan(**p, *q) > 1))
            .unwrap();
        used.insert(init);
        let goal = *free.iter().find(|p| !goals.contains(*p) && **p != init).unwrap();
        goals.insert(goal);
        event = event.join(id, init, goal);
    }
    DmapfInstance::new(MapfInstance::new(map, agents), EventSequence::new(vec![event]), 40)
}

struct MethodRun {
    label: String,
    sim: Simulation,
}

impl MethodRun {
    /// Horizon of the joiner stage, `None` when no horizon up to the cap works.
    fn horizon(&self) -> Option<Time> {
        (self.sim.completed).then(|| self.sim.stages[1].horizon)
    }

    fn timed_out(&self) -> bool {
        self.sim.stages.iter().any(|s| s.outcome == StageOutcome::Timeout)
    }
}

struct JoinerCase {
    inst: DmapfInstance,
    runs: Vec<MethodRun>,
}

impl JoinerCase {
    fn run(&self, label: &str) -> &MethodRun {
        self.runs.iter().find(|r| r.label == label).unwrap()
    }
}

const HORIZON_SLACK: Time = 8;

fn joiner_cases() -> Vec<JoinerCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut candidates = Vec::new();
    while candidates.len() < 20 {
        let inst = joiner_instance(&mut rng);
        let replan = simulate(&inst, &RunConfig { deadline_secs: 60.0, ..Default::default() }).unwrap();
        if replan.completed {
            candidates.push((inst, replan));
        }
    }
    let diameter = 8 + 8 - 2;
    let variants: Vec<(&str, Method, u32)> = vec![
        ("tc0", Method::TunnelsTc, 0),
        ("tg0", Method::TunnelsTg, 0),
        ("tc2", Method::TunnelsTc, 2),
        ("tc_diameter", Method::TunnelsTc, diameter),
        ("revise_augment", Method::ReviseAugment, 0),
    ];
    std::thread::scope(|scope| {
        let handles: Vec<_> = candidates
            .into_iter()
            .map(|(inst, replan)| {
                let variants = variants.clone();
                scope.spawn(move || {
                    let cap = replan.stages[1].horizon + HORIZON_SLACK;
                    let mut runs = vec![MethodRun { label: "replan".into(), sim: replan }];
                    for (label, method, width) in variants {
                        let config = RunConfig { method, width, deadline_secs: 60.0, max_horizon: Some(cap), ..Default::default() };
                        runs.push(MethodRun { label: label.into(), sim: simulate(&inst, &config).unwrap() });
                    }
                    JoinerCase { inst, runs }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn width_zero_preservation(cases: &[JoinerCase]) -> Verdict {
    let (mut solved, mut zero, mut checked_agents) = (0, 0, 0);
    let mut failures = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        for label in ["tc0", "tg0"] {
            let run = case.run(label);
            if run.timed_out() {
                failures.push(format!("case {i} {label}: timeout"));
                continue;
            }
            if !run.sim.completed {
                continue;
            }
            solved += 1;
            let stage = &run.sim.stage_plans[1];
            let diff = stage_diff(stage, 1, &[0]).unwrap().unwrap();
            // Independent check: every visited vertex of a frozen agent lies on its frozen path.
            let after = stage.after.as_ref().unwrap();
            let mut on_path = true;
            for (agent, tunnel) in &stage.tunnels {
                if let Some(tr) = after.get(*agent) {
                    checked_agents += 1;
                    on_path &= tr.locs.iter().all(|p| tunnel.path.contains(p));
                }
            }
            let valid = validate_solution(&case.inst, run.sim.final_plans.as_ref().unwrap()).is_ok();
            if diff.n_path_changes == 0 && on_path && valid {
                zero += 1;
            } else {
                failures.push(format!("case {i} {label}: path changes {}, on path {on_path}, valid {valid}", diff.n_path_changes));
            }
        }
    }
    verdict(
        failures.is_empty() && solved > 0,
        format!("{zero}/{solved} solved width-0 tunnel runs have zero path changes ({checked_agents} frozen agents checked) {failures:?}"),
    )
}

fn tc_equals_tg(cases: &[JoinerCase]) -> Verdict {
    let mut failures = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let (tc, tg) = (case.run("tc0"), case.run("tg0"));
        if tc.timed_out() || tg.timed_out() || tc.horizon() != tg.horizon() {
            failures.push(format!("case {i}: tc {:?} tg {:?}", tc.horizon(), tg.horizon()));
        }
    }
    let horizons: Vec<String> = cases.iter().map(|c| fmt_horizon(c.run("tc0").horizon())).collect();
    verdict(failures.is_empty(), format!("20/20 equal minimal horizons required, {} differ; tc0 horizons {horizons:?} {failures:?}", failures.len()))
}

fn fmt_horizon(h: Option<Time>) -> String {
    h.map_or("cap".into(), |h| h.to_string())
}

fn method_ordering(cases: &[JoinerCase]) -> Verdict {
    // A missing horizon means none exists up to the cap; it ranks above every number.
    let rank = |h: Option<Time>| h.unwrap_or(Time::MAX);
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let labels = ["replan", "tc2", "tc0", "revise_augment", "tc_diameter"];
        if labels.iter().any(|l| case.run(l).timed_out()) {
            failures.push(format!("case {i}: timeout"));
            continue;
        }
        let prefixes: BTreeSet<String> = labels
            .iter()
            .map(|l| format!("{:?}", case.run(l).sim.stage_plans[1].before.as_ref().map(|p| p.snapshot(1))))
            .collect();
        if prefixes.len() != 1 {
            failures.push(format!("case {i}: methods executed different prefixes"));
            continue;
        }
        let h: Vec<Option<Time>> = labels.iter().map(|l| case.run(l).horizon()).collect();
        let ordered = rank(h[0]) <= rank(h[1]) && rank(h[1]) <= rank(h[2]) && rank(h[2]) <= rank(h[3]);
        if !ordered || h[4] != h[0] {
            failures.push(format!("case {i}: {h:?}"));
        }
        rows.push(h.iter().map(|x| fmt_horizon(*x)).collect::<Vec<_>>().join("/"));
    }
    verdict(
        failures.is_empty(),
        format!("replan <= w2 <= w0 <= revise_augment and w=diameter == replan on 20 cases [{}] {failures:?}", rows.join(" ")),
    )
}

/// Problems found by direct inspection, named like the validator's classes.
fn inspect(inst: &DmapfInstance, plans: &PlanSet, history: &PlanSet, k: Time) -> BTreeSet<ViolationClass> {
    let map = &inst.base.map;
    let mut out = BTreeSet::new();
    for tr in plans.iter() {
        for w in tr.locs.windows(2) {
            if manhattan(w[0], w[1]) > 1 {
                out.insert(ViolationClass::Teleport);
            }
        }
        if tr.locs.iter().any(|p| map.is_blocked(*p)) {
            out.insert(ViolationClass::Obstacle);
        }
        if tr.locs.last() != Some(&tr.goal) {
            out.insert(ViolationClass::GoalMiss);
        }
        if let Some(old) = history.get(tr.agent) {
            if (tr.start..=k.min(old.end())).any(|t| tr.at(t) != old.at(t)) {
                out.insert(ViolationClass::PrefixMismatch);
            }
        }
    }
    let trs: Vec<&Traversal> = plans.iter().collect();
    for (i, a) in trs.iter().enumerate() {
        for b in &trs[i + 1..] {
            for t in a.start.max(b.start)..=a.end().min(b.end()) {
                if a.at(t) == b.at(t) {
                    out.insert(ViolationClass::VertexConflict);
                }
                if t < a.end().min(b.end()) && a.at(t) == b.at(t + 1) && b.at(t) == a.at(t + 1) && a.at(t) != b.at(t) {
                    out.insert(ViolationClass::SwapConflict);
                }
            }
        }
    }
    out
}

struct Solved {
    inst: DmapfInstance,
    plans: PlanSet,
    history: PlanSet,
    k: Time,
}

fn replace(plans: &PlanSet, tr: Traversal) -> PlanSet {
    let mut out = plans.clone();
    out.insert(tr);
    out
}

fn mutate(kind: ViolationClass, s: &Solved, rng: &mut ChaCha8Rng) -> Option<PlanSet> {
    let map = &s.inst.base.map;
    let trs: Vec<&Traversal> = s.plans.iter().collect();
    let tr = (*trs.choose(rng)?).clone();
    let end = tr.end();
    let late: Vec<Time> = ((s.k + 1).max(tr.start + 1)..end).collect();
    let mut m = tr.clone();
    let idx = |t: Time| (t - tr.start) as usize;
    match kind {
        ViolationClass::Teleport => {
            let t = *late.choose(rng)?;
            let before = tr.at(t - 1).unwrap();
            let far: Vec<Coord> = free_cells(map).into_iter().filter(|p| manhattan(*p, before) >= 2).collect();
            m.locs[idx(t)] = *far.choose(rng)?;
        }
        ViolationClass::Obstacle => {
            let t = *late.choose(rng)?;
            let (before, after) = (tr.at(t - 1).unwrap(), tr.at(t + 1).unwrap());
            let blocked: Vec<Coord> = map
                .neighbors(before)
                .unwrap()
                .into_iter()
                .filter(|p| map.is_blocked(*p) && manhattan(*p, after) <= 1)
                .collect();
            m.locs[idx(t)] = *blocked.choose(rng)?;
        }
        ViolationClass::GoalMiss => {
            let n = m.locs.len();
            if n < 2 || m.locs[n - 2] != tr.goal || end <= s.k {
                return None;
            }
            let near: Vec<Coord> = map.neighbors(tr.goal).unwrap().into_iter().filter(|p| !map.is_blocked(*p)).collect();
            m.locs[n - 1] = *near.choose(rng)?;
        }
        ViolationClass::PrefixMismatch => {
            let early: Vec<Time> = (tr.start + 1..=s.k.min(end.saturating_sub(1))).collect();
            let t = *early.choose(rng)?;
            let (before, here, after) = (tr.at(t - 1).unwrap(), tr.at(t).unwrap(), tr.at(t + 1).unwrap());
            let mut options = vec![before];
            options.extend(map.neighbors(before).unwrap());
            options.retain(|p| *p != here && !map.is_blocked(*p) && manhattan(*p, after) <= 1);
            m.locs[idx(t)] = *options.choose(rng)?;
        }
        ViolationClass::SwapConflict => {
            let other = (*trs.choose(rng)?).clone();
            if other.agent == tr.agent {
                return None;
            }
            let t = *late.choose(rng)?;
            let (u, v) = (tr.at(t)?, other.at(t)?);
            if manhattan(u, v) != 1 || t >= other.end() {
                return None;
            }
            // Both agents step into each other's cell and back, then resume two steps late.
            let shift = |x: &Traversal, there: Coord| {
                let mut locs = x.locs[..=(t - x.start) as usize].to_vec();
                let here = x.at(t).unwrap();
                locs.extend([there, here]);
                locs.extend_from_slice(&x.locs[(t + 1 - x.start) as usize..]);
                Traversal::new(x.agent, x.start, x.goal, locs)
            };
            let mut out = PlanSet::new(s.plans.horizon + 2);
            for x in s.plans.iter() {
                let y = if x.agent == tr.agent {
                    shift(x, v)
                } else if x.agent == other.agent {
                    shift(x, u)
                } else {
                    let mut y = x.clone();
                    let last = *y.locs.last().unwrap();
                    y.locs.extend([last, last]);
                    y
                };
                out.insert(y);
            }
            return Some(out);
        }
        _ => return None,
    }
    Some(replace(&s.plans, m))
}

fn solved_pool() -> Vec<Solved> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pool = Vec::new();
    while pool.len() < 12 {
        let map = random_map(&mut rng, 6, 6, 6);
        let agents = random_agents(&mut rng, &map, 5);
        let occupied: BTreeSet<Coord> = agents.iter().flat_map(|a| [a.init, a.goal]).collect();
        let spare: Vec<Coord> = free_cells(&map)
            .into_iter()
            .filter(|p| !occupied.contains(p) && agents.iter().all(|a| manhattan(*p, a.init) > 2))
            .collect();
        let Some(&init) = spare.first() else { continue };
        let Some(&goal) = spare.last() else { continue };
        if init == goal {
            continue;
        }
        let events = EventSequence::new(vec![Event::at(2).join(6, init, goal)]);
        let inst = DmapfInstance::new(MapfInstance::new(map, agents), events, 30);
        let sim = simulate(&inst, &RunConfig { deadline_secs: 30.0, ..Default::default() }).unwrap();
        if !sim.completed {
            continue;
        }
        let history = sim.stage_plans[1].before.clone().unwrap();
        pool.push(Solved { inst, plans: sim.final_plans.unwrap(), history, k: 2 });
    }
    pool
}

fn validator_completeness() -> Verdict {
    let pool = solved_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kinds = [
        ViolationClass::Teleport,
        ViolationClass::SwapConflict,
        ViolationClass::Obstacle,
        ViolationClass::GoalMiss,
        ViolationClass::PrefixMismatch,
    ];
    let validate = |s: &Solved, plans: &PlanSet| {
        validate_solution_with(&s.inst, plans, &ValidateOptions { following: false, history: Some((&s.history, s.k)) })
    };
    let false_rejects = pool.iter().filter(|s| !validate(s, &s.plans).is_ok()).count();
    let (mut false_accepts, mut wrong_class, mut total) = (0, 0, 0);
    let mut per_kind = Vec::new();
    for kind in kinds {
        let mut made = 0;
        let mut attempts = 0;
        while made < 40 && attempts < 200_000 {
            attempts += 1;
            let s = pool.choose(&mut rng).unwrap();
            let Some(plans) = mutate(kind, s, &mut rng) else { continue };
            if inspect(&s.inst, &plans, &s.history, s.k) != BTreeSet::from([kind]) {
                continue;
            }
            made += 1;
            let report = validate(s, &plans);
            if report.is_ok() {
                false_accepts += 1;
            } else if report.classes() != BTreeSet::from([kind]) {
                wrong_class += 1;
            }
        }
        total += made;
        per_kind.push(format!("{kind:?}={made}"));
    }
    verdict(
        total == 200 && false_accepts == 0 && wrong_class == 0 && false_rejects == 0,
        format!(
            "{total}/200 mutations [{}], false accepts {false_accepts}, wrong class {wrong_class}, false rejects {false_rejects}/{}",
            per_kind.join(", "),
            pool.len()
        ),
    )
}

fn following_subsumption() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut solved, mut ok) = (0, 0);
    let mut failures = Vec::new();
    let mut attempts = 0;
    while solved < 20 && attempts < 200 {
        attempts += 1;
        let map = random_map(&mut rng, 5, 5, 3);
        let agents = random_agents(&mut rng, &map, 4);
        let base = MapfInstance::new(map, agents);
        let run = |following: bool| {
            let config = RunConfig { following, deadline_secs: 30.0, ..Default::default() };
            let mut s = Session::for_mapf(base.clone(), 24, config).unwrap();
            let outcome = s.solve_mapf().unwrap();
            (outcome, s.plans().cloned())
        };
        let (with_outcome, with_plans) = run(true);
        if with_outcome != StageOutcome::Sat {
            continue;
        }
        solved += 1;
        let (_, without_plans) = run(false);
        let with_plans = with_plans.unwrap();
        let inst = DmapfInstance::new(base, EventSequence::default(), 24);
        let valid = validate_solution_with(&inst, &with_plans, &ValidateOptions { following: true, history: None }).is_ok();
        // Independent following check: no agent enters a cell another agent occupied one step earlier.
        let mut following_free = true;
        for a in with_plans.iter() {
            for b in with_plans.iter().filter(|b| b.agent != a.agent) {
                for t in 0..with_plans.horizon {
                    following_free &= a.at(t + 1) != b.at(t);
                }
            }
        }
        let monotone = without_plans.is_some_and(|p| p.horizon <= with_plans.horizon);
        if valid && following_free && monotone {
            ok += 1;
        } else {
            failures.push(format!("case {solved}: valid {valid}, following free {following_free}, monotone {monotone}"));
        }
    }
    verdict(solved == 20 && ok == 20, format!("{ok}/{solved} following-constrained plans valid, horizon without following never larger {failures:?}"))
}

fn cost_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut traversals = Vec::new();
    let mut bad = Vec::new();
    for i in 0..100u32 {
        let start = rng.gen_range(0..4);
        let mut p = c(rng.gen_range(0..6), rng.gen_range(0..6));
        let mut locs = vec![p];
        for _ in 0..rng.gen_range(0..12) {
            p = match rng.gen_range(0..5) {
                0 if p.row > 0 => c(p.row - 1, p.col),
                1 => c(p.row + 1, p.col),
                2 if p.col > 0 => c(p.row, p.col - 1),
                3 => c(p.row, p.col + 1),
                _ => p,
            };
            locs.push(p);
        }
        let goal = if rng.gen_bool(0.7) { *locs.last().unwrap() } else { c(9, 9) };
        for _ in 0..rng.gen_range(0..3) {
            if goal == *locs.last().unwrap() {
                locs.push(goal);
            }
        }
        let tr = Traversal::new(AgentId(i), start, goal, locs.clone());
        let costs = traversal_costs(&tr);
        let moves = locs.windows(2).filter(|w| w[0] != w[1]).count() as u64;
        let waits = locs.windows(2).filter(|w| w[0] == w[1]).count() as u64;
        let end = start + locs.len() as Time - 1;
        // Reach: first time from which the agent stays on its goal, or the end if it never settles there.
        let reach = (start..=end).find(|&t| locs[(t - start) as usize..].iter().all(|x| *x == goal)).unwrap_or(end);
        let expected_task = (reach - start) as u64;
        if costs.length != costs.path_cost + costs.waits
            || costs.path_cost != moves
            || costs.waits != waits
            || costs.length != (end - start) as u64
            || costs.reach != reach
            || costs.task_cost != expected_task
        {
            bad.push(format!("traversal {i}: {costs:?}, moves {moves}, waits {waits}, reach {reach}"));
        }
        traversals.push(tr);
    }
    let mut set_failures = 0;
    for group in traversals.chunks(5) {
        let mut plans = PlanSet::new(0);
        for tr in group {
            plans.insert(tr.clone());
        }
        let soc = aggregate(&plans, CostKind::Soc);
        let makespan = aggregate(&plans, CostKind::Makespan);
        let expected_soc: u64 = group.iter().map(|t| traversal_costs(t).task_cost).sum();
        if soc > group.len() as u64 * makespan || soc != expected_soc {
            set_failures += 1;
        }
    }
    verdict(
        bad.is_empty() && set_failures == 0,
        format!("100 traversals: {} identity failures, {set_failures}/20 plan sets violate soc <= n*makespan {bad:?}", bad.len()),
    )
}

fn scale_smoke() -> Verdict {
    let inst = gen_setup("10+2", 10, 0, 60).unwrap();
    let started = Instant::now();
    let sim = simulate(&inst, &RunConfig { deadline_secs: 120.0, ..Default::default() }).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let valid = sim.final_plans.as_ref().is_some_and(|p| validate_solution(&inst, p).is_ok());
    verdict(
        sim.completed && valid && secs < 120.0,
        format!("10x10, 10 diagonal agents + 2 joiners, replan: completed {}, horizons {:?}, valid {valid}, {secs:.2} s (limit 120 s)", sim.completed, sim.horizons()),
    )
}

fn main() {
    let mut all_pass = true;
    let mut report = |name: &str, v: Verdict| {
        all_pass &= v.pass;
        println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report("C1 oracle optimality", oracle_optimality());
    report("C2 revised traversal fixture", revised_traversal_fixture());
    let cases = joiner_cases();
    report("C3 width-0 path preservation", width_zero_preservation(&cases));
    report("C4 tc and tg horizons equal", tc_equals_tg(&cases));
    report("C5 method ordering", method_ordering(&cases));
    report("C6 validator completeness", validator_completeness());
    report("C7 following subsumption", following_subsumption());
    report("C8 cost identities", cost_identities());
    report("C9 scale smoke test", scale_smoke());
    if !all_pass {
        std::process::exit(1);
    }
}
