use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::heap::VarHeap;
use super::{Lit, SatBackend, SolveOutcome, SolveStats, Var};
use crate::error::{Error, Result};

const NO_REASON: u32 = u32::MAX;
const VAR_DECAY: f64 = 0.95;
const CLAUSE_DECAY: f64 = 0.999;
const RESTART_BASE: f64 = 100.0;

#[derive(Clone, Debug)]
struct Clause {
    lits: Vec<Lit>,
    learnt: bool,
    deleted: bool,
    lbd: u32,
    activity: f64,
}

#[derive(Clone, Copy, Debug)]
struct Watcher {
    cref: u32,
    blocker: Lit,
}

enum SearchResult {
    Sat,
    Unsat(Vec<Lit>),
    Restart,
    Timeout,
}

/// Conflict-driven clause learning solver with two watched literals,
/// VSIDS branching, phase saving, Luby restarts and LBD-based clause deletion.
#[derive(Clone, Debug)]
pub struct CdclSolver {
    ok: bool,
    /// Per variable: 1 true, -1 false, 0 unassigned.
    assigns: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    clauses: Vec<Clause>,
    free_slots: Vec<u32>,
    /// Indexed by literal: clauses currently watching that literal.
    watches: Vec<Vec<Watcher>>,
    learnts: Vec<u32>,
    activity: Vec<f64>,
    var_inc: f64,
    clause_inc: f64,
    heap: VarHeap,
    phase: Vec<bool>,
    seen: Vec<bool>,
    model: Vec<bool>,
    rng: ChaCha8Rng,
    stats: SolveStats,
    max_learnts: f64,
    simplified_at: usize,
}

impl CdclSolver {
    pub fn new(seed: u64) -> Self {
        CdclSolver {
            ok: true,
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            clauses: Vec::new(),
            free_slots: Vec::new(),
            watches: Vec::new(),
            learnts: Vec::new(),
            activity: Vec::new(),
            var_inc: 1.0,
            clause_inc: 1.0,
            heap: VarHeap::default(),
            phase: Vec::new(),
            seen: Vec::new(),
            model: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: SolveStats::default(),
            max_learnts: 0.0,
            simplified_at: 0,
        }
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len() - self.free_slots.len() - self.learnts.len()
    }

    pub fn num_learnts(&self) -> usize {
        self.learnts.len()
    }

    fn value_lit(&self, l: Lit) -> i8 {
        let v = self.assigns[l.var().index()];
        if l.is_positive() {
            v
        } else {
            -v
        }
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn enqueue(&mut self, l: Lit, reason: u32) {
        let v = l.var().index();
        self.assigns[v] = if l.is_positive() { 1 } else { -1 };
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(l);
    }

    fn alloc_clause(&mut self, lits: Vec<Lit>, learnt: bool, lbd: u32) -> u32 {
        let c = Clause { lits, learnt, deleted: false, lbd, activity: 0.0 };
        let cref = match self.free_slots.pop() {
            Some(slot) => {
                self.clauses[slot as usize] = c;
                slot
            }
            None => {
                self.clauses.push(c);
                (self.clauses.len() - 1) as u32
            }
        };
        let (a, b) = (self.clauses[cref as usize].lits[0], self.clauses[cref as usize].lits[1]);
        self.watches[a.index()].push(Watcher { cref, blocker: b });
        self.watches[b.index()].push(Watcher { cref, blocker: a });
        cref
    }

    /// Returns the index of a conflicting clause, if any.
    fn propagate(&mut self) -> Option<u32> {
        let mut conflict = None;
        while self.qhead < self.trail.len() && conflict.is_none() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let false_lit = !p;
            let mut ws = std::mem::take(&mut self.watches[false_lit.index()]);
            let (mut i, mut j) = (0, 0);
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.value_lit(w.blocker) == 1 {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let cref = w.cref as usize;
                let lits = &mut self.clauses[cref].lits;
                if lits[0] == false_lit {
                    lits.swap(0, 1);
                }
                let first = lits[0];
                let watcher = Watcher { cref: w.cref, blocker: first };
                if first != w.blocker && self.value_lit(first) == 1 {
                    ws[j] = watcher;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..self.clauses[cref].lits.len() {
                    let l = self.clauses[cref].lits[k];
                    if self.value_lit(l) != -1 {
                        let lits = &mut self.clauses[cref].lits;
                        lits.swap(1, k);
                        self.watches[l.index()].push(watcher);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = watcher;
                j += 1;
                if self.value_lit(first) == -1 {
                    conflict = Some(w.cref);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        i += 1;
                        j += 1;
                    }
                } else {
                    self.enqueue(first, w.cref);
                }
            }
            ws.truncate(j);
            self.watches[false_lit.index()] = ws;
        }
        if conflict.is_some() {
            self.qhead = self.trail.len();
        }
        conflict
    }

    fn bump_var(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.increased(v as u32, &self.activity);
    }

    fn bump_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        c.activity += self.clause_inc;
        if c.activity > 1e20 {
            for &l in &self.learnts {
                self.clauses[l as usize].activity *= 1e-20;
            }
            self.clause_inc *= 1e-20;
        }
    }

    /// First-UIP conflict analysis. Returns the learnt clause (asserting literal
    /// first, highest remaining level second) and the backjump level.
    fn analyze(&mut self, mut confl: u32) -> (Vec<Lit>, usize) {
        let mut out = vec![Lit(0)];
        let mut path_count = 0;
        let mut p: Option<Lit> = None;
        let mut index = self.trail.len();
        let current = self.decision_level() as u32;
        loop {
            if self.clauses[confl as usize].learnt {
                self.bump_clause(confl);
            }
            let skip = usize::from(p.is_some());
            for k in skip..self.clauses[confl as usize].lits.len() {
                let q = self.clauses[confl as usize].lits[k];
                let v = q.var().index();
                if !self.seen[v] && self.level[v] > 0 {
                    self.bump_var(v);
                    self.seen[v] = true;
                    if self.level[v] >= current {
                        path_count += 1;
                    } else {
                        out.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[self.trail[index].var().index()] {
                    break;
                }
            }
            let lit = self.trail[index];
            p = Some(lit);
            confl = self.reason[lit.var().index()];
            self.seen[lit.var().index()] = false;
            path_count -= 1;
            if path_count == 0 {
                break;
            }
        }
        out[0] = !p.unwrap();

        // Drop literals implied by other literals of the clause.
        let candidates = out.clone();
        out.truncate(1);
        for &l in &candidates[1..] {
            let r = self.reason[l.var().index()];
            let redundant = r != NO_REASON
                && self.clauses[r as usize].lits[1..].iter().all(|q| {
                    let v = q.var().index();
                    self.seen[v] || self.level[v] == 0
                });
            if !redundant {
                out.push(l);
            }
        }
        for l in &candidates {
            self.seen[l.var().index()] = false;
        }

        let mut backjump = 0;
        if out.len() > 1 {
            let mut best = 1;
            for k in 2..out.len() {
                if self.level[out[k].var().index()] > self.level[out[best].var().index()] {
                    best = k;
                }
            }
            out.swap(1, best);
            backjump = self.level[out[1].var().index()] as usize;
        }
        (out, backjump)
    }

    /// Assumptions responsible for `p` being true, where `!p` is an assumption.
    fn analyze_final(&mut self, p: Lit) -> Vec<Lit> {
        let mut core = vec![!p];
        if self.decision_level() == 0 {
            return core;
        }
        self.seen[p.var().index()] = true;
        for i in (self.trail_lim[0]..self.trail.len()).rev() {
            let x = self.trail[i].var().index();
            if !self.seen[x] {
                continue;
            }
            let r = self.reason[x];
            if r == NO_REASON {
                if self.trail[i] != !p {
                    core.push(self.trail[i]);
                }
            } else {
                for k in 1..self.clauses[r as usize].lits.len() {
                    let v = self.clauses[r as usize].lits[k].var().index();
                    if self.level[v] > 0 {
                        self.seen[v] = true;
                    }
                }
            }
            self.seen[x] = false;
        }
        self.seen[p.var().index()] = false;
        core
    }

    fn lbd(&mut self, lits: &[Lit]) -> u32 {
        let mut levels: Vec<u32> = lits.iter().map(|l| self.level[l.var().index()]).collect();
        levels.sort_unstable();
        levels.dedup();
        levels.len() as u32
    }

    fn cancel_until(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let keep = self.trail_lim[level];
        for i in (keep..self.trail.len()).rev() {
            let l = self.trail[i];
            let v = l.var().index();
            self.assigns[v] = 0;
            self.reason[v] = NO_REASON;
            self.phase[v] = l.is_positive();
            self.heap.insert(v as u32, &self.activity);
        }
        self.trail.truncate(keep);
        self.trail_lim.truncate(level);
        self.qhead = self.trail.len();
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assigns[v as usize] == 0 {
                return Some(Lit::new(Var(v), self.phase[v as usize]));
            }
        }
        None
    }

    fn is_locked(&self, cref: u32) -> bool {
        let first = self.clauses[cref as usize].lits[0];
        self.reason[first.var().index()] == cref && self.value_lit(first) == 1
    }

    fn free_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        c.deleted = true;
        c.lits = Vec::new();
        self.free_slots.push(cref);
    }

    fn purge_watches(&mut self) {
        let clauses = &self.clauses;
        for ws in &mut self.watches {
            ws.retain(|w| !clauses[w.cref as usize].deleted);
        }
    }

    fn reduce_db(&mut self) {
        let mut order = self.learnts.clone();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.clauses[a as usize], &self.clauses[b as usize]);
            cb.lbd.cmp(&ca.lbd).then(ca.activity.total_cmp(&cb.activity))
        });
        let half = order.len() / 2;
        let mut removed = false;
        for &cref in &order[..half] {
            if self.clauses[cref as usize].lbd > 2 && !self.is_locked(cref) {
                self.free_clause(cref);
                removed = true;
            }
        }
        if removed {
            let clauses = &self.clauses;
            self.learnts.retain(|&c| !clauses[c as usize].deleted);
            self.purge_watches();
        }
    }

    /// Removes clauses satisfied at the root level.
    fn simplify(&mut self) {
        let mut removed = false;
        for cref in 0..self.clauses.len() as u32 {
            let c = &self.clauses[cref as usize];
            if c.deleted || self.is_locked(cref) {
                continue;
            }
            if c.lits.iter().any(|&l| self.value_lit(l) == 1) {
                self.free_clause(cref);
                removed = true;
            }
        }
        if removed {
            let clauses = &self.clauses;
            self.learnts.retain(|&c| !clauses[c as usize].deleted);
            self.purge_watches();
        }
        self.simplified_at = self.trail.len();
    }

    fn search(&mut self, budget: u64, assumptions: &[Lit], deadline: Option<Instant>) -> SearchResult {
        let mut conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return SearchResult::Unsat(Vec::new());
                }
                let (learnt, backjump) = self.analyze(confl);
                self.cancel_until(backjump);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let lbd = self.lbd(&learnt);
                    let first = learnt[0];
                    let cref = self.alloc_clause(learnt, true, lbd);
                    self.learnts.push(cref);
                    self.bump_clause(cref);
                    self.enqueue(first, cref);
                }
                self.var_inc /= VAR_DECAY;
                self.clause_inc /= CLAUSE_DECAY;
                if self.stats.conflicts.is_multiple_of(128) && deadline.is_some_and(|d| Instant::now() >= d) {
                    return SearchResult::Timeout;
                }
                continue;
            }

            if conflicts >= budget {
                return SearchResult::Restart;
            }
            if self.decision_level() == 0 && self.trail.len() > self.simplified_at {
                self.simplify();
            }
            if self.learnts.len() as f64 >= self.max_learnts + self.trail.len() as f64 {
                self.reduce_db();
                self.max_learnts *= 1.1;
            }

            let mut next = None;
            while self.decision_level() < assumptions.len() {
                let a = assumptions[self.decision_level()];
                match self.value_lit(a) {
                    1 => self.trail_lim.push(self.trail.len()),
                    -1 => return SearchResult::Unsat(self.analyze_final(!a)),
                    _ => {
                        next = Some(a);
                        break;
                    }
                }
            }
            let next = match next {
                Some(a) => a,
                None => {
                    self.stats.decisions += 1;
                    if self.stats.decisions.is_multiple_of(1024) && deadline.is_some_and(|d| Instant::now() >= d) {
                        return SearchResult::Timeout;
                    }
                    match self.pick_branch() {
                        Some(l) => l,
                        None => return SearchResult::Sat,
                    }
                }
            };
            self.trail_lim.push(self.trail.len());
            self.enqueue(next, NO_REASON);
        }
    }
}

/// The Luby sequence 1 1 2 1 1 2 4 ... scaled by powers of `y`.
fn luby(y: f64, mut x: u64) -> f64 {
    let (mut size, mut seq) = (1u64, 0i32);
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    y.powi(seq)
}

impl SatBackend for CdclSolver {
    fn new_var(&mut self) -> Var {
        let v = self.assigns.len();
        self.assigns.push(0);
        self.level.push(0);
        self.reason.push(NO_REASON);
        self.phase.push(false);
        self.seen.push(false);
        self.activity.push(self.rng.gen::<f64>() * 1e-5);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.heap.grow(v + 1);
        self.heap.insert(v as u32, &self.activity);
        Var(v as u32)
    }

    fn num_vars(&self) -> usize {
        self.assigns.len()
    }

    fn add_clause(&mut self, lits: &[Lit]) -> Result<()> {
        if let Some(l) = lits.iter().find(|l| l.var().index() >= self.assigns.len()) {
            return Err(Error::Input(format!("clause uses unallocated variable {}", l.var().0)));
        }
        if !self.ok {
            return Ok(());
        }
        self.cancel_until(0);
        let mut c: Vec<Lit> = lits.to_vec();
        c.sort_unstable();
        c.dedup();
        if c.windows(2).any(|w| w[0] == !w[1]) {
            return Ok(());
        }
        if c.iter().any(|&l| self.value_lit(l) == 1) {
            return Ok(());
        }
        c.retain(|&l| self.value_lit(l) == 0);
        match c.len() {
            0 => self.ok = false,
            1 => {
                self.enqueue(c[0], NO_REASON);
                if self.propagate().is_some() {
                    self.ok = false;
                }
            }
            _ => {
                self.alloc_clause(c, false, 0);
            }
        }
        Ok(())
    }

    fn solve(&mut self, assumptions: &[Lit], deadline: Option<Instant>) -> SolveOutcome {
        let started = Instant::now();
        self.stats.solves += 1;
        self.model.clear();
        let outcome = if !self.ok {
            SolveOutcome::Unsat { core: Vec::new() }
        } else if assumptions.iter().any(|l| l.var().index() >= self.assigns.len()) {
            // An unknown variable can take any value; treat it as unconstrained
            // by refusing the assumption set outright.
            SolveOutcome::Unsat { core: Vec::new() }
        } else {
            self.max_learnts = (self.num_clauses() as f64 / 3.0).max(2000.0);
            let mut restarts = 0;
            loop {
                let budget = (luby(2.0, restarts) * RESTART_BASE) as u64;
                match self.search(budget, assumptions, deadline) {
                    SearchResult::Sat => {
                        self.model = self.assigns.iter().map(|&a| a == 1).collect();
                        break SolveOutcome::Sat;
                    }
                    SearchResult::Unsat(core) => break SolveOutcome::Unsat { core },
                    SearchResult::Timeout => break SolveOutcome::Timeout,
                    SearchResult::Restart => {
                        restarts += 1;
                        self.stats.restarts += 1;
                        self.cancel_until(0);
                        if deadline.is_some_and(|d| Instant::now() >= d) {
                            break SolveOutcome::Timeout;
                        }
                    }
                }
            }
        };
        self.cancel_until(0);
        self.stats.solve_time += started.elapsed();
        outcome
    }

    fn model_value(&self, lit: Lit) -> Option<bool> {
        self.model.get(lit.var().index()).map(|&v| v == lit.is_positive())
    }

    fn stats(&self) -> SolveStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::luby;

    #[test]
    fn luby_prefix() {
        let seq: Vec<f64> = (0..15).map(|i| luby(2.0, i)).collect();
        assert_eq!(seq, vec![1., 1., 2., 1., 1., 2., 4., 1., 1., 2., 1., 1., 2., 4., 8.]);
    }
}
