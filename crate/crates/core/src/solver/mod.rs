//! Incremental boolean satisfiability with assumptions.
//!
//! [`SatBackend`] is the contract the encoder relies on; [`CdclSolver`] is the
//! bundled complete implementation.

mod cdcl;
mod heap;

use std::fmt;
use std::ops::Not;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use cdcl::CdclSolver;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn positive(self) -> Lit {
        Lit::new(self, true)
    }

    pub fn negative(self) -> Lit {
        Lit::new(self, false)
    }
}

/// A variable with a polarity, packed as `var << 1 | negated`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lit(u32);

impl Lit {
    pub fn new(var: Var, positive: bool) -> Self {
        Lit(var.0 << 1 | u32::from(!positive))
    }

    pub fn var(self) -> Var {
        Var(self.0 >> 1)
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }

    /// DIMACS-style signed integer (1-based).
    pub fn to_dimacs(self) -> i64 {
        let v = i64::from(self.var().0) + 1;
        if self.is_positive() {
            v
        } else {
            -v
        }
    }
}

impl Not for Lit {
    type Output = Lit;

    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveOutcome {
    Sat,
    /// Unsatisfiable under the given assumptions; `core` is a subset of them
    /// that is already inconsistent with the clause database.
    Unsat { core: Vec<Lit> },
    Timeout,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveOutcome::Sat)
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, SolveOutcome::Unsat { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solves: u64,
    pub decisions: u64,
    pub propagations: u64,
    pub conflicts: u64,
    pub restarts: u64,
    pub solve_time: Duration,
}

impl SolveStats {
    /// Counter differences since `earlier`.
    pub fn since(&self, earlier: &SolveStats) -> SolveStats {
        SolveStats {
            solves: self.solves - earlier.solves,
            decisions: self.decisions - earlier.decisions,
            propagations: self.propagations - earlier.propagations,
            conflicts: self.conflicts - earlier.conflicts,
            restarts: self.restarts - earlier.restarts,
            solve_time: self.solve_time.saturating_sub(earlier.solve_time),
        }
    }
}

pub trait SatBackend {
    fn new_var(&mut self) -> Var;

    fn num_vars(&self) -> usize;

    /// Adds a permanent clause. An empty clause makes every later solve unsatisfiable.
    fn add_clause(&mut self, lits: &[Lit]) -> Result<()>;

    fn solve(&mut self, assumptions: &[Lit], deadline: Option<Instant>) -> SolveOutcome;

    /// Value of `lit` in the model of the last satisfiable solve.
    fn model_value(&self, lit: Lit) -> Option<bool>;

    /// Cumulative statistics.
    fn stats(&self) -> SolveStats;
}
