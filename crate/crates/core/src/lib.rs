//! Dynamic multi-agent path finding on 4-connected grids.
//!
//! Plans are computed by a makespan-bounded, time-expanded SAT encoding that
//! is extended in place as time advances and as agents or obstacles appear
//! and disappear.

pub mod costs;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod model;
pub mod solver;

pub use costs::{aggregate, summarize, traversal_costs, CostBreakdown, CostKind, CostSummary};
pub use error::{Error, Result};
pub use grid::{compute_tunnel, manhattan, path_of, Coord, GridMap, Tunnel};
pub use model::*;
pub use engine::{simulate, Method, RunConfig, Session, Simulation, StageOutcome, StageRecord};
pub use metrics::{diff_solutions, stage_report, BenchRow, RunReport, SolutionDiff};
