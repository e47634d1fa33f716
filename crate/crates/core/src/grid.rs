//! Four-connected grid graphs, Manhattan distance and agent tunnels.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell of the grid, addressed by row and column.
///
/// Serialized as a `[row, col]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl From<(u32, u32)> for Coord {
    fn from((row, col): (u32, u32)) -> Self {
        Self { row, col }
    }
}

impl From<Coord> for (u32, u32) {
    fn from(c: Coord) -> Self {
        (c.row, c.col)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

pub fn manhattan(a: Coord, b: Coord) -> u32 {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

/// A rectangular 4-connected grid with a set of statically blocked cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    width: u32,
    height: u32,
    blocked: BTreeSet<Coord>,
}

impl GridMap {
    pub fn new(width: u32, height: u32, blocked: impl IntoIterator<Item = Coord>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("grid must be non-empty, got {width}x{height}")));
        }
        let blocked: BTreeSet<Coord> = blocked.into_iter().collect();
        let map = Self { width, height, blocked: BTreeSet::new() };
        if let Some(c) = blocked.iter().find(|c| !map.contains(**c)) {
            return Err(Error::Input(format!("blocked cell {c} outside {width}x{height} grid")));
        }
        Ok(Self { blocked, ..map })
    }

    /// An obstacle-free grid.
    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, [])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn blocked(&self) -> &BTreeSet<Coord> {
        &self.blocked
    }

    pub fn is_blocked(&self, c: Coord) -> bool {
        self.blocked.contains(&c)
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Dense index of a cell, row-major.
    pub fn index(&self, c: Coord) -> usize {
        c.row as usize * self.width as usize + c.col as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        let w = self.width as usize;
        Coord::new((index / w) as u32, (index % w) as u32)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Coord::new(r, c)))
    }

    /// In-bounds orthogonal neighbours in up, down, left, right order.
    ///
    /// Blocked cells are not filtered; occupancy is enforced by the encoder.
    pub fn neighbors(&self, c: Coord) -> Result<Vec<Coord>> {
        if !self.contains(c) {
            return Err(Error::Input(format!("cell {c} outside {}x{} grid", self.width, self.height)));
        }
        Ok(self.neighbors_unchecked(c).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, c: Coord) -> impl Iterator<Item = Coord> {
        let (h, w) = (self.height, self.width);
        let up = (c.row > 0).then(|| Coord::new(c.row - 1, c.col));
        let down = (c.row + 1 < h).then(|| Coord::new(c.row + 1, c.col));
        let left = (c.col > 0).then(|| Coord::new(c.row, c.col - 1));
        let right = (c.col + 1 < w).then(|| Coord::new(c.row, c.col + 1));
        [up, down, left, right].into_iter().flatten()
    }

    pub fn are_adjacent(&self, a: Coord, b: Coord) -> bool {
        manhattan(a, b) == 1
    }

    /// Breadth-first distances from `source` avoiding `blocked`; `None` for unreachable cells.
    pub fn distances_from(&self, source: Coord, blocked: &BTreeSet<Coord>) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.cell_count()];
        if !self.contains(source) || blocked.contains(&source) {
            return dist;
        }
        dist[self.index(source)] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[self.index(v)].unwrap_or(0);
            for u in self.neighbors_unchecked(v) {
                let i = self.index(u);
                if dist[i].is_none() && !blocked.contains(&u) {
                    dist[i] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

/// The cells within Manhattan distance `width` of an agent's path.
///
/// Membership is purely geometric: blocked cells near the path are members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tunnel {
    pub width: u32,
    pub path: Vec<Coord>,
    pub vertices: BTreeSet<Coord>,
}

impl Tunnel {
    pub fn contains(&self, c: Coord) -> bool {
        self.vertices.contains(&c)
    }
}

/// Builds the tunnel of the given width around `path`.
///
/// Manhattan distance on a full grid equals hop distance, so a bounded
/// multi-source BFS that ignores obstacles yields exactly the cells with
/// `min_v d_M(u, v) <= w`.
pub fn compute_tunnel(map: &GridMap, path: &[Coord], width: u32) -> Result<Tunnel> {
    if path.is_empty() {
        return Err(Error::Input("tunnel path is empty".into()));
    }
    if let Some(c) = path.iter().find(|c| !map.contains(**c)) {
        return Err(Error::Input(format!("tunnel path cell {c} out of bounds")));
    }
    let mut dist = vec![u32::MAX; map.cell_count()];
    let mut queue = VecDeque::new();
    for &c in path {
        let i = map.index(c);
        if dist[i] != 0 {
            dist[i] = 0;
            queue.push_back(c);
        }
    }
    let mut vertices = BTreeSet::new();
    while let Some(v) = queue.pop_front() {
        vertices.insert(v);
        let d = dist[map.index(v)];
        if d == width {
            continue;
        }
        for u in map.neighbors_unchecked(v) {
            let i = map.index(u);
            if dist[i] == u32::MAX {
                dist[i] = d + 1;
                queue.push_back(u);
            }
        }
    }
    Ok(Tunnel { width, path: path.to_vec(), vertices })
}

/// Collapses a timed location sequence into the visited path (consecutive duplicates removed).
pub fn path_of(locs: &[Coord]) -> Vec<Coord> {
    let mut path: Vec<Coord> = Vec::with_capacity(locs.len());
    for &c in locs {
        if path.last() != Some(&c) {
            path.push(c);
        }
    }
    path
}
