//! Occupancy grids, shortest-path planning and parameterized agent rollouts.
//!
//! Grid cell `(x, y)` is centered on `origin + (x, y) * resolution`, so with the
//! default 0.05 resolution every cell center sits on the two-decimal lattice
//! used by persisted trajectories. Moves are 8-connected; a diagonal move is
//! allowed only when both orthogonal neighbours are free.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::canon::ser_q2;
use crate::geometry::{normalize_deg, q2, Obb, Vec2, EPS};
use crate::placement::clearance_unchecked;
use crate::scene::SceneGraph;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Neighbour offsets in row-major order; this order breaks planning ties.
pub const NEIGHBOURS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Heading index `h` points along `HEADINGS[h]`, i.e. `45 * h` degrees.
const HEADINGS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("no path between start and goal")]
    NoPath,
    #[error("start cell is occupied")]
    StartOccupied,
    #[error("goal cell is occupied")]
    GoalOccupied,
    #[error("point lies outside the grid")]
    OutOfGrid,
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` = occupied.
    pub cells: Vec<bool>,
    pub inflation_radius: f64,
}

impl OccupancyGrid {
    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        OccupancyGrid {
            origin: Vec2::ZERO,
            resolution,
            width,
            height,
            cells: vec![false; width * height],
            inflation_radius: 0.0,
        }
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn in_grid(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height && !self.cells[self.index(c)]
    }

    pub fn set(&mut self, c: Cell, occupied: bool) {
        let i = self.index(c);
        self.cells[i] = occupied;
    }

    pub fn center(&self, c: Cell) -> Vec2 {
        self.origin + Vec2::new(c.x as f64, c.y as f64) * self.resolution
    }

    /// Nearest cell to a world point.
    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let g = (p - self.origin) * (1.0 / self.resolution);
        let (x, y) = (g.x.round() as i64, g.y.round() as i64);
        self.in_grid(x, y).then(|| Cell::new(x as usize, y as usize))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Neighbour reached by `(dx, dy)` if that move is legal.
    pub fn step(&self, c: Cell, dx: i32, dy: i32) -> Option<Cell> {
        let nx = c.x as i64 + i64::from(dx);
        let ny = c.y as i64 + i64::from(dy);
        if !self.in_grid(nx, ny) {
            return None;
        }
        let n = Cell::new(nx as usize, ny as usize);
        if !self.is_free(n) {
            return None;
        }
        if dx != 0 && dy != 0 {
            let a = Cell::new(nx as usize, c.y);
            let b = Cell::new(c.x, ny as usize);
            if !self.is_free(a) || !self.is_free(b) {
                return None;
            }
        }
        Some(n)
    }
}

/// Cell occupied iff its center is within `inflation` of a footprint or a wall.
pub fn rasterize(scene: &SceneGraph, resolution: f64, inflation: f64) -> OccupancyGrid {
    let b = scene.bounds;
    let width = (b.width() / resolution + 1e-6).floor() as usize + 1;
    let height = (b.height() / resolution + 1e-6).floor() as usize + 1;
    let mut grid = OccupancyGrid {
        origin: b.min,
        resolution,
        width,
        height,
        cells: vec![false; width * height],
        inflation_radius: inflation,
    };
    for y in 0..height {
        for x in 0..width {
            let c = Cell::new(x, y);
            let p = grid.center(c);
            if b.wall_distance(p) <= inflation + EPS {
                grid.set(c, true);
            }
        }
    }
    for o in &scene.objects {
        let fp = o.footprint();
        let reach = fp.bounding_radius() + inflation;
        let lo = grid.origin;
        let x0 = ((o.position.x - reach - lo.x) / resolution).floor().max(0.0) as usize;
        let y0 = ((o.position.y - reach - lo.y) / resolution).floor().max(0.0) as usize;
        let x1 = (((o.position.x + reach - lo.x) / resolution).ceil() as usize).min(width - 1);
        let y1 = (((o.position.y + reach - lo.y) / resolution).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = Cell::new(x, y);
                if fp.distance_to_point(grid.center(c)) <= inflation + EPS {
                    grid.set(c, true);
                }
            }
        }
    }
    grid
}

/// Exact path cost as counts of straight and diagonal moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    /// Cost in cells.
    pub fn value(&self) -> f64 {
        f64::from(self.straight) + f64::from(self.diagonal) * SQRT2
    }

    pub fn moves(&self) -> u32 {
        self.straight + self.diagonal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub points: Vec<Vec2>,
    pub cost: PathCost,
    pub resolution: f64,
}

impl GridPath {
    pub fn world_cost(&self) -> f64 {
        self.cost.value() * self.resolution
    }
}

#[derive(PartialEq)]
struct Frontier {
    f: f64,
    seq: u64,
    idx: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: invert so the smallest f (then oldest) pops first.
        other.f.total_cmp(&self.f).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)
}

/// A* from `start` to the first goal cell popped; `heuristic` must be consistent.
fn search(
    grid: &OccupancyGrid,
    start: Cell,
    is_goal: impl Fn(Cell) -> bool,
    heuristic: impl Fn(Cell) -> f64,
) -> Result<GridPath, NavError> {
    if !grid.is_free(start) {
        return Err(NavError::StartOccupied);
    }
    let n = grid.width * grid.height;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let s = grid.index(start);
    g[s] = 0.0;
    heap.push(Frontier {
        f: heuristic(start),
        seq,
        idx: s,
    });
    while let Some(Frontier { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let c = Cell::new(idx % grid.width, idx / grid.width);
        if is_goal(c) {
            return Ok(rebuild(grid, &parent, idx));
        }
        for (dx, dy) in NEIGHBOURS {
            let Some(nb) = grid.step(c, dx, dy) else {
                continue;
            };
            let ni = grid.index(nb);
            if closed[ni] {
                continue;
            }
            let w = if dx != 0 && dy != 0 { SQRT2 } else { 1.0 };
            let cand = g[idx] + w;
            if cand < g[ni] - 1e-9 {
                g[ni] = cand;
                parent[ni] = idx;
                seq += 1;
                heap.push(Frontier {
                    f: cand + heuristic(nb),
                    seq,
                    idx: ni,
                });
            }
        }
    }
    Err(NavError::NoPath)
}

fn rebuild(grid: &OccupancyGrid, parent: &[usize], goal: usize) -> GridPath {
    let mut cells = Vec::new();
    let mut at = goal;
    while at != usize::MAX {
        cells.push(Cell::new(at % grid.width, at / grid.width));
        at = parent[at];
    }
    cells.reverse();
    let mut cost = PathCost::default();
    for w in cells.windows(2) {
        if w[0].x != w[1].x && w[0].y != w[1].y {
            cost.diagonal += 1;
        } else {
            cost.straight += 1;
        }
    }
    GridPath {
        points: cells.iter().map(|&c| grid.center(c)).collect(),
        cells,
        cost,
        resolution: grid.resolution,
    }
}

pub fn plan_cells(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<GridPath, NavError> {
    if !grid.is_free(start) {
        return Err(NavError::StartOccupied);
    }
    if !grid.is_free(goal) {
        return Err(NavError::GoalOccupied);
    }
    search(grid, start, |c| c == goal, |c| octile(c, goal))
}

/// Shortest 8-connected path between the cells nearest to two world points.
pub fn plan_shortest_path(grid: &OccupancyGrid, start: Vec2, goal: Vec2) -> Result<GridPath, NavError> {
    let s = grid.cell_of(start).ok_or(NavError::OutOfGrid)?;
    let g = grid.cell_of(goal).ok_or(NavError::OutOfGrid)?;
    plan_cells(grid, s, g)
}

/// Shortest path to any cell of a goal mask (Dijkstra order).
pub fn plan_to_region(grid: &OccupancyGrid, start: Cell, goal_mask: &[bool]) -> Result<GridPath, NavError> {
    search(grid, start, |c| goal_mask[grid.index(c)], |_| 0.0)
}

/// Multi-source cost-to-go over free cells, in cells; unreachable cells are infinite.
pub fn distance_field(grid: &OccupancyGrid, goal_mask: &[bool]) -> Vec<f64> {
    let n = grid.width * grid.height;
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &goal) in goal_mask.iter().enumerate() {
        if goal && !grid.cells[i] {
            dist[i] = 0.0;
            heap.push(Frontier { f: 0.0, seq, idx: i });
            seq += 1;
        }
    }
    while let Some(Frontier { f, idx, .. }) = heap.pop() {
        if f > dist[idx] {
            continue;
        }
        let c = Cell::new(idx % grid.width, idx / grid.width);
        for (dx, dy) in NEIGHBOURS {
            let Some(nb) = grid.step(c, dx, dy) else {
                continue;
            };
            let ni = grid.index(nb);
            let w = if dx != 0 && dy != 0 { SQRT2 } else { 1.0 };
            if f + w < dist[ni] - 1e-9 {
                dist[ni] = f + w;
                seq += 1;
                heap.push(Frontier { f: f + w, seq, idx: ni });
            }
        }
    }
    dist
}

// ---- tasks, profiles, trajectories ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub position: Vec2,
    /// Degrees.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub start: StartPose,
    pub target_object_id: String,
    pub success_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Optimal,
    ClearanceBlind,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub name: String,
    pub planner: Planner,
    #[serde(default)]
    pub action_noise_prob: f64,
    /// `None` selects the automatic budget: four times the oracle move count, at least 500.
    #[serde(default)]
    pub max_steps: Option<u32>,
    #[serde(default = "default_radius")]
    pub agent_radius: f64,
}

fn default_radius() -> f64 {
    0.25
}

impl AgentProfile {
    pub fn new(name: &str, planner: Planner) -> Self {
        AgentProfile {
            name: name.to_string(),
            planner,
            action_noise_prob: 0.0,
            max_steps: None,
            agent_radius: default_radius(),
        }
    }

    pub fn optimal() -> Self {
        Self::new("optimal", Planner::Optimal)
    }

    pub fn clearance_blind() -> Self {
        Self::new("clearance_blind", Planner::ClearanceBlind)
    }

    pub fn greedy() -> Self {
        Self::new("greedy", Planner::Greedy)
    }

    pub fn with_noise(mut self, p: f64) -> Self {
        self.action_noise_prob = p;
        self
    }

    /// Built-in profile by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "optimal" => Some(Self::optimal()),
            "clearance_blind" => Some(Self::clearance_blind()),
            "greedy" => Some(Self::greedy()),
            _ => None,
        }
    }

    pub fn check(&self) -> Result<(), NavError> {
        if !(0.0..=1.0).contains(&self.action_noise_prob) {
            return Err(NavError::InvalidTask("action_noise_prob outside [0, 1]".into()));
        }
        if self.max_steps == Some(0) {
            return Err(NavError::InvalidTask("max_steps must be positive".into()));
        }
        if !(self.agent_radius > 0.0) {
            return Err(NavError::InvalidTask("agent_radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    RotateLeft,
    RotateRight,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailureTimeout,
    FailureStuck,
}

/// One timestamped pose; serialized as `[t, x, y, heading]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: u32,
    pub position: Vec2,
    pub heading: f64,
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(4)?;
        t.serialize_element(&self.t)?;
        t.serialize_element(&q2(self.position.x))?;
        t.serialize_element(&q2(self.position.y))?;
        t.serialize_element(&q2(self.heading))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PoseVisitor;
        impl<'de> Visitor<'de> for PoseVisitor {
            type Value = Pose;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("[t, x, y, heading]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Pose, A::Error> {
                let t = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let x = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let y = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(2, &self))?;
                let h = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(3, &self))?;
                Ok(Pose {
                    t,
                    position: Vec2::new(x, y),
                    heading: h,
                })
            }
        }
        d.deserialize_tuple(4, PoseVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub profile: String,
    pub seed: u64,
    pub task: Task,
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub outcome: Outcome,
    #[serde(serialize_with = "ser_q2")]
    pub path_length: f64,
    #[serde(serialize_with = "ser_q2")]
    pub min_clearance_along_path: f64,
}

impl Trajectory {
    pub fn final_position(&self) -> Vec2 {
        self.poses.last().map(|p| p.position).unwrap_or(self.task.start.position)
    }

    /// Consecutive poses with distinct positions.
    pub fn positions(&self) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = Vec::with_capacity(self.poses.len());
        for p in &self.poses {
            if out.last() != Some(&p.position) {
                out.push(p.position);
            }
        }
        out
    }

    /// Single-line record for run logs.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_record(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

pub fn path_length(poses: &[Pose]) -> f64 {
    poses.windows(2).map(|w| w[0].position.distance(w[1].position)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub resolution: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig { resolution: 0.05 }
    }
}

fn target_footprint(scene: &SceneGraph, task: &Task) -> Result<Obb, NavError> {
    let t = scene
        .object(&task.target_object_id)
        .ok_or_else(|| NavError::InvalidTask(format!("unknown target `{}`", task.target_object_id)))?;
    if !t.is_target_candidate {
        return Err(NavError::InvalidTask(format!("`{}` is not a target candidate", t.id)));
    }
    Ok(t.footprint())
}

/// Free cells whose centers lie within the success radius of the target.
pub fn goal_mask(grid: &OccupancyGrid, target: &Obb, success_radius: f64) -> Vec<bool> {
    let mut mask = vec![false; grid.cells.len()];
    for y in 0..grid.height {
        for x in 0..grid.width {
            let c = Cell::new(x, y);
            let i = grid.index(c);
            if !grid.cells[i] && target.distance_to_point(grid.center(c)) <= success_radius + EPS {
                mask[i] = true;
            }
        }
    }
    mask
}

/// Shortest radius-inflated path from the task start to the success region.
pub fn oracle_path(
    scene: &SceneGraph,
    task: &Task,
    agent_radius: f64,
    cfg: &NavConfig,
) -> Result<GridPath, NavError> {
    let target = target_footprint(scene, task)?;
    let grid = rasterize(scene, cfg.resolution, agent_radius);
    let start = grid.cell_of(task.start.position).ok_or(NavError::OutOfGrid)?;
    let mask = goal_mask(&grid, &target, task.success_radius);
    plan_to_region(&grid, start, &mask)
}

/// Oracle shortest-path cost in world units, `None` when unsolvable.
pub fn oracle_cost(scene: &SceneGraph, task: &Task, agent_radius: f64, cfg: &NavConfig) -> Option<f64> {
    oracle_path(scene, task, agent_radius, cfg).ok().map(|p| p.world_cost())
}

pub fn solvable(scene: &SceneGraph, task: &Task, agent_radius: f64) -> bool {
    solvable_with(scene, task, agent_radius, &NavConfig::default())
}

pub fn solvable_with(scene: &SceneGraph, task: &Task, agent_radius: f64, cfg: &NavConfig) -> bool {
    oracle_path(scene, task, agent_radius, cfg).is_ok()
}

fn heading_index(deg: f64) -> usize {
    ((normalize_deg(deg) / 45.0).round() as usize) % 8
}

fn direction_index(dx: i32, dy: i32) -> usize {
    HEADINGS.iter().position(|&h| h == (dx, dy)).expect("unit step")
}

enum Policy {
    /// Follow the cost-to-go field of a planning grid.
    Field { grid: OccupancyGrid, dist: Vec<f64> },
    Greedy,
}

/// Roll out one episode. Deterministic in `(scene, task, profile, seed)`.
pub fn run_episode(
    scene: &SceneGraph,
    task: &Task,
    profile: &AgentProfile,
    seed: u64,
    cfg: &NavConfig,
) -> Result<Trajectory, NavError> {
    profile.check()?;
    let target = target_footprint(scene, task)?;
    if !scene.bounds.contains(task.start.position) {
        return Err(NavError::InvalidTask("start outside bounds".into()));
    }
    let body = rasterize(scene, cfg.resolution, profile.agent_radius);
    let start = body.cell_of(task.start.position).ok_or(NavError::OutOfGrid)?;
    if !body.is_free(start) {
        return Err(NavError::InvalidTask("start pose is not in free space".into()));
    }

    let in_region = |c: Cell| target.distance_to_point(body.center(c)) <= task.success_radius + EPS;
    let field_policy = |grid: OccupancyGrid| {
        let dist = distance_field(&grid, &goal_mask(&grid, &target, task.success_radius));
        Policy::Field { grid, dist }
    };
    let policy = match profile.planner {
        Planner::Optimal => field_policy(body.clone()),
        Planner::ClearanceBlind => field_policy(rasterize(scene, cfg.resolution, 0.0)),
        Planner::Greedy => Policy::Greedy,
    };

    let budget = profile.max_steps.unwrap_or_else(|| {
        let moves = oracle_path(scene, task, profile.agent_radius, cfg)
            .map(|p| p.cost.moves())
            .unwrap_or(0);
        (4 * moves).max(500)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell = start;
    let mut heading = heading_index(task.start.heading);
    let mut poses = vec![Pose {
        t: 0,
        position: body.center(cell).quantized(),
        heading: 45.0 * heading as f64,
    }];
    let mut actions = Vec::new();
    let mut taken = 0u32;

    let outcome = loop {
        if in_region(cell) {
            actions.push(Action::Done);
            break Outcome::Success;
        }
        if taken >= budget {
            break Outcome::FailureTimeout;
        }
        let next = match &policy {
            Policy::Field { grid, dist } => {
                let here = dist[grid.index(cell)];
                let mut best: Option<(f64, (i32, i32))> = None;
                if here.is_finite() {
                    for (dx, dy) in NEIGHBOURS {
                        let Some(nb) = grid.step(cell, dx, dy) else {
                            continue;
                        };
                        let w = if dx != 0 && dy != 0 { SQRT2 } else { 1.0 };
                        let v = w + dist[grid.index(nb)];
                        if v.is_finite() && best.is_none_or(|(b, _)| v < b - 1e-9) {
                            best = Some((v, (dx, dy)));
                        }
                    }
                }
                best.map(|(_, d)| d)
            }
            Policy::Greedy => {
                let here = target.distance_to_point(body.center(cell));
                let mut best: Option<(f64, (i32, i32))> = None;
                for (dx, dy) in NEIGHBOURS {
                    let Some(nb) = body.step(cell, dx, dy) else {
                        continue;
                    };
                    let v = target.distance_to_point(body.center(nb));
                    if v < here - 1e-9 && best.is_none_or(|(b, _)| v < b - 1e-9) {
                        best = Some((v, (dx, dy)));
                    }
                }
                best.map(|(_, d)| d)
            }
        };
        let Some((dx, dy)) = next else {
            actions.push(Action::Done);
            break Outcome::FailureStuck;
        };

        let want = direction_index(dx, dy);
        let mut action = if want == heading {
            Action::Forward
        } else if (want + 8 - heading) % 8 <= 4 {
            Action::RotateLeft
        } else {
            Action::RotateRight
        };
        if profile.action_noise_prob > 0.0 && rng.random::<f64>() < profile.action_noise_prob {
            action = [Action::Forward, Action::RotateLeft, Action::RotateRight][rng.random_range(0..3)];
        }
        taken += 1;
        actions.push(action);
        match action {
            Action::RotateLeft => heading = (heading + 1) % 8,
            Action::RotateRight => heading = (heading + 7) % 8,
            Action::Forward => {
                let (hx, hy) = HEADINGS[heading];
                match body.step(cell, hx, hy) {
                    Some(nb) => cell = nb,
                    None => break Outcome::FailureStuck,
                }
            }
            Action::Done => unreachable!("policy never samples done"),
        }
        poses.push(Pose {
            t: taken,
            position: body.center(cell).quantized(),
            heading: 45.0 * heading as f64,
        });
    };

    let min_clear = poses
        .iter()
        .map(|p| clearance_unchecked(scene, p.position))
        .fold(f64::INFINITY, f64::min);
    Ok(Trajectory {
        profile: profile.name.clone(),
        seed,
        task: task.clone(),
        path_length: path_length(&poses),
        min_clearance_along_path: min_clear,
        poses,
        actions,
        outcome,
    })
}
