//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;

use curricula::geometry::{q2, Rect, Vec2};
use curricula::navigation::{OccupancyGrid, Task};
use curricula::scene::{load_scene, validate, SceneGraph, SceneObject};
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn golden_scene() -> SceneGraph {
    load_scene(&fixture("apartment_a.json")).expect("golden scene loads")
}

pub fn golden_task() -> Task {
    serde_json::from_slice(&fixture("task_a.json")).expect("golden task parses")
}

// ---- geometry oracle: plain polygon tests, no separating axes ----

pub const TOL: f64 = 1e-9;

pub fn corners(center: Vec2, half: Vec2, rotation_deg: f64) -> [Vec2; 4] {
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let local = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    local.map(|(sx, sy)| {
        let x = sx * half.x;
        let y = sy * half.y;
        Vec2::new(center.x + c * x - s * y, center.y + s * x + c * y)
    })
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn seg_point_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0) };
    ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
}

fn segments_touch(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    seg_point_dist(c, a, b) <= TOL
        || seg_point_dist(d, a, b) <= TOL
        || seg_point_dist(a, c, d) <= TOL
        || seg_point_dist(b, c, d) <= TOL
}

/// Point inside or on a counter-clockwise convex polygon.
pub fn inside_convex(p: Vec2, poly: &[Vec2]) -> bool {
    (0..poly.len()).all(|i| orient(poly[i], poly[(i + 1) % poly.len()], p) >= -TOL)
}

/// Closed contact between two convex quads: edges meet or one contains the other.
pub fn quads_touch(a: &[Vec2; 4], b: &[Vec2; 4]) -> bool {
    for i in 0..4 {
        for j in 0..4 {
            if segments_touch(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]) {
                return true;
            }
        }
    }
    inside_convex(a[0], b) || inside_convex(b[0], a)
}

/// Positive-area overlap estimated by dense point sampling of `a`.
pub fn quads_overlap_sampled(a: &[Vec2; 4], b: &[Vec2; 4], n: usize) -> bool {
    let strictly_inside = |p: Vec2, poly: &[Vec2; 4]| (0..4).all(|i| orient(poly[i], poly[(i + 1) % 4], p) > 1e-7);
    for i in 1..n {
        for j in 1..n {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            let bottom = a[0] + (a[1] - a[0]) * u;
            let top = a[3] + (a[2] - a[3]) * u;
            let p = bottom + (top - bottom) * v;
            if strictly_inside(p, b) {
                return true;
            }
        }
    }
    false
}

fn radius(half: Vec2) -> f64 {
    (half.x * half.x + half.y * half.y).sqrt()
}

/// Fine-stepped reference for collision-aware placement: steps of `delta / 100`,
/// stopping at the last pose free of closed contact with walls and objects.
pub fn refine_placement(scene: &SceneGraph, id: &str, target: Vec2, rotation: f64, delta: f64) -> Vec2 {
    let obj = scene.objects.iter().find(|o| o.id == id).expect("object");
    let others: Vec<(&SceneObject, [Vec2; 4])> = scene
        .objects
        .iter()
        .filter(|o| o.id != id)
        .map(|o| (o, corners(o.position, o.extents, o.rotation)))
        .collect();
    let b = scene.bounds;
    let blocked = |p: Vec2, rot: f64| {
        let c = corners(p, obj.extents, rot);
        if c.iter().any(|q| q.x < b.min.x - TOL || q.x > b.max.x + TOL || q.y < b.min.y - TOL || q.y > b.max.y + TOL) {
            return true;
        }
        others.iter().any(|(o, oc)| {
            p.distance(o.position) <= radius(obj.extents) + radius(o.extents) + TOL && quads_touch(&c, oc)
        })
    };
    let mut rot = obj.rotation;
    let want = rotation.rem_euclid(360.0);
    if (want - obj.rotation).abs() > 1e-9 && !blocked(obj.position, want) {
        rot = want;
    }
    let d = target - obj.position;
    let len = d.norm();
    if len == 0.0 {
        return obj.position;
    }
    let dir = d * (1.0 / len);
    let fine = delta / 100.0;
    let n = (len / fine).ceil() as u64;
    for k in 1..=n {
        let t = (k as f64 * fine).min(len);
        if blocked(obj.position + dir * t, rot) {
            return obj.position + dir * ((k - 1) as f64 * fine);
        }
    }
    target
}

// ---- random scenes ----

pub fn random_object<R: Rng>(rng: &mut R, id: String, bounds: &Rect) -> SceneObject {
    let extents = Vec2::new(q2(rng.random_range(0.1..1.0)), q2(rng.random_range(0.1..1.0)));
    let rotation = if rng.random_bool(0.5) { 0.0 } else { q2(rng.random_range(0.0..360.0)) };
    let position = Vec2::new(
        q2(rng.random_range(bounds.min.x..bounds.max.x)),
        q2(rng.random_range(bounds.min.y..bounds.max.y)),
    );
    SceneObject {
        id,
        category: "box".into(),
        position,
        rotation,
        extents,
        material: "wood".into(),
        movable: rng.random_bool(0.7),
        is_target_candidate: false,
    }
}

/// A valid scene of `n` boxes in random bounds, built by rejection.
pub fn random_scene<R: Rng>(rng: &mut R, n: usize) -> SceneGraph {
    let w = q2(rng.random_range(6.0..12.0));
    let h = q2(rng.random_range(6.0..12.0));
    let bounds = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(w, h));
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut tries = 0;
    while objects.len() < n && tries < 10_000 {
        tries += 1;
        let o = random_object(rng, format!("obj_{:02}", objects.len()), &bounds);
        let mut trial = objects.clone();
        trial.push(o);
        let scene = SceneGraph::new("random", bounds, trial.clone(), vec![], vec![]);
        if validate(&scene).is_empty() {
            objects = trial;
        }
    }
    if !objects.iter().any(|o| o.movable) {
        objects[0].movable = true;
    }
    SceneGraph::new("random", bounds, objects, vec![], vec![])
}

// ---- exact uniform-cost search ----

/// Path cost `straight + diagonal * sqrt(2)` kept as integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exact {
    pub straight: i64,
    pub diagonal: i64,
}

impl Ord for Exact {
    fn cmp(&self, o: &Self) -> Ordering {
        // sign of (a) + (b) * sqrt(2) with a, b integers
        let a = self.straight - o.straight;
        let b = self.diagonal - o.diagonal;
        match (a.signum(), b.signum()) {
            (0, 0) => Ordering::Equal,
            (sa, sb) if sa >= 0 && sb >= 0 => Ordering::Greater,
            (sa, sb) if sa <= 0 && sb <= 0 => Ordering::Less,
            (1, _) => (a * a).cmp(&(2 * b * b)),
            _ => (2 * b * b).cmp(&(a * a)),
        }
    }
}

impl PartialOrd for Exact {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Uniform-cost search over 8-connected free cells; a diagonal move needs
/// both orthogonally adjacent cells free.
pub fn ucs(free: &[bool], w: usize, h: usize, start: (usize, usize), goal: (usize, usize)) -> Option<Exact> {
    let idx = |x: usize, y: usize| y * w + x;
    if !free[idx(start.0, start.1)] || !free[idx(goal.0, goal.1)] {
        return None;
    }
    let mut best: Vec<Option<Exact>> = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    let zero = Exact { straight: 0, diagonal: 0 };
    best[idx(start.0, start.1)] = Some(zero);
    heap.push(std::cmp::Reverse((zero, start)));
    while let Some(std::cmp::Reverse((c, (x, y)))) = heap.pop() {
        if best[idx(x, y)] != Some(c) {
            continue;
        }
        if (x, y) == goal {
            return Some(c);
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !free[idx(nx, ny)] {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && (!free[idx(nx, y)] || !free[idx(x, ny)]) {
                    continue;
                }
                let n = Exact {
                    straight: c.straight + i64::from(!diag),
                    diagonal: c.diagonal + i64::from(diag),
                };
                if best[idx(nx, ny)].is_none_or(|b| n < b) {
                    best[idx(nx, ny)] = Some(n);
                    heap.push(std::cmp::Reverse((n, (nx, ny))));
                }
            }
        }
    }
    None
}

pub fn grid_from(free: &[bool], w: usize, h: usize, res: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty(w, h, res);
    for y in 0..h {
        for x in 0..w {
            g.set(curricula::navigation::Cell::new(x, y), !free[y * w + x]);
        }
    }
    g
}

/// Breadth-first reachability over the same move rule.
pub fn bfs_reachable(free: &[bool], w: usize, h: usize, start: (usize, usize), goal: &dyn Fn(usize, usize) -> bool) -> bool {
    let idx = |x: usize, y: usize| y * w + x;
    if !free[idx(start.0, start.1)] {
        return false;
    }
    let mut seen = vec![false; w * h];
    let mut q = std::collections::VecDeque::from([start]);
    seen[idx(start.0, start.1)] = true;
    while let Some((x, y)) = q.pop_front() {
        if goal(x, y) {
            return true;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if seen[idx(nx, ny)] || !free[idx(nx, ny)] {
                    continue;
                }
                if dx != 0 && dy != 0 && (!free[idx(nx, y)] || !free[idx(x, ny)]) {
                    continue;
                }
                seen[idx(nx, ny)] = true;
                q.push_back((nx, ny));
            }
        }
    }
    false
}
