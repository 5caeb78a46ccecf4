//! Collision detection and collision-aware incremental placement.
//!
//! An object is walked from its original position toward a proposed target in
//! steps of `delta` along the displacement direction. Consecutive poses are
//! also checked as a swept hull so thin obstacles cannot be skipped. The walk
//! stops at the target when the target pose is free, otherwise just before the
//! first collision. A stopped pose is snapped to the 0.01 persistence lattice,
//! staying within half a cell diagonal of the segment.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{convex_hull, normalize_deg, polygon_separation, Obb, Vec2, EPS};
use crate::scene::{doorway_clear_passage, SceneGraph, SceneObject};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    /// Step length along the displacement ray (world units).
    pub delta: f64,
    /// Radius used to keep doorways passable.
    pub agent_radius: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            delta: 0.05,
            agent_radius: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlacementRequest<'a> {
    pub scene: &'a SceneGraph,
    pub object_id: &'a str,
    pub target_position: Vec2,
    /// Absolute rotation in degrees.
    pub target_rotation: f64,
    pub step_size_delta: f64,
}

/// What stopped an object short of its target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Blocker {
    Object(String),
    Bounds,
    Doorway(String),
}

impl fmt::Display for Blocker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Blocker::Object(id) => write!(f, "{id}"),
            Blocker::Bounds => write!(f, "bounds"),
            Blocker::Doorway(id) => write!(f, "doorway:{id}"),
        }
    }
}

impl Serialize for Blocker {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Blocker {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            "bounds" => Blocker::Bounds,
            _ => match s.strip_prefix("doorway:") {
                Some(id) => Blocker::Doorway(id.to_string()),
                None => Blocker::Object(s),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    #[serde(serialize_with = "crate::canon::ser_q2_pair")]
    pub final_position: Vec2,
    #[serde(serialize_with = "crate::canon::ser_q2")]
    pub final_rotation: f64,
    pub reached_target: bool,
    /// Index `k` of the final pose along the ray.
    pub steps_taken: u32,
    pub blocked_by: Option<Blocker>,
    /// False when a requested rotation was rejected at the start pose.
    pub rotation_applied: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("object `{0}` is not movable")]
    NotMovable(String),
    #[error("object `{0}` does not start in a valid pose (blocked by {1})")]
    StartPoseInvalid(String, Blocker),
    #[error("step size must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("point ({0}, {1}) lies outside the scene bounds")]
    OutOfBounds(f64, f64),
}

/// Positive-area intersection of two footprints.
pub fn overlaps(a: &SceneObject, b: &SceneObject) -> bool {
    a.footprint().overlaps(&b.footprint())
}

/// Distance from `point` to the nearest footprint or wall (zero on or inside a footprint).
pub fn min_clearance(scene: &SceneGraph, point: Vec2) -> Result<f64, PlacementError> {
    if !scene.bounds.contains(point) {
        return Err(PlacementError::OutOfBounds(point.x, point.y));
    }
    Ok(clearance_unchecked(scene, point))
}

pub(crate) fn clearance_unchecked(scene: &SceneGraph, point: Vec2) -> f64 {
    scene
        .objects
        .iter()
        .map(|o| o.footprint().distance_to_point(point))
        .fold(scene.bounds.wall_distance(point).max(0.0), f64::min)
}

/// Spacing of the persisted coordinate lattice.
const LATTICE_STEP: f64 = 0.01;
/// Largest distance a snapped pose may sit off the displacement segment.
pub const SNAP_TOLERANCE: f64 = 0.005 * std::f64::consts::SQRT_2 + 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum Contact {
    /// Touching counts as collision.
    Closed,
    /// Only positive-area overlap counts.
    Open,
}

fn conflict(
    scene: &SceneGraph,
    moving: usize,
    fp: &Obb,
    contact: Contact,
    agent_radius: f64,
) -> Option<Blocker> {
    if fp.escapes(&scene.bounds) {
        return Some(Blocker::Bounds);
    }
    for (i, other) in scene.objects.iter().enumerate() {
        if i == moving {
            continue;
        }
        let ofp = other.footprint();
        let hit = match contact {
            Contact::Closed => fp.touches(&ofp),
            Contact::Open => fp.overlaps(&ofp),
        };
        if hit {
            return Some(Blocker::Object(other.id.clone()));
        }
    }
    for d in &scene.doorways {
        let prints = scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| if i == moving { *fp } else { o.footprint() });
        if doorway_clear_passage(&scene.bounds, d, prints, agent_radius) < 2.0 * agent_radius - crate::geometry::EPS {
            return Some(Blocker::Doorway(d.id.clone()));
        }
    }
    None
}

/// First object touched by the footprint swept from `from` to `to`. The two
/// share a rotation, so the swept region is the hull of both corner sets.
/// This keeps a step from jumping over an obstacle corner thinner than delta.
fn swept_hit(scene: &SceneGraph, moving: usize, from: &Obb, to: &Obb) -> Option<Blocker> {
    let mut pts = from.corners().to_vec();
    pts.extend(to.corners());
    let hull = convex_hull(&pts);
    let reach = from.center.distance(to.center) / 2.0 + from.bounding_radius();
    let mid = (from.center + to.center) * 0.5;
    scene.objects.iter().enumerate().find_map(|(i, o)| {
        if i == moving {
            return None;
        }
        let ofp = o.footprint();
        // A neighbour touched at the start pose (legal only at the origin) is
        // left to the end-pose check so the object can still move away.
        if mid.distance(ofp.center) > reach + ofp.bounding_radius() + EPS || from.touches(&ofp) {
            return None;
        }
        (polygon_separation(&hull, &ofp.corners()) <= EPS).then(|| Blocker::Object(o.id.clone()))
    })
}

pub fn place_with_collision_awareness(
    req: &PlacementRequest<'_>,
    agent_radius: f64,
) -> Result<(SceneGraph, PlacementResult), PlacementError> {
    let scene = req.scene;
    if !(req.step_size_delta > 0.0) {
        return Err(PlacementError::InvalidDelta(req.step_size_delta));
    }
    let idx = scene
        .objects
        .iter()
        .position(|o| o.id == req.object_id)
        .ok_or_else(|| PlacementError::UnknownObject(req.object_id.to_string()))?;
    let obj = &scene.objects[idx];
    if !obj.movable {
        return Err(PlacementError::NotMovable(obj.id.clone()));
    }
    let origin = obj.position;
    if let Some(b) = conflict(scene, idx, &obj.footprint(), Contact::Open, agent_radius) {
        return Err(PlacementError::StartPoseInvalid(obj.id.clone(), b));
    }

    let wanted_rotation = crate::geometry::q2(normalize_deg(req.target_rotation));
    let mut rotation = obj.rotation;
    let mut rotation_applied = true;
    if wanted_rotation != obj.rotation {
        let turned = obj.footprint_at(origin, wanted_rotation);
        if conflict(scene, idx, &turned, Contact::Closed, agent_radius).is_none() {
            rotation = wanted_rotation;
        } else {
            rotation_applied = false;
        }
    }

    let target = req.target_position.quantized();
    let d = target - origin;
    let length = d.norm();
    let finish = |position: Vec2, reached: bool, k: u32, blocked_by: Option<Blocker>| {
        let next = scene.with_object_pose(&obj.id, position, rotation);
        let result = PlacementResult {
            final_position: position,
            final_rotation: rotation,
            reached_target: reached,
            steps_taken: k,
            blocked_by,
            rotation_applied,
        };
        Ok((next, result))
    };

    let Some(dir) = d.normalized() else {
        return finish(origin, true, 0, None);
    };

    // Steps run along the continuous ray; only the reported pose is snapped
    // to the persisted lattice. The snap takes the free lattice point within
    // half a cell diagonal of the segment that travels furthest. Points past
    // the last free step must be reachable from it in a straight line; if none
    // is, the search walks back one window at a time.
    let settle = |travelled: f64, blocked: f64| {
        let window = req.step_size_delta.max(LATTICE_STEP);
        let from = obj.footprint_at(origin + dir * travelled, rotation);
        let mut hi = blocked.min(length);
        while hi > 0.0 {
            let lo = if hi > travelled + EPS { travelled } else { (hi - window).max(0.0) };
            let a = origin + dir * lo;
            let b = origin + dir * hi;
            let cell = |v: f64| (v / LATTICE_STEP).round() as i64;
            let (x0, x1) = (cell(a.x.min(b.x)) - 1, cell(a.x.max(b.x)) + 1);
            let (y0, y1) = (cell(a.y.min(b.y)) - 1, cell(a.y.max(b.y)) + 1);
            let mut cands: Vec<(f64, Vec2)> = Vec::new();
            for ix in x0..=x1 {
                for iy in y0..=y1 {
                    let q = Vec2::new(ix as f64 * LATTICE_STEP, iy as f64 * LATTICE_STEP).quantized();
                    let t = (q - origin).dot(dir);
                    if t < lo - EPS || t > hi + EPS || (q - origin).cross(dir).abs() > SNAP_TOLERANCE {
                        continue;
                    }
                    cands.push((t, q));
                }
            }
            cands.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.x.total_cmp(&q.1.x)).then(p.1.y.total_cmp(&q.1.y)));
            for (t, q) in cands {
                let fp = obj.footprint_at(q, rotation);
                if conflict(scene, idx, &fp, Contact::Closed, agent_radius).is_some() {
                    continue;
                }
                if t > travelled + EPS && swept_hit(scene, idx, &from, &fp).is_some() {
                    continue;
                }
                return q;
            }
            hi = lo;
        }
        origin
    };

    let mut last_free = origin;
    let mut k: u32 = 0;
    loop {
        let step = k + 1;
        let travelled = f64::from(step) * req.step_size_delta;
        let (candidate, at_target) = if travelled >= length {
            (target, true)
        } else {
            (origin + dir * travelled, false)
        };
        let fp = obj.footprint_at(candidate, rotation);
        let swept = swept_hit(scene, idx, &obj.footprint_at(last_free, rotation), &fp);
        if let Some(b) = swept.or_else(|| conflict(scene, idx, &fp, Contact::Closed, agent_radius)) {
            let at = settle(f64::from(k) * req.step_size_delta, travelled);
            return finish(at, false, k, Some(b));
        }
        if at_target {
            return finish(target, true, step, None);
        }
        last_free = candidate;
        k = step;
    }
}

/// Convenience wrapper using a [`PlacementConfig`].
pub fn place(
    scene: &SceneGraph,
    object_id: &str,
    target_position: Vec2,
    target_rotation: f64,
    cfg: &PlacementConfig,
) -> Result<(SceneGraph, PlacementResult), PlacementError> {
    let req = PlacementRequest {
        scene,
        object_id,
        target_position,
        target_rotation,
        step_size_delta: cfg.delta,
    };
    place_with_collision_awareness(&req, cfg.agent_radius)
}
