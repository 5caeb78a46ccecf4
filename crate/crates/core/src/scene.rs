//! Scene graphs: objects, attributes and relations, plus the canonical file
//! format and validity checking.
//!
//! All persisted coordinates live on a 0.01 lattice. `load_scene` quantizes
//! its input onto that lattice and `save_scene` writes exactly two decimals,
//! so any loaded scene round-trips byte-identically.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{fmt2, json_str};
use crate::geometry::{clip_half_plane, normalize_deg, q2, Obb, EPS};
pub use crate::geometry::{Rect, Vec2};

/// The normalized edit grid is always 100 x 100.
pub const GRID_SIZE: f64 = 100.0;
pub const GRID_TAG: &str = "100x100";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: String,
    pub category: String,
    pub position: Vec2,
    /// Degrees in `[0, 360)`.
    pub rotation: f64,
    /// Half-width and half-depth.
    pub extents: Vec2,
    pub material: String,
    pub movable: bool,
    pub is_target_candidate: bool,
}

impl SceneObject {
    pub fn footprint(&self) -> Obb {
        Obb::new(self.position, self.extents, self.rotation)
    }

    pub fn footprint_at(&self, position: Vec2, rotation: f64) -> Obb {
        Obb::new(position, self.extents, rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    On,
    NextTo,
    Inside,
}

impl Predicate {
    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::On => "on",
            Predicate::NextTo => "next_to",
            Predicate::Inside => "inside",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    pub subject: String,
    pub predicate: Predicate,
    pub object: String,
}

impl Relation {
    pub fn new(subject: &str, predicate: Predicate, object: &str) -> Self {
        Relation {
            subject: subject.to_string(),
            predicate,
            object: object.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doorway {
    pub id: String,
    pub segment: [Vec2; 2],
    pub clear_width: f64,
}

impl Doorway {
    pub fn length(&self) -> f64 {
        self.segment[0].distance(self.segment[1])
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.segment[0] + self.segment[1]) * 0.5
    }
}

/// Linear map between world coordinates and the normalized edit grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScale {
    pub origin: Vec2,
    /// World units per grid unit along x and y.
    pub unit: Vec2,
}

impl GridScale {
    pub fn for_bounds(bounds: &Rect) -> Self {
        GridScale {
            origin: bounds.min,
            unit: Vec2::new(bounds.width() / GRID_SIZE, bounds.height() / GRID_SIZE),
        }
    }

    pub fn to_world(&self, g: Vec2) -> Vec2 {
        Vec2::new(self.origin.x + g.x * self.unit.x, self.origin.y + g.y * self.unit.y)
    }

    pub fn to_grid(&self, p: Vec2) -> Vec2 {
        Vec2::new((p.x - self.origin.x) / self.unit.x, (p.y - self.origin.y) / self.unit.y)
    }

    pub fn delta_to_world(&self, g: Vec2) -> Vec2 {
        Vec2::new(g.x * self.unit.x, g.y * self.unit.y)
    }

    pub fn delta_to_grid(&self, d: Vec2) -> Vec2 {
        Vec2::new(d.x / self.unit.x, d.y / self.unit.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub scene_id: String,
    pub bounds: Rect,
    /// Sorted by id.
    pub objects: Vec<SceneObject>,
    pub doorways: Vec<Doorway>,
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    /// Builds a scene without validating it; entries are put in canonical order.
    pub fn new(
        scene_id: impl Into<String>,
        bounds: Rect,
        mut objects: Vec<SceneObject>,
        mut doorways: Vec<Doorway>,
        mut relations: Vec<Relation>,
    ) -> Self {
        objects.sort_by(|a, b| a.id.cmp(&b.id));
        doorways.sort_by(|a, b| a.id.cmp(&b.id));
        relations.sort();
        SceneGraph {
            scene_id: scene_id.into(),
            bounds,
            objects,
            doorways,
            relations,
        }
    }

    pub fn empty(scene_id: impl Into<String>, bounds: Rect) -> Self {
        SceneGraph::new(scene_id, bounds, Vec::new(), Vec::new(), Vec::new())
    }

    pub fn grid_scale(&self) -> GridScale {
        GridScale::for_bounds(&self.bounds)
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn movable_ids(&self) -> Vec<String> {
        self.objects.iter().filter(|o| o.movable).map(|o| o.id.clone()).collect()
    }

    /// New scene with one object's pose replaced.
    pub fn with_object_pose(&self, id: &str, position: Vec2, rotation: f64) -> SceneGraph {
        let mut next = self.clone();
        if let Some(o) = next.objects.iter_mut().find(|o| o.id == id) {
            o.position = position;
            o.rotation = normalize_deg(rotation);
        }
        next
    }

    pub fn with_scene_id(&self, scene_id: impl Into<String>) -> SceneGraph {
        let mut next = self.clone();
        next.scene_id = scene_id.into();
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    MalformedBounds,
    DuplicateId { id: String },
    NonPositiveExtents { id: String },
    OutOfBounds { id: String },
    Overlap { a: String, b: String },
    InvalidDoorway { id: String, reason: String },
    BlockedDoorway { id: String, clear_passage: f64 },
    DanglingRelation { subject: String, object: String },
}

impl Issue {
    fn sort_key(&self) -> (String, u8, String) {
        match self {
            Issue::MalformedBounds => (String::new(), 0, String::new()),
            Issue::DuplicateId { id } => (id.clone(), 1, String::new()),
            Issue::NonPositiveExtents { id } => (id.clone(), 2, String::new()),
            Issue::OutOfBounds { id } => (id.clone(), 3, String::new()),
            Issue::Overlap { a, b } => (a.clone(), 4, b.clone()),
            Issue::InvalidDoorway { id, .. } => (id.clone(), 5, String::new()),
            Issue::BlockedDoorway { id, .. } => (id.clone(), 6, String::new()),
            Issue::DanglingRelation { subject, object } => (subject.clone(), 7, object.clone()),
        }
    }

    /// Ids of the objects or doorways the issue is about.
    pub fn ids(&self) -> Vec<&str> {
        match self {
            Issue::MalformedBounds => vec![],
            Issue::DuplicateId { id }
            | Issue::NonPositiveExtents { id }
            | Issue::OutOfBounds { id }
            | Issue::InvalidDoorway { id, .. }
            | Issue::BlockedDoorway { id, .. } => vec![id],
            Issue::Overlap { a, b } => vec![a, b],
            Issue::DanglingRelation { subject, object } => vec![subject, object],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn offending_ids(&self) -> BTreeSet<String> {
        self.issues
            .iter()
            .flat_map(|i| i.ids().into_iter().map(str::to_string))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.issues.iter().map(|i| format!("{i:?}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Validation(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Doorways must keep a passage at least twice this wide.
    pub agent_radius: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { agent_radius: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    pub next_to_threshold: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            next_to_threshold: 0.5,
        }
    }
}

pub fn validate(scene: &SceneGraph) -> ValidationReport {
    validate_with(scene, &ValidationConfig::default())
}

pub fn validate_with(scene: &SceneGraph, cfg: &ValidationConfig) -> ValidationReport {
    let mut issues = Vec::new();
    let bounds_ok = scene.bounds.is_well_formed();
    if !bounds_ok {
        issues.push(Issue::MalformedBounds);
    }

    let mut seen = BTreeSet::new();
    for o in &scene.objects {
        if !seen.insert(o.id.as_str()) {
            issues.push(Issue::DuplicateId { id: o.id.clone() });
        }
        if !(o.extents.x > 0.0 && o.extents.y > 0.0) {
            issues.push(Issue::NonPositiveExtents { id: o.id.clone() });
        }
        if bounds_ok && o.footprint().escapes(&scene.bounds) {
            issues.push(Issue::OutOfBounds { id: o.id.clone() });
        }
    }

    let prints: Vec<Obb> = scene.objects.iter().map(SceneObject::footprint).collect();
    for i in 0..scene.objects.len() {
        for j in (i + 1)..scene.objects.len() {
            if prints[i].overlaps(&prints[j]) {
                let (a, b) = ordered(&scene.objects[i].id, &scene.objects[j].id);
                issues.push(Issue::Overlap { a, b });
            }
        }
    }

    for d in &scene.doorways {
        if let Err(reason) = doorway_shape_check(&scene.bounds, d) {
            issues.push(Issue::InvalidDoorway { id: d.id.clone(), reason });
            continue;
        }
        let width = doorway_clear_passage(&scene.bounds, d, prints.iter().copied(), cfg.agent_radius);
        if width < 2.0 * cfg.agent_radius - EPS {
            issues.push(Issue::BlockedDoorway {
                id: d.id.clone(),
                clear_passage: q2(width),
            });
        }
    }

    for r in &scene.relations {
        if !seen.contains(r.subject.as_str()) || !seen.contains(r.object.as_str()) {
            issues.push(Issue::DanglingRelation {
                subject: r.subject.clone(),
                object: r.object.clone(),
            });
        }
    }

    issues.sort_by_key(Issue::sort_key);
    ValidationReport { issues }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn doorway_shape_check(bounds: &Rect, d: &Doorway) -> Result<(), String> {
    if !(d.clear_width > 0.0) {
        return Err("clear_width must be positive".into());
    }
    if d.length() <= EPS {
        return Err("degenerate segment".into());
    }
    let [a, b] = d.segment;
    let tol = 1e-6;
    let on = |p: f64, q: f64, w: f64| (p - w).abs() < tol && (q - w).abs() < tol;
    let on_wall = on(a.x, b.x, bounds.min.x)
        || on(a.x, b.x, bounds.max.x)
        || on(a.y, b.y, bounds.min.y)
        || on(a.y, b.y, bounds.max.y);
    if !on_wall || !bounds.contains(a) || !bounds.contains(b) {
        return Err("segment must lie on a wall of the bounds".into());
    }
    Ok(())
}

/// Unit normal of a doorway pointing into the room.
pub fn doorway_inward_normal(bounds: &Rect, d: &Doorway) -> Vec2 {
    let [a, b] = d.segment;
    let n = (b - a).perp().normalized().unwrap_or(Vec2::new(1.0, 0.0));
    if (bounds.center() - a).dot(n) >= 0.0 {
        n
    } else {
        -n
    }
}

/// Widest unobstructed opening along a doorway, capped at its clear width.
///
/// The obstruction zone is the doorway segment swept into the room by one
/// agent diameter; every footprint with positive-area overlap with that zone
/// blocks the span of its projection onto the segment.
pub fn doorway_clear_passage(
    bounds: &Rect,
    d: &Doorway,
    footprints: impl Iterator<Item = Obb>,
    agent_radius: f64,
) -> f64 {
    let [a, b] = d.segment;
    let len = d.length();
    let Some(u) = (b - a).normalized() else {
        return 0.0;
    };
    let n = doorway_inward_normal(bounds, d);
    let depth = 2.0 * agent_radius;
    let far = a + n * depth;

    let mut blocked: Vec<(f64, f64)> = Vec::new();
    for fp in footprints {
        let mut poly = fp.corners().to_vec();
        poly = clip_half_plane(&poly, a, u);
        poly = clip_half_plane(&poly, b, -u);
        poly = clip_half_plane(&poly, a, n);
        poly = clip_half_plane(&poly, far, -n);
        if polygon_area(&poly) <= EPS {
            continue;
        }
        let (lo, hi) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = (*p - a).dot(u);
            (lo.min(s), hi.max(s))
        });
        blocked.push((lo.max(0.0), hi.min(len)));
    }
    blocked.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut widest: f64 = 0.0;
    let mut cursor = 0.0;
    for (lo, hi) in blocked {
        if lo > cursor {
            widest = widest.max(lo - cursor);
        }
        cursor = f64::max(cursor, hi);
    }
    widest = widest.max(len - cursor);
    widest.min(d.clear_width)
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        s += poly[i].cross(poly[(i + 1) % poly.len()]);
    }
    (s * 0.5).abs()
}

/// Relations implied by geometry, merged with the declared `on` relations.
///
/// `next_to` holds in both directions whenever two footprints are closer than
/// the threshold. `inside(a, b)` holds when `b`'s footprint contains `a`'s
/// center and `a` is the smaller of the two. `on` is never inferred.
pub fn infer_relations(scene: &SceneGraph, cfg: &RelationConfig) -> Vec<Relation> {
    let mut out: BTreeSet<Relation> = scene
        .relations
        .iter()
        .filter(|r| r.predicate == Predicate::On)
        .cloned()
        .collect();
    let prints: Vec<Obb> = scene.objects.iter().map(SceneObject::footprint).collect();
    for (i, a) in scene.objects.iter().enumerate() {
        for (j, b) in scene.objects.iter().enumerate() {
            if i == j {
                continue;
            }
            if prints[i].distance(&prints[j]) < cfg.next_to_threshold {
                out.insert(Relation::new(&a.id, Predicate::NextTo, &b.id));
            }
            if prints[j].contains(a.position) && prints[i].area() < prints[j].area() {
                out.insert(Relation::new(&a.id, Predicate::Inside, &b.id));
            }
        }
    }
    out.into_iter().collect()
}

// ---- file format ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDoc {
    min: Vec2,
    max: Vec2,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    scene_id: String,
    bounds: BoundsDoc,
    grid: String,
    objects: Vec<SceneObject>,
    #[serde(default)]
    doorways: Vec<Doorway>,
    #[serde(default)]
    relations: Vec<Relation>,
}

/// Parse without validating; values are quantized onto the persisted lattice.
pub fn parse_scene(source: &[u8]) -> Result<SceneGraph, SceneError> {
    let doc: SceneDoc =
        serde_json::from_slice(source).map_err(|e| SceneError::Parse(e.to_string()))?;
    if doc.grid != GRID_TAG {
        return Err(SceneError::Parse(format!(
            "grid must be \"{GRID_TAG}\", found \"{}\"",
            doc.grid
        )));
    }
    let objects = doc
        .objects
        .into_iter()
        .map(|o| SceneObject {
            position: o.position.quantized(),
            rotation: q2(normalize_deg(q2(o.rotation))),
            extents: o.extents.quantized(),
            ..o
        })
        .collect();
    let doorways = doc
        .doorways
        .into_iter()
        .map(|d| Doorway {
            segment: [d.segment[0].quantized(), d.segment[1].quantized()],
            clear_width: q2(d.clear_width),
            ..d
        })
        .collect();
    let bounds = Rect::new(doc.bounds.min.quantized(), doc.bounds.max.quantized());
    Ok(SceneGraph::new(doc.scene_id, bounds, objects, doorways, doc.relations))
}

pub fn load_scene(source: &[u8]) -> Result<SceneGraph, SceneError> {
    load_scene_with(source, &ValidationConfig::default())
}

pub fn load_scene_with(source: &[u8], cfg: &ValidationConfig) -> Result<SceneGraph, SceneError> {
    let scene = parse_scene(source)?;
    let report = validate_with(&scene, cfg);
    if report.is_empty() {
        Ok(scene)
    } else {
        Err(SceneError::Validation(report))
    }
}

fn pair(v: Vec2) -> String {
    format!("[{}, {}]", fmt2(v.x), fmt2(v.y))
}

/// Canonical document: fixed key order, two decimals, entries sorted by id.
pub fn save_scene(scene: &SceneGraph) -> Vec<u8> {
    let mut objects: Vec<&SceneObject> = scene.objects.iter().collect();
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    let mut doorways: Vec<&Doorway> = scene.doorways.iter().collect();
    doorways.sort_by(|a, b| a.id.cmp(&b.id));
    let mut relations: Vec<&Relation> = scene.relations.iter().collect();
    relations.sort();

    let mut s = String::new();
    s.push_str("{\n");
    s.push_str(&format!("  \"scene_id\": {},\n", json_str(&scene.scene_id)));
    s.push_str(&format!(
        "  \"bounds\": {{\"min\": {}, \"max\": {}}},\n",
        pair(scene.bounds.min),
        pair(scene.bounds.max)
    ));
    s.push_str(&format!("  \"grid\": \"{GRID_TAG}\",\n"));

    let objs: Vec<String> = objects
        .iter()
        .map(|o| {
            format!(
                "    {{\n      \"id\": {},\n      \"category\": {},\n      \"position\": {},\n      \"rotation\": {},\n      \"extents\": {},\n      \"material\": {},\n      \"movable\": {},\n      \"is_target_candidate\": {}\n    }}",
                json_str(&o.id),
                json_str(&o.category),
                pair(o.position),
                fmt2(o.rotation),
                pair(o.extents),
                json_str(&o.material),
                o.movable,
                o.is_target_candidate
            )
        })
        .collect();
    push_array(&mut s, "objects", &objs, true);

    let doors: Vec<String> = doorways
        .iter()
        .map(|d| {
            format!(
                "    {{\"id\": {}, \"segment\": [{}, {}], \"clear_width\": {}}}",
                json_str(&d.id),
                pair(d.segment[0]),
                pair(d.segment[1]),
                fmt2(d.clear_width)
            )
        })
        .collect();
    push_array(&mut s, "doorways", &doors, true);

    let rels: Vec<String> = relations
        .iter()
        .map(|r| {
            format!(
                "    {{\"subject\": {}, \"predicate\": \"{}\", \"object\": {}}}",
                json_str(&r.subject),
                r.predicate.as_str(),
                json_str(&r.object)
            )
        })
        .collect();
    push_array(&mut s, "relations", &rels, false);
    s.push_str("}\n");
    s.into_bytes()
}

fn push_array(s: &mut String, key: &str, items: &[String], trailing_comma: bool) {
    let comma = if trailing_comma { "," } else { "" };
    if items.is_empty() {
        s.push_str(&format!("  \"{key}\": []{comma}\n"));
    } else {
        s.push_str(&format!("  \"{key}\": [\n{}\n  ]{comma}\n", items.join(",\n")));
    }
}
