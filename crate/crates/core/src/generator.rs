//! Single-object scene edits driven by trajectory analysis.
//!
//! Each step proposes a [`MoveInstruction`] in the normalized 100x100 grid,
//! applies it with collision-aware placement, checks that the scene stays
//! valid and solvable, and verifies that the edit had its intended effect.
//! Failed checks roll the edit back and ask the proposer for a revision.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::analysis::{Analysis, Suggestion, SuggestionKind};
use crate::geometry::Vec2;
use crate::llm::{perturb_prompt, BackendError, LlmBackend, LlmRequest};
use crate::navigation::{oracle_path, NavConfig, Task, Trajectory};
use crate::placement::{clearance_unchecked, place, PlacementConfig, PlacementError, PlacementResult};
use crate::render::{render_png, RenderConfig};
use crate::scene::{save_scene, validate_with, SceneGraph, ValidationConfig};

pub const TOOL_NAME: &str = "propose_move_instruction";
pub const TOOL_DESCRIPTION: &str = "Propose the change in position for exactly one object. Movement must be expressed in a normalized 100x100 apartment grid as left/right and up/down units.";
const FIELDS: [&str; 6] = ["object_id", "x_direction", "x_units", "y_direction", "y_units", "rotation"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YDirection {
    Up,
    Down,
}

/// Relative move of one object. `rotation` is added to the current heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveInstruction {
    pub object_id: String,
    pub x_direction: XDirection,
    pub x_units: f64,
    pub y_direction: YDirection,
    pub y_units: f64,
    pub rotation: f64,
}

impl MoveInstruction {
    pub fn identity(object_id: &str) -> Self {
        MoveInstruction {
            object_id: object_id.to_string(),
            x_direction: XDirection::Right,
            x_units: 0.0,
            y_direction: YDirection::Up,
            y_units: 0.0,
            rotation: 0.0,
        }
    }

    /// Build from a signed grid displacement; units rounded to 0.1.
    pub fn from_grid_delta(object_id: &str, g: Vec2, rotation: f64) -> Self {
        let round = |v: f64| ((v.abs() * 10.0).round() / 10.0).min(100.0) + 0.0;
        MoveInstruction {
            object_id: object_id.to_string(),
            x_direction: if g.x < 0.0 { XDirection::Left } else { XDirection::Right },
            x_units: round(g.x),
            y_direction: if g.y < 0.0 { YDirection::Down } else { YDirection::Up },
            y_units: round(g.y),
            rotation,
        }
    }

    /// Signed displacement in grid units: right and up are positive.
    pub fn grid_delta(&self) -> Vec2 {
        let x = match self.x_direction {
            XDirection::Left => -self.x_units,
            XDirection::Right => self.x_units,
        };
        let y = match self.y_direction {
            YDirection::Up => self.y_units,
            YDirection::Down => -self.y_units,
        };
        Vec2::new(x, y)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("instruction serializes")
    }
}

/// The tool list offered to an external generator, in its published form.
pub fn perturb_instruction_tools(allowed_object_ids: &[String]) -> Value {
    json!([{
        "type": "function",
        "name": TOOL_NAME,
        "description": TOOL_DESCRIPTION,
        "parameters": {
            "type": "object",
            "properties": {
                "object_id": {"type": "string", "enum": allowed_object_ids},
                "x_direction": {"type": "string", "enum": ["left", "right"]},
                "x_units": {"type": "number", "minimum": 0, "maximum": 100},
                "y_direction": {"type": "string", "enum": ["up", "down"]},
                "y_units": {"type": "number", "minimum": 0, "maximum": 100},
                "rotation": {"type": "number", "minimum": 0, "maximum": 360}
            },
            "required": FIELDS,
            "additionalProperties": false
        }
    }])
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("schema violation: {0}")]
pub struct SchemaViolation(pub String);

/// Check a reply field by field against the instruction schema.
pub fn validate_instruction(v: &Value, allowed_ids: &[String]) -> Result<MoveInstruction, SchemaViolation> {
    let err = |m: String| Err(SchemaViolation(m));
    let Some(obj) = v.as_object() else {
        return err("instruction must be an object".into());
    };
    if let Some(k) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return err(format!("unexpected property `{k}`"));
    }
    if let Some(k) = FIELDS.iter().find(|k| !obj.contains_key(**k)) {
        return err(format!("missing required property `{k}`"));
    }
    let string_in = |key: &str, allowed: &[&str]| -> Result<String, SchemaViolation> {
        let s = obj[key]
            .as_str()
            .ok_or_else(|| SchemaViolation(format!("`{key}` must be a string")))?;
        if !allowed.contains(&s) {
            return Err(SchemaViolation(format!("`{key}` value `{s}` not in enum")));
        }
        Ok(s.to_string())
    };
    let number_in = |key: &str, max: f64| -> Result<f64, SchemaViolation> {
        let n = obj[key]
            .as_f64()
            .ok_or_else(|| SchemaViolation(format!("`{key}` must be a number")))?;
        if !(0.0..=max).contains(&n) {
            return Err(SchemaViolation(format!("`{key}` = {n} outside [0, {max}]")));
        }
        Ok(n)
    };
    let ids: Vec<&str> = allowed_ids.iter().map(String::as_str).collect();
    let object_id = string_in("object_id", &ids)?;
    let x_direction = match string_in("x_direction", &["left", "right"])?.as_str() {
        "left" => XDirection::Left,
        _ => XDirection::Right,
    };
    let y_direction = match string_in("y_direction", &["up", "down"])?.as_str() {
        "up" => YDirection::Up,
        _ => YDirection::Down,
    };
    Ok(MoveInstruction {
        object_id,
        x_direction,
        x_units: number_in("x_units", 100.0)?,
        y_direction,
        y_units: number_in("y_units", 100.0)?,
        rotation: number_in("rotation", 360.0)?,
    })
}

pub fn parse_instruction(reply: &str, allowed_ids: &[String]) -> Result<MoveInstruction, SchemaViolation> {
    let v: Value = serde_json::from_str(reply.trim()).map_err(|e| SchemaViolation(format!("malformed reply: {e}")))?;
    validate_instruction(&v, allowed_ids)
}

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("scene has no movable objects")]
    NoMovableObjects,
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("base scene is invalid: {0}")]
    InvalidBase(String),
    #[error("task is not solvable in the base scene")]
    UnsolvableBase,
}

/// Apply an instruction: grid units become world units, then the object is
/// moved with collision-aware placement.
pub fn apply_edit(
    scene: &SceneGraph,
    instr: &MoveInstruction,
    cfg: &PlacementConfig,
) -> Result<(SceneGraph, PlacementResult), GeneratorError> {
    let obj = scene
        .object(&instr.object_id)
        .ok_or_else(|| PlacementError::UnknownObject(instr.object_id.clone()))?;
    let target = obj.position + scene.grid_scale().delta_to_world(instr.grid_delta());
    Ok(place(scene, &obj.id, target, obj.rotation + instr.rotation, cfg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_steps: usize,
    pub max_revisions_per_step: usize,
    pub seed: u64,
    pub agent_radius: f64,
    /// Radius around a suggestion anchor in which clearance changes count.
    pub anchor_radius: f64,
    pub placement: PlacementConfig,
    pub nav: NavConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_steps: 5,
            max_revisions_per_step: 2,
            seed: 0,
            agent_radius: 0.25,
            anchor_radius: 1.0,
            placement: PlacementConfig::default(),
            nav: NavConfig::default(),
        }
    }
}

/// Minimum clearance over the reference positions, restricted to the anchor's
/// neighbourhood when it has any positions there.
fn reference_clearance(scene: &SceneGraph, positions: &[Vec2], anchor: Option<Vec2>, radius: f64) -> f64 {
    let near: Vec<Vec2> = match anchor {
        Some(a) => positions.iter().copied().filter(|p| p.distance(a) <= radius).collect(),
        None => Vec::new(),
    };
    let pts = if near.is_empty() { positions } else { &near[..] };
    pts.iter().map(|&p| clearance_unchecked(scene, p)).fold(f64::INFINITY, f64::min)
}

/// Mechanical effect check for an edit. Clearance intents need the minimum
/// clearance along the old trajectory to drop; cost intents need the oracle
/// cost to rise. No accepted edit may shorten the oracle path.
pub fn verify_edit(
    before: &SceneGraph,
    after: &SceneGraph,
    intended: &Suggestion,
    traj_before: &Trajectory,
    cfg: &GenerationConfig,
) -> bool {
    let task = &traj_before.task;
    let cost = |s: &SceneGraph| oracle_path(s, task, cfg.agent_radius, &cfg.nav).map(|p| p.cost);
    let (Ok(c0), Ok(c1)) = (cost(before), cost(after)) else {
        return false;
    };
    let (c0, c1) = (c0.value(), c1.value());
    match intended.kind {
        SuggestionKind::NarrowPathways | SuggestionKind::IncreaseClutterNear => {
            let positions = traj_before.positions();
            let m0 = reference_clearance(before, &positions, intended.anchor, cfg.anchor_radius);
            let m1 = reference_clearance(after, &positions, intended.anchor, cfg.anchor_radius);
            m1 < m0 && c1 >= c0
        }
        SuggestionKind::ObstructShortcut | SuggestionKind::AddDetour | SuggestionKind::RelocateLandmark => c1 > c0,
    }
}

pub const VERIFY_QUESTION: &str = "The image shows the scene after your edit. Does the change match its intended effect? Answer with a single word: yes or no.";

/// Ask a backend whether the rendered edit matches its intent.
pub fn verify_edit_external(
    backend: &dyn LlmBackend,
    after_png: &[u8],
    intended: &Suggestion,
) -> Result<bool, BackendError> {
    let req = LlmRequest {
        system: Some(format!("Intended effect: {} ({})", intended.kind.as_str(), intended.detail)),
        prompt: VERIFY_QUESTION.to_string(),
        image_png: Some(after_png.to_vec()),
        tool: None,
    };
    let reply = backend.complete(&req)?;
    Ok(reply.trim().to_ascii_lowercase().starts_with("yes"))
}

/// What a proposer sees when asked for an edit.
pub struct ProposalContext<'a> {
    pub scene: &'a SceneGraph,
    pub analysis: &'a Analysis,
    pub task: &'a Task,
    pub reference: &'a Trajectory,
    pub step: usize,
    pub revision: usize,
    pub cfg: &'a GenerationConfig,
}

impl ProposalContext<'_> {
    /// Suggestion this attempt works on; rotates through the list.
    pub fn suggestion(&self) -> Option<&Suggestion> {
        let s = &self.analysis.suggestions;
        (!s.is_empty()).then(|| &s[(self.step + self.revision) % s.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub instruction: MoveInstruction,
    pub intent: Suggestion,
    /// Set when the proposer had to fall back or otherwise degrade.
    pub warning: Option<String>,
}

pub trait Proposer {
    fn propose(&self, ctx: &ProposalContext<'_>) -> Result<Proposal, GeneratorError>;
}

/// Deterministic proposer mapping suggestion kinds to edits.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicProposer {
    pub seed: u64,
}

fn nearest_on(points: &[Vec2], p: Vec2) -> Option<Vec2> {
    points.iter().copied().min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
}

/// Movable objects ordered by distance to `p` (ties by id).
fn ranked_movables(scene: &SceneGraph, key: impl Fn(Vec2) -> f64) -> Vec<&crate::scene::SceneObject> {
    let mut m: Vec<_> = scene.objects.iter().filter(|o| o.movable).collect();
    m.sort_by(|a, b| key(a.position).total_cmp(&key(b.position)).then(a.id.cmp(&b.id)));
    m
}

impl HeuristicProposer {
    fn rng(&self, ctx: &ProposalContext<'_>) -> ChaCha8Rng {
        let mix = self.seed ^ ((ctx.step as u64) << 32) ^ (ctx.revision as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ChaCha8Rng::seed_from_u64(mix)
    }
}

impl Proposer for HeuristicProposer {
    fn propose(&self, ctx: &ProposalContext<'_>) -> Result<Proposal, GeneratorError> {
        propose_heuristic(ctx, self)
    }
}

/// Heuristic edit proposal. Candidates are tried nearest-first, advancing on
/// each revision. Cost intents drive the object onto the oracle path and let
/// placement stop it; the clearance intent draws its final gap from the seeded rng.
pub fn propose_heuristic(ctx: &ProposalContext<'_>, p: &HeuristicProposer) -> Result<Proposal, GeneratorError> {
    let scene = ctx.scene;
    if !scene.objects.iter().any(|o| o.movable) {
        return Err(GeneratorError::NoMovableObjects);
    }
    let mut rng = p.rng(ctx);
    let scale = scene.grid_scale();
    let r = ctx.cfg.agent_radius;
    let path: Vec<Vec2> = oracle_path(scene, ctx.task, r, &ctx.cfg.nav)
        .map(|g| g.points)
        .unwrap_or_default();
    let trail = ctx.reference.positions();

    let Some(s) = ctx.suggestion() else {
        // Fallback: 5 grid units toward the nearest point of the reference path.
        let pts = if trail.is_empty() { &path } else { &trail };
        let dist = |q: Vec2| nearest_on(pts, q).map_or(f64::INFINITY, |n| n.distance(q));
        let cands = ranked_movables(scene, dist);
        let obj = cands[ctx.revision % cands.len()];
        let near = nearest_on(pts, obj.position).unwrap_or(ctx.task.start.position);
        let g = scale.delta_to_grid(near - obj.position);
        let l1 = g.x.abs() + g.y.abs();
        let (ux, uy) = if l1 == 0.0 {
            (5.0, 0.0)
        } else {
            let ux = (5.0 * g.x.abs() / l1).round();
            (ux, 5.0 - ux)
        };
        let instruction = MoveInstruction {
            object_id: obj.id.clone(),
            x_direction: if g.x < 0.0 { XDirection::Left } else { XDirection::Right },
            x_units: ux,
            y_direction: if g.y < 0.0 { YDirection::Down } else { YDirection::Up },
            y_units: uy,
            rotation: 0.0,
        };
        let intent = Suggestion {
            kind: SuggestionKind::NarrowPathways,
            anchor: Some(near.quantized()),
            detail: "bring clutter closer to the travelled route".into(),
        };
        return Ok(Proposal { instruction, intent, warning: None });
    };

    let fraction: f64 = rng.random_range(0.6..=1.0);
    let anchor = s.anchor;
    let (obj, goal) = match s.kind {
        SuggestionKind::NarrowPathways | SuggestionKind::IncreaseClutterNear => {
            let a = anchor.or_else(|| trail.first().copied()).unwrap_or(ctx.task.start.position);
            // Close the gap between a footprint and the anchor down to a
            // little over the agent radius; objects already that close are skipped.
            let want = r + 0.02 + (1.0 - fraction) * 0.2;
            let mut cands = ranked_movables(scene, |q| q.distance(a));
            let far: Vec<_> = cands
                .iter()
                .copied()
                .filter(|o| o.footprint().distance_to_point(a) > want + 0.05)
                .collect();
            if !far.is_empty() {
                cands = far;
            }
            let obj = cands[ctx.revision % cands.len()];
            let gap = obj.footprint().distance_to_point(a);
            let travel = (gap - want).max(0.0);
            let dir = (a - obj.position).normalized().unwrap_or(Vec2::new(1.0, 0.0));
            (obj, obj.position + dir * travel)
        }
        SuggestionKind::ObstructShortcut | SuggestionKind::RelocateLandmark => {
            let mid = path.get(path.len() / 2).copied().or(anchor).unwrap_or(ctx.task.start.position);
            let cands = ranked_movables(scene, |q| q.distance(mid));
            let obj = cands[ctx.revision % cands.len()];
            (obj, mid)
        }
        SuggestionKind::AddDetour => {
            let a = anchor.unwrap_or(ctx.task.start.position);
            let cands = ranked_movables(scene, |q| q.distance(a));
            let obj = cands[ctx.revision % cands.len()];
            let on_path = nearest_on(&path, obj.position).unwrap_or(a);
            (obj, on_path)
        }
    };
    let rotation = if ctx.revision % 2 == 1 { 90.0 } else { 0.0 };
    let instruction = MoveInstruction::from_grid_delta(&obj.id, scale.delta_to_grid(goal - obj.position), rotation);
    Ok(Proposal {
        instruction,
        intent: s.clone(),
        warning: None,
    })
}

/// Proposer backed by a chat model, falling back to the heuristic.
pub struct ExternalProposer<'b> {
    pub backend: &'b dyn LlmBackend,
    pub fallback: HeuristicProposer,
    /// Schema-violating replies tolerated before falling back.
    pub max_attempts: usize,
    pub render: RenderConfig,
}

/// Query the backend for one instruction.
pub fn propose_external(
    render: &[u8],
    analysis: &Analysis,
    allowed_ids: &[String],
    backend: &dyn LlmBackend,
    max_attempts: usize,
) -> Result<MoveInstruction, GeneratorError> {
    let tools = perturb_instruction_tools(allowed_ids);
    let req = LlmRequest {
        system: None,
        prompt: perturb_prompt(&analysis.to_text()),
        image_png: Some(render.to_vec()),
        tool: Some(tools[0].clone()),
    };
    let mut last = SchemaViolation("no attempts made".into());
    for _ in 0..max_attempts.max(1) {
        let reply = backend.complete(&req)?;
        match parse_instruction(&reply, allowed_ids) {
            Ok(i) => return Ok(i),
            Err(e) => last = e,
        }
    }
    Err(last.into())
}

impl Proposer for ExternalProposer<'_> {
    fn propose(&self, ctx: &ProposalContext<'_>) -> Result<Proposal, GeneratorError> {
        let ids = ctx.scene.movable_ids();
        if ids.is_empty() {
            return Err(GeneratorError::NoMovableObjects);
        }
        let png = render_png(ctx.scene, Some(ctx.reference), Some(&ctx.task.target_object_id), &self.render);
        match propose_external(&png, ctx.analysis, &ids, self.backend, self.max_attempts) {
            Ok(instruction) => {
                let intent = ctx.suggestion().cloned().unwrap_or(Suggestion {
                    kind: SuggestionKind::NarrowPathways,
                    anchor: None,
                    detail: "make the route tighter".into(),
                });
                Ok(Proposal { instruction, intent, warning: None })
            }
            Err(e @ (GeneratorError::Schema(_) | GeneratorError::Backend(_))) => {
                let warning = format!("external proposal fell back to heuristic: {e}");
                log::warn!("{warning}");
                let mut p = propose_heuristic(ctx, &self.fallback)?;
                p.warning = Some(warning);
                Ok(p)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Accepted,
    /// Valid and solvable but the effect check failed.
    Unverified,
    /// Rolled back because the task became unsolvable.
    RolledBackUnsolvable,
    /// Rolled back because the scene failed validation.
    RolledBackInvalid,
    /// Placement refused the instruction.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditStep {
    pub step: usize,
    pub instruction: MoveInstruction,
    pub placement_result: Option<PlacementResult>,
    pub intended_effect: Suggestion,
    pub verified: bool,
    /// Index into `steps` of the attempt this one revises.
    pub revision_of: Option<usize>,
    pub status: StepStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn ser_scene<S: Serializer>(s: &SceneGraph, ser: S) -> Result<S::Ok, S::Error> {
    let v: Value = serde_json::from_slice(&save_scene(s)).map_err(serde::ser::Error::custom)?;
    v.serialize(ser)
}

fn ser_scenes<S: Serializer>(s: &[SceneGraph], ser: S) -> Result<S::Ok, S::Error> {
    let mut v = Vec::with_capacity(s.len());
    for sc in s {
        v.push(serde_json::from_slice::<Value>(&save_scene(sc)).map_err(serde::ser::Error::custom)?);
    }
    v.serialize(ser)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSession {
    #[serde(serialize_with = "ser_scene")]
    pub base_scene: SceneGraph,
    pub analysis: Analysis,
    /// Every attempt, accepted or not.
    pub steps: Vec<EditStep>,
    /// Scene after each accepted step.
    #[serde(serialize_with = "ser_scenes")]
    pub scenes: Vec<SceneGraph>,
    #[serde(serialize_with = "ser_scene")]
    pub final_scene: SceneGraph,
    pub max_steps: usize,
    pub max_revisions_per_step: usize,
    /// A step ran out of revisions before `max_steps` edits were accepted.
    pub exhausted: bool,
    pub warnings: Vec<String>,
}

impl GenerationSession {
    pub fn accepted(&self) -> impl Iterator<Item = &EditStep> {
        self.steps.iter().filter(|s| s.status == StepStatus::Accepted)
    }

    /// One JSON line per attempt.
    pub fn step_records(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    /// Compact summary for run logs.
    pub fn summary(&self) -> Value {
        let mut m = Map::new();
        m.insert("attempts".into(), json!(self.steps.len()));
        m.insert("accepted".into(), json!(self.accepted().count()));
        m.insert("exhausted".into(), json!(self.exhausted));
        m.insert(
            "edited".into(),
            json!(self.accepted().map(|s| s.instruction.object_id.clone()).collect::<Vec<_>>()),
        );
        m.insert("warnings".into(), json!(self.warnings.len()));
        Value::Object(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }
}

impl fmt::Display for GenerationSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.summary())
    }
}

/// Run the propose, apply, check, verify loop.
pub fn generate(
    base: &SceneGraph,
    analysis: &Analysis,
    reference: &Trajectory,
    proposer: &dyn Proposer,
    verifier: Option<&dyn LlmBackend>,
    cfg: &GenerationConfig,
) -> Result<GenerationSession, GeneratorError> {
    let vcfg = ValidationConfig {
        agent_radius: cfg.agent_radius,
    };
    let report = validate_with(base, &vcfg);
    if !report.is_empty() {
        return Err(GeneratorError::InvalidBase(report.to_string()));
    }
    let task = &reference.task;
    if oracle_path(base, task, cfg.agent_radius, &cfg.nav).is_err() {
        return Err(GeneratorError::UnsolvableBase);
    }

    let mut session = GenerationSession {
        base_scene: base.clone(),
        analysis: analysis.clone(),
        steps: Vec::new(),
        scenes: Vec::new(),
        final_scene: base.clone(),
        max_steps: cfg.max_steps,
        max_revisions_per_step: cfg.max_revisions_per_step,
        exhausted: false,
        warnings: Vec::new(),
    };
    let mut current = base.clone();

    for step in 0..cfg.max_steps {
        let mut accepted = false;
        let mut previous: Option<usize> = None;
        for revision in 0..=cfg.max_revisions_per_step {
            let ctx = ProposalContext {
                scene: &current,
                analysis,
                task,
                reference,
                step,
                revision,
                cfg,
            };
            let proposal = proposer.propose(&ctx)?;
            if let Some(w) = &proposal.warning {
                session.warnings.push(w.clone());
            }
            let mut record = EditStep {
                step,
                instruction: proposal.instruction.clone(),
                placement_result: None,
                intended_effect: proposal.intent.clone(),
                verified: false,
                revision_of: previous,
                status: StepStatus::Rejected,
                note: None,
            };
            match apply_edit(&current, &proposal.instruction, &cfg.placement) {
                Err(e) => record.note = Some(e.to_string()),
                Ok((next, result)) => {
                    record.placement_result = Some(result);
                    if !validate_with(&next, &vcfg).is_empty() {
                        record.status = StepStatus::RolledBackInvalid;
                    } else if oracle_path(&next, task, cfg.agent_radius, &cfg.nav).is_err() {
                        record.status = StepStatus::RolledBackUnsolvable;
                    } else {
                        let mut ok = verify_edit(&current, &next, &proposal.intent, reference, cfg);
                        if ok {
                            if let Some(b) = verifier {
                                let png = render_png(&next, None, Some(&task.target_object_id), &RenderConfig::default());
                                match verify_edit_external(b, &png, &proposal.intent) {
                                    Ok(yes) => ok = yes,
                                    Err(e) => {
                                        let w = format!("external verification skipped: {e}");
                                        log::warn!("{w}");
                                        session.warnings.push(w);
                                    }
                                }
                            }
                        }
                        record.verified = ok;
                        if ok {
                            record.status = StepStatus::Accepted;
                            current = next;
                            session.scenes.push(current.clone());
                        } else {
                            record.status = StepStatus::Unverified;
                        }
                    }
                }
            }
            let done = record.status == StepStatus::Accepted;
            previous = Some(session.steps.len());
            session.steps.push(record);
            if done {
                accepted = true;
                break;
            }
        }
        if !accepted {
            session.exhausted = true;
            break;
        }
    }
    session.final_scene = current;
    Ok(session)
}
