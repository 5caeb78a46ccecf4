//! Trajectory analysis: structured `{outcome, concerns, suggestions}` feedback.
//!
//! The heuristic analyzer reads the structured trajectory. The external
//! analyzer sends the rendered top-down view to a chat backend and parses its
//! structured reply, falling back to the heuristic when replies stay invalid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canon::{fmt2, ser_q2, ser_q2_pair};
use crate::geometry::{q2, Vec2};
use crate::llm::{BackendError, LlmBackend, LlmRequest, ANALYZE_PROMPT};
use crate::navigation::{oracle_path, NavConfig, Outcome, Trajectory};
use crate::placement::clearance_unchecked;
use crate::scene::SceneGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisOutcome {
    Success,
    Failure,
}

impl From<Outcome> for AnalysisOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Success => AnalysisOutcome::Success,
            Outcome::FailureTimeout | Outcome::FailureStuck => AnalysisOutcome::Failure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcernKind {
    UnsafeClearance,
    InefficientPath,
    NearCollision,
    Oscillation,
    Stuck,
}

impl ConcernKind {
    pub const ALL: [ConcernKind; 5] = [
        ConcernKind::UnsafeClearance,
        ConcernKind::InefficientPath,
        ConcernKind::NearCollision,
        ConcernKind::Oscillation,
        ConcernKind::Stuck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConcernKind::UnsafeClearance => "unsafe_clearance",
            ConcernKind::InefficientPath => "inefficient_path",
            ConcernKind::NearCollision => "near_collision",
            ConcernKind::Oscillation => "oscillation",
            ConcernKind::Stuck => "stuck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    NarrowPathways,
    AddDetour,
    ObstructShortcut,
    IncreaseClutterNear,
    RelocateLandmark,
}

impl SuggestionKind {
    pub const ALL: [SuggestionKind; 5] = [
        SuggestionKind::NarrowPathways,
        SuggestionKind::AddDetour,
        SuggestionKind::ObstructShortcut,
        SuggestionKind::IncreaseClutterNear,
        SuggestionKind::RelocateLandmark,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuggestionKind::NarrowPathways => "narrow_pathways",
            SuggestionKind::AddDetour => "add_detour",
            SuggestionKind::ObstructShortcut => "obstruct_shortcut",
            SuggestionKind::IncreaseClutterNear => "increase_clutter_near",
            SuggestionKind::RelocateLandmark => "relocate_landmark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concern {
    pub kind: ConcernKind,
    #[serde(serialize_with = "ser_q2_pair")]
    pub location: Vec2,
    /// In `(0, 1]`.
    #[serde(serialize_with = "ser_q2")]
    pub severity: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suggestion {
    pub kind: SuggestionKind,
    #[serde(default)]
    pub anchor: Option<Vec2>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    pub outcome: AnalysisOutcome,
    pub concerns: Vec<Concern>,
    pub suggestions: Vec<Suggestion>,
}

impl Analysis {
    /// Sort concerns and suggestions into canonical order.
    pub fn canonicalize(&mut self) {
        self.concerns.sort_by(|a, b| {
            a.kind
                .cmp(&b.kind)
                .then(a.location.x.total_cmp(&b.location.x))
                .then(a.location.y.total_cmp(&b.location.y))
                .then(a.severity.total_cmp(&b.severity))
                .then(a.detail.cmp(&b.detail))
        });
        self.suggestions.sort_by(|a, b| {
            let key = |s: &Suggestion| s.anchor.map(|p| (p.x, p.y));
            a.kind
                .cmp(&b.kind)
                .then_with(|| match (key(a), key(b)) {
                    (None, None) => std::cmp::Ordering::Equal,
                    (None, Some(_)) => std::cmp::Ordering::Less,
                    (Some(_), None) => std::cmp::Ordering::Greater,
                    (Some(p), Some(q)) => p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)),
                })
                .then(a.detail.cmp(&b.detail))
        });
        self.suggestions.dedup();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }

    /// Plain-text form substituted into the generator prompt.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let outcome = match self.outcome {
            AnalysisOutcome::Success => "success",
            AnalysisOutcome::Failure => "failure",
        };
        let _ = writeln!(s, "Outcome: {outcome}");
        s.push_str("Concerns:\n");
        if self.concerns.is_empty() {
            s.push_str("- none\n");
        }
        for c in &self.concerns {
            let _ = writeln!(
                s,
                "- {} at ({}, {}), severity {}: {}",
                c.kind.as_str(),
                fmt2(c.location.x),
                fmt2(c.location.y),
                fmt2(c.severity),
                c.detail
            );
        }
        s.push_str("Suggestions:\n");
        if self.suggestions.is_empty() {
            s.push_str("- none\n");
        }
        for g in &self.suggestions {
            match g.anchor {
                Some(a) => {
                    let _ = writeln!(s, "- {} near ({}, {}): {}", g.kind.as_str(), fmt2(a.x), fmt2(a.y), g.detail);
                }
                None => {
                    let _ = writeln!(s, "- {}: {}", g.kind.as_str(), g.detail);
                }
            }
        }
        s.trim_end().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Clearance beyond the agent radius below which a pass is unsafe.
    pub clearance_margin: f64,
    /// Margin at or below which a pass counts as a near collision.
    pub near_collision_margin: f64,
    pub inefficiency_ratio: f64,
    pub oscillation_reversals: usize,
    /// Path length window (world units) in which reversals are counted.
    pub oscillation_window: f64,
    pub agent_radius: f64,
    pub nav: NavConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            clearance_margin: 0.15,
            near_collision_margin: 0.02,
            inefficiency_ratio: 1.3,
            oscillation_reversals: 4,
            oscillation_window: 1.0,
            agent_radius: 0.25,
            nav: NavConfig::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trajectory does not belong to this scene: {0}")]
    TrajectorySceneMismatch(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("external replies failed validation: {}", .0.join(" | "))]
    ParseFallback(Vec<String>),
}

fn suggestion_for(kind: ConcernKind, at: Vec2) -> Option<Suggestion> {
    let (kind, anchor, detail) = match kind {
        ConcernKind::UnsafeClearance => (
            SuggestionKind::NarrowPathways,
            Some(at),
            "tighten the free width of passages like the one near this spot",
        ),
        ConcernKind::InefficientPath => (
            SuggestionKind::ObstructShortcut,
            Some(at),
            "make the direct route less available so that route choice matters",
        ),
        ConcernKind::Stuck => (
            SuggestionKind::AddDetour,
            Some(at),
            "require a longer way around the obstruction where progress stopped",
        ),
        _ => return None,
    };
    Some(Suggestion {
        kind,
        anchor: Some(anchor.unwrap_or(at).quantized()),
        detail: detail.to_string(),
    })
}

/// Indices of local minima of `v`, one per plateau (the plateau's first index).
fn local_minima(v: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let left = if i == 0 { f64::INFINITY } else { v[i - 1] };
        let right = if j + 1 == v.len() { f64::INFINITY } else { v[j + 1] };
        if v[i] < left && v[i] < right {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

fn check_belongs(scene: &SceneGraph, traj: &Trajectory) -> Result<(), AnalysisError> {
    if scene.object(&traj.task.target_object_id).is_none() {
        return Err(AnalysisError::TrajectorySceneMismatch(format!(
            "target `{}` is not in scene `{}`",
            traj.task.target_object_id, scene.scene_id
        )));
    }
    if traj.poses.is_empty() {
        return Err(AnalysisError::TrajectorySceneMismatch("trajectory has no poses".into()));
    }
    if let Some(p) = traj.poses.iter().find(|p| !scene.bounds.contains(p.position)) {
        return Err(AnalysisError::TrajectorySceneMismatch(format!(
            "pose at t={} lies outside the scene bounds",
            p.t
        )));
    }
    Ok(())
}

pub fn analyze_heuristic(
    scene: &SceneGraph,
    traj: &Trajectory,
    cfg: &AnalysisConfig,
) -> Result<Analysis, AnalysisError> {
    check_belongs(scene, traj)?;
    let mut concerns = Vec::new();
    let positions = traj.positions();
    let clear: Vec<f64> = positions.iter().map(|&p| clearance_unchecked(scene, p)).collect();

    for i in local_minima(&clear) {
        let margin = clear[i] - cfg.agent_radius;
        if margin < cfg.clearance_margin {
            let severity = ((cfg.clearance_margin - margin) / cfg.clearance_margin).clamp(0.01, 1.0);
            concerns.push(Concern {
                kind: ConcernKind::UnsafeClearance,
                location: positions[i].quantized(),
                severity: q2(severity).max(0.01),
                detail: format!(
                    "clearance margin {} below {}",
                    fmt2(margin),
                    fmt2(cfg.clearance_margin)
                ),
            });
        }
        if margin <= cfg.near_collision_margin {
            concerns.push(Concern {
                kind: ConcernKind::NearCollision,
                location: positions[i].quantized(),
                severity: 1.0,
                detail: format!("body within {} of an obstacle", fmt2(margin.max(0.0))),
            });
        }
    }

    if let Ok(oracle) = oracle_path(scene, &traj.task, cfg.agent_radius, &cfg.nav) {
        let best = oracle.world_cost();
        if best > 0.0 {
            let ratio = traj.path_length / best;
            if ratio > cfg.inefficiency_ratio {
                let worst = positions
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        let da = oracle.points.iter().map(|q| q.distance(*a)).fold(f64::INFINITY, f64::min);
                        let db = oracle.points.iter().map(|q| q.distance(*b)).fold(f64::INFINITY, f64::min);
                        da.total_cmp(&db)
                    })
                    .unwrap_or(traj.task.start.position);
                concerns.push(Concern {
                    kind: ConcernKind::InefficientPath,
                    location: worst.quantized(),
                    severity: q2(((ratio - cfg.inefficiency_ratio) / cfg.inefficiency_ratio).clamp(0.01, 1.0)).max(0.01),
                    detail: format!("path is {} times the shortest route", fmt2(ratio)),
                });
            }
        }
    }

    // Reversals: consecutive displacements pointing in opposing directions.
    let mut arc = vec![0.0; positions.len()];
    for i in 1..positions.len() {
        arc[i] = arc[i - 1] + positions[i].distance(positions[i - 1]);
    }
    let reversals: Vec<usize> = (2..positions.len())
        .filter(|&i| (positions[i - 1] - positions[i - 2]).dot(positions[i] - positions[i - 1]) < 0.0)
        .map(|i| i - 1)
        .collect();
    let mut r = 0;
    while r < reversals.len() {
        let s0 = arc[reversals[r]];
        let in_window = reversals[r..].iter().take_while(|&&k| arc[k] - s0 <= cfg.oscillation_window + 1e-9).count();
        if in_window >= cfg.oscillation_reversals {
            concerns.push(Concern {
                kind: ConcernKind::Oscillation,
                location: positions[reversals[r]].quantized(),
                severity: q2((in_window as f64 / (2 * cfg.oscillation_reversals) as f64).min(1.0)),
                detail: format!("{in_window} heading reversals within {} of travel", fmt2(cfg.oscillation_window)),
            });
            r += in_window;
        } else {
            r += 1;
        }
    }

    if traj.outcome == Outcome::FailureStuck {
        concerns.push(Concern {
            kind: ConcernKind::Stuck,
            location: traj.final_position().quantized(),
            severity: 1.0,
            detail: "agent could not make further progress".into(),
        });
    }

    let suggestions = concerns
        .iter()
        .filter_map(|c| suggestion_for(c.kind, c.location))
        .collect();
    let mut analysis = Analysis {
        outcome: traj.outcome.into(),
        concerns,
        suggestions,
    };
    analysis.canonicalize();
    Ok(analysis)
}

/// Structured-output tool for the external analyzer's reply.
pub fn analysis_tool() -> Value {
    let concern_kinds: Vec<&str> = ConcernKind::ALL.iter().map(|k| k.as_str()).collect();
    let suggestion_kinds: Vec<&str> = SuggestionKind::ALL.iter().map(|k| k.as_str()).collect();
    json!({
        "type": "function",
        "name": "report_trajectory_analysis",
        "description": "Report the outcome, intermediate concerns and abstract environment suggestions for one navigation trajectory.",
        "parameters": {
            "type": "object",
            "properties": {
                "outcome": {"type": "string", "enum": ["success", "failure"]},
                "concerns": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "kind": {"type": "string", "enum": concern_kinds},
                            "location": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                            "severity": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "detail": {"type": "string"}
                        },
                        "required": ["kind", "location", "severity", "detail"],
                        "additionalProperties": false
                    }
                },
                "suggestions": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "kind": {"type": "string", "enum": suggestion_kinds},
                            "anchor": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                            "detail": {"type": "string"}
                        },
                        "required": ["kind", "anchor", "detail"],
                        "additionalProperties": false
                    }
                }
            },
            "required": ["outcome", "concerns", "suggestions"],
            "additionalProperties": false
        }
    })
}

/// Short text description of a trajectory for the external analyzer.
pub fn trajectory_summary(traj: &Trajectory) -> String {
    let outcome = match traj.outcome {
        Outcome::Success => "success",
        Outcome::FailureTimeout => "failure_timeout",
        Outcome::FailureStuck => "failure_stuck",
    };
    format!(
        "Task: navigate to `{}` (success radius {}). Start ({}, {}). Poses: {}. Path length {}. Minimum clearance {}. Episode ended with {}. Reply with the report_trajectory_analysis function.",
        traj.task.target_object_id,
        fmt2(traj.task.success_radius),
        fmt2(traj.task.start.position.x),
        fmt2(traj.task.start.position.y),
        traj.poses.len(),
        fmt2(traj.path_length),
        fmt2(traj.min_clearance_along_path),
        outcome
    )
}

/// Parse and check one external reply.
pub fn parse_external_reply(
    reply: &str,
    expected: AnalysisOutcome,
    scene_ids: &[String],
) -> Result<Analysis, String> {
    let mut a: Analysis = serde_json::from_str(reply.trim()).map_err(|e| format!("malformed reply: {e}"))?;
    if a.outcome != expected {
        return Err(format!("outcome {:?} contradicts the trajectory", a.outcome));
    }
    for c in &a.concerns {
        if !(c.severity > 0.0 && c.severity <= 1.0) {
            return Err(format!("severity {} outside (0, 1]", c.severity));
        }
    }
    for s in &a.suggestions {
        if let Some(id) = scene_ids.iter().find(|id| s.detail.contains(id.as_str())) {
            return Err(format!("suggestion names object `{id}`"));
        }
    }
    for c in &mut a.concerns {
        c.location = c.location.quantized();
        c.severity = q2(c.severity).max(0.01);
    }
    for s in &mut a.suggestions {
        s.anchor = s.anchor.map(Vec2::quantized);
    }
    a.canonicalize();
    Ok(a)
}

/// Query an external backend with the trajectory render; up to `attempts` tries.
pub fn analyze_external(
    render_png: &[u8],
    traj_summary: &str,
    expected: AnalysisOutcome,
    scene_ids: &[String],
    backend: &dyn LlmBackend,
    attempts: usize,
) -> Result<Analysis, AnalysisError> {
    let req = LlmRequest {
        system: Some(traj_summary.to_string()),
        prompt: ANALYZE_PROMPT.to_string(),
        image_png: Some(render_png.to_vec()),
        tool: Some(analysis_tool()),
    };
    let mut problems = Vec::new();
    for _ in 0..attempts.max(1) {
        let reply = backend.complete(&req)?;
        match parse_external_reply(&reply, expected, scene_ids) {
            Ok(a) => return Ok(a),
            Err(e) => problems.push(e),
        }
    }
    Err(AnalysisError::ParseFallback(problems))
}

/// External analysis with heuristic fallback. The second value carries the
/// warning recorded when the fallback was taken.
pub fn analyze_with_fallback(
    scene: &SceneGraph,
    traj: &Trajectory,
    cfg: &AnalysisConfig,
    backend: &dyn LlmBackend,
    attempts: usize,
) -> Result<(Analysis, Option<String>), AnalysisError> {
    check_belongs(scene, traj)?;
    let png = crate::render::render_png(
        scene,
        Some(traj),
        Some(&traj.task.target_object_id),
        &crate::render::RenderConfig::default(),
    );
    let ids: Vec<String> = scene.objects.iter().map(|o| o.id.clone()).collect();
    match analyze_external(&png, &trajectory_summary(traj), traj.outcome.into(), &ids, backend, attempts) {
        Ok(a) => Ok((a, None)),
        Err(e @ (AnalysisError::ParseFallback(_) | AnalysisError::Backend(_))) => {
            let warning = format!("external analysis fell back to heuristic: {e}");
            log::warn!("{warning}");
            Ok((analyze_heuristic(scene, traj, cfg)?, Some(warning)))
        }
        Err(e) => Err(e),
    }
}
