mod common;

use common::*;
use curricula::analysis::{
    analysis_tool, analyze_external, analyze_heuristic, analyze_with_fallback, Analysis, AnalysisConfig,
    AnalysisError, AnalysisOutcome, ConcernKind, SuggestionKind,
};
use curricula::geometry::Vec2;
use curricula::llm::{StubBackend, ANALYZE_PROMPT};
use curricula::navigation::{run_episode, AgentProfile, NavConfig, Outcome, Pose, Task, Trajectory};
use curricula::scene::{load_scene, SceneGraph};

fn scene_c() -> (SceneGraph, Task) {
    let scene = load_scene(&fixture("apartment_c.json")).unwrap();
    let task = serde_json::from_slice(&fixture("task_c.json")).unwrap();
    (scene, task)
}

fn stuck_trajectory() -> (SceneGraph, Trajectory) {
    let (scene, task) = scene_c();
    let t = run_episode(&scene, &task, &AgentProfile::clearance_blind(), 0, &NavConfig::default()).unwrap();
    assert_eq!(t.outcome, Outcome::FailureStuck);
    (scene, t)
}

fn scene_ids(scene: &SceneGraph) -> Vec<String> {
    scene.objects.iter().map(|o| o.id.clone()).collect()
}

#[test]
fn stuck_episode_yields_stuck_concern_and_detour() {
    let (scene, t) = stuck_trajectory();
    let a = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    assert_eq!(a.outcome, AnalysisOutcome::Failure);
    let stuck = a.concerns.iter().find(|c| c.kind == ConcernKind::Stuck).expect("stuck concern");
    assert_eq!(stuck.location, t.final_position());
    assert!(a.suggestions.iter().any(|s| s.kind == SuggestionKind::AddDetour));
    for c in &a.concerns {
        assert!(c.severity > 0.0 && c.severity <= 1.0);
    }
}

#[test]
fn optimal_run_reports_success_without_inefficiency() {
    let scene = golden_scene();
    let t = run_episode(&scene, &golden_task(), &AgentProfile::optimal(), 0, &NavConfig::default()).unwrap();
    let a = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    assert_eq!(a.outcome, AnalysisOutcome::Success);
    assert!(a.concerns.iter().all(|c| c.kind != ConcernKind::InefficientPath && c.kind != ConcernKind::Stuck));
}

#[test]
fn suggestions_are_abstract() {
    let (scene, t) = stuck_trajectory();
    let a = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    for s in &a.suggestions {
        for id in scene_ids(&scene) {
            assert!(!s.detail.contains(&id), "{} names {id}", s.detail);
        }
    }
}

#[test]
fn oscillation_is_detected() {
    let scene = golden_scene();
    let mut task = golden_task();
    task.start.position = Vec2::new(1.0, 8.5);
    let poses: Vec<Pose> = (0..12)
        .map(|i| Pose {
            t: i,
            position: Vec2::new(if i % 2 == 0 { 1.0 } else { 1.05 }, 8.5),
            heading: 0.0,
        })
        .collect();
    let t = Trajectory {
        profile: "scripted".into(),
        seed: 0,
        task,
        path_length: curricula::navigation::path_length(&poses),
        poses,
        actions: vec![],
        outcome: Outcome::FailureTimeout,
        min_clearance_along_path: 1.0,
    };
    let a = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    assert!(a.concerns.iter().any(|c| c.kind == ConcernKind::Oscillation), "{}", a.to_text());
}

#[test]
fn foreign_trajectory_is_rejected() {
    let (_, t) = stuck_trajectory();
    let err = analyze_heuristic(&golden_scene(), &t, &AnalysisConfig::default()).unwrap_err();
    assert!(matches!(err, AnalysisError::TrajectorySceneMismatch(_)));
}

#[test]
fn heuristic_is_deterministic_and_round_trips() {
    let (scene, t) = stuck_trajectory();
    let a = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    let b = analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let back: Analysis = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back.to_json(), a.to_json());
}

#[test]
fn stub_reply_round_trips_through_external_path() {
    let (scene, t) = stuck_trajectory();
    let reply = r#"{"outcome":"failure","concerns":[{"kind":"stuck","location":[2.004,4.5],"severity":0.9,"detail":"stopped in a tight gap"}],"suggestions":[{"kind":"add_detour","anchor":[2.0,4.5],"detail":"force a longer way around"}]}"#;
    let stub = StubBackend::fixed(reply);
    let (a, warning) = analyze_with_fallback(&scene, &t, &AnalysisConfig::default(), &stub, 3).unwrap();
    assert!(warning.is_none());
    assert_eq!(a.concerns.len(), 1);
    assert_eq!(a.concerns[0].location, Vec2::new(2.0, 4.5));
    let reqs = stub.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].prompt, ANALYZE_PROMPT);
    assert!(reqs[0].image_png.as_ref().is_some_and(|p| p.starts_with(b"\x89PNG")));
    assert_eq!(reqs[0].tool.as_ref(), Some(&analysis_tool()));
}

#[test]
fn malformed_replies_fall_back_with_warning() {
    let (scene, t) = stuck_trajectory();
    let stub = StubBackend::fixed("not json at all");
    let (a, warning) = analyze_with_fallback(&scene, &t, &AnalysisConfig::default(), &stub, 3).unwrap();
    assert_eq!(stub.requests().len(), 3);
    assert!(warning.unwrap().contains("fell back"));
    assert_eq!(a, analyze_heuristic(&scene, &t, &AnalysisConfig::default()).unwrap());
}

#[test]
fn contradicting_outcome_is_not_accepted() {
    let (scene, _) = scene_c();
    let stub = StubBackend::fixed(r#"{"outcome":"success","concerns":[],"suggestions":[]}"#);
    let err = analyze_external(b"png", "summary", AnalysisOutcome::Failure, &scene_ids(&scene), &stub, 2).unwrap_err();
    match err {
        AnalysisError::ParseFallback(problems) => assert_eq!(problems.len(), 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dead_backend_falls_back() {
    let (scene, t) = stuck_trajectory();
    let stub = StubBackend::sequence(Vec::<String>::new());
    let (_, warning) = analyze_with_fallback(&scene, &t, &AnalysisConfig::default(), &stub, 3).unwrap();
    assert!(warning.is_some());
}
