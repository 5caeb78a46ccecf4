mod common;

use common::*;
use curricula::geometry::{Obb, Rect, Vec2};
use curricula::scene::{
    doorway_clear_passage, load_scene, parse_scene, save_scene, validate, Doorway, Issue, SceneError, SceneGraph,
    SceneObject,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn golden_round_trip_is_byte_stable() {
    let raw = fixture("apartment_a.json");
    let scene = load_scene(&raw).unwrap();
    assert_eq!(save_scene(&scene), raw);
    assert_eq!(load_scene(&save_scene(&scene)).unwrap(), scene);
}

#[test]
fn every_fixture_scene_is_valid() {
    for name in ["apartment_a.json", "apartment_b.json", "apartment_c.json"] {
        let scene = parse_scene(&fixture(name)).unwrap();
        assert!(validate(&scene).is_empty(), "{name}: {}", validate(&scene));
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let raw = String::from_utf8(fixture("apartment_a.json")).unwrap();
    let bad = raw.replacen("\"material\": \"fabric\",", "\"material\": \"fabric\", \"colour\": \"red\",", 1);
    assert!(matches!(parse_scene(bad.as_bytes()), Err(SceneError::Parse(_))));
}

#[test]
fn overlapping_objects_are_reported_by_id() {
    let mut scene = golden_scene();
    let bed = scene.object("bed").unwrap().position;
    scene = scene.with_object_pose("chair", bed, 0.0);
    let report = validate(&scene);
    assert!(report.issues.contains(&Issue::Overlap { a: "bed".into(), b: "chair".into() }));
    let ids = report.offending_ids();
    assert!(ids.contains("bed") && ids.contains("chair"));
    assert!(matches!(load_scene(&save_scene(&scene)), Err(SceneError::Validation(_))));
}

#[test]
fn touching_objects_are_valid() {
    let bounds = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(4.0, 4.0));
    let obj = |id: &str, x: f64| SceneObject {
        id: id.into(),
        category: "box".into(),
        position: Vec2::new(x, 2.0),
        rotation: 0.0,
        extents: Vec2::new(0.5, 0.5),
        material: "wood".into(),
        movable: true,
        is_target_candidate: false,
    };
    let scene = SceneGraph::new("touch", bounds, vec![obj("a", 1.0), obj("b", 2.0)], vec![], vec![]);
    assert!(validate(&scene).is_empty());
}

#[test]
fn object_across_a_wall_is_out_of_bounds() {
    let scene = golden_scene().with_object_pose("chair", Vec2::new(0.1, 5.0), 0.0);
    assert!(validate(&scene).issues.contains(&Issue::OutOfBounds { id: "chair".into() }));
}

#[test]
fn doorway_blocked_by_furniture() {
    let scene = golden_scene();
    let passage_of = |s: &SceneGraph| {
        let door: &Doorway = &s.doorways[0];
        doorway_clear_passage(&s.bounds, door, s.objects.iter().map(|o| o.footprint()), 0.25)
    };
    let open = passage_of(&scene);
    assert!(open >= 0.5, "open passage {open}");
    let mid = scene.doorways[0].midpoint();
    let blocked = scene.with_object_pose("chair", Vec2::new(mid.x + 0.3, mid.y), 0.0);
    let passage = passage_of(&blocked);
    assert!(passage < 0.5, "blocked passage {passage}");
    assert!(validate(&blocked)
        .issues
        .iter()
        .any(|i| matches!(i, Issue::BlockedDoorway { id, .. } if id == "front_door")));
}

#[test]
fn random_scenes_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..12 {
        let scene = random_scene(&mut rng, n);
        let bytes = save_scene(&scene);
        assert_eq!(load_scene(&bytes).unwrap(), scene);
        assert_eq!(save_scene(&load_scene(&bytes).unwrap()), bytes);
    }
}

fn arb_box() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (0.0..4.0f64, 0.0..4.0f64, 0.05..1.5f64, 0.05..1.5f64, 0.0..360.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn save_load_is_identity(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, n);
        prop_assert_eq!(load_scene(&save_scene(&scene)).unwrap(), scene);
    }

    #[test]
    fn overlap_is_symmetric_and_matches_polygon_oracle(a in arb_box(), b in arb_box()) {
        let oa = Obb::new(Vec2::new(a.0, a.1), Vec2::new(a.2, a.3), a.4);
        let ob = Obb::new(Vec2::new(b.0, b.1), Vec2::new(b.2, b.3), b.4);
        prop_assert_eq!(oa.overlaps(&ob), ob.overlaps(&oa));
        prop_assert_eq!(oa.touches(&ob), ob.touches(&oa));

        let ca = corners(oa.center, oa.half, a.4);
        let cb = corners(ob.center, ob.half, b.4);
        // Sampling can only miss overlaps, never invent them.
        if quads_overlap_sampled(&ca, &cb, 40) || quads_overlap_sampled(&cb, &ca, 40) {
            prop_assert!(oa.overlaps(&ob));
        }
        prop_assert_eq!(oa.touches(&ob), quads_touch(&ca, &cb));
        if oa.overlaps(&ob) {
            prop_assert!(oa.touches(&ob));
        }
    }
}
