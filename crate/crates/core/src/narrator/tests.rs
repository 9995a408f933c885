use proptest::prelude::*;

use super::*;
use crate::action::ACTION_COUNT;
use crate::sim::{reset, SimConfig};

fn car(id: u32, x: f64, lane: usize, v: f64, cfg: &SimConfig) -> VehicleState {
    VehicleState {
        id,
        x,
        y: cfg.lane_center(lane),
        vx: v,
        vy: 0.0,
        lane_index: lane,
        target_speed: v,
        target_lane: lane,
    }
}

fn scene(ego_lane: usize, ego_v: f64, npcs: &[(f64, usize, f64)]) -> SceneState {
    let cfg = SimConfig::default();
    let npcs = npcs
        .iter()
        .enumerate()
        .map(|(i, &(x, lane, v))| car(i as u32 + 1, x, lane, v, &cfg))
        .collect();
    SceneState::from_parts(cfg, car(0, 0.0, ego_lane, ego_v, &cfg), npcs)
}

/// Ego in lane 1 following one slower car; the right lane is empty.
fn case_study() -> SceneState {
    scene(1, 25.0, &[(40.0, 1, 22.0), (-60.0, 0, 25.0), (90.0, 3, 24.0)])
}

#[test]
fn available_actions_boundaries() {
    let s = scene(0, 30.0, &[]);
    let expected: ActionSet = [EgoAction::Idle, EgoAction::LaneRight, EgoAction::Slower].into_iter().collect();
    assert_eq!(available_actions(&s), expected);
    assert_eq!(available_actions(&scene(1, 25.0, &[])), ActionSet::FULL);
    let s = scene(3, 20.0, &[]);
    assert!(!available_actions(&s).contains(EgoAction::LaneRight));
    assert!(!available_actions(&s).contains(EgoAction::Slower));
}

#[test]
fn single_lane_road_never_offers_lane_changes() {
    let cfg = SimConfig { lane_count: 1, ..SimConfig::default() };
    for v in [20.0, 25.0, 30.0] {
        let s = SceneState::from_parts(cfg, car(0, 0.0, 0, v, &cfg), vec![]);
        let a = available_actions(&s);
        assert!(!a.contains(EgoAction::LaneLeft) && !a.contains(EgoAction::LaneRight));
        assert!(a.contains(EgoAction::Idle));
    }
}

#[test]
fn lane_change_safety_cases() {
    assert_eq!(assess_lane_change_safety(&scene(1, 25.0, &[]), LaneDirection::Right), SafetyVerdict::Safe);
    assert_eq!(
        assess_lane_change_safety(&scene(0, 25.0, &[]), LaneDirection::Left),
        SafetyVerdict::NotApplicable
    );
    assert_eq!(
        assess_lane_change_safety(&scene(1, 25.0, &[(0.0, 2, 25.0)]), LaneDirection::Right),
        SafetyVerdict::Unsafe
    );
    // follower 30 m gap behind, closing at 12 m/s: 2.5 s < 3 s
    let closing = scene(1, 18.0, &[(-35.0, 2, 30.0)]);
    assert_eq!(assess_lane_change_safety(&closing, LaneDirection::Right), SafetyVerdict::Unsafe);
    // same gap closing at 6 m/s: 5 s
    let slow = scene(1, 24.0, &[(-35.0, 2, 30.0)]);
    assert_eq!(assess_lane_change_safety(&slow, LaneDirection::Right), SafetyVerdict::Safe);
    // slow leader 20 m ahead in the target lane, ego 10 m/s faster: 1.5 s
    let lead = scene(1, 30.0, &[(25.0, 0, 20.0)]);
    assert_eq!(assess_lane_change_safety(&lead, LaneDirection::Left), SafetyVerdict::Unsafe);
    assert_eq!(assess_lane_change_safety_with(&lead, LaneDirection::Left, 1.0), SafetyVerdict::Safe);
}

#[test]
fn case_study_description() {
    let d = describe_scene(&case_study());
    assert!(d.overview_text.contains("driving in lane 1"), "{}", d.overview_text);
    assert!(d.overview_text.contains("There is one vehicle in lane 1 (its current lane)"));
    assert!(d.safety_eval_text.contains("changing to the right lane is safe"));
    assert!(d.overview_text.contains("vehicle 1 in lane 1, 40 m ahead, speed 22.0 m/s"));
    assert!(d.ego_summary.contains("25.0 m/s"));
}

#[test]
fn ego_only_scene_has_no_nearby_vehicles() {
    let d = describe_scene(&scene(2, 25.0, &[]));
    assert!(d.overview_text.contains("There are no nearby vehicles."));
    assert!(d.lane_summaries.iter().all(|s| s.contains("no vehicles")));
}

#[test]
fn far_vehicles_are_not_narrated() {
    let d = describe_scene(&scene(1, 25.0, &[(PERCEPTION_RANGE + 10.0, 1, 25.0)]));
    assert!(d.overview_text.contains("There are no nearby vehicles."));
}

#[test]
fn description_is_deterministic() {
    let s = reset(&SimConfig::default(), 9).unwrap();
    assert_eq!(describe_scene(&s), describe_scene(&s));
}

#[test]
fn available_actions_text_lists_exactly_the_available_set() {
    for seed in 0..10 {
        let s = reset(&SimConfig::default(), seed).unwrap();
        let d = describe_scene(&s);
        let set = available_actions(&s);
        for a in EgoAction::ALL {
            assert_eq!(d.available_actions_text.contains(a.token()), set.contains(a));
        }
    }
}

#[test]
fn objective_language_per_style() {
    let d = describe_scene(&case_study());
    let aggressive = build_prompt(d.clone(), &StyleName::Aggressive.into(), EgoAction::Idle);
    assert!(aggressive.user_objective.to_lowercase().contains("priority: efficiency"));
    let conservative = build_prompt(d.clone(), &StyleName::Conservative.into(), EgoAction::Idle);
    assert!(conservative.user_objective.to_lowercase().contains("priority: safety"));
    let base = build_prompt(d, &StyleName::Base.into(), EgoAction::Idle);
    assert!(!base.user_objective.contains("Priority:"));
}

#[test]
fn first_step_names_idle() {
    let bundle = Narrator::default()
        .prompt_for(&case_study(), &StyleName::Base.into(), None)
        .unwrap();
    assert!(bundle.last_outcome.contains("IDLE"));
    let bundle = Narrator::default()
        .prompt_for(&case_study(), &StyleName::Base.into(), Some(EgoAction::Faster))
        .unwrap();
    assert!(bundle.last_outcome.contains("FASTER"));
}

#[test]
fn rendered_order_is_fixed() {
    let b = build_prompt(describe_scene(&case_study()), &StyleName::Aggressive.into(), EgoAction::Slower);
    let text = b.render();
    let parts = [
        b.system_message.as_str(),
        &b.driving_rules,
        &b.decision_cautions,
        &b.user_objective,
        &b.last_outcome,
        &b.scene.overview_text,
        &b.scene.available_actions_text,
        &b.scene.safety_eval_text,
        &b.output_format_instruction,
    ];
    let mut pos = 0;
    for p in parts {
        let at = text[pos..].find(p).expect("section present in order");
        pos += at + p.len();
    }
}

#[test]
fn style_parse() {
    assert_eq!("Aggressive".parse::<StyleName>().unwrap(), StyleName::Aggressive);
    assert!("sporty".parse::<StyleName>().is_err());
}

fn arb_scene() -> impl Strategy<Value = SceneState> {
    (0u64..1000, 0usize..40).prop_map(|(seed, npcs)| {
        let cfg = SimConfig { npc_count: npcs, ..SimConfig::default() };
        reset(&cfg, seed).unwrap()
    })
}

proptest! {
    #[test]
    fn bundle_completeness(state in arb_scene(), last in 0usize..ACTION_COUNT, style in 0usize..3) {
        let style: DrivingStyle = StyleName::ALL[style].into();
        let b = build_prompt(describe_scene(&state), &style, EgoAction::from_index(last).unwrap());
        for field in [&b.system_message, &b.driving_rules, &b.decision_cautions, &b.user_objective,
                      &b.last_outcome, &b.scene.overview_text, &b.output_format_instruction] {
            prop_assert!(!field.trim().is_empty());
        }
        for a in EgoAction::ALL {
            prop_assert_eq!(template::count_token(&b.output_format_instruction, a.token()), 1);
        }
        prop_assert_eq!(&b.user_objective, &format!("User objective: {}", style.objective_text));
    }

    #[test]
    fn styles_differ_only_in_objective(state in arb_scene()) {
        let d = describe_scene(&state);
        let a = build_prompt(d.clone(), &StyleName::Aggressive.into(), EgoAction::Idle);
        let mut c = build_prompt(d, &StyleName::Conservative.into(), EgoAction::Idle);
        prop_assert_ne!(&a.user_objective, &c.user_objective);
        c.user_objective = a.user_objective.clone();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn overview_numbers_are_faithful(state in arb_scene()) {
        let d = describe_scene(&state);
        let ego = &state.ego;
        let speed = format!("at {} m/s", fmt_speed(ego.vx));
        prop_assert!(d.overview_text.contains(&speed));
        let lane = format!("driving in lane {} ", ego.lane_index);
        prop_assert!(d.overview_text.contains(&lane));
        for v in Narrator::default().nearby(&state) {
            let dx = v.x - ego.x;
            let place = if dx >= 0.0 { "ahead" } else { "behind" };
            let snippet = format!("vehicle {} in lane {}, {} m {place}, speed {} m/s",
                v.id, v.lane_index, dx.abs().round() as i64, fmt_speed(v.vx));
            prop_assert!(d.overview_text.contains(&snippet));
            // rounding error bounds
            prop_assert!((dx.abs() - dx.abs().round()).abs() <= 0.5);
        }
    }

    #[test]
    fn speed_buckets_are_distinguished(v in 0.0f64..40.0, delta in 0.1f64..5.0) {
        let a = scene(1, v, &[]);
        let b = scene(1, v + delta + 1e-9, &[]);
        prop_assert_ne!(describe_scene(&a).overview_text, describe_scene(&b).overview_text);
    }
}
