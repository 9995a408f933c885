//! Deterministic rule-based stand-in for the language model.

use crate::action::{ActionSet, EgoAction};
use crate::narrator::{assess_lane_change_safety, available_actions, DrivingStyle, LaneDirection, SafetyVerdict, StyleName};
use crate::sim::SceneState;

/// Front-gap of the leader in `lane` ahead of the ego, infinite if none.
fn lane_front_gap(state: &SceneState, lane: usize) -> f64 {
    state
        .leader_in_lane(lane, state.ego.x)
        .map_or(f64::INFINITY, |l| l.x - state.ego.x - state.config.vehicle_length)
}

fn lane_change(direction: LaneDirection) -> EgoAction {
    match direction {
        LaneDirection::Left => EgoAction::LaneLeft,
        LaneDirection::Right => EgoAction::LaneRight,
    }
}

fn target_lane(state: &SceneState, direction: LaneDirection) -> Option<usize> {
    let lane = state.lanes.get(state.ego.lane_index)?;
    match direction {
        LaneDirection::Left => lane.left_neighbor,
        LaneDirection::Right => lane.right_neighbor,
    }
}

/// Safe, available lane changes with their target-lane front gaps, left first.
fn safe_changes(state: &SceneState, available: ActionSet) -> Vec<(EgoAction, f64)> {
    [LaneDirection::Left, LaneDirection::Right]
        .into_iter()
        .filter(|d| available.contains(lane_change(*d)))
        .filter(|d| assess_lane_change_safety(state, *d) == SafetyVerdict::Safe)
        .filter_map(|d| target_lane(state, d).map(|l| (lane_change(d), lane_front_gap(state, l))))
        .collect()
}

/// Safe lane change offering the largest front gap, if it beats the current lane.
fn overtaking_change(state: &SceneState, available: ActionSet) -> Option<EgoAction> {
    let current = lane_front_gap(state, state.ego.lane_index);
    safe_changes(state, available)
        .into_iter()
        .filter(|(_, gap)| *gap > current)
        .fold(None, |best: Option<(EgoAction, f64)>, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        })
        .map(|(a, _)| a)
}

/// Rule policy per driving style, evaluated in fixed priority order. The
/// result is always one of `available_actions(state)`.
pub fn mock_driver(state: &SceneState, style: &DrivingStyle) -> EgoAction {
    let available = available_actions(state);
    let ttc = state.ttc_front();
    let has = |a: EgoAction| available.contains(a);

    let choice = match style.name {
        StyleName::Conservative => {
            if ttc < 4.0 && has(EgoAction::Slower) {
                EgoAction::Slower
            } else if ttc < 2.0 {
                safe_changes(state, available)
                    .into_iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map_or(EgoAction::Idle, |(a, _)| a)
            } else {
                EgoAction::Idle
            }
        }
        StyleName::Aggressive => {
            if ttc < 1.5 && has(EgoAction::Slower) {
                EgoAction::Slower
            } else if ttc > 4.0 && has(EgoAction::Faster) {
                EgoAction::Faster
            } else {
                overtaking_change(state, available).unwrap_or(EgoAction::Idle)
            }
        }
        StyleName::Base => {
            if ttc > 6.0 && has(EgoAction::Faster) {
                EgoAction::Faster
            } else if ttc < 3.0 && has(EgoAction::Slower) {
                EgoAction::Slower
            } else {
                EgoAction::Idle
            }
        }
    };
    debug_assert!(available.contains(choice));
    choice
}

/// Reply text in the same shape a remote model is asked to produce.
pub fn mock_reply(state: &SceneState, style: &DrivingStyle) -> String {
    let action = mock_driver(state, style);
    let ttc = state.ttc_front();
    let ttc_text = if ttc.is_finite() {
        format!("{ttc:.1} s")
    } else {
        "unbounded".to_string()
    };
    format!(
        "Style {}; time to collision with the vehicle ahead is {ttc_text}.\nFinal Answer: {}",
        style.name,
        action.token()
    )
}
