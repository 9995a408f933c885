//! Scene narration and prompt assembly.

mod template;

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::action::{ActionSet, EgoAction};
use crate::error::Result;
use crate::sim::{SceneState, VehicleState};

pub use template::{render, PromptTemplates, PLACEHOLDERS};

/// Vehicles farther than this (m) are not narrated.
pub const PERCEPTION_RANGE: f64 = 200.0;
/// At most this many vehicles are narrated.
pub const NARRATED_VEHICLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleName {
    Base,
    Aggressive,
    Conservative,
}

impl StyleName {
    pub const ALL: [StyleName; 3] = [StyleName::Base, StyleName::Aggressive, StyleName::Conservative];

    pub fn as_str(self) -> &'static str {
        match self {
            StyleName::Base => "base",
            StyleName::Aggressive => "aggressive",
            StyleName::Conservative => "conservative",
        }
    }

    pub fn default_objective(self) -> &'static str {
        match self {
            StyleName::Base => {
                "Drive the way a typical, reasonable driver would, using general driving knowledge. \
                 No particular priority is placed on safety over efficiency or the reverse."
            }
            StyleName::Aggressive => {
                "Priority: efficiency. Reach and hold a high speed, overtake slower traffic and change lanes \
                 whenever that gains time, as long as no collision is risked."
            }
            StyleName::Conservative => {
                "Priority: safety. Keep a generous distance from the vehicle ahead, slow down early \
                 and avoid lane changes unless they are clearly necessary."
            }
        }
    }
}

impl fmt::Display for StyleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StyleName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StyleName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown driving style `{s}` (expected base, aggressive or conservative)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrivingStyle {
    pub name: StyleName,
    pub objective_text: String,
}

impl DrivingStyle {
    pub fn new(name: StyleName) -> Self {
        Self {
            name,
            objective_text: name.default_objective().to_string(),
        }
    }
}

impl From<StyleName> for DrivingStyle {
    fn from(name: StyleName) -> Self {
        DrivingStyle::new(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyVerdict {
    Safe,
    Unsafe,
    NotApplicable,
}

impl SafetyVerdict {
    pub fn describe(self) -> &'static str {
        match self {
            SafetyVerdict::Safe => "safe",
            SafetyVerdict::Unsafe => "unsafe",
            SafetyVerdict::NotApplicable => "not applicable (no lane on that side)",
        }
    }
}

/// Actions that make sense in `state`. IDLE is always present.
pub fn available_actions(state: &SceneState) -> ActionSet {
    let cfg = &state.config;
    let ego = &state.ego;
    let lane = state.lanes.get(ego.target_lane);
    let mut set = ActionSet::EMPTY.with(EgoAction::Idle);
    if lane.and_then(|l| l.left_neighbor).is_some() {
        set.insert(EgoAction::LaneLeft);
    }
    if lane.and_then(|l| l.right_neighbor).is_some() {
        set.insert(EgoAction::LaneRight);
    }
    if ego.target_speed < cfg.v_max {
        set.insert(EgoAction::Faster);
    }
    if ego.target_speed > cfg.v_min {
        set.insert(EgoAction::Slower);
    }
    set
}

fn neighbor_lane(state: &SceneState, direction: LaneDirection) -> Option<usize> {
    let lane = state.lanes.get(state.ego.lane_index)?;
    match direction {
        LaneDirection::Left => lane.left_neighbor,
        LaneDirection::Right => lane.right_neighbor,
    }
}

/// Lane-change safety with the default 3 s time-to-collision threshold.
pub fn assess_lane_change_safety(state: &SceneState, direction: LaneDirection) -> SafetyVerdict {
    assess_lane_change_safety_with(state, direction, SafetyParams::default().ttc_threshold)
}

/// Unsafe when a target-lane vehicle is within two vehicle lengths of the
/// ego longitudinally, or when the target-lane leader or follower would
/// reach the ego in less than `ttc_threshold` seconds.
pub fn assess_lane_change_safety_with(state: &SceneState, direction: LaneDirection, ttc_threshold: f64) -> SafetyVerdict {
    let Some(target) = neighbor_lane(state, direction) else {
        return SafetyVerdict::NotApplicable;
    };
    let ego = &state.ego;
    let len = state.config.vehicle_length;
    let in_lane = || state.npcs.iter().filter(|v| v.lane_index == target);
    if in_lane().any(|v| (v.x - ego.x).abs() < 2.0 * len) {
        return SafetyVerdict::Unsafe;
    }
    if let Some(lead) = state.leader_in_lane(target, ego.x) {
        if ttc(lead.x - ego.x - len, ego.vx - lead.vx) < ttc_threshold {
            return SafetyVerdict::Unsafe;
        }
    }
    if let Some(follow) = state.follower_in_lane(target, ego.x) {
        if ttc(ego.x - follow.x - len, follow.vx - ego.vx) < ttc_threshold {
            return SafetyVerdict::Unsafe;
        }
    }
    SafetyVerdict::Safe
}

/// Time for a gap to close at `closing` m/s; infinite when not closing.
pub fn ttc(gap: f64, closing: f64) -> f64 {
    if closing <= 0.0 {
        f64::INFINITY
    } else {
        gap.max(0.0) / closing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    pub ttc_threshold: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self { ttc_threshold: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub overview_text: String,
    pub available_actions_text: String,
    pub safety_eval_text: String,
    pub lane_summaries: Vec<String>,
    pub ego_summary: String,
}

impl SceneDescription {
    pub fn render(&self) -> String {
        format!(
            "{}\n{}\n{}",
            self.overview_text, self.available_actions_text, self.safety_eval_text
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub driving_rules: String,
    pub decision_cautions: String,
    pub user_objective: String,
    pub last_outcome: String,
    pub scene: SceneDescription,
    pub output_format_instruction: String,
}

impl PromptBundle {
    /// User-message body: everything after the system message, in fixed order.
    pub fn user_message(&self) -> String {
        [
            self.driving_rules.as_str(),
            &self.decision_cautions,
            &self.user_objective,
            &self.last_outcome,
            &self.scene.render(),
            &self.output_format_instruction,
        ]
        .join("\n\n")
    }

    /// Full concatenated prompt; the cache key is derived from this text.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_message, self.user_message())
    }
}

fn action_phrase(a: EgoAction) -> &'static str {
    match a {
        EgoAction::LaneLeft => "change to the left lane",
        EgoAction::Idle => "keep the current lane and speed",
        EgoAction::LaneRight => "change to the right lane",
        EgoAction::Faster => "accelerate",
        EgoAction::Slower => "decelerate",
    }
}

fn vehicle_count(n: usize) -> String {
    match n {
        0 => "no vehicles".to_string(),
        1 => "one vehicle".to_string(),
        n => format!("{n} vehicles"),
    }
}

/// Speed rounded to 0.1 m/s through integer decitenths so formatting is stable.
fn fmt_speed(v: f64) -> String {
    let d = (v * 10.0).round() as i64;
    let sign = if d < 0 { "-" } else { "" };
    format!("{sign}{}.{}", d.abs() / 10, d.abs() % 10)
}

fn fmt_meters(m: f64) -> String {
    format!("{}", m.round() as i64)
}

/// Narrates scenes and assembles prompts from a template set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Narrator {
    pub templates: PromptTemplates,
    pub safety: SafetyParams,
}

impl Narrator {
    pub fn new(templates: PromptTemplates, safety: SafetyParams) -> Result<Self> {
        templates.validate()?;
        Ok(Self { templates, safety })
    }

    /// Up to four nearest NPCs within perception range, nearest first.
    pub fn nearby<'a>(&self, state: &'a SceneState) -> Vec<&'a VehicleState> {
        let ego = &state.ego;
        let dist = |v: &VehicleState| ((v.x - ego.x).powi(2) + (v.y - ego.y).powi(2)).sqrt();
        let mut near: Vec<&VehicleState> = state.npcs.iter().filter(|v| dist(v) <= PERCEPTION_RANGE).collect();
        near.sort_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.id.cmp(&b.id)));
        near.truncate(NARRATED_VEHICLES);
        near
    }

    pub fn describe_scene(&self, state: &SceneState) -> Result<SceneDescription> {
        let ego = &state.ego;
        let near = self.nearby(state);
        let t = &self.templates;

        let ego_speed = fmt_speed(ego.vx);
        let lane_id = ego.lane_index.to_string();
        let ego_summary = format!(
            "The ego car is in lane {lane_id} travelling at {ego_speed} m/s with a target speed of {} m/s.",
            fmt_speed(ego.target_speed)
        );

        let lane_summaries: Vec<String> = state
            .lanes
            .iter()
            .map(|lane| {
                let n = near.iter().filter(|v| v.lane_index == lane.id).count();
                let relation = if lane.id == ego.lane_index {
                    " (its current lane)".to_string()
                } else if lane.id + 1 == ego.lane_index {
                    " (to its left)".to_string()
                } else if lane.id == ego.lane_index + 1 {
                    " (to its right)".to_string()
                } else {
                    String::new()
                };
                let verb = if n == 1 { "is" } else { "are" };
                format!("There {verb} {} in lane {}{relation}.", vehicle_count(n), lane.id)
            })
            .collect();
        let current_lane = lane_summaries[ego.lane_index.min(lane_summaries.len() - 1)].clone();
        let others: Vec<&str> = lane_summaries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ego.lane_index)
            .map(|(_, s)| s.as_str())
            .collect();
        let lane_text = std::iter::once(current_lane.as_str()).chain(others).collect::<Vec<_>>().join(" ");

        let nearby_text = if near.is_empty() {
            "There are no nearby vehicles.".to_string()
        } else {
            let mut s = format!("Nearby vehicles ({}):", near.len());
            for v in &near {
                let dx = v.x - ego.x;
                let place = if dx >= 0.0 { "ahead" } else { "behind" };
                let _ = write!(
                    s,
                    " vehicle {} in lane {}, {} m {place}, speed {} m/s;",
                    v.id,
                    v.lane_index,
                    fmt_meters(dx.abs()),
                    fmt_speed(v.vx)
                );
            }
            s.pop();
            s.push('.');
            s
        };

        let overview_text = render(
            "overview",
            &t.overview,
            &[
                ("lane_id", &lane_id),
                ("ego_speed", &ego_speed),
                ("lane_summaries", &lane_text),
                ("nearby_vehicles", &nearby_text),
            ],
        )?;

        let available = available_actions(state);
        let available_actions_text = format!(
            "Available actions: {}.",
            available
                .iter()
                .map(|a| format!("{} ({})", a.token(), action_phrase(a)))
                .collect::<Vec<_>>()
                .join(", ")
        );

        let left = assess_lane_change_safety_with(state, LaneDirection::Left, self.safety.ttc_threshold);
        let right = assess_lane_change_safety_with(state, LaneDirection::Right, self.safety.ttc_threshold);
        let safety_eval_text = render(
            "safety",
            &t.safety,
            &[("safety_left", left.describe()), ("safety_right", right.describe())],
        )?;

        Ok(SceneDescription {
            overview_text,
            available_actions_text,
            safety_eval_text,
            lane_summaries,
            ego_summary,
        })
    }

    pub fn build_prompt(&self, scene: SceneDescription, style: &DrivingStyle, last_action: EgoAction) -> Result<PromptBundle> {
        let t = &self.templates;
        Ok(PromptBundle {
            system_message: t.system_message.clone(),
            driving_rules: t.driving_rules.clone(),
            decision_cautions: t.decision_cautions.clone(),
            user_objective: render("user_objective", &t.user_objective, &[("objective", &style.objective_text)])?,
            last_outcome: render("last_outcome", &t.last_outcome, &[("last_action", last_action.token())])?,
            scene,
            output_format_instruction: t.output_format.clone(),
        })
    }

    /// Describe `state` and assemble the prompt in one go. `last_action` is
    /// `None` on the first step of an episode, which is narrated as IDLE.
    pub fn prompt_for(&self, state: &SceneState, style: &DrivingStyle, last_action: Option<EgoAction>) -> Result<PromptBundle> {
        let scene = self.describe_scene(state)?;
        self.build_prompt(scene, style, last_action.unwrap_or(EgoAction::Idle))
    }
}

fn default_narrator() -> &'static Narrator {
    static NARRATOR: OnceLock<Narrator> = OnceLock::new();
    NARRATOR.get_or_init(Narrator::default)
}

/// Describe a scene with the built-in templates.
pub fn describe_scene(state: &SceneState) -> SceneDescription {
    default_narrator()
        .describe_scene(state)
        .expect("built-in templates are valid")
}

/// Build a prompt with the built-in templates.
pub fn build_prompt(scene: SceneDescription, style: &DrivingStyle, last_action: EgoAction) -> PromptBundle {
    default_narrator()
        .build_prompt(scene, style, last_action)
        .expect("built-in templates are valid")
}

#[cfg(test)]
mod tests;
