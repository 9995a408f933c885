use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Discrete ego meta-action. The integer encoding (`index`) is stable and
/// shared by the Q-network output head, the parser and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EgoAction {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Faster = 3,
    Slower = 4,
}

pub const ACTION_COUNT: usize = 5;

impl EgoAction {
    pub const ALL: [EgoAction; ACTION_COUNT] = [
        EgoAction::LaneLeft,
        EgoAction::Idle,
        EgoAction::LaneRight,
        EgoAction::Faster,
        EgoAction::Slower,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Upper-case token used in prompts and model replies.
    pub fn token(self) -> &'static str {
        match self {
            EgoAction::LaneLeft => "LANE_LEFT",
            EgoAction::Idle => "IDLE",
            EgoAction::LaneRight => "LANE_RIGHT",
            EgoAction::Faster => "FASTER",
            EgoAction::Slower => "SLOWER",
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, EgoAction::LaneLeft | EgoAction::LaneRight)
    }

    pub fn is_speed_change(self) -> bool {
        matches!(self, EgoAction::Faster | EgoAction::Slower)
    }
}

impl fmt::Display for EgoAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for EgoAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.token().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// Set of actions, one bit per action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const FULL: ActionSet = ActionSet(0b11111);

    pub fn contains(self, a: EgoAction) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn insert(&mut self, a: EgoAction) {
        self.0 |= 1 << a.index();
    }

    pub fn with(mut self, a: EgoAction) -> Self {
        self.insert(a);
        self
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = EgoAction> {
        EgoAction::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        ActionSet(bits & Self::FULL.0)
    }
}

impl FromIterator<EgoAction> for ActionSet {
    fn from_iter<I: IntoIterator<Item = EgoAction>>(iter: I) -> Self {
        iter.into_iter().fold(ActionSet::EMPTY, ActionSet::with)
    }
}
