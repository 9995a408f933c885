//! One closed-loop step of the shaped environment: narrate, ask the gateway,
//! advance the simulator, score the step.

use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::error::Result;
use crate::gateway::{Gateway, LlmVerdict};
use crate::narrator::{DrivingStyle, Narrator};
use crate::reward::{combined_reward, RewardBreakdown, RewardWeights};
use crate::sim::{reset, EnvRewardParams, SceneState, SimConfig, StepInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: EgoAction,
    pub info: StepInfo,
    pub reward: RewardBreakdown,
    pub verdict: LlmVerdict,
}

impl StepRecord {
    /// The recommendation equals the action taken.
    pub fn matched(&self) -> bool {
        self.verdict.recommended_action == Some(self.action)
    }
}

/// Everything needed to turn an agent action into a scored transition.
#[derive(Debug, Clone, Copy)]
pub struct ShapedEnv<'a> {
    pub sim: &'a SimConfig,
    pub env_reward: &'a EnvRewardParams,
    pub weights: &'a RewardWeights,
    pub narrator: &'a Narrator,
    pub gateway: &'a Gateway,
    pub style: &'a DrivingStyle,
}

impl ShapedEnv<'_> {
    pub fn reset(&self, seed: u64) -> Result<SceneState> {
        reset(self.sim, seed)
    }

    /// The prompt describes the state *before* the action is applied.
    pub fn step(&self, state: &SceneState, action: EgoAction, last_action: Option<EgoAction>) -> Result<(SceneState, StepRecord)> {
        let bundle = self.narrator.prompt_for(state, self.style, last_action)?;
        let verdict = self.gateway.query(&bundle, state, self.style);
        let (next, info) = state.step(action, self.env_reward)?;
        let reward = combined_reward(&info, &verdict, self.sim, self.weights);
        Ok((
            next,
            StepRecord {
                action,
                info,
                reward,
                verdict,
            },
        ))
    }
}

/// Seed of the `index`-th episode derived from a base seed (SplitMix64).
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
