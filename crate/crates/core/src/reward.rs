//! Composite shaped reward: safety, efficiency and language-model agreement,
//! weighted and squashed into [0, 1].

use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::error::{Error, Result};
use crate::gateway::{match_reward, LlmVerdict};
use crate::sim::{SimConfig, StepInfo};

/// Definitions of the four shaping components. Each stays in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComponentParams {
    /// Lane discipline on a step where a lane change was executed.
    pub lane_change_discipline: f64,
    /// Lane discipline once the ego has left the road.
    pub off_road_discipline: f64,
    /// Collision avoidance on a collision step.
    pub collision_value: f64,
    /// Time to collision (s) at which avoidance saturates at 1.
    pub ttc_horizon: f64,
    /// Fuel efficiency on FASTER / SLOWER steps.
    pub speed_change_fuel: f64,
}

impl Default for ComponentParams {
    fn default() -> Self {
        Self {
            lane_change_discipline: 0.5,
            off_road_discipline: 0.0,
            collision_value: -1.0,
            ttc_horizon: 3.0,
            speed_change_fuel: 0.5,
        }
    }
}

/// Which reward the agent learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainOn {
    #[default]
    Combined,
    CombinedPlusEnv,
    /// Environment reward only (plain DQN baseline).
    Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub nu: f64,
    pub train_on: TrainOn,
    pub components: ComponentParams,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.3,
            gamma_w: 0.4,
            lambda1: 0.5,
            lambda2: 0.5,
            mu1: 0.5,
            mu2: 0.5,
            nu: 1.0,
            train_on: TrainOn::Combined,
            components: ComponentParams::default(),
        }
    }
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl RewardWeights {
    /// Default coefficients with the given top-level weights, validated.
    pub fn with_top_level(alpha: f64, beta: f64, gamma_w: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            gamma_w,
            ..Self::default()
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_w", self.gamma_w),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("nu", self.nu),
        ];
        for (key, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("reward.{key}"), format!("must be a finite non-negative number, got {v}")));
            }
        }
        let sum = self.alpha + self.beta + self.gamma_w;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::config(
                "reward.alpha/beta/gamma_w",
                format!(
                    "safety, efficiency and LLM weights must satisfy alpha + beta + gamma_w = 1 with each >= 0; \
                     got {} + {} + {} = {sum}",
                    self.alpha, self.beta, self.gamma_w
                ),
            ));
        }
        let c = &self.components;
        if !(c.ttc_horizon > 0.0) {
            return Err(Error::config("reward.components.ttc_horizon", "must be positive"));
        }
        for (key, v) in [
            ("lane_change_discipline", c.lane_change_discipline),
            ("off_road_discipline", c.off_road_discipline),
            ("collision_value", c.collision_value),
            ("speed_change_fuel", c.speed_change_fuel),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::config(format!("reward.components.{key}"), "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    pub efficiency: f64,
    pub llm: f64,
    pub combined: f64,
    pub env: f64,
}

impl RewardBreakdown {
    /// Scalar the agent is trained on.
    pub fn training_signal(&self, train_on: TrainOn) -> f64 {
        match train_on {
            TrainOn::Combined => self.combined,
            TrainOn::CombinedPlusEnv => self.combined + self.env,
            TrainOn::Env => self.env,
        }
    }
}

pub fn lane_discipline(info: &StepInfo, c: &ComponentParams) -> f64 {
    if !info.on_road {
        c.off_road_discipline
    } else if info.lane_changed {
        c.lane_change_discipline
    } else {
        1.0
    }
}

pub fn collision_avoidance(info: &StepInfo, c: &ComponentParams) -> f64 {
    if info.collision {
        c.collision_value
    } else {
        (info.ttc_front / c.ttc_horizon).min(1.0)
    }
}

pub fn fuel_efficiency(info: &StepInfo, c: &ComponentParams) -> f64 {
    if info.action_taken.is_speed_change() {
        c.speed_change_fuel
    } else {
        1.0
    }
}

pub fn speed_maintenance(info: &StepInfo, cfg: &SimConfig) -> f64 {
    (1.0 - (info.ego_speed - cfg.v_desired).abs() / (cfg.v_max - cfg.v_min)).clamp(0.0, 1.0)
}

pub fn safety_reward(info: &StepInfo, w: &RewardWeights) -> f64 {
    w.lambda1 * lane_discipline(info, &w.components) + w.lambda2 * collision_avoidance(info, &w.components)
}

pub fn efficiency_reward(info: &StepInfo, cfg: &SimConfig, w: &RewardWeights) -> f64 {
    w.mu1 * fuel_efficiency(info, &w.components) + w.mu2 * speed_maintenance(info, cfg)
}

pub fn llm_reward(verdict: &LlmVerdict, agent_action: EgoAction, w: &RewardWeights) -> f64 {
    w.nu * f64::from(match_reward(verdict, agent_action))
}

/// `clamp(tanh(x), 0, 1)`.
pub fn sigma_scale(x: f64) -> f64 {
    x.tanh().clamp(0.0, 1.0)
}

/// Weighted sum of the three components, squashed into [0, 1].
pub fn combine(safety: f64, efficiency: f64, llm: f64, w: &RewardWeights) -> f64 {
    sigma_scale(w.alpha * safety + w.beta * efficiency + w.gamma_w * llm)
}

pub fn combined_reward(info: &StepInfo, verdict: &LlmVerdict, cfg: &SimConfig, w: &RewardWeights) -> RewardBreakdown {
    let safety = safety_reward(info, w);
    let efficiency = efficiency_reward(info, cfg, w);
    let llm = llm_reward(verdict, info.action_taken, w);
    RewardBreakdown {
        safety,
        efficiency,
        llm,
        combined: combine(safety, efficiency, llm, w),
        env: info.env_reward,
    }
}
