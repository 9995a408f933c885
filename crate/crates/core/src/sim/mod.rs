//! Multi-lane highway simulator: kinematic ego vehicle driven by discrete
//! meta-actions, IDM-following NPC traffic, rectangle collision checks.

mod idm;
mod observation;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::error::{Error, Result};

pub use idm::{idm_acceleration, IdmParams};
pub use observation::{observe, Observation, OBS_FEATURES, OBS_LEN, OBS_ROWS};

/// Longitudinal extent of the NPC spawn region relative to the ego start.
const SPAWN_BEHIND: f64 = 150.0;
const SPAWN_AHEAD: f64 = 450.0;
/// Minimum spawn slot width; the effective slot is never below 2.5 vehicle lengths.
const SPAWN_SLOT: f64 = 25.0;

/// Ego speed controller gain (1/s) and acceleration limit (m/s²).
const EGO_SPEED_GAIN: f64 = 1.0 / 0.6;
const EGO_ACCEL_LIMIT: f64 = 6.0;
/// Ego lateral controller gain (1/s) and lateral speed limit (m/s).
const EGO_LATERAL_GAIN: f64 = 3.0;
pub const EGO_LATERAL_SPEED_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub npc_count: usize,
    /// Policy decisions per episode.
    pub episode_steps: u32,
    pub policy_hz: u32,
    pub sim_hz: u32,
    pub v_min: f64,
    pub v_max: f64,
    pub v_desired: f64,
    /// Target-speed increment applied by FASTER / SLOWER.
    pub delta_v: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub rng_seed: u64,
    pub npc_idm: IdmParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lane_count: 4,
            lane_width: 4.0,
            npc_count: 20,
            episode_steps: 40,
            policy_hz: 1,
            sim_hz: 15,
            v_min: 20.0,
            v_max: 30.0,
            v_desired: 30.0,
            delta_v: 5.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            rng_seed: 0,
            npc_idm: IdmParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("sim.{key}"), reason))
            }
        };
        check(self.lane_count >= 2, "lane_count", "must be at least 2")?;
        check(self.lane_width > 0.0, "lane_width", "must be positive")?;
        check(self.episode_steps > 0, "episode_steps", "must be positive")?;
        check(self.policy_hz > 0, "policy_hz", "must be positive")?;
        check(
            self.sim_hz > 0 && self.sim_hz % self.policy_hz == 0,
            "sim_hz",
            "must be a positive integer multiple of policy_hz",
        )?;
        check(self.v_min >= 0.0, "v_min", "must be non-negative")?;
        check(self.v_min < self.v_desired, "v_desired", "must exceed v_min")?;
        check(self.v_desired <= self.v_max, "v_desired", "must not exceed v_max")?;
        check(self.delta_v > 0.0, "delta_v", "must be positive")?;
        check(self.vehicle_length > 0.0, "vehicle_length", "must be positive")?;
        check(
            self.vehicle_width > 0.0 && self.vehicle_width < self.lane_width,
            "vehicle_width",
            "must be positive and narrower than a lane",
        )?;
        let idm = &self.npc_idm;
        check(
            idm.v0 > 0.0 && idm.a_max > 0.0 && idm.b_comf > 0.0 && idm.min_gap >= 0.0 && idm.time_headway >= 0.0,
            "npc_idm",
            "IDM parameters must be positive",
        )?;
        Ok(())
    }

    pub fn substeps(&self) -> u32 {
        self.sim_hz / self.policy_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_hz as f64
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    pub fn road_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width
    }

    /// Lane whose center is nearest to `y`, clamped to the road.
    pub fn nearest_lane(&self, y: f64) -> usize {
        let l = (y / self.lane_width).round();
        l.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    pub fn is_on_road(&self, y: f64) -> bool {
        let half = self.lane_width / 2.0;
        y >= -half && y <= self.road_width() - half
    }

    /// Target speeds reachable with FASTER / SLOWER from `v_min`.
    pub fn speed_grid(&self) -> Vec<f64> {
        let mut grid = Vec::new();
        let mut v = self.v_min;
        while v < self.v_max - 1e-9 {
            grid.push(v);
            v += self.delta_v;
        }
        grid.push(self.v_max);
        grid
    }

    fn spawn_slot(&self) -> f64 {
        SPAWN_SLOT.max(2.5 * self.vehicle_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: usize,
    pub center_y: f64,
    pub left_neighbor: Option<usize>,
    pub right_neighbor: Option<usize>,
}

/// Straight road, lane 0 leftmost, lateral coordinate growing to the right.
pub fn lane_layout(cfg: &SimConfig) -> Vec<LaneSpec> {
    (0..cfg.lane_count)
        .map(|id| LaneSpec {
            id,
            center_y: cfg.lane_center(id),
            left_neighbor: id.checked_sub(1),
            right_neighbor: (id + 1 < cfg.lane_count).then_some(id + 1),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lane_index: usize,
    pub target_speed: f64,
    pub target_lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    Collision,
    OffRoad,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collision: bool,
    pub lane_changed: bool,
    pub on_road: bool,
    pub ego_speed: f64,
    /// Time to collision with the leader in the ego lane; infinite when
    /// there is no leader or the gap is not closing.
    #[serde(with = "infinite_as_null")]
    pub ttc_front: f64,
    pub action_taken: EgoAction,
    pub env_reward: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvRewardParams {
    pub speed_coeff: f64,
    pub collision_coeff: f64,
}

impl Default for EnvRewardParams {
    fn default() -> Self {
        Self {
            speed_coeff: 0.4,
            collision_coeff: 1.0,
        }
    }
}

impl EnvRewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_coeff >= 0.0) {
            return Err(Error::config("env_reward.speed_coeff", "must be non-negative"));
        }
        if !(self.collision_coeff >= 0.0) {
            return Err(Error::config("env_reward.collision_coeff", "must be non-negative"));
        }
        Ok(())
    }
}

/// Speed term minus collision penalty; the normalized speed is clamped to [0, 1].
pub fn env_reward(info: &StepInfo, cfg: &SimConfig, p: &EnvRewardParams) -> f64 {
    let speed = ((info.ego_speed - cfg.v_min) / (cfg.v_max - cfg.v_min)).clamp(0.0, 1.0);
    let crash = if info.collision { 1.0 } else { 0.0 };
    p.speed_coeff * speed - p.collision_coeff * crash
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub config: SimConfig,
    pub lanes: Vec<LaneSpec>,
    pub ego: VehicleState,
    pub npcs: Vec<VehicleState>,
    pub step_index: u32,
    pub terminal: Option<TerminalCause>,
}

/// Build the initial scene for an episode. Identical `(config, seed)` pairs
/// give identical states.
pub fn reset(config: &SimConfig, seed: u64) -> Result<SceneState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ego_lane = if config.lane_count >= 3 {
        rng.gen_range(1..config.lane_count - 1)
    } else {
        rng.gen_range(0..config.lane_count)
    };
    let start_speeds: Vec<f64> = config
        .speed_grid()
        .into_iter()
        .filter(|v| *v <= config.v_desired + 1e-9)
        .collect();
    let ego_speed = start_speeds[rng.gen_range(0..start_speeds.len())];
    let ego = VehicleState {
        id: 0,
        x: 0.0,
        y: config.lane_center(ego_lane),
        vx: ego_speed,
        vy: 0.0,
        lane_index: ego_lane,
        target_speed: ego_speed,
        target_lane: ego_lane,
    };

    let slot = config.spawn_slot();
    let per_lane = ((SPAWN_BEHIND + SPAWN_AHEAD) / slot).floor() as usize;
    let slots: Vec<(usize, f64)> = (0..config.lane_count)
        .flat_map(|lane| (0..per_lane).map(move |k| (lane, -SPAWN_BEHIND + (k as f64 + 0.5) * slot)))
        .filter(|&(lane, x)| lane != ego_lane || x.abs() >= slot)
        .collect();
    if config.npc_count > slots.len() {
        return Err(Error::SpawnCapacity {
            requested: config.npc_count,
            capacity: slots.len(),
        });
    }

    let mut chosen = sample(&mut rng, slots.len(), config.npc_count).into_vec();
    chosen.sort_unstable();
    let jitter = 0.25 * (slot - 2.0 * config.vehicle_length);
    let v0 = config.npc_idm.v0;
    let npcs = chosen
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let (lane, x) = slots[s];
            let speed = rng.gen_range((v0 - 5.0).max(0.0)..=v0);
            VehicleState {
                id: i as u32 + 1,
                x: x + rng.gen_range(-jitter..=jitter),
                y: config.lane_center(lane),
                vx: speed,
                vy: 0.0,
                lane_index: lane,
                target_speed: v0,
                target_lane: lane,
            }
        })
        .collect();

    Ok(SceneState {
        config: *config,
        lanes: lane_layout(config),
        ego,
        npcs,
        step_index: 0,
        terminal: None,
    })
}

impl SceneState {
    /// Scene assembled from explicit vehicles, for case studies and tests.
    /// Lane indices are derived from lateral positions.
    pub fn from_parts(config: SimConfig, mut ego: VehicleState, mut npcs: Vec<VehicleState>) -> Self {
        ego.lane_index = config.nearest_lane(ego.y);
        for v in &mut npcs {
            v.lane_index = config.nearest_lane(v.y);
        }
        let lanes = lane_layout(&config);
        Self {
            config,
            lanes,
            ego,
            npcs,
            step_index: 0,
            terminal: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }

    /// Nearest NPC ahead of longitudinal position `x` in `lane`.
    pub fn leader_in_lane(&self, lane: usize, x: f64) -> Option<&VehicleState> {
        self.npcs
            .iter()
            .filter(|v| v.lane_index == lane && v.x > x)
            .min_by(|a, b| a.x.total_cmp(&b.x))
    }

    /// Nearest NPC behind (or level with) `x` in `lane`.
    pub fn follower_in_lane(&self, lane: usize, x: f64) -> Option<&VehicleState> {
        self.npcs
            .iter()
            .filter(|v| v.lane_index == lane && v.x <= x)
            .max_by(|a, b| a.x.total_cmp(&b.x))
    }

    /// Bumper-to-bumper gap to the ego-lane leader, infinite if none.
    pub fn front_gap(&self) -> f64 {
        self.leader_in_lane(self.ego.lane_index, self.ego.x)
            .map_or(f64::INFINITY, |l| l.x - self.ego.x - self.config.vehicle_length)
    }

    pub fn ttc_front(&self) -> f64 {
        match self.leader_in_lane(self.ego.lane_index, self.ego.x) {
            None => f64::INFINITY,
            Some(lead) => {
                let closing = self.ego.vx - lead.vx;
                if closing <= 0.0 {
                    f64::INFINITY
                } else {
                    let gap = (lead.x - self.ego.x - self.config.vehicle_length).max(1e-3);
                    gap / closing
                }
            }
        }
    }

    /// Apply one meta-action and run the physics substeps for one policy period.
    pub fn step(&self, action: EgoAction, reward: &EnvRewardParams) -> Result<(SceneState, StepInfo)> {
        if let Some(cause) = self.terminal {
            return Err(Error::TerminalState(cause));
        }
        let cfg = self.config;
        let mut next = self.clone();
        let ego = &mut next.ego;
        let mut lane_changed = false;
        match action {
            EgoAction::Faster => ego.target_speed = (ego.target_speed + cfg.delta_v).min(cfg.v_max),
            EgoAction::Slower => ego.target_speed = (ego.target_speed - cfg.delta_v).max(cfg.v_min),
            EgoAction::LaneLeft => {
                if let Some(l) = self.lanes[ego.target_lane].left_neighbor {
                    ego.target_lane = l;
                    lane_changed = true;
                }
            }
            EgoAction::LaneRight => {
                if let Some(l) = self.lanes[ego.target_lane].right_neighbor {
                    ego.target_lane = l;
                    lane_changed = true;
                }
            }
            EgoAction::Idle => {}
        }

        let mut collision = false;
        let mut on_road = true;
        for _ in 0..cfg.substeps() {
            next.substep(true);
            if next.collision_check() {
                collision = true;
                break;
            }
            if !cfg.is_on_road(next.ego.y) {
                on_road = false;
                break;
            }
        }
        next.step_index += 1;
        next.terminal = if collision {
            Some(TerminalCause::Collision)
        } else if !on_road {
            Some(TerminalCause::OffRoad)
        } else if next.step_index >= cfg.episode_steps {
            Some(TerminalCause::TimeLimit)
        } else {
            None
        };

        let mut info = StepInfo {
            collision,
            lane_changed,
            on_road,
            ego_speed: next.ego.vx,
            ttc_front: next.ttc_front(),
            action_taken: action,
            env_reward: 0.0,
        };
        info.env_reward = env_reward(&info, &cfg, reward);
        Ok((next, info))
    }

    /// Advance NPC traffic only, ignoring the ego vehicle entirely.
    pub fn advance_traffic(&mut self, policy_steps: u32) {
        for _ in 0..policy_steps * self.config.substeps() {
            self.substep(false);
        }
    }

    fn substep(&mut self, with_ego: bool) {
        let cfg = self.config;
        let dt = cfg.dt();
        let accels: Vec<f64> = self
            .npcs
            .iter()
            .map(|v| {
                let mut lead: Option<(f64, f64)> = self
                    .leader_in_lane(v.lane_index, v.x)
                    .map(|l| (l.x, l.vx));
                if with_ego && self.ego.lane_index == v.lane_index && self.ego.x > v.x {
                    if lead.map_or(true, |(lx, _)| self.ego.x < lx) {
                        lead = Some((self.ego.x, self.ego.vx));
                    }
                }
                match lead {
                    Some((lx, lv)) => idm_acceleration(v.vx, lx - v.x - cfg.vehicle_length, lv, &cfg.npc_idm),
                    None => idm_acceleration(v.vx, f64::INFINITY, 0.0, &cfg.npc_idm),
                }
            })
            .collect();
        for (v, a) in self.npcs.iter_mut().zip(accels) {
            v.vx = (v.vx + a * dt).max(0.0);
            v.x += v.vx * dt;
        }

        if with_ego {
            let ego = &mut self.ego;
            let ax = (EGO_SPEED_GAIN * (ego.target_speed - ego.vx)).clamp(-EGO_ACCEL_LIMIT, EGO_ACCEL_LIMIT);
            ego.vx = (ego.vx + ax * dt).max(0.0);
            ego.x += ego.vx * dt;
            let target_y = cfg.lane_center(ego.target_lane);
            ego.vy = (EGO_LATERAL_GAIN * (target_y - ego.y))
                .clamp(-EGO_LATERAL_SPEED_LIMIT, EGO_LATERAL_SPEED_LIMIT);
            ego.y += ego.vy * dt;
            ego.lane_index = cfg.nearest_lane(ego.y);
        }
    }

    /// True iff the ego rectangle overlaps any NPC rectangle.
    pub fn collision_check(&self) -> bool {
        self.npcs.iter().any(|v| rects_overlap(&self.config, &self.ego, v))
    }

    /// True iff any two NPC rectangles overlap.
    pub fn npc_overlap(&self) -> bool {
        self.npcs
            .iter()
            .enumerate()
            .any(|(i, a)| self.npcs[i + 1..].iter().any(|b| rects_overlap(&self.config, a, b)))
    }
}

/// Axis-aligned `vehicle_length x vehicle_width` rectangles centred on each vehicle.
pub fn rects_overlap(cfg: &SimConfig, a: &VehicleState, b: &VehicleState) -> bool {
    (a.x - b.x).abs() < cfg.vehicle_length && (a.y - b.y).abs() < cfg.vehicle_width
}

pub fn collision_check(state: &SceneState) -> bool {
    state.collision_check()
}
