use super::{SceneState, VehicleState};

/// Ego row plus the four nearest NPCs.
pub const OBS_ROWS: usize = 5;
/// `[presence, x, y, vx, vy]` per row.
pub const OBS_FEATURES: usize = 5;
pub const OBS_LEN: usize = OBS_ROWS * OBS_FEATURES;

pub type Observation = [f64; OBS_LEN];

const X_SCALE: f64 = 100.0;
const FEATURE_BOUND: f64 = 2.0;

/// Flattened kinematics matrix. The ego row carries its own lateral position
/// and velocity; NPC rows are relative to the ego, nearest first. Absent rows
/// stay zero.
pub fn observe(state: &SceneState) -> Observation {
    let cfg = &state.config;
    let ego = &state.ego;
    let y_scale = cfg.road_width();
    let clip = |v: f64| v.clamp(-FEATURE_BOUND, FEATURE_BOUND);

    let mut obs = [0.0; OBS_LEN];
    obs[..OBS_FEATURES].copy_from_slice(&[
        1.0,
        0.0,
        clip(ego.y / y_scale),
        clip(ego.vx / cfg.v_max),
        clip(ego.vy / cfg.v_max),
    ]);

    let rel = |v: &VehicleState| [v.x - ego.x, v.y - ego.y, v.vx - ego.vx, v.vy - ego.vy];
    let mut nearby: Vec<[f64; 4]> = state.npcs.iter().map(rel).collect();
    // Total order on content so memory order of `npcs` never matters.
    nearby.sort_by(|a, b| {
        let da = a[0] * a[0] + a[1] * a[1];
        let db = b[0] * b[0] + b[1] * b[1];
        da.total_cmp(&db)
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
            .then(a[3].total_cmp(&b[3]))
    });

    for (row, r) in nearby.iter().take(OBS_ROWS - 1).enumerate() {
        let o = (row + 1) * OBS_FEATURES;
        obs[o..o + OBS_FEATURES].copy_from_slice(&[
            1.0,
            clip(r[0] / X_SCALE),
            clip(r[1] / y_scale),
            clip(r[2] / cfg.v_max),
            clip(r[3] / cfg.v_max),
        ]);
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, SimConfig};

    #[test]
    fn ego_only_rows_are_zero() {
        let cfg = SimConfig { npc_count: 0, ..Default::default() };
        let obs = observe(&reset(&cfg, 4).unwrap());
        assert_eq!(obs[0], 1.0);
        assert!(obs[OBS_FEATURES..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn npc_order_in_memory_is_irrelevant() {
        let cfg = SimConfig { npc_count: 30, ..Default::default() };
        let s = reset(&cfg, 11).unwrap();
        let mut shuffled = s.clone();
        shuffled.npcs.reverse();
        shuffled.npcs.rotate_left(7);
        assert_eq!(observe(&s), observe(&shuffled));
    }

    #[test]
    fn nearest_vehicle_comes_first() {
        let cfg = SimConfig { npc_count: 30, ..Default::default() };
        let s = reset(&cfg, 2).unwrap();
        let obs = observe(&s);
        let d = |r: usize| {
            let o = r * OBS_FEATURES;
            (obs[o + 1] * 100.0).powi(2) + (obs[o + 2] * cfg.road_width()).powi(2)
        };
        assert!(d(1) <= d(2) && d(2) <= d(3) && d(3) <= d(4));
    }
}
