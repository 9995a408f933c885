use rand::Rng;

use crate::action::{ActionSet, EgoAction, ACTION_COUNT};

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
pub fn epsilon_at(step: u64, start: f64, end: f64, decay_steps: u64) -> f64 {
    if step >= decay_steps {
        return end;
    }
    start + (end - start) * (step as f64 / decay_steps as f64)
}

/// Highest Q among `available`, ties to the lowest action index.
pub fn greedy_action(q: &[f64], available: ActionSet) -> EgoAction {
    let mut best: Option<(EgoAction, f64)> = None;
    for a in available.iter() {
        let v = q[a.index()];
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((a, v));
        }
    }
    best.map_or(EgoAction::Idle, |(a, _)| a)
}

/// Epsilon-greedy over the available actions only.
pub fn select_action<R: Rng>(q: &[f64], epsilon: f64, available: ActionSet, rng: &mut R) -> EgoAction {
    debug_assert_eq!(q.len(), ACTION_COUNT);
    if available.is_empty() {
        return EgoAction::Idle;
    }
    if rng.gen::<f64>() < epsilon {
        let k = rng.gen_range(0..available.len());
        available.iter().nth(k).expect("k < len")
    } else {
        greedy_action(q, available)
    }
}
