//! Deep Q-learning agent: network, replay, exploration and the training loop.

mod explore;
mod network;
mod replay;
mod train;

pub use explore::{epsilon_at, greedy_action, select_action};
pub use network::{Dense, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use train::{train, train_traced, EpisodeLog, TrainingLog, FAILURE_WINDOW};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{ActionSet, EgoAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::sim::{Observation, OBS_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub discount: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Counted in gradient steps.
    pub target_sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub total_train_steps: u64,
    /// Environment steps between gradient steps.
    pub train_every: u64,
    /// Environment steps collected before the first gradient step.
    pub learning_starts: u64,
    pub rng_seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 128],
            learning_rate: 5e-4,
            discount: 0.9,
            buffer_capacity: 15_000,
            batch_size: 64,
            target_sync_every: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 5_000,
            total_train_steps: 20_000,
            train_every: 1,
            learning_starts: 200,
            rng_seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::config("agent.hidden_sizes", "needs at least one layer, all sizes positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("agent.learning_rate", "must be positive"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("agent.discount", format!("must lie in (0, 1), got {}", self.discount)));
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return Err(Error::config(
                "agent.epsilon_start/epsilon_end",
                format!("need 0 <= epsilon_end <= epsilon_start <= 1, got {} and {}", self.epsilon_end, self.epsilon_start),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("agent.batch_size", "must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("agent.buffer_capacity", "must be at least batch_size"));
        }
        if self.target_sync_every == 0 {
            return Err(Error::config("agent.target_sync_every", "must be positive"));
        }
        if self.train_every == 0 {
            return Err(Error::config("agent.train_every", "must be positive"));
        }
        Ok(())
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        epsilon_at(step, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)
    }
}

/// Bellman targets: `r` for terminal transitions, otherwise
/// `r + discount * max_{a in next_available} Q_target(next_obs)[a]`.
pub fn td_targets(batch: &[&Transition], target: &QNetwork, discount: f64) -> Vec<f64> {
    let next: Vec<f64> = batch.iter().flat_map(|t| t.next_obs).collect();
    let q_next = target.forward_batch(&next, batch.len());
    batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.terminal {
                return t.reward;
            }
            let q = &q_next[b * ACTION_COUNT..(b + 1) * ACTION_COUNT];
            let best = t.next_available.iter().map(|a| q[a.index()]).fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                t.reward + discount * best
            } else {
                t.reward
            }
        })
        .collect()
}

/// One SGD step on the mean squared TD error; returns the pre-update loss.
pub fn td_update(batch: &[&Transition], online: &mut QNetwork, target: &QNetwork, cfg: &AgentConfig) -> f64 {
    let targets = td_targets(batch, target, cfg.discount);
    let inputs: Vec<f64> = batch.iter().flat_map(|t| t.obs).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    let (loss, grad) = online.td_loss_and_grad(&inputs, &actions, &targets);
    online.sgd_step(&grad, cfg.learning_rate);
    loss
}

pub const CHECKPOINT_FORMAT: &str = "llmrl-qnet-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub format: String,
    /// SHA-256 over the configuration the policy was trained under.
    pub fingerprint: String,
    pub train_steps: u64,
    pub network: QNetwork,
}

impl TrainedPolicy {
    pub fn new(network: QNetwork, fingerprint: String, train_steps: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            fingerprint,
            train_steps,
            network,
        }
    }

    /// Untrained network with the configured architecture.
    pub fn random(cfg: &AgentConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::random(OBS_LEN, &cfg.hidden_sizes, ACTION_COUNT, &mut rng);
        Self::new(net, String::new(), 0)
    }

    pub fn q_values(&self, obs: &Observation) -> Vec<f64> {
        self.network.forward(obs)
    }

    pub fn act(&self, obs: &Observation, available: ActionSet) -> EgoAction {
        greedy_action(&self.q_values(obs), available)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let policy: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if policy.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported format `{}`", policy.format)));
        }
        let layers = &policy.network.layers;
        if layers.is_empty()
            || policy.network.input_size() != OBS_LEN
            || policy.network.output_size() != ACTION_COUNT
            || layers.windows(2).any(|w| w[0].outputs != w[1].inputs)
            || layers.iter().any(|l| l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs)
        {
            return Err(bad("layer shapes are inconsistent".into()));
        }
        if !policy.network.is_finite() {
            return Err(bad("non-finite weights".into()));
        }
        Ok(policy)
    }
}

/// Hex SHA-256 of any serializable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests;
