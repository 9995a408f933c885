use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fingerprint, td_update, AgentConfig, QNetwork, ReplayBuffer, TrainedPolicy, Transition};
use crate::action::ACTION_COUNT;
use crate::error::{Error, Result};
use crate::narrator::available_actions;
use crate::rollout::{episode_seed, ShapedEnv, StepRecord};
use crate::sim::{observe, TerminalCause, OBS_LEN};

/// Gateway queries inspected for the hard-failure abort rule.
pub const FAILURE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// Global environment step at the end of the episode.
    pub step: u64,
    pub episode: u64,
    pub seed: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub steps: u32,
    pub match_rate: f64,
    pub epsilon: f64,
    /// Mean TD loss over the episode's gradient steps.
    pub loss: Option<f64>,
    pub collided: bool,
    pub avg_speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    /// Per environment step: agent action equalled the recommendation.
    pub step_matches: Vec<bool>,
}

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty() && self.step_matches.is_empty()
    }

    /// Mean match over steps `[start, end)`.
    pub fn mean_match(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.step_matches.len());
        if start >= end {
            return f64::NAN;
        }
        self.step_matches[start..end].iter().filter(|m| **m).count() as f64 / (end - start) as f64
    }

    /// Trailing moving average of the per-step match, one point per step
    /// (1-based step index).
    pub fn match_moving_average(&self, window: usize) -> Vec<(u64, f64)> {
        let window = window.max(1);
        let mut sum = 0usize;
        let mut out = Vec::with_capacity(self.step_matches.len());
        for (i, &m) in self.step_matches.iter().enumerate() {
            sum += m as usize;
            if i >= window {
                sum -= self.step_matches[i - window] as usize;
            }
            let n = (i + 1).min(window);
            out.push((i as u64 + 1, sum as f64 / n as f64));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["step", "episode", "seed", "return", "steps", "match_rate", "epsilon", "loss", "collided", "avg_speed"])?;
        for e in &self.episodes {
            csv.write_record([
                e.step.to_string(),
                e.episode.to_string(),
                e.seed.to_string(),
                e.episode_return.to_string(),
                e.steps.to_string(),
                e.match_rate.to_string(),
                e.epsilon.to_string(),
                e.loss.map(|l| l.to_string()).unwrap_or_default(),
                (e.collided as u8).to_string(),
                e.avg_speed.to_string(),
            ])?;
        }
        csv.flush().map_err(|e| Error::Io {
            path: "<training log>".into(),
            source: e,
        })
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<EpisodeLog>> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize() {
            let row: EpisodeLogRow = rec?;
            rows.push(EpisodeLog {
                step: row.step,
                episode: row.episode,
                seed: row.seed,
                episode_return: row.r#return,
                steps: row.steps,
                match_rate: row.match_rate,
                epsilon: row.epsilon,
                loss: row.loss,
                collided: row.collided != 0,
                avg_speed: row.avg_speed,
            });
        }
        Ok(rows)
    }
}

#[derive(Deserialize)]
struct EpisodeLogRow {
    step: u64,
    episode: u64,
    seed: u64,
    r#return: f64,
    steps: u32,
    match_rate: f64,
    epsilon: f64,
    loss: Option<f64>,
    collided: u8,
    avg_speed: f64,
}

pub fn train(env: &ShapedEnv<'_>, cfg: &AgentConfig) -> Result<(TrainedPolicy, TrainingLog)> {
    train_traced(env, cfg, |_, _| {})
}

/// Train and hand every executed step to `on_step` along with its episode
/// index.
pub fn train_traced<F>(env: &ShapedEnv<'_>, cfg: &AgentConfig, mut on_step: F) -> Result<(TrainedPolicy, TrainingLog)>
where
    F: FnMut(u64, &StepRecord),
{
    cfg.validate()?;
    env.sim.validate()?;
    env.weights.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut online = QNetwork::random(OBS_LEN, &cfg.hidden_sizes, ACTION_COUNT, &mut rng);
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut log = TrainingLog::default();
    let mut failures: VecDeque<bool> = VecDeque::with_capacity(FAILURE_WINDOW);
    let fp = fingerprint(&(cfg, env.sim, env.weights, env.style));

    let mut step: u64 = 0;
    let mut grad_steps: u64 = 0;
    let mut episode: u64 = 0;
    while step < cfg.total_train_steps {
        let seed = episode_seed(env.sim.rng_seed, episode);
        let mut state = env.reset(seed)?;
        let mut last = None;
        let (mut ret, mut matched, mut n, mut speed_sum) = (0.0, 0u32, 0u32, 0.0);
        let (mut loss_sum, mut loss_n) = (0.0, 0u32);

        while !state.is_terminal() && step < cfg.total_train_steps {
            let obs = observe(&state);
            let available = available_actions(&state);
            let q = online.forward(&obs);
            let action = super::select_action(&q, cfg.epsilon(step), available, &mut rng);
            let (next, record) = env.step(&state, action, last)?;

            if failures.len() == FAILURE_WINDOW {
                failures.pop_front();
            }
            failures.push_back(record.verdict.is_hard_failure());
            let failed = failures.iter().filter(|f| **f).count();
            if failures.len() == FAILURE_WINDOW && failed * 2 > FAILURE_WINDOW {
                return Err(Error::TrainingAborted(format!(
                    "{failed} of the last {FAILURE_WINDOW} gateway queries failed at step {step}; last error: {}",
                    record.verdict.error.as_deref().unwrap_or("unknown")
                )));
            }

            let reward = record.reward.training_signal(env.weights.train_on);
            let terminal = matches!(next.terminal, Some(TerminalCause::Collision | TerminalCause::OffRoad));
            buffer.push(Transition {
                obs,
                action,
                reward,
                next_obs: observe(&next),
                terminal,
                next_available: available_actions(&next),
            });

            ret += reward;
            matched += record.matched() as u32;
            n += 1;
            speed_sum += record.info.ego_speed;
            log.step_matches.push(record.matched());
            on_step(episode, &record);
            step += 1;

            if step >= cfg.learning_starts && step % cfg.train_every == 0 && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut rng);
                loss_sum += td_update(&batch, &mut online, &target, cfg);
                loss_n += 1;
                grad_steps += 1;
                if grad_steps % cfg.target_sync_every == 0 {
                    target = online.clone();
                }
            }
            last = Some(action);
            state = next;
        }

        if n > 0 {
            log.episodes.push(EpisodeLog {
                step,
                episode,
                seed,
                episode_return: ret,
                steps: n,
                match_rate: matched as f64 / n as f64,
                epsilon: cfg.epsilon(step),
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                collided: state.terminal == Some(TerminalCause::Collision),
                avg_speed: speed_sum / n as f64,
            });
        }
        episode += 1;
    }
    if !online.is_finite() {
        return Err(Error::TrainingAborted("network weights diverged to non-finite values".into()));
    }
    Ok((TrainedPolicy::new(online, fp, step), log))
}
