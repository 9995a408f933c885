//! Evaluation scores, behavior statistics, greedy evaluation rollouts and the
//! reward ablation.

mod ablation;
mod reference;

pub use ablation::{run_ablation, run_ablation_with, write_ablation_csv, AblationConfig, AblationRow, AblationRun, AblationSetup, Component};
pub use reference::{reference_results, ReferenceAblationRow, ReferenceBehaviorRow, ReferenceResults};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::agent::TrainedPolicy;
use crate::error::{Error, Result};
use crate::narrator::available_actions;
use crate::rollout::{ShapedEnv, StepRecord};
use crate::sim::{observe, SimConfig, StepInfo, TerminalCause};

/// Evaluation seeds used when none are configured.
pub const DEFAULT_EVAL_SEEDS: [u64; 5] = [1000, 1001, 1002, 1003, 1004];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub terminal: Option<TerminalCause>,
}

/// -1 when the episode contains a collision step, else 0.
pub fn collision_score(ep: &EpisodeRecord) -> f64 {
    if ep.steps.iter().any(|s| s.info.collision) {
        -1.0
    } else {
        0.0
    }
}

/// Number of executed lane changes.
pub fn lane_change_score(ep: &EpisodeRecord) -> f64 {
    ep.steps.iter().filter(|s| s.info.lane_changed).count() as f64
}

pub fn high_speed_score(step: &StepInfo, cfg: &SimConfig) -> f64 {
    ((step.ego_speed - cfg.v_min) / (cfg.v_desired - cfg.v_min)).clamp(0.0, 1.0)
}

pub fn on_road_score(step: &StepInfo) -> f64 {
    if step.on_road {
        1.0
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-episode scores and rates, one row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub steps: usize,
    pub terminal: String,
    pub collision_score: f64,
    pub lane_change_score: f64,
    pub high_speed_score: f64,
    pub on_road_score: f64,
    pub mean_score: f64,
    pub lane_change_pct: f64,
    pub speed_up_pct: f64,
    pub match_rate: f64,
    pub avg_speed: f64,
}

fn terminal_label(t: Option<TerminalCause>) -> String {
    match t {
        Some(TerminalCause::Collision) => "collision",
        Some(TerminalCause::OffRoad) => "off_road",
        Some(TerminalCause::TimeLimit) => "time_limit",
        None => "none",
    }
    .to_string()
}

pub fn summarize_episode(ep: &EpisodeRecord, cfg: &SimConfig) -> EpisodeSummary {
    let n = ep.steps.len().max(1) as f64;
    let count = |f: &dyn Fn(&StepRecord) -> bool| ep.steps.iter().filter(|s| f(s)).count() as f64;
    EpisodeSummary {
        seed: ep.seed,
        steps: ep.steps.len(),
        terminal: terminal_label(ep.terminal),
        collision_score: collision_score(ep),
        lane_change_score: lane_change_score(ep),
        high_speed_score: mean(ep.steps.iter().map(|s| high_speed_score(&s.info, cfg))),
        on_road_score: mean(ep.steps.iter().map(|s| on_road_score(&s.info))),
        mean_score: mean(ep.steps.iter().map(|s| s.reward.combined)),
        lane_change_pct: count(&|s| s.info.lane_changed) / n,
        speed_up_pct: count(&|s| s.action == EgoAction::Faster) / n,
        match_rate: count(&|s| s.matched()) / n,
        avg_speed: mean(ep.steps.iter().map(|s| s.info.ego_speed)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    /// Mean per-step combined reward over all steps of all episodes.
    pub mean_score: f64,
    /// Mean over episodes of each episode's mean per-step combined reward.
    pub episode_mean_score: f64,
    /// Executed lane changes / actions taken.
    pub lane_change_pct: f64,
    /// FASTER actions / actions taken.
    pub speed_up_pct: f64,
    /// Fraction of episodes ending in a collision.
    pub collision_rate: f64,
    pub avg_speed: f64,
    pub match_rate: f64,
    pub episodes: usize,
    pub steps: usize,
}

pub fn behavior_analysis(episodes: &[EpisodeRecord]) -> BehaviorStats {
    let steps: Vec<&StepRecord> = episodes.iter().flat_map(|e| &e.steps).collect();
    let n = steps.len().max(1) as f64;
    let count = |f: &dyn Fn(&StepRecord) -> bool| steps.iter().filter(|s| f(s)).count() as f64;
    BehaviorStats {
        mean_score: mean(steps.iter().map(|s| s.reward.combined)),
        episode_mean_score: mean(
            episodes
                .iter()
                .filter(|e| !e.steps.is_empty())
                .map(|e| mean(e.steps.iter().map(|s| s.reward.combined))),
        ),
        lane_change_pct: count(&|s| s.info.lane_changed) / n,
        speed_up_pct: count(&|s| s.action == EgoAction::Faster) / n,
        collision_rate: mean(episodes.iter().map(|e| collision_score(e).abs())),
        avg_speed: mean(steps.iter().map(|s| s.info.ego_speed)),
        match_rate: count(&|s| s.matched()) / n,
        episodes: episodes.len(),
        steps: steps.len(),
    }
}

/// One greedy episode.
pub fn rollout_episode(env: &ShapedEnv<'_>, policy: &TrainedPolicy, seed: u64) -> Result<EpisodeRecord> {
    let mut state = env.reset(seed)?;
    let mut steps = Vec::with_capacity(env.sim.episode_steps as usize);
    let mut last = None;
    while !state.is_terminal() {
        let action = policy.act(&observe(&state), available_actions(&state));
        let (next, record) = env.step(&state, action, last)?;
        steps.push(record);
        last = Some(action);
        state = next;
    }
    Ok(EpisodeRecord {
        seed,
        steps,
        terminal: state.terminal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub stats: BehaviorStats,
    pub episodes: Vec<EpisodeSummary>,
    pub records: Vec<EpisodeRecord>,
}

/// Greedy rollouts, one per seed, run on parallel workers. Results are in
/// seed order regardless of scheduling.
pub fn run_evaluation(env: &ShapedEnv<'_>, policy: &TrainedPolicy, seeds: &[u64]) -> Result<Evaluation> {
    if seeds.is_empty() {
        return Err(Error::Evaluation("at least one evaluation round is required".into()));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    let records: Vec<Result<EpisodeRecord>> = if workers <= 1 {
        seeds.iter().map(|&s| rollout_episode(env, policy, s)).collect()
    } else {
        let chunk = seeds.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|&s| rollout_episode(env, policy, s)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        stats: behavior_analysis(&records),
        episodes: records.iter().map(|r| summarize_episode(r, env.sim)).collect(),
        records,
    })
}

fn flush<W: Write>(mut csv: csv::Writer<W>) -> Result<()> {
    csv.flush().map_err(|e| Error::Io {
        path: "<csv output>".into(),
        source: e,
    })
}

/// Behavior table: one row per episode, an aggregate row, then the
/// reference rows flagged `source=paper`.
pub fn write_behavior_csv<W: Write>(w: W, label: &str, eval: &Evaluation) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "source",
        "label",
        "row",
        "seed",
        "steps",
        "mean_score",
        "episode_mean_score",
        "lane_change_pct",
        "speed_up_pct",
        "lane_change_score",
        "collision_score",
        "high_speed_score",
        "on_road_score",
        "collision_rate",
        "avg_speed",
        "match_rate",
    ])?;
    for e in &eval.episodes {
        csv.write_record([
            "computed".to_string(),
            label.to_string(),
            "episode".to_string(),
            e.seed.to_string(),
            e.steps.to_string(),
            e.mean_score.to_string(),
            e.mean_score.to_string(),
            e.lane_change_pct.to_string(),
            e.speed_up_pct.to_string(),
            e.lane_change_score.to_string(),
            e.collision_score.to_string(),
            e.high_speed_score.to_string(),
            e.on_road_score.to_string(),
            e.collision_score.abs().to_string(),
            e.avg_speed.to_string(),
            e.match_rate.to_string(),
        ])?;
    }
    let s = &eval.stats;
    let k = eval.episodes.len().max(1) as f64;
    let avg = |f: fn(&EpisodeSummary) -> f64| eval.episodes.iter().map(f).sum::<f64>() / k;
    csv.write_record([
        "computed".to_string(),
        label.to_string(),
        "aggregate".to_string(),
        String::new(),
        s.steps.to_string(),
        s.mean_score.to_string(),
        s.episode_mean_score.to_string(),
        s.lane_change_pct.to_string(),
        s.speed_up_pct.to_string(),
        avg(|e| e.lane_change_score).to_string(),
        avg(|e| e.collision_score).to_string(),
        avg(|e| e.high_speed_score).to_string(),
        avg(|e| e.on_road_score).to_string(),
        s.collision_rate.to_string(),
        s.avg_speed.to_string(),
        s.match_rate.to_string(),
    ])?;
    for r in &reference_results().behavior {
        let mut row = vec![String::new(); 16];
        row[0] = "paper".into();
        row[1] = r.label.clone();
        row[2] = "reference".into();
        row[5] = r.mean_score.to_string();
        row[7] = r.lane_change_pct.to_string();
        row[8] = r.speed_up_pct.to_string();
        csv.write_record(&row)?;
    }
    flush(csv)
}

/// Long-format match-rate series: per-step moving average and per-episode
/// mean, distinguished by the `series` column.
pub fn write_match_series_csv<W: Write>(w: W, style: &str, log: &crate::agent::TrainingLog, window: usize) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["style", "series", "step", "match_rate"])?;
    for (step, rate) in log.match_moving_average(window) {
        csv.write_record([style, "step_moving_average", &step.to_string(), &rate.to_string()])?;
    }
    for e in &log.episodes {
        csv.write_record([style, "episode_mean", &e.step.to_string(), &e.match_rate.to_string()])?;
    }
    flush(csv)
}
