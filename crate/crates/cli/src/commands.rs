//! Subcommand implementations. Each returns the artifacts it wrote.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use llmrl_core::agent::{train_traced, TrainedPolicy, TrainingLog};
use llmrl_core::gateway::Gateway;
use llmrl_core::metrics::{
    run_ablation_with, run_evaluation, write_ablation_csv, write_behavior_csv, write_match_series_csv, AblationConfig, AblationRun,
    AblationSetup, Component,
};
use llmrl_core::narrator::{DrivingStyle, StyleName};
use llmrl_core::rollout::{ShapedEnv, StepRecord};

use crate::config::RunConfig;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Everything needed to repeat a command: the resolved configuration, the
/// overrides that produced it and the code version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, overrides: &[String]) -> Self {
        Self {
            command: command.to_string(),
            code_version: CODE_VERSION.to_string(),
            seed: cfg.agent.rng_seed,
            overrides: overrides.to_vec(),
            config: cfg.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// Write the manifest and the resolved configuration into the run directory.
fn write_manifest(cfg: &RunConfig, overrides: &[String], command: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let dir = &cfg.run.out_dir;
    create_dir(dir)?;
    let (manifest_name, config_name) = if command == "train" {
        ("manifest.json".to_string(), "config.toml".to_string())
    } else {
        (format!("manifest-{command}.json"), format!("config-{command}.toml"))
    };
    let manifest_path = dir.join(manifest_name);
    let json = serde_json::to_string_pretty(&Manifest::new(command, cfg, overrides))?;
    fs::write(&manifest_path, json + "\n").with_context(|| format!("cannot write {}", manifest_path.display()))?;
    written.push(manifest_path);
    let config_path = dir.join(config_name);
    fs::write(&config_path, cfg.to_toml()).with_context(|| format!("cannot write {}", config_path.display()))?;
    written.push(config_path);
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    episode: u64,
    #[serde(flatten)]
    record: &'a StepRecord,
}

fn style_dir(cfg: &RunConfig, style: StyleName) -> PathBuf {
    cfg.run.out_dir.join(style.as_str())
}

/// Train one agent per configured style.
pub fn cmd_train(cfg: &RunConfig, overrides: &[String], log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let gateway = Gateway::new(cfg.gateway.clone())?;
    let narrator = cfg.narrator()?;
    let mut written = Vec::new();
    write_manifest(cfg, overrides, "train", &mut written)?;

    for &name in &cfg.run.styles {
        let style = DrivingStyle::new(name);
        let dir = style_dir(cfg, name);
        create_dir(&dir)?;
        let env = ShapedEnv {
            sim: &cfg.sim,
            env_reward: &cfg.env_reward,
            weights: &cfg.reward,
            narrator: &narrator,
            gateway: &gateway,
            style: &style,
        };

        let trace_path = dir.join("trace.jsonl");
        let mut trace = create(&trace_path)?;
        let mut trace_err = None;
        let (policy, training) = train_traced(&env, &cfg.agent, |episode, record| {
            if trace_err.is_none() {
                let line = serde_json::to_string(&TraceLine { episode, record }).expect("trace serializes");
                if let Err(e) = writeln!(trace, "{line}") {
                    trace_err = Some(e);
                }
            }
        })?;
        if let Some(e) = trace_err {
            return Err(anyhow!(e).context(format!("cannot write {}", trace_path.display())));
        }
        finish(trace, &trace_path)?;
        written.push(trace_path);

        let policy_path = dir.join("policy.json");
        policy.save(&policy_path)?;
        written.push(policy_path);

        let log_path = dir.join("training_log.csv");
        let mut w = create(&log_path)?;
        training.write_csv(&mut w)?;
        finish(w, &log_path)?;
        written.push(log_path);

        let match_path = dir.join("match_rate.csv");
        let mut w = create(&match_path)?;
        write_match_series_csv(&mut w, name.as_str(), &training, cfg.run.match_window)?;
        finish(w, &match_path)?;
        written.push(match_path);

        let n = training.step_matches.len();
        writeln!(
            log,
            "trained {} for {} steps over {} episodes; match rate first quarter {:.3}, last quarter {:.3}",
            name.as_str(),
            n,
            training.episodes.len(),
            training.mean_match(0, n / 4),
            training.mean_match(n - n / 4, n),
        )?;
    }
    Ok(written)
}

/// Evaluate a checkpoint per configured style. Without `checkpoint` each
/// style reads its own `<out>/<style>/policy.json`.
pub fn cmd_eval(cfg: &RunConfig, overrides: &[String], checkpoint: Option<&Path>, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let gateway = Gateway::new(cfg.gateway.clone())?;
    let narrator = cfg.narrator()?;
    let mut policies = Vec::new();
    for &name in &cfg.run.styles {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| style_dir(cfg, name).join("policy.json"));
        policies.push((name, TrainedPolicy::load(&path)?));
    }
    let mut written = Vec::new();
    write_manifest(cfg, overrides, "eval", &mut written)?;

    for (name, policy) in policies {
        let style = DrivingStyle::new(name);
        let dir = style_dir(cfg, name);
        create_dir(&dir)?;
        let env = ShapedEnv {
            sim: &cfg.sim,
            env_reward: &cfg.env_reward,
            weights: &cfg.reward,
            narrator: &narrator,
            gateway: &gateway,
            style: &style,
        };
        let eval = run_evaluation(&env, &policy, &cfg.run.eval_seeds)?;

        let csv_path = dir.join("behavior.csv");
        let mut w = create(&csv_path)?;
        write_behavior_csv(&mut w, name.as_str(), &eval)?;
        finish(w, &csv_path)?;
        written.push(csv_path);

        let trace_path = dir.join("eval_trace.jsonl");
        let mut w = create(&trace_path)?;
        for (i, ep) in eval.records.iter().enumerate() {
            for record in &ep.steps {
                writeln!(w, "{}", serde_json::to_string(&TraceLine { episode: i as u64, record })?)?;
            }
        }
        finish(w, &trace_path)?;
        written.push(trace_path);

        let s = &eval.stats;
        writeln!(
            log,
            "{}: mean score {:.4}, lane change {:.3}, speed up {:.3}, collision rate {:.2}, match {:.3}",
            name.as_str(),
            s.mean_score,
            s.lane_change_pct,
            s.speed_up_pct,
            s.collision_rate,
            s.match_rate
        )?;
    }
    Ok(written)
}

/// Reward ablation across component subsets, repeated per configured style.
pub fn cmd_ablate(cfg: &RunConfig, overrides: &[String], components: &[Component], log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let configs = AblationConfig::subsets_of(components);
    if configs.is_empty() {
        bail!("no reward components selected");
    }
    let gateway = Gateway::new(cfg.gateway.clone())?;
    let narrator = cfg.narrator()?;
    let mut written = Vec::new();
    write_manifest(cfg, overrides, "ablate", &mut written)?;

    let setup = AblationSetup {
        sim: &cfg.sim,
        env_reward: &cfg.env_reward,
        base_weights: &cfg.reward,
        agent: &cfg.agent,
        narrator: &narrator,
        gateway: &gateway,
        eval_seeds: &cfg.run.eval_seeds,
    };
    let mut progress_err = None;
    let (rows, runs) = run_ablation_with(&setup, &configs, &cfg.run.styles, &cfg.run.ablation_seeds, |run: &AblationRun| {
        let s = &run.evaluation.stats;
        if let Err(e) = writeln!(
            log,
            "{} / {} / seed {}: collision rate {:.2}, lane change {:.3}, mean score {:.4}",
            run.config.label(),
            run.style.as_str(),
            run.seed,
            s.collision_rate,
            s.lane_change_pct,
            s.mean_score
        ) {
            progress_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = progress_err {
        return Err(e.into());
    }

    let table = cfg.run.out_dir.join("ablation.csv");
    let mut w = create(&table)?;
    write_ablation_csv(&mut w, &rows)?;
    finish(w, &table)?;
    written.push(table);

    let detail = cfg.run.out_dir.join("ablation_runs.csv");
    let mut csv = csv::Writer::from_writer(create(&detail)?);
    csv.write_record(["config", "style", "seed", "collision_score", "lane_change_score", "high_speed_score", "mean_score"])?;
    for run in &runs {
        let eps = &run.evaluation.episodes;
        let k = eps.len() as f64;
        let avg = |f: fn(&llmrl_core::metrics::EpisodeSummary) -> f64| (eps.iter().map(f).sum::<f64>() / k).to_string();
        csv.write_record([
            run.config.label(),
            run.style.as_str().to_string(),
            run.seed.to_string(),
            avg(|e| e.collision_score),
            avg(|e| e.lane_change_score),
            avg(|e| e.high_speed_score),
            run.evaluation.stats.mean_score.to_string(),
        ])?;
    }
    csv.flush().with_context(|| format!("cannot write {}", detail.display()))?;
    written.push(detail);
    Ok(written)
}

/// Episodes averaged for the collision-probability curve.
pub const COLLISION_WINDOW: usize = 50;

#[derive(Debug, Deserialize)]
struct MatchRow {
    style: String,
    series: String,
    step: u64,
    match_rate: f64,
}

/// Plot-ready long-format CSVs from the per-style logs of a run directory.
pub fn cmd_report(dir: &Path, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let mut logs: BTreeMap<StyleName, (Vec<llmrl_core::agent::EpisodeLog>, Vec<MatchRow>)> = BTreeMap::new();
    for name in StyleName::ALL {
        let sub = dir.join(name.as_str());
        let log_path = sub.join("training_log.csv");
        if !log_path.is_file() {
            continue;
        }
        let episodes = TrainingLog::read_csv(File::open(&log_path).with_context(|| format!("cannot read {}", log_path.display()))?)
            .with_context(|| format!("invalid training log {}", log_path.display()))?;
        let match_path = sub.join("match_rate.csv");
        let mut matches = Vec::new();
        if match_path.is_file() {
            let mut rdr = csv::Reader::from_path(&match_path).with_context(|| format!("cannot read {}", match_path.display()))?;
            for row in rdr.deserialize() {
                matches.push(row.with_context(|| format!("invalid match-rate file {}", match_path.display()))?);
            }
        }
        logs.insert(name, (episodes, matches));
    }
    if logs.is_empty() {
        bail!("no training logs found under {}", dir.display());
    }

    let out = dir.join("report");
    create_dir(&out)?;
    let mut written = Vec::new();

    let mut match_rows: Vec<&MatchRow> = logs.values().flat_map(|(_, m)| m).collect();
    match_rows.sort_by(|a, b| a.step.cmp(&b.step).then(a.style.cmp(&b.style)).then(a.series.cmp(&b.series)));
    let path = out.join("match_rate.csv");
    let mut csv = csv::Writer::from_writer(create(&path)?);
    csv.write_record(["step", "style", "series", "match_rate"])?;
    for r in match_rows {
        csv.write_record([r.step.to_string(), r.style.clone(), r.series.clone(), r.match_rate.to_string()])?;
    }
    csv.flush()?;
    written.push(path);

    let mut collision_rows = Vec::new();
    let mut speed_rows = Vec::new();
    for (name, (episodes, _)) in &logs {
        for (i, e) in episodes.iter().enumerate() {
            let window = &episodes[(i + 1).saturating_sub(COLLISION_WINDOW)..=i];
            let p = window.iter().filter(|w| w.collided).count() as f64 / window.len() as f64;
            collision_rows.push((e.step, name.as_str(), e.episode, p));
            speed_rows.push((e.step, name.as_str(), e.episode, e.avg_speed));
        }
    }
    for (file, column, rows) in [
        ("collision_by_style.csv", "collision_probability", &mut collision_rows),
        ("speed_by_style.csv", "avg_speed", &mut speed_rows),
    ] {
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
        let path = out.join(file);
        let mut csv = csv::Writer::from_writer(create(&path)?);
        csv.write_record(["step", "style", "episode", column])?;
        for (step, style, episode, v) in rows.iter() {
            csv.write_record([step.to_string(), style.to_string(), episode.to_string(), v.to_string()])?;
        }
        csv.flush()?;
        written.push(path);
    }
    writeln!(
        log,
        "report for {} written to {}",
        logs.keys().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
        out.display()
    )?;
    Ok(written)
}

/// Every artifact exists and is non-empty; checkpoints must load.
pub fn verify_artifacts(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        let meta = fs::metadata(p).with_context(|| format!("artifact {} was not written", p.display()))?;
        if meta.len() == 0 {
            bail!("artifact {} is empty", p.display());
        }
        if p.file_name().is_some_and(|n| n == "policy.json") {
            TrainedPolicy::load(p)?;
        }
    }
    Ok(())
}
