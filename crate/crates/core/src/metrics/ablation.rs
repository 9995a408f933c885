use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{reference_results, run_evaluation, Evaluation};
use crate::agent::{train, AgentConfig};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::narrator::{DrivingStyle, Narrator, StyleName};
use crate::reward::RewardWeights;
use crate::rollout::ShapedEnv;
use crate::sim::{EnvRewardParams, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Safety,
    Efficiency,
    Llm,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Safety, Component::Efficiency, Component::Llm];

    pub fn label(self) -> &'static str {
        match self {
            Component::Safety => "Safety",
            Component::Efficiency => "Efficiency",
            Component::Llm => "LLM",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "safety" => Ok(Component::Safety),
            "efficiency" => Ok(Component::Efficiency),
            "llm" => Ok(Component::Llm),
            _ => Err(format!("unknown reward component `{s}` (expected safety, efficiency or llm)")),
        }
    }
}

/// A non-empty subset of reward components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub safety: bool,
    pub efficiency: bool,
    pub llm: bool,
}

impl AblationConfig {
    pub fn new(safety: bool, efficiency: bool, llm: bool) -> Result<Self> {
        if !(safety || efficiency || llm) {
            return Err(Error::config("ablation.components", "at least one component must be enabled"));
        }
        Ok(Self { safety, efficiency, llm })
    }

    pub fn enabled(&self, c: Component) -> bool {
        match c {
            Component::Safety => self.safety,
            Component::Efficiency => self.efficiency,
            Component::Llm => self.llm,
        }
    }

    /// All seven configurations, singles first, full reward last.
    pub fn all() -> Vec<AblationConfig> {
        Self::subsets_of(&Component::ALL)
    }

    /// Non-empty subsets of `components`, in the order of [`AblationConfig::all`].
    pub fn subsets_of(components: &[Component]) -> Vec<AblationConfig> {
        const ORDER: [(bool, bool, bool); 7] = [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ];
        let allowed = |c: Component| components.contains(&c);
        ORDER
            .iter()
            .map(|&(safety, efficiency, llm)| AblationConfig { safety, efficiency, llm })
            .filter(|cfg| Component::ALL.iter().all(|&c| !cfg.enabled(c) || allowed(c)))
            .collect()
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = Component::ALL.iter().filter(|c| self.enabled(**c)).map(|c| c.label()).collect();
        match parts.len() {
            1 => format!("{} Only", parts[0]),
            3 => "All (Full Reward)".to_string(),
            _ => parts.join(" + "),
        }
    }

    /// Disabled weights zeroed, the rest renormalized to sum to 1. If every
    /// surviving base weight is zero they share equally.
    pub fn weights(&self, base: &RewardWeights) -> RewardWeights {
        let raw = [
            if self.safety { base.alpha } else { 0.0 },
            if self.efficiency { base.beta } else { 0.0 },
            if self.llm { base.gamma_w } else { 0.0 },
        ];
        let sum: f64 = raw.iter().sum();
        let [a, b, g] = if sum > 0.0 {
            raw.map(|w| w / sum)
        } else {
            let k = [self.safety, self.efficiency, self.llm].iter().filter(|x| **x).count() as f64;
            [self.safety, self.efficiency, self.llm].map(|on| if on { 1.0 / k } else { 0.0 })
        };
        RewardWeights {
            alpha: a,
            beta: b,
            gamma_w: g,
            ..*base
        }
    }
}

/// Shared inputs of an ablation sweep.
#[derive(Debug, Clone, Copy)]
pub struct AblationSetup<'a> {
    pub sim: &'a SimConfig,
    pub env_reward: &'a EnvRewardParams,
    pub base_weights: &'a RewardWeights,
    pub agent: &'a AgentConfig,
    pub narrator: &'a Narrator,
    pub gateway: &'a Gateway,
    pub eval_seeds: &'a [u64],
}

/// One trained and evaluated agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub config: AblationConfig,
    pub style: StyleName,
    pub seed: u64,
    pub evaluation: Evaluation,
}

impl AblationRun {
    fn mean_of(&self, f: fn(&super::EpisodeSummary) -> f64) -> f64 {
        let eps = &self.evaluation.episodes;
        eps.iter().map(f).sum::<f64>() / eps.len() as f64
    }
}

/// Seed-averaged Table-II-shaped row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub style: String,
    pub seeds: usize,
    pub collision_score: f64,
    pub lane_change_score: f64,
    pub high_speed_score: f64,
}

pub fn run_ablation(setup: &AblationSetup<'_>, configs: &[AblationConfig], styles: &[StyleName], seeds: &[u64]) -> Result<(Vec<AblationRow>, Vec<AblationRun>)> {
    run_ablation_with(setup, configs, styles, seeds, |_| {})
}

/// Train one agent per (configuration, style, seed); the seed drives both the
/// agent and the training traffic. `progress` sees each finished run.
pub fn run_ablation_with<F>(
    setup: &AblationSetup<'_>,
    configs: &[AblationConfig],
    styles: &[StyleName],
    seeds: &[u64],
    mut progress: F,
) -> Result<(Vec<AblationRow>, Vec<AblationRun>)>
where
    F: FnMut(&AblationRun),
{
    if seeds.is_empty() || styles.is_empty() || configs.is_empty() {
        return Err(Error::Evaluation("ablation needs at least one configuration, style and seed".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &style_name in styles {
        let style = DrivingStyle::new(style_name);
        for config in configs {
            let weights = config.weights(setup.base_weights);
            let mut group = Vec::new();
            for &seed in seeds {
                let sim = SimConfig {
                    rng_seed: seed,
                    ..*setup.sim
                };
                let agent = AgentConfig {
                    rng_seed: seed,
                    ..setup.agent.clone()
                };
                let env = ShapedEnv {
                    sim: &sim,
                    env_reward: setup.env_reward,
                    weights: &weights,
                    narrator: setup.narrator,
                    gateway: setup.gateway,
                    style: &style,
                };
                let (policy, _) = train(&env, &agent)?;
                let evaluation = run_evaluation(&env, &policy, setup.eval_seeds)?;
                let run = AblationRun {
                    config: *config,
                    style: style_name,
                    seed,
                    evaluation,
                };
                progress(&run);
                group.push(run);
            }
            let k = group.len() as f64;
            let avg = |f: fn(&super::EpisodeSummary) -> f64| group.iter().map(|r| r.mean_of(f)).sum::<f64>() / k;
            rows.push(AblationRow {
                config: config.label(),
                style: style_name.as_str().to_string(),
                seeds: group.len(),
                collision_score: avg(|e| e.collision_score),
                lane_change_score: avg(|e| e.lane_change_score),
                high_speed_score: avg(|e| e.high_speed_score),
            });
            runs.extend(group);
        }
    }
    Ok((rows, runs))
}

/// Computed rows followed by the reference rows flagged `source=paper`.
pub fn write_ablation_csv<W: Write>(w: W, rows: &[AblationRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["source", "config", "style", "seeds", "collision_score", "lane_change_score", "high_speed_score"])?;
    for r in rows {
        csv.write_record([
            "computed",
            &r.config,
            &r.style,
            &r.seeds.to_string(),
            &r.collision_score.to_string(),
            &r.lane_change_score.to_string(),
            &r.high_speed_score.to_string(),
        ])?;
    }
    for r in &reference_results().ablation {
        csv.write_record([
            "paper",
            &r.label,
            "",
            "",
            &r.collision_score.to_string(),
            &r.lane_change_score.to_string(),
            &r.high_speed_score.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::Io {
        path: "<ablation csv>".into(),
        source: e,
    })
}
