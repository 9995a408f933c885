//! Run configuration: one TOML file with a section per module, plus
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use llmrl_core::agent::AgentConfig;
use llmrl_core::gateway::GatewayConfig;
use llmrl_core::metrics::DEFAULT_EVAL_SEEDS;
use llmrl_core::narrator::{Narrator, PromptTemplates, SafetyParams, StyleName};
use llmrl_core::reward::RewardWeights;
use llmrl_core::sim::{EnvRewardParams, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    /// Directory with replacement template files; built-ins when absent.
    pub templates_dir: Option<PathBuf>,
    pub safety: SafetyParams,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            templates_dir: None,
            safety: SafetyParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub styles: Vec<StyleName>,
    pub eval_seeds: Vec<u64>,
    /// Training seeds of the ablation sweep.
    pub ablation_seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Window of the per-step match-rate moving average.
    pub match_window: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            styles: vec![StyleName::Base],
            eval_seeds: DEFAULT_EVAL_SEEDS.to_vec(),
            ablation_seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
            match_window: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub env_reward: EnvRewardParams,
    pub reward: RewardWeights,
    pub agent: AgentConfig,
    pub gateway: GatewayConfig,
    pub prompt: PromptSection,
    pub run: RunSection,
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: [&str; 2] = ["gateway.cache_path", "prompt.templates_dir"];

impl RunConfig {
    /// Read `path` (defaults when `None`), apply overrides in order, validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("invalid TOML in {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let defaults = Value::try_from(RunConfig::default()).expect("defaults serialize");
        check_keys(&table, defaults.as_table().expect("table"), "")?;
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| anyhow!("invalid configuration: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.env_reward.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        self.gateway.validate()?;
        if !(self.prompt.safety.ttc_threshold > 0.0) {
            bail!("invalid config `prompt.safety.ttc_threshold`: must be positive");
        }
        if self.run.styles.is_empty() {
            bail!("invalid config `run.styles`: at least one style is required");
        }
        if self.run.eval_seeds.is_empty() {
            bail!("invalid config `run.eval_seeds`: at least one evaluation seed is required");
        }
        if self.run.ablation_seeds.is_empty() {
            bail!("invalid config `run.ablation_seeds`: at least one seed is required");
        }
        if self.run.match_window == 0 {
            bail!("invalid config `run.match_window`: must be positive");
        }
        Ok(())
    }

    pub fn narrator(&self) -> Result<Narrator> {
        let templates = match &self.prompt.templates_dir {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::builtin(),
        };
        Ok(Narrator::new(templates, self.prompt.safety)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn check_keys(user: &Table, defaults: &Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match defaults.get(key) {
            Some(Value::Table(inner)) => match value {
                Value::Table(u) => check_keys(u, inner, &path)?,
                _ => bail!("configuration key `{path}` must be a section"),
            },
            Some(_) => {}
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => bail!("unknown configuration key `{path}`"),
        }
    }
    Ok(())
}

/// Parse `section.key=value`. The value is read as a TOML literal and falls
/// back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` must look like section.key=value"))?;
    let keys: Vec<String> = path.trim().split('.').map(|k| k.trim().to_string()).collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override `{spec}` has an empty key");
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((keys, value))
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (keys, value) = parse_override(spec)?;
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{spec}`: `{k}` is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again = RunConfig::from_table(cfg.to_toml().parse().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn overrides_set_nested_values() {
        let cfg = RunConfig::load(
            None,
            &[
                "agent.learning_rate=0.01".into(),
                "gateway.backend=mock".into(),
                "run.styles=[\"aggressive\", \"conservative\"]".into(),
                "gateway.cache_path=/tmp/cache.jsonl".into(),
                "prompt.safety.ttc_threshold=2.5".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.agent.learning_rate, 0.01);
        assert_eq!(cfg.run.styles, vec![StyleName::Aggressive, StyleName::Conservative]);
        assert_eq!(cfg.gateway.cache_path, Some(PathBuf::from("/tmp/cache.jsonl")));
        assert_eq!(cfg.prompt.safety.ttc_threshold, 2.5);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::load(None, &["sim.lanes=3".into()]).unwrap_err().to_string();
        assert!(err.contains("sim.lanes"), "{err}");
        let err = RunConfig::load(None, &["bogus.x=1".into()]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn weight_sum_rule_is_enforced() {
        let err = RunConfig::load(None, &["reward.alpha=0.5".into(), "reward.beta=0.6".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("alpha + beta + gamma_w = 1"), "{err}");
    }

    #[test]
    fn malformed_override() {
        assert!(parse_override("noequals").is_err());
        assert!(parse_override("a..b=1").is_err());
        let (k, v) = parse_override("sim.npc_count = 30").unwrap();
        assert_eq!(k, vec!["sim", "npc_count"]);
        assert_eq!(v, Value::Integer(30));
    }
}
