use std::sync::OnceLock;

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceBehaviorRow {
    pub label: String,
    pub mean_score: f64,
    pub lane_change_pct: f64,
    pub speed_up_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceAblationRow {
    pub label: String,
    pub collision_score: f64,
    pub lane_change_score: f64,
    pub high_speed_score: f64,
}

/// Published results, shipped as a static data file and only ever reported
/// next to computed values.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceResults {
    pub behavior: Vec<ReferenceBehaviorRow>,
    pub ablation: Vec<ReferenceAblationRow>,
}

impl ReferenceResults {
    pub fn behavior_row(&self, label: &str) -> Option<&ReferenceBehaviorRow> {
        self.behavior.iter().find(|r| r.label == label)
    }

    pub fn ablation_row(&self, label: &str) -> Option<&ReferenceAblationRow> {
        self.ablation.iter().find(|r| r.label == label)
    }
}

pub fn reference_results() -> &'static ReferenceResults {
    static REF: OnceLock<ReferenceResults> = OnceLock::new();
    REF.get_or_init(|| toml::from_str(include_str!("../../data/reference_results.toml")).expect("reference data parses"))
}
