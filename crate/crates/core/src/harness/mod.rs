//! End-to-end pipeline: random-policy collection, expert construction,
//! imitation training and paired A/B evaluation.

mod dataset;
mod evaluate;
mod policies;
mod scenario;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{collect, dataset_header, read_dataset, write_dataset, Collection, SegmentRow};
pub use evaluate::{
    bar_chart_svg, evaluate, evaluate_with, handover_stats, summary_text, write_histogram_csv, write_report, Arm,
    ArmReport, Delta, EvalReport, HandoverStats, Histogram, Summary, INTER_HANDOVER_BIN_S,
};
pub use policies::{ExpertQueuePolicy, LearnedQueuePolicy, RandomQueuePolicy, RANDOM_POLICY_LIMITS_MS};
pub use scenario::{
    build_call_env, default_cities, mix_seed, CallEnv, City, ConstellationParams, RandomManeuvers, ScenarioConfig,
};

use crate::netsim::TraceError;
use crate::orbital::OrbitalError;
use crate::policy::{
    build_expert, expert_action_for_state, normalize_dataset, Action, Experience, ExpertTable, Hyperparams,
    ModelConfig, Normalization, PolicyError, QoEWeights, SegmentState, DEFAULT_CLUSTERS,
};
use crate::rtc::RtcError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Orbital(#[from] OrbitalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Rtc(#[from] RtcError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the CLI pipeline needs; every section is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Calls run under the random policy, spread round-robin over `scenarios`.
    pub collect_calls: usize,
    /// Paired calls per scenario in `evaluate`.
    pub eval_calls: usize,
    pub scenarios: Vec<ScenarioConfig>,
    pub qoe: QoEWeights,
    pub clusters: usize,
    pub cluster_seed: u64,
    pub model: ModelConfig,
    pub train: Hyperparams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            collect_calls: 2000,
            eval_calls: 100,
            scenarios: vec![ScenarioConfig::ideal(), ScenarioConfig::dynamic()],
            qoe: QoEWeights::default(),
            clusters: DEFAULT_CLUSTERS,
            cluster_seed: 0,
            model: ModelConfig::default(),
            train: Hyperparams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.scenarios.is_empty() {
            return Err(HarnessError::Config("at least one scenario is required".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        if self.clusters == 0 {
            return Err(HarnessError::Config("clusters must be positive".into()));
        }
        self.qoe.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Applies a global seed override to every stochastic stage.
    pub fn reseed(&mut self, seed: u64) {
        for (i, s) in self.scenarios.iter_mut().enumerate() {
            s.seed = mix_seed(seed, i as u64);
        }
        self.cluster_seed = seed;
        self.train.seed = seed;
    }
}

/// Expert built from a collected dataset.
#[derive(Debug, Clone)]
pub struct ExpertBuild {
    pub table: ExpertTable,
    pub normalization: Normalization,
    pub experiences: Vec<Experience>,
    /// Clusters actually used; fewer than requested when the dataset has
    /// fewer distinct handover profiles.
    pub k: usize,
}

fn distinct_features(experiences: &[Experience]) -> usize {
    let mut f: Vec<[u64; 2]> = experiences
        .iter()
        .map(|e| {
            let [a, b] = e.features();
            [a.to_bits(), b.to_bits()]
        })
        .collect();
    f.sort_unstable();
    f.dedup();
    f.len()
}

/// Normalises the dataset, clusters it and labels each cluster.
pub fn build_expert_from_rows(
    rows: &[SegmentRow],
    qoe: QoEWeights,
    clusters: usize,
    seed: u64,
) -> Result<ExpertBuild, HarnessError> {
    let mut experiences: Vec<Experience> = rows.iter().map(SegmentRow::experience).collect();
    let normalization = normalize_dataset(&mut experiences, qoe)?;
    let k = clusters.min(distinct_features(&experiences));
    if k < clusters {
        log::warn!("only {k} distinct handover profiles; using k = {k} instead of {clusters}");
    }
    let table = build_expert(&experiences, k, qoe, seed)?;
    Ok(ExpertBuild {
        table,
        normalization,
        experiences,
        k,
    })
}

/// Pairs every segment state with the expert's action.
pub fn label_rows(rows: &[SegmentRow], table: &ExpertTable) -> Vec<(SegmentState, Action)> {
    rows.iter()
        .map(|r| (r.state.clone(), expert_action_for_state(table, &r.state)))
        .collect()
}
