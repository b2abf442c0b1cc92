use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmdp::{EnvConfig, EnvKind};
use crate::data::{AssembleConfig, LabelConfig};
use crate::error::{Error, Result};
use crate::eval::BootstrapConfig;
use crate::mil::CostModelConfig;
use crate::policy::{Method, PolicyLearnConfig};

/// Raw pool generation, labeling, and assembly of D^N / D^U.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub pool_size: usize,
    /// Uniform action noise mixed into both demonstrators.
    pub epsilon: f64,
    /// The safe demonstrator solves the CMDP at `threshold × safe_threshold_scale`.
    pub safe_threshold_scale: f64,
    pub label: LabelConfig,
    pub assemble: AssembleConfig,
    /// Also build an independent pool for held-out ordering accuracy.
    pub holdout: bool,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            pool_size: 2000,
            epsilon: 0.1,
            safe_threshold_scale: 0.5,
            label: LabelConfig::default(),
            assemble: AssembleConfig::default(),
            holdout: true,
            seed: 0,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        self.label.validate()?;
        if !(0.0..=0.3).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon must lie in [0, 0.3], got {}", self.epsilon)));
        }
        if !(self.safe_threshold_scale >= 0.0 && self.safe_threshold_scale <= 1.0) {
            return Err(Error::config("safe_threshold_scale must lie in [0, 1]"));
        }
        if self.pool_size < 2 {
            return Err(Error::config("pool_size must be at least 2"));
        }
        if !(self.assemble.alpha > 0.0 && self.assemble.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub episodes: usize,
    /// Added to each run seed to pick the rollout stream.
    pub seed: u64,
    /// Act greedily instead of sampling from the learned policy.
    pub greedy: bool,
    pub bootstrap: BootstrapConfig,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            episodes: 50,
            seed: 1000,
            greedy: false,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Bag sizes swept at the cost config's segment length.
    pub bag_sizes: Vec<usize>,
    /// Segment lengths swept at `length_sweep_bag_size`.
    pub segment_lengths: Vec<usize>,
    pub length_sweep_bag_size: usize,
    pub methods: Vec<Method>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            bag_sizes: vec![1, 8, 16, 64, 128],
            segment_lengths: vec![1, 5, 10],
            length_sweep_bag_size: 128,
            methods: vec![Method::SafemilTrajectory],
        }
    }
}

/// Everything one experiment needs, stored as TOML in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub env: EnvConfig,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub cost: CostModelConfig,
    #[serde(default)]
    pub policy: PolicyLearnConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl ExperimentConfig {
    /// Desk-scale defaults for one of the bundled environments.
    pub fn default_for(kind: EnvKind) -> Self {
        let env = match kind {
            EnvKind::SpeedChain => EnvConfig::speed_chain_default(),
            EnvKind::HazardGrid => EnvConfig::hazard_grid_default(),
        };
        let mut config = Self {
            out: default_out().join(env.name()),
            seeds: default_seeds(),
            methods: default_methods(),
            data: DataSpec::default(),
            cost: CostModelConfig::default(),
            policy: PolicyLearnConfig::default(),
            eval: EvalSpec::default(),
            sweep: SweepSpec::default(),
            env,
        };
        config.cost.gamma = config.env.gamma;
        config.policy.gamma = config.env.gamma;
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("`seeds` must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("`methods` must not be empty"));
        }
        if self.eval.episodes == 0 {
            return Err(Error::config("eval.episodes must be positive"));
        }
        if self.sweep.bag_sizes.contains(&0) || self.sweep.segment_lengths.contains(&0) {
            return Err(Error::config("sweep bag sizes and segment lengths must be positive"));
        }
        self.env.build()?;
        self.data.validate()?;
        self.cost.validate()?;
        self.policy.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
