//! Policy extraction from the unlabeled dataset: SafeMIL variants and baselines.

pub mod bc;
pub mod dwbc;
pub mod trex;

pub use bc::{policy_curve_csv, policy_net, train_bc, weighted_nll, BcConfig, PolicyCurvePoint, TrainedBc, WeightedTransitions};
pub use dwbc::{nu_loss, train_dwbc_nu};
pub use trex::{train_reward_model, train_trex_wbc, trex_pair_loss};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Policy, TabularCmdp, Trajectory};
use crate::data::{quantile, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::mil::CostModel;
use crate::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SafemilTrajectory,
    SafemilTransition,
    SafemilThreshold,
    BcUnlabeled,
    TrexWbc,
    DwbcNu,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SafemilTrajectory,
        Method::SafemilTransition,
        Method::SafemilThreshold,
        Method::BcUnlabeled,
        Method::TrexWbc,
        Method::DwbcNu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SafemilTrajectory => "safemil-trajectory",
            Method::SafemilTransition => "safemil-transition",
            Method::SafemilThreshold => "safemil-threshold",
            Method::BcUnlabeled => "bc-unlabeled",
            Method::TrexWbc => "trex-wbc",
            Method::DwbcNu => "dwbc-nu",
        }
    }

    pub fn uses_cost_model(self) -> bool {
        matches!(
            self,
            Method::SafemilTrajectory | Method::SafemilTransition | Method::SafemilThreshold
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyLearnConfig {
    pub method: Method,
    /// Temperature of the trajectory weight `exp(-C/β)`.
    pub beta: f64,
    /// Selection threshold b̂; the α-quantile of D^U's cost sums when absent.
    pub threshold: Option<f64>,
    /// Fall back to trajectory weighting when the threshold selects nothing.
    pub threshold_fallback: bool,
    pub eta: f64,
    pub gamma: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub normalize_weights: bool,
    pub log_every: usize,
    /// Reward-model / discriminator optimisation.
    pub aux_steps: usize,
    pub aux_batch_size: usize,
    pub aux_lr: f64,
    pub seed: u64,
}

impl Default for PolicyLearnConfig {
    fn default() -> Self {
        Self {
            method: Method::SafemilTrajectory,
            beta: 0.5,
            threshold: None,
            threshold_fallback: false,
            eta: 0.5,
            gamma: 0.99,
            steps: 10_000,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            hidden: vec![64, 64],
            normalize_weights: false,
            log_every: 100,
            aux_steps: 2_000,
            aux_batch_size: 32,
            aux_lr: 1e-3,
            seed: 0,
        }
    }
}

impl PolicyLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.threshold.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::config("threshold must be non-negative"));
        }
        if self.method == Method::DwbcNu && !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.batch_size == 0 || self.aux_batch_size == 0 || self.log_every == 0 {
            return Err(Error::config("batch sizes and log_every must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lr > 0.0) || self.aux_lr < 0.0 {
            return Err(Error::config("policy training needs gamma in (0, 1], lr > 0, aux_lr >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn bc(&self) -> BcConfig {
        BcConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            hidden: self.hidden.clone(),
            seed: self.seed,
            normalize_weights: self.normalize_weights,
            log_every: self.log_every,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub net: Mlp,
    pub curve: Vec<PolicyCurvePoint>,
    /// Reward model or discriminator for baselines that learn one.
    pub auxiliary: Option<Mlp>,
    /// Indices of D^U kept by the threshold variant.
    pub selected: Option<Vec<usize>>,
}

impl TrainedPolicy {
    pub fn policy(&self) -> Policy {
        Policy::Mlp(self.net.clone())
    }
}

/// Discounted learned-cost sum of a whole trajectory.
pub fn learned_cost(table: &[f64], num_actions: usize, trajectory: &Trajectory, gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for &(s, a) in &trajectory.steps {
        total += disc * table[s * num_actions + a];
        disc *= gamma;
    }
    total
}

/// `exp(-C(τ)/β)` with `C(τ)` the discounted learned cost of the trajectory.
pub fn trajectory_weight(model: &CostModel, trajectory: &Trajectory, gamma: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::contract("beta must be positive"));
    }
    let table = model.table()?;
    Ok((-learned_cost(&table, model.num_actions(), trajectory, gamma) / beta).exp())
}

pub fn trajectory_weights(model: &CostModel, trajectories: &[Trajectory], gamma: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::contract("beta must be positive"));
    }
    let table = model.table()?;
    let na = model.num_actions();
    Ok(trajectories
        .iter()
        .map(|t| (-learned_cost(&table, na, t, gamma) / beta).exp())
        .collect())
}

/// Indices of trajectories whose discounted learned cost is at most `threshold`.
pub fn select_preferred(model: &CostModel, dataset: &TrajectoryDataset, gamma: f64, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold >= 0.0) {
        return Err(Error::contract("threshold must be non-negative"));
    }
    let table = model.table()?;
    let na = model.num_actions();
    let picked: Vec<usize> = dataset
        .trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| learned_cost(&table, na, t, gamma) <= threshold)
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() {
        warn!("threshold {threshold} selects no trajectories");
    }
    Ok(picked)
}

/// The α-quantile of discounted learned costs over a dataset.
pub fn default_threshold(model: &CostModel, dataset: &TrajectoryDataset, gamma: f64, alpha: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::contract("empty dataset"));
    }
    let table = model.table()?;
    let costs: Vec<f64> = dataset
        .trajectories
        .iter()
        .map(|t| learned_cost(&table, model.num_actions(), t, gamma))
        .collect();
    Ok(quantile(&costs, alpha))
}

/// Weighted BC on D^U using the learned cost model.
pub fn train_safemil_policy(
    env: &TabularCmdp,
    unlabeled: &TrajectoryDataset,
    model: &CostModel,
    config: &PolicyLearnConfig,
) -> Result<TrainedPolicy> {
    config.validate()?;
    if model.num_states() != env.num_states() || model.num_actions() != env.num_actions() {
        return Err(Error::contract("cost model does not match the environment"));
    }
    let (ns, na) = (env.num_states(), env.num_actions());
    let trajs = &unlabeled.trajectories;
    let mut selected = None;
    let data = match config.method {
        Method::SafemilTrajectory => {
            WeightedTransitions::per_trajectory(trajs, &trajectory_weights(model, trajs, config.gamma, config.beta)?)?
        }
        Method::SafemilTransition => {
            let table = model.table()?;
            WeightedTransitions::per_step(trajs, |s, a| 1.0 - table[s * na + a])
        }
        Method::SafemilThreshold => {
            let threshold = match config.threshold {
                Some(b) => b,
                None => {
                    let alpha = unlabeled.alpha.ok_or_else(|| {
                        Error::config("threshold variant needs `threshold` or a dataset with known alpha")
                    })?;
                    default_threshold(model, unlabeled, config.gamma, alpha)?
                }
            };
            let picked = select_preferred(model, unlabeled, config.gamma, threshold)?;
            if picked.is_empty() {
                if !config.threshold_fallback {
                    return Err(Error::Training {
                        step: 0,
                        message: format!("threshold {threshold} selected no trajectories"),
                    });
                }
                warn!("falling back to trajectory weighting");
                WeightedTransitions::per_trajectory(trajs, &trajectory_weights(model, trajs, config.gamma, config.beta)?)?
            } else {
                let subset: Vec<Trajectory> = picked.iter().map(|&i| trajs[i].clone()).collect();
                selected = Some(picked);
                WeightedTransitions::uniform(&subset)
            }
        }
        other => return Err(Error::config(format!("{other} does not use a cost model"))),
    };
    let bc = train_bc(ns, na, &data, &config.bc())?;
    Ok(TrainedPolicy {
        net: bc.net,
        curve: bc.curve,
        auxiliary: None,
        selected,
    })
}

pub fn train_bc_unlabeled(env: &TabularCmdp, unlabeled: &TrajectoryDataset, config: &PolicyLearnConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    let data = WeightedTransitions::uniform(&unlabeled.trajectories);
    let bc = train_bc(env.num_states(), env.num_actions(), &data, &config.bc())?;
    Ok(TrainedPolicy {
        net: bc.net,
        curve: bc.curve,
        auxiliary: None,
        selected: None,
    })
}

/// Train the policy for `config.method`; SafeMIL variants need `cost_model`.
pub fn train_policy(
    env: &TabularCmdp,
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    cost_model: Option<&CostModel>,
    config: &PolicyLearnConfig,
) -> Result<TrainedPolicy> {
    config.validate()?;
    unlabeled.validate_for(env)?;
    match config.method {
        m if m.uses_cost_model() => {
            let model = cost_model.ok_or_else(|| Error::contract(format!("{m} requires a trained cost model")))?;
            train_safemil_policy(env, unlabeled, model, config)
        }
        Method::BcUnlabeled => train_bc_unlabeled(env, unlabeled, config),
        Method::TrexWbc => train_trex_wbc(env, negative, unlabeled, config),
        Method::DwbcNu => train_dwbc_nu(env, negative, unlabeled, config),
        _ => unreachable!("all methods covered"),
    }
}
