//! Finite-horizon constrained MDPs with a single cost signal.
//!
//! Tables are stored densely: `transition[(s * A + a) * S + s']`,
//! `reward[s * A + a]`, `cost[s * A + a]`.

mod env;
mod policy;
mod rollout;
mod solve;

pub use env::{SPRINT, STAY, WALK, build_hazard_grid, build_hazard_grid_between, build_speed_chain, random_cmdp, EnvConfig, EnvKind, GridCell};
pub use policy::{Policy, TabularPolicy};
pub(crate) use rollout::rollout_with;
pub use rollout::{rollout, sample_categorical};
pub use solve::{
    episodic_moments, evaluate_exact, exact_policy_eval, solve_constrained,
    solve_constrained_with_cap, solve_safest, solve_unconstrained, EpisodicMoments, PolicyValue,
    DEFAULT_SOLVER_CAP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    cost: Vec<f64>,
    threshold: f64,
    discount: f64,
    horizon: usize,
    initial_dist: Vec<f64>,
    /// Absorbing zero-reward zero-cost states; rollouts stop on entry.
    terminal: Vec<bool>,
}

/// Raw tables for [`TabularCmdp::new`].
#[derive(Debug, Clone)]
pub struct CmdpTables {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub threshold: f64,
    pub discount: f64,
    pub horizon: usize,
    pub initial_dist: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TabularCmdp {
    pub fn new(tables: CmdpTables) -> Result<Self> {
        let CmdpTables {
            num_states: ns,
            num_actions: na,
            transition,
            reward,
            cost,
            threshold,
            discount,
            horizon,
            initial_dist,
            terminal,
        } = tables;
        if ns == 0 || na == 0 {
            return Err(Error::config("state and action counts must be positive"));
        }
        if transition.len() != ns * na * ns
            || reward.len() != ns * na
            || cost.len() != ns * na
            || initial_dist.len() != ns
            || terminal.len() != ns
        {
            return Err(Error::config("table sizes do not match state/action counts"));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::config(format!("discount must lie in (0, 1), got {discount}")));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(threshold >= 0.0) {
            return Err(Error::config(format!("threshold must be non-negative, got {threshold}")));
        }
        for (sa, row) in transition.chunks(ns).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::config(format!(
                    "transition row for (s={}, a={}) is not a distribution (sum {total})",
                    sa / na,
                    sa % na
                )));
            }
        }
        if let Some(i) = cost.iter().position(|c| !(*c >= 0.0)) {
            return Err(Error::config(format!("negative cost at index {i}")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("reward table contains non-finite values"));
        }
        let init_total: f64 = initial_dist.iter().sum();
        if initial_dist.iter().any(|p| !(*p >= 0.0)) || (init_total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::config(format!("initial distribution sums to {init_total}")));
        }
        for s in (0..ns).filter(|&s| terminal[s]) {
            for a in 0..na {
                let sa = s * na + a;
                if (transition[sa * ns + s] - 1.0).abs() > STOCHASTIC_TOL
                    || reward[sa] != 0.0
                    || cost[sa] != 0.0
                {
                    return Err(Error::config(format!(
                        "terminal state {s} must be absorbing with zero reward and cost"
                    )));
                }
            }
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            transition,
            reward,
            cost,
            threshold,
            discount,
            horizon,
            initial_dist,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    #[inline]
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    #[inline]
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.num_actions + a]
    }

    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Same dynamics with a different cost threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::config(format!("threshold must be non-negative, got {threshold}")));
        }
        Ok(Self {
            threshold,
            ..self.clone()
        })
    }

    /// Same dynamics with every reward multiplied by `factor`.
    pub fn with_reward_scale(&self, factor: f64) -> Self {
        Self {
            reward: self.reward.iter().map(|r| r * factor).collect(),
            ..self.clone()
        }
    }

    pub fn check_step(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::contract(format!(
                "step (s={s}, a={a}) outside environment ranges ({}, {})",
                self.num_states, self.num_actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    /// Per-step reward annotations; evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_rewards: Option<Vec<f64>>,
    /// Per-step cost annotations; evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_costs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Self {
            steps,
            hidden_rewards: None,
            hidden_costs: None,
        }
    }

    pub fn annotated(steps: Vec<(usize, usize)>, rewards: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if rewards.len() != steps.len() || costs.len() != steps.len() {
            return Err(Error::contract("hidden annotation lengths must equal the step count"));
        }
        Ok(Self {
            steps,
            hidden_rewards: Some(rewards),
            hidden_costs: Some(costs),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The state-action sequence with annotations removed.
    pub fn training_view(&self) -> Trajectory {
        Trajectory::new(self.steps.clone())
    }

    pub fn is_annotated(&self) -> bool {
        self.hidden_rewards.is_some() && self.hidden_costs.is_some()
    }

    pub fn total_reward(&self) -> Option<f64> {
        self.hidden_rewards.as_ref().map(|r| r.iter().sum())
    }

    pub fn total_cost(&self) -> Option<f64> {
        self.hidden_costs.as_ref().map(|c| c.iter().sum())
    }

    pub fn discounted_reward(&self, gamma: f64) -> Option<f64> {
        self.hidden_rewards.as_deref().map(|r| discounted_sum(r, gamma))
    }

    pub fn discounted_cost(&self, gamma: f64) -> Option<f64> {
        self.hidden_costs.as_deref().map(|c| discounted_sum(c, gamma))
    }

    pub fn validate_for(&self, env: &TabularCmdp) -> Result<()> {
        if self.len() > env.horizon() {
            return Err(Error::contract(format!(
                "trajectory length {} exceeds horizon {}",
                self.len(),
                env.horizon()
            )));
        }
        for &(s, a) in &self.steps {
            env.check_step(s, a)?;
        }
        Ok(())
    }
}

pub fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut w = 1.0;
    for v in values {
        acc += w * v;
        w *= gamma;
    }
    acc
}
