use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{TabularCmdp, STOCHASTIC_TOL};
use crate::error::{Error, Result};
use crate::nn::{one_hot, Head, Mlp};

/// Action-probability table, either stationary or indexed by timestep.
///
/// Layout: `probs[(t * S + s) * A + a]` for time-dependent tables and
/// `probs[s * A + a]` for stationary ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, horizon: Option<usize>, probs: Vec<f64>) -> Result<Self> {
        let layers = horizon.unwrap_or(1);
        if num_states == 0 || num_actions == 0 || layers == 0 {
            return Err(Error::contract("policy dimensions must be positive"));
        }
        if probs.len() != layers * num_states * num_actions {
            return Err(Error::contract(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                layers * num_states * num_actions
            )));
        }
        for (row_idx, row) in probs.chunks(num_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::contract(format!(
                    "policy row {row_idx} is not a distribution (sum {total})"
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon: None,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Stationary deterministic policy from one action per state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::contract(format!("action {a} out of range for state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, None, probs)
    }

    /// Time-dependent deterministic policy; `actions[t][s]`.
    pub fn deterministic_time_dependent(num_actions: usize, actions: &[Vec<usize>]) -> Result<Self> {
        let horizon = actions.len();
        let ns = actions.first().map_or(0, Vec::len);
        let mut probs = vec![0.0; horizon * ns * num_actions];
        for (t, layer) in actions.iter().enumerate() {
            if layer.len() != ns {
                return Err(Error::contract("ragged action table"));
            }
            for (s, &a) in layer.iter().enumerate() {
                if a >= num_actions {
                    return Err(Error::contract(format!("action {a} out of range")));
                }
                probs[(t * ns + s) * num_actions + a] = 1.0;
            }
        }
        Self::new(ns, num_actions, Some(horizon), probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn is_stationary(&self) -> bool {
        self.horizon.is_none()
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// Action distribution at timestep `t` in state `s`.
    #[inline]
    pub fn probs(&self, t: usize, s: usize) -> &[f64] {
        let layer = match self.horizon {
            Some(h) => t.min(h - 1),
            None => 0,
        };
        let start = (layer * self.num_states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }

    pub fn check_shape(&self, env: &TabularCmdp) -> Result<()> {
        if self.num_states != env.num_states() || self.num_actions != env.num_actions() {
            return Err(Error::contract(format!(
                "policy shape ({}, {}) does not match environment ({}, {})",
                self.num_states,
                self.num_actions,
                env.num_states(),
                env.num_actions()
            )));
        }
        if let Some(h) = self.horizon {
            if h < env.horizon() {
                return Err(Error::contract(format!(
                    "time-dependent policy covers {h} steps, environment horizon is {}",
                    env.horizon()
                )));
            }
        }
        Ok(())
    }

    /// Mix in a uniformly random action with probability `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let u = epsilon / self.num_actions as f64;
        Self {
            probs: self.probs.iter().map(|p| (1.0 - epsilon) * p + u).collect(),
            ..self.clone()
        }
    }

    /// Deterministic policy choosing the most probable action (lowest id on ties).
    pub fn greedy(&self) -> Self {
        let mut probs = vec![0.0; self.probs.len()];
        for (row, out) in self.probs.chunks(self.num_actions).zip(probs.chunks_mut(self.num_actions)) {
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            out[best] = 1.0;
        }
        Self {
            probs,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Tabular(TabularPolicy),
    /// Softmax network over actions fed a one-hot state.
    Mlp(Mlp),
}

impl Policy {
    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Tabular(_) => "tabular-stochastic",
            Policy::Mlp(_) => "mlp-softmax",
        }
    }

    /// Materialise the action-probability table for an environment.
    pub fn tabulate(&self, env: &TabularCmdp) -> Result<Cow<'_, TabularPolicy>> {
        match self {
            Policy::Tabular(p) => {
                p.check_shape(env)?;
                Ok(Cow::Borrowed(p))
            }
            Policy::Mlp(model) => {
                let (ns, na) = (env.num_states(), env.num_actions());
                if model.head() != Head::Softmax || model.input_dim() != ns || model.output_dim() != na {
                    return Err(Error::contract(format!(
                        "network policy {:?} incompatible with environment ({ns} states, {na} actions)",
                        model.layer_sizes()
                    )));
                }
                let mut probs = Vec::with_capacity(ns * na);
                for s in 0..ns {
                    probs.extend(model.forward(&one_hot(s, ns))?);
                }
                Ok(Cow::Owned(TabularPolicy::new(ns, na, None, probs)?))
            }
        }
    }
}

impl From<TabularPolicy> for Policy {
    fn from(p: TabularPolicy) -> Self {
        Policy::Tabular(p)
    }
}
