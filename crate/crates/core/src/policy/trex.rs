//! Reward-ranking baseline: learn `r(s,a)` so unlabeled trajectories outrank
//! non-preferred ones, then clone D^U with per-step weight `σ(r(s,a))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bc::{train_bc, WeightedTransitions};
use super::{PolicyLearnConfig, TrainedPolicy};
use crate::cmdp::{TabularCmdp, Trajectory};
use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::nn::{backprop_traces, pair_table, sigmoid, softplus, Adam, AdamConfig, Head, Mlp};

/// Linear-head reward model with a zeroed output layer, so every pair starts tied.
pub fn reward_net(num_states: usize, num_actions: usize, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let mut sizes = vec![num_states + num_actions];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, Head::Linear, seed)?;
    net.zero_output_layer();
    Ok(net)
}

/// Mean `softplus(R(τ_n) - R(τ_u))` over `(unlabeled, non-preferred)` pairs,
/// where `R` is the undiscounted predicted return.
pub fn trex_pair_loss(
    net: &Mlp,
    num_states: usize,
    num_actions: usize,
    pairs: &[(&Trajectory, &Trajectory)],
) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::contract("empty batch of trajectory pairs"));
    }
    let (table, traces) = pair_table(net, num_states, num_actions)?;
    let ret = |t: &Trajectory| t.steps.iter().map(|&(s, a)| table[s * num_actions + a]).sum::<f64>();
    let scale = 1.0 / pairs.len() as f64;
    let mut grad_table = vec![0.0; table.len()];
    let mut loss = 0.0;
    for (unl, neg) in pairs {
        let diff = ret(neg) - ret(unl);
        loss += softplus(diff);
        let d = sigmoid(diff) * scale;
        for &(s, a) in &neg.steps {
            grad_table[s * num_actions + a] += d;
        }
        for &(s, a) in &unl.steps {
            grad_table[s * num_actions + a] -= d;
        }
    }
    Ok((loss * scale, backprop_traces(net, &traces, &grad_table)?))
}

#[derive(Debug, Clone)]
pub struct TrainedReward {
    pub net: Mlp,
    /// Batch loss at every step.
    pub losses: Vec<f64>,
}

pub fn train_reward_model(
    env: &TabularCmdp,
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    config: &PolicyLearnConfig,
) -> Result<TrainedReward> {
    if negative.is_empty() || unlabeled.is_empty() {
        return Err(Error::contract("reward learning needs non-empty datasets"));
    }
    let (ns, na) = (env.num_states(), env.num_actions());
    let mut net = reward_net(ns, na, &config.hidden, config.seed ^ 0x7265_7761)?;
    let mut opt = Adam::new(net.num_params(), AdamConfig::new(config.aux_lr, config.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut losses = Vec::with_capacity(config.aux_steps);
    for step in 1..=config.aux_steps {
        let pairs: Vec<_> = (0..config.aux_batch_size)
            .map(|_| {
                let u = &unlabeled.trajectories[rng.gen_range(0..unlabeled.len())];
                let n = &negative.trajectories[rng.gen_range(0..negative.len())];
                (u, n)
            })
            .collect();
        let (loss, grad) = trex_pair_loss(&net, ns, na, &pairs)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("reward loss became {loss}"),
            });
        }
        opt.step(net.params_mut(), &grad)?;
        losses.push(loss);
    }
    Ok(TrainedReward { net, losses })
}

pub fn train_trex_wbc(
    env: &TabularCmdp,
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    config: &PolicyLearnConfig,
) -> Result<TrainedPolicy> {
    let reward = train_reward_model(env, negative, unlabeled, config)?;
    let (ns, na) = (env.num_states(), env.num_actions());
    let (table, _) = pair_table(&reward.net, ns, na)?;
    let data = WeightedTransitions::per_step(&unlabeled.trajectories, |s, a| sigmoid(table[s * na + a]));
    let bc = train_bc(ns, na, &data, &config.bc())?;
    Ok(TrainedPolicy {
        net: bc.net,
        curve: bc.curve,
        auxiliary: Some(reward.net),
        selected: None,
    })
}
