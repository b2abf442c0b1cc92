//! Discriminator-weighted BC with a negative-unlabeled discriminator.
//!
//! The discriminator sees `(s, a, log π(a|s))` and is trained with
//! `η E_N[-log d] + E_U[-log(1-d)] - η E_N[-log(1-d)]`, `d` clamped to
//! `[D_MIN, D_MAX]`. After each discriminator step the policy takes one BC
//! step on D^U with per-step weight `1 - d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bc::{train_bc_with, WeightedTransitions};
use super::{PolicyLearnConfig, TrainedPolicy};
use crate::cmdp::TabularCmdp;
use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, one_hot, Adam, AdamConfig, Head, Mlp};

pub const D_MIN: f64 = 0.05;
pub const D_MAX: f64 = 0.95;

pub fn discriminator_net(num_states: usize, num_actions: usize, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let mut sizes = vec![num_states + num_actions + 1];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::new(&sizes, Head::Sigmoid, seed)
}

fn disc_input(s: usize, a: usize, log_prob: f64, num_states: usize, num_actions: usize) -> Vec<f64> {
    let mut x = vec![0.0; num_states + num_actions + 1];
    x[s] = 1.0;
    x[num_states + a] = 1.0;
    x[num_states + num_actions] = log_prob;
    x
}

/// `log π(a|s)` for every pair, row-major by state.
pub fn log_prob_table(policy: &Mlp) -> Result<Vec<f64>> {
    let ns = policy.input_dim();
    let mut out = Vec::with_capacity(ns * policy.output_dim());
    for s in 0..ns {
        out.extend(log_softmax(&policy.trace(&one_hot(s, ns))?.logits));
    }
    Ok(out)
}

/// Clamped discriminator output for every pair.
pub fn discriminator_table(disc: &Mlp, log_probs: &[f64], num_states: usize, num_actions: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(num_states * num_actions);
    for s in 0..num_states {
        for a in 0..num_actions {
            let lp = log_probs[s * num_actions + a];
            let d = disc.forward(&disc_input(s, a, lp, num_states, num_actions))?[0];
            out.push(d.clamp(D_MIN, D_MAX));
        }
    }
    Ok(out)
}

/// Negative-unlabeled discriminator loss on `(s, a, log π)` samples.
pub fn nu_loss(
    disc: &Mlp,
    num_states: usize,
    num_actions: usize,
    negative: &[(usize, usize, f64)],
    unlabeled: &[(usize, usize, f64)],
    eta: f64,
) -> Result<(f64, Vec<f64>)> {
    if negative.is_empty() || unlabeled.is_empty() {
        return Err(Error::contract("discriminator loss needs both sample sets"));
    }
    let mut grad = vec![0.0; disc.num_params()];
    let mut loss = 0.0;
    // dℓ/dd for the negative and unlabeled terms
    let neg_scale = eta / negative.len() as f64;
    for &(s, a, lp) in negative {
        let tr = disc.trace(&disc_input(s, a, lp, num_states, num_actions))?;
        let raw = tr.output[0];
        let d = raw.clamp(D_MIN, D_MAX);
        loss += neg_scale * (-d.ln() + (1.0 - d).ln());
        if raw > D_MIN && raw < D_MAX {
            let g = neg_scale * (-1.0 / d - 1.0 / (1.0 - d));
            disc.backward(&tr, &[g], &mut grad)?;
        }
    }
    let unl_scale = 1.0 / unlabeled.len() as f64;
    for &(s, a, lp) in unlabeled {
        let tr = disc.trace(&disc_input(s, a, lp, num_states, num_actions))?;
        let raw = tr.output[0];
        let d = raw.clamp(D_MIN, D_MAX);
        loss -= unl_scale * (1.0 - d).ln();
        if raw > D_MIN && raw < D_MAX {
            disc.backward(&tr, &[unl_scale / (1.0 - d)], &mut grad)?;
        }
    }
    Ok((loss, grad))
}

pub fn train_dwbc_nu(
    env: &TabularCmdp,
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    config: &PolicyLearnConfig,
) -> Result<TrainedPolicy> {
    if !(config.eta > 0.0 && config.eta < 1.0) {
        return Err(Error::config(format!("eta must lie in (0, 1), got {}", config.eta)));
    }
    if negative.is_empty() {
        return Err(Error::contract("discriminator training needs non-preferred data"));
    }
    let (ns, na) = (env.num_states(), env.num_actions());
    let neg_steps: Vec<_> = negative.trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect();
    let data = WeightedTransitions::uniform(&unlabeled.trajectories);
    let mut disc = discriminator_net(ns, na, &config.hidden, config.seed ^ 0x6469_7363)?;
    let mut opt = Adam::new(disc.num_params(), AdamConfig::new(config.aux_lr, config.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);

    let bc = train_bc_with(ns, na, &data, &config.bc(), |step, policy| {
        let log_probs = log_prob_table(policy)?;
        let draw = |pool: &[(usize, usize)], rng: &mut ChaCha8Rng| -> Vec<(usize, usize, f64)> {
            (0..config.aux_batch_size)
                .map(|_| {
                    let (s, a) = pool[rng.gen_range(0..pool.len())];
                    (s, a, log_probs[s * na + a])
                })
                .collect()
        };
        let neg_batch = draw(&neg_steps, &mut rng);
        let unl_batch = draw(&data.steps, &mut rng);
        let (loss, grad) = nu_loss(&disc, ns, na, &neg_batch, &unl_batch, config.eta)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("discriminator loss became {loss}"),
            });
        }
        opt.step(disc.params_mut(), &grad)?;
        let d = discriminator_table(&disc, &log_probs, ns, na)?;
        Ok(Some(d.into_iter().map(|d| 1.0 - d).collect()))
    })?;
    Ok(TrainedPolicy {
        net: bc.net,
        curve: bc.curve,
        auxiliary: Some(disc),
        selected: None,
    })
}
