use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Policy, TabularCmdp, TabularPolicy, Trajectory};
use crate::error::Result;

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Sample one episode; stops early when a terminal state is entered.
pub fn rollout(env: &TabularCmdp, policy: &Policy, seed: u64) -> Result<Trajectory> {
    let table = policy.tabulate(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rollout_with(env, &table, &mut rng))
}

pub(crate) fn rollout_with<R: Rng + ?Sized>(env: &TabularCmdp, policy: &TabularPolicy, rng: &mut R) -> Trajectory {
    let horizon = env.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon);
    let mut s = sample_categorical(env.initial_dist(), rng);
    for t in 0..horizon {
        if env.is_terminal(s) {
            break;
        }
        let a = sample_categorical(policy.probs(t, s), rng);
        steps.push((s, a));
        rewards.push(env.reward(s, a));
        costs.push(env.cost(s, a));
        s = sample_categorical(env.next_state_dist(s, a), rng);
    }
    Trajectory {
        steps,
        hidden_rewards: Some(rewards),
        hidden_costs: Some(costs),
    }
}
