use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cmdp::Trajectory;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, one_hot, softmax, Adam, AdamConfig, Head, Mlp};

/// Softmax policy over one-hot states.
pub fn policy_net(num_states: usize, num_actions: usize, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let mut sizes = vec![num_states];
    sizes.extend_from_slice(hidden);
    sizes.push(num_actions);
    Mlp::new(&sizes, Head::Softmax, seed)
}

/// Flattened `(s, a)` pairs with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTransitions {
    pub steps: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl WeightedTransitions {
    pub fn uniform(trajectories: &[Trajectory]) -> Self {
        let steps: Vec<_> = trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect();
        let weights = vec![1.0; steps.len()];
        Self { steps, weights }
    }

    /// Every step inherits its trajectory's weight.
    pub fn per_trajectory(trajectories: &[Trajectory], weights: &[f64]) -> Result<Self> {
        if weights.len() != trajectories.len() {
            return Err(Error::contract("one weight per trajectory required"));
        }
        let mut out = Self {
            steps: Vec::new(),
            weights: Vec::new(),
        };
        for (t, &w) in trajectories.iter().zip(weights) {
            out.steps.extend_from_slice(&t.steps);
            out.weights.extend(std::iter::repeat(w).take(t.len()));
        }
        Ok(out)
    }

    pub fn per_step(trajectories: &[Trajectory], weight: impl Fn(usize, usize) -> f64) -> Self {
        let steps: Vec<_> = trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect();
        let weights = steps.iter().map(|&(s, a)| weight(s, a)).collect();
        Self { steps, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Summed weight per `(s, a)`, row-major by state.
    pub fn table(&self, num_states: usize, num_actions: usize) -> Vec<f64> {
        let mut table = vec![0.0; num_states * num_actions];
        for (&(s, a), &w) in self.steps.iter().zip(&self.weights) {
            table[s * num_actions + a] += w;
        }
        table
    }

    fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.steps.is_empty() || self.steps.len() != self.weights.len() {
            return Err(Error::contract("behavior cloning needs a non-empty, aligned dataset"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        if self.total_weight() <= 0.0 {
            return Err(Error::contract("all behavior-cloning weights are zero"));
        }
        if let Some(&(s, a)) = self.steps.iter().find(|&&(s, a)| s >= num_states || a >= num_actions) {
            return Err(Error::contract(format!("transition ({s}, {a}) outside the policy's domain")));
        }
        Ok(())
    }
}

/// `Σ W(s,a) · -log π(a|s)` over a weight table, with its parameter gradient.
pub fn weighted_nll(net: &Mlp, weight_table: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (ns, na) = (net.input_dim(), net.output_dim());
    if weight_table.len() != ns * na {
        return Err(Error::contract("weight table does not match the policy shape"));
    }
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    for s in 0..ns {
        let row = &weight_table[s * na..(s + 1) * na];
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            continue;
        }
        let tr = net.trace(&one_hot(s, ns))?;
        let logp = log_softmax(&tr.logits);
        let p = softmax(&tr.logits);
        loss -= row.iter().zip(&logp).map(|(w, lp)| w * lp).sum::<f64>();
        let grad_logits: Vec<f64> = p.iter().zip(row).map(|(pi, w)| total * pi - w).collect();
        net.backward_logits(&tr, &grad_logits, &mut grad)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Divide each minibatch objective by the total weight.
    pub normalize_weights: bool,
    pub log_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyCurvePoint {
    pub step: usize,
    /// Weighted mean negative log-likelihood over the whole dataset.
    pub objective: f64,
}

pub fn policy_curve_csv(curve: &[PolicyCurvePoint]) -> String {
    let mut out = String::from("step,objective\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.step, p.objective));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedBc {
    pub net: Mlp,
    pub curve: Vec<PolicyCurvePoint>,
}

/// Minibatch weighted behavior cloning.
///
/// Transitions are drawn in proportion to their weight and the batch mean is
/// scaled by the total weight, an unbiased estimate of `Σ w · -log π`.
pub fn train_bc(num_states: usize, num_actions: usize, data: &WeightedTransitions, config: &BcConfig) -> Result<TrainedBc> {
    train_bc_with(num_states, num_actions, data, config, |_, _| Ok(None))
}

/// Behavior cloning with a per-step hook that may return a multiplier for
/// every `(s, a)` entry of the sampled minibatch.
pub(crate) fn train_bc_with<F>(
    num_states: usize,
    num_actions: usize,
    data: &WeightedTransitions,
    config: &BcConfig,
    mut hook: F,
) -> Result<TrainedBc>
where
    F: FnMut(usize, &Mlp) -> Result<Option<Vec<f64>>>,
{
    data.validate(num_states, num_actions)?;
    if config.batch_size == 0 || config.log_every == 0 {
        return Err(Error::config("batch_size and log_every must be positive"));
    }
    let mut net = policy_net(num_states, num_actions, &config.hidden, config.seed)?;
    let mut opt = Adam::new(net.num_params(), AdamConfig::new(config.lr, config.weight_decay));
    let sampler = WeightedIndex::new(&data.weights).map_err(|e| Error::contract(format!("weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let total_weight = data.total_weight();
    let full_table = data.table(num_states, num_actions);
    let scale = if config.normalize_weights { 1.0 } else { total_weight } / config.batch_size as f64;
    let mut curve = Vec::with_capacity(config.steps / config.log_every);
    let mut batch = vec![0.0; num_states * num_actions];
    for step in 1..=config.steps {
        batch.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..config.batch_size {
            let (s, a) = data.steps[sampler.sample(&mut rng)];
            batch[s * num_actions + a] += scale;
        }
        if let Some(mult) = hook(step, &net)? {
            batch.iter_mut().zip(&mult).for_each(|(b, m)| *b *= m);
        }
        let (loss, grad) = weighted_nll(&net, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("behavior-cloning loss became {loss}"),
            });
        }
        opt.step(net.params_mut(), &grad).map_err(|e| match e {
            Error::Training { message, .. } => Error::Training { step, message },
            other => other,
        })?;
        if step % config.log_every == 0 {
            let (full, _) = weighted_nll(&net, &full_table)?;
            curve.push(PolicyCurvePoint {
                step,
                objective: full / total_weight,
            });
        }
    }
    Ok(TrainedBc { net, curve })
}
