//! Multiple-instance cost learning: bags of trajectory segments ranked with a
//! Bradley-Terry loss so that negative bags outscore unlabeled ones.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::TabularCmdp;
use crate::data::{DatasetRole, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::nn::{backprop_traces, one_hot_pair, pair_table, sigmoid, softplus, Adam, AdamConfig, Head, Mlp, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagLabel {
    Negative,
    Unlabeled,
}

/// Consecutive steps cut from one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub steps: Vec<(usize, usize)>,
    /// Index of the source trajectory in its dataset.
    pub source: usize,
    pub start: usize,
    /// Hidden class of the source trajectory, when known.
    pub preferred: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub segments: Vec<Segment>,
    pub label: BagLabel,
}

impl Bag {
    pub fn size(&self) -> usize {
        self.segments.len()
    }

    /// Whether any segment comes from a preferred trajectory; `None` without provenance.
    pub fn contains_preferred(&self) -> Option<bool> {
        self.segments
            .iter()
            .map(|s| s.preferred)
            .try_fold(false, |acc, p| p.map(|p| acc || p))
    }
}

/// Draw `k` segments of up to `h` steps, trajectories chosen uniformly with
/// replacement and start positions uniformly over the valid offsets.
pub fn sample_bag<R: Rng + ?Sized>(dataset: &TrajectoryDataset, k: usize, h: usize, rng: &mut R) -> Result<Bag> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot sample a bag from an empty dataset"));
    }
    if k == 0 || h == 0 {
        return Err(Error::contract("bag size and segment length must be positive"));
    }
    let label = match dataset.role {
        DatasetRole::NonPreferred => BagLabel::Negative,
        _ => BagLabel::Unlabeled,
    };
    let segments = (0..k)
        .map(|_| {
            let source = rng.gen_range(0..dataset.len());
            let steps = &dataset.trajectories[source].steps;
            let start = if steps.len() > h {
                rng.gen_range(0..=steps.len() - h)
            } else {
                0
            };
            let end = (start + h).min(steps.len());
            Segment {
                steps: steps[start..end].to_vec(),
                source,
                start,
                preferred: dataset.preferred.as_ref().map(|p| p[source]),
            }
        })
        .collect();
    Ok(Bag { segments, label })
}

/// `(source, start, end)` of one sampled segment, drawn exactly like
/// [`sample_bag`] but without copying the steps.
type SegmentSpan = (usize, usize, usize);

fn draw_spans<R: Rng + ?Sized>(dataset: &TrajectoryDataset, k: usize, h: usize, rng: &mut R, out: &mut Vec<SegmentSpan>) {
    out.clear();
    for _ in 0..k {
        let source = rng.gen_range(0..dataset.len());
        let len = dataset.trajectories[source].steps.len();
        let start = if len > h { rng.gen_range(0..=len - h) } else { 0 };
        out.push((source, start, (start + h).min(len)));
    }
}

fn span_steps<'a>(dataset: &'a TrajectoryDataset, span: &SegmentSpan) -> &'a [(usize, usize)] {
    &dataset.trajectories[span.0].steps[span.1..span.2]
}

/// Same value as [`bag_score_with`] on the bag the spans describe.
fn span_score(
    dataset: &TrajectoryDataset,
    spans: &[SegmentSpan],
    gamma: f64,
    cost: &impl Fn(usize, usize) -> f64,
    values: &mut Vec<f64>,
) -> f64 {
    values.clear();
    values.extend(spans.iter().map(|sp| segment_value(span_steps(dataset, sp), gamma, cost)));
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / spans.len() as f64
}

fn accumulate_span_grad(
    dataset: &TrajectoryDataset,
    spans: &[SegmentSpan],
    gamma: f64,
    na: usize,
    weight: f64,
    grad_table: &mut [f64],
) {
    let w = weight / spans.len() as f64;
    for sp in spans {
        let mut disc = 1.0;
        for &(s, a) in span_steps(dataset, sp) {
            grad_table[s * na + a] += w * disc;
            disc *= gamma;
        }
    }
}

/// Probability that `k` draws with replacement include at least one preferred item.
pub fn lemma1_probability(alpha: f64, k: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || k == 0 {
        return Err(Error::contract(format!("need 0 <= alpha <= 1 and K >= 1, got ({alpha}, {k})")));
    }
    Ok(1.0 - (1.0 - alpha).powi(k as i32))
}

/// `softplus(score_u - score_n)`: Bradley-Terry loss for ranking the negative bag higher.
pub fn bt_loss(score_n: f64, score_u: f64) -> f64 {
    softplus(score_u - score_n)
}

/// Discounted segment sum with the discount restarting at the segment start.
fn segment_value(steps: &[(usize, usize)], gamma: f64, cost: &impl Fn(usize, usize) -> f64) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for &(s, a) in steps {
        total += disc * cost(s, a);
        disc *= gamma;
    }
    total
}

/// Mean discounted segment cost under an arbitrary per-step cost.
///
/// Segment values are summed in sorted order, so the score is bit-identical
/// under any permutation of the segments.
pub fn bag_score_with(bag: &Bag, gamma: f64, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut values: Vec<f64> = bag.segments.iter().map(|s| segment_value(&s.steps, gamma, &cost)).collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / bag.size() as f64
}

/// State-action cost model `ĉ: S×A → (0,1)` on one-hot inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    net: Mlp,
    num_states: usize,
    num_actions: usize,
}

impl CostModel {
    pub fn new(num_states: usize, num_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![num_states + num_actions];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_net(Mlp::new(&sizes, Head::Sigmoid, seed)?, num_states, num_actions)
    }

    pub fn from_net(net: Mlp, num_states: usize, num_actions: usize) -> Result<Self> {
        if net.head() != Head::Sigmoid || net.input_dim() != num_states + num_actions {
            return Err(Error::contract(format!(
                "cost model needs a sigmoid head over {} inputs",
                num_states + num_actions
            )));
        }
        Ok(Self {
            net,
            num_states,
            num_actions,
        })
    }

    pub fn for_env(env: &TabularCmdp, hidden: &[usize], seed: u64) -> Result<Self> {
        Self::new(env.num_states(), env.num_actions(), hidden, seed)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn input(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::contract(format!("({s}, {a}) outside the cost model's domain")));
        }
        Ok(one_hot_pair(s, a, self.num_states, self.num_actions))
    }

    pub fn cost(&self, s: usize, a: usize) -> Result<f64> {
        Ok(self.net.forward(&self.input(s, a)?)?[0])
    }

    /// `ĉ(s,a)` for every pair, row-major by state.
    pub fn table(&self) -> Result<Vec<f64>> {
        Ok(self.traced_table()?.0)
    }

    fn traced_table(&self) -> Result<(Vec<f64>, Vec<Trace>)> {
        pair_table(&self.net, self.num_states, self.num_actions)
    }

    /// Table values plus a closure that maps `d loss / d table` to a parameter gradient.
    pub fn table_with_backprop(&self) -> Result<(Vec<f64>, impl Fn(&[f64]) -> Result<Vec<f64>> + '_)> {
        let (values, traces) = self.traced_table()?;
        Ok((values, move |grad_table: &[f64]| backprop_traces(&self.net, &traces, grad_table)))
    }
}

/// Bag score under a trained cost model.
pub fn bag_score(model: &CostModel, bag: &Bag, gamma: f64) -> Result<f64> {
    for seg in &bag.segments {
        for &(s, a) in &seg.steps {
            if s >= model.num_states || a >= model.num_actions {
                return Err(Error::contract(format!("step ({s}, {a}) outside the cost model's domain")));
            }
        }
    }
    let table = model.table()?;
    let na = model.num_actions;
    Ok(bag_score_with(bag, gamma, |s, a| table[s * na + a]))
}

/// Accumulate `weight * d Score / d table` into `grad_table`.
fn accumulate_score_grad(bag: &Bag, gamma: f64, na: usize, weight: f64, grad_table: &mut [f64]) {
    let w = weight / bag.size() as f64;
    for seg in &bag.segments {
        let mut disc = 1.0;
        for &(s, a) in &seg.steps {
            grad_table[s * na + a] += w * disc;
            disc *= gamma;
        }
    }
}

/// Mean Bradley-Terry loss over `(negative, unlabeled)` bag pairs and its
/// gradient with respect to the cost table.
pub fn pair_loss_on_table(table: &[f64], num_actions: usize, pairs: &[(Bag, Bag)], gamma: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; table.len()];
    let mut total = 0.0;
    let scale = 1.0 / pairs.len() as f64;
    let cost = |s: usize, a: usize| table[s * num_actions + a];
    for (neg, unl) in pairs {
        let sn = bag_score_with(neg, gamma, cost);
        let su = bag_score_with(unl, gamma, cost);
        total += bt_loss(sn, su);
        let d = sigmoid(su - sn) * scale;
        accumulate_score_grad(neg, gamma, num_actions, -d, &mut grad);
        accumulate_score_grad(unl, gamma, num_actions, d, &mut grad);
    }
    (total * scale, grad)
}

/// Mean bag-pair loss and its exact parameter gradient.
pub fn bag_pair_loss(model: &CostModel, pairs: &[(Bag, Bag)], gamma: f64) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::contract("empty batch of bag pairs"));
    }
    let (table, backprop) = model.table_with_backprop()?;
    let (loss, grad_table) = pair_loss_on_table(&table, model.num_actions, pairs, gamma);
    Ok((loss, backprop(&grad_table)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModelConfig {
    pub gamma: f64,
    pub bag_size: usize,
    pub segment_len: usize,
    /// Bag pairs per optimizer step.
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    /// Optional extra first layer of this width.
    pub embed: Option<usize>,
    pub log_every: usize,
    /// Held-out bag pairs scored at each log point.
    pub holdout_pairs: usize,
    pub seed: u64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            bag_size: 128,
            segment_len: 5,
            batch_size: 32,
            steps: 10_000,
            lr: 1e-3,
            weight_decay: 0.01,
            hidden: vec![64, 64],
            embed: None,
            log_every: 500,
            holdout_pairs: 1000,
            seed: 0,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bag_size == 0 || self.segment_len == 0 {
            return Err(Error::config("bag_size and segment_len must be at least 1"));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::config("batch_size and log_every must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config("cost training needs gamma in (0, 1], lr > 0, weight_decay >= 0"));
        }
        if self.hidden.contains(&0) || self.embed == Some(0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.embed.into_iter().chain(self.hidden.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub holdout_pair_accuracy: Option<f64>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,holdout_pair_accuracy\n");
    for p in curve {
        let acc = p.holdout_pair_accuracy.map(|a| format!("{a}")).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, acc));
    }
    out
}

/// Held-out negative and unlabeled datasets for ordering accuracy.
#[derive(Debug, Clone, Copy)]
pub struct Holdout<'a> {
    pub negative: &'a TrajectoryDataset,
    pub unlabeled: &'a TrajectoryDataset,
}

/// Fraction of sampled pairs with `Score(B_n) > Score(B_u)`; ties count half.
pub fn pair_accuracy_with(
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    k: usize,
    h: usize,
    gamma: f64,
    n_pairs: usize,
    seed: u64,
    cost: impl Fn(usize, usize) -> f64,
) -> Result<f64> {
    if negative.is_empty() || unlabeled.is_empty() {
        return Err(Error::contract("cannot sample a bag from an empty dataset"));
    }
    if k == 0 || h == 0 {
        return Err(Error::contract("bag size and segment length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut neg, mut unl, mut values) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    let mut wins = 0.0;
    for _ in 0..n_pairs {
        draw_spans(negative, k, h, &mut rng, &mut neg);
        draw_spans(unlabeled, k, h, &mut rng, &mut unl);
        let sn = span_score(negative, &neg, gamma, &cost, &mut values);
        let su = span_score(unlabeled, &unl, gamma, &cost, &mut values);
        wins += if sn > su {
            1.0
        } else if sn == su {
            0.5
        } else {
            0.0
        };
    }
    Ok(wins / n_pairs.max(1) as f64)
}

pub fn holdout_pair_accuracy(
    model: &CostModel,
    holdout: Holdout<'_>,
    k: usize,
    h: usize,
    gamma: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let table = model.table()?;
    let na = model.num_actions;
    pair_accuracy_with(holdout.negative, holdout.unlabeled, k, h, gamma, n_pairs, seed, |s, a| {
        table[s * na + a]
    })
}

#[derive(Debug, Clone)]
pub struct TrainedCostModel {
    pub model: CostModel,
    pub curve: Vec<CurvePoint>,
}

/// Fit the cost model by minimizing the mean bag-pair loss with AdamW.
pub fn train_cost_model(
    env: &TabularCmdp,
    negative: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    holdout: Option<Holdout<'_>>,
    config: &CostModelConfig,
) -> Result<TrainedCostModel> {
    config.validate()?;
    if negative.is_empty() || unlabeled.is_empty() {
        return Err(Error::contract("cost training needs non-empty datasets"));
    }
    negative.validate_for(env)?;
    unlabeled.validate_for(env)?;
    let mut model = CostModel::for_env(env, &config.hidden_layers(), config.seed)?;
    let mut opt = Adam::new(model.net.num_params(), AdamConfig::new(config.lr, config.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (k, h) = (config.bag_size, config.segment_len);
    let mut curve = Vec::with_capacity(config.steps / config.log_every);
    let mut window = 0.0;
    let mut spans = vec![(Vec::with_capacity(k), Vec::with_capacity(k)); config.batch_size];
    let mut values = Vec::with_capacity(k);
    let scale = 1.0 / config.batch_size as f64;
    let na = model.num_actions;
    for step in 1..=config.steps {
        for (neg, unl) in spans.iter_mut() {
            draw_spans(negative, k, h, &mut rng, neg);
            draw_spans(unlabeled, k, h, &mut rng, unl);
        }
        // same arithmetic as `bag_pair_loss`, on spans instead of copied bags
        let (table, backprop) = model.table_with_backprop()?;
        let cost = |s: usize, a: usize| table[s * na + a];
        let mut grad_table = vec![0.0; table.len()];
        let mut loss = 0.0;
        for (neg, unl) in &spans {
            let sn = span_score(negative, neg, config.gamma, &cost, &mut values);
            let su = span_score(unlabeled, unl, config.gamma, &cost, &mut values);
            loss += bt_loss(sn, su);
            let d = sigmoid(su - sn) * scale;
            accumulate_span_grad(negative, neg, config.gamma, na, -d, &mut grad_table);
            accumulate_span_grad(unlabeled, unl, config.gamma, na, d, &mut grad_table);
        }
        loss *= scale;
        let grad = backprop(&grad_table)?;
        drop(backprop);
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("cost loss became {loss}"),
            });
        }
        opt.step(model.net.params_mut(), &grad).map_err(|e| match e {
            Error::Training { message, .. } => Error::Training { step, message },
            other => other,
        })?;
        window += loss;
        if step % config.log_every == 0 {
            let acc = holdout
                .map(|ho| holdout_pair_accuracy(&model, ho, k, h, config.gamma, config.holdout_pairs, config.seed))
                .transpose()?;
            let point = CurvePoint {
                step,
                loss: window / config.log_every as f64,
                holdout_pair_accuracy: acc,
            };
            debug!("cost step {step}: loss {:.5} acc {:?}", point.loss, acc);
            curve.push(point);
            window = 0.0;
        }
    }
    Ok(TrainedCostModel { model, curve })
}
