//! Rollout evaluation, normalization against reference policies, tail-risk
//! cost, and bootstrap confidence intervals.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmdp::{
    evaluate_exact, rollout_with, solve_constrained, Policy, PolicyValue, TabularCmdp, TabularPolicy,
};
use crate::data::quantile;
use crate::error::{Error, Result};

/// Tail fractions reported for CVaR, in percent.
pub const CVAR_LEVELS: [u32; 4] = [50, 30, 20, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub returns: Vec<f64>,
    pub costs: Vec<f64>,
}

impl EpisodeStats {
    pub fn mean_return(&self) -> f64 {
        mean(&self.returns)
    }

    pub fn mean_cost(&self) -> f64 {
        mean(&self.costs)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Roll out `episodes` independent episodes and sum hidden rewards and costs.
///
/// Episode `i` uses its own random stream, so results do not depend on
/// scheduling. `gamma = None` gives plain sums.
pub fn evaluate_policy(
    env: &TabularCmdp,
    policy: &Policy,
    episodes: usize,
    seed: u64,
    gamma: Option<f64>,
) -> Result<EpisodeStats> {
    if episodes == 0 {
        return Err(Error::config("need at least one evaluation episode"));
    }
    let table = policy.tabulate(env)?;
    let table: &TabularPolicy = &table;
    let g = gamma.unwrap_or(1.0);
    let pairs: Vec<(f64, f64)> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let t = rollout_with(env, table, &mut rng);
            (
                t.discounted_reward(g).expect("rollouts are annotated"),
                t.discounted_cost(g).expect("rollouts are annotated"),
            )
        })
        .collect();
    let (returns, costs) = pairs.into_iter().unzip();
    Ok(EpisodeStats { returns, costs })
}

/// Undiscounted exact values of the constrained reference and the uniform policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub reference_return: f64,
    pub reference_cost: f64,
    pub random_return: f64,
}

impl Baselines {
    pub fn for_env(env: &TabularCmdp) -> Result<Self> {
        let reference = evaluate_exact(env, &solve_constrained(env)?, 1.0)?;
        let random = evaluate_exact(env, &TabularPolicy::uniform(env.num_states(), env.num_actions()), 1.0)?;
        Ok(Self {
            reference_return: reference.ret,
            reference_cost: reference.cost,
            random_return: random.ret,
        })
    }

    pub fn normalize(&self, ret: f64, cost: f64) -> Result<(f64, f64)> {
        normalize(
            ret,
            cost,
            PolicyValue {
                ret: self.reference_return,
                cost: self.reference_cost,
            },
            self.random_return,
        )
    }
}

/// `((R - R_rand) / (R_ref - R_rand), C - C_ref)`.
pub fn normalize(ret: f64, cost: f64, reference: PolicyValue, random_return: f64) -> Result<(f64, f64)> {
    let span = reference.ret - random_return;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::contract(format!(
            "reference return {} equals the random baseline; normalization undefined",
            reference.ret
        )));
    }
    Ok(((ret - random_return) / span, cost - reference.cost))
}

/// Mean of the `ceil(n·k/100)` largest episode costs minus `reference_cost`.
pub fn cvar_cost(costs: &[f64], k_percent: f64, reference_cost: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::contract("CVaR of an empty cost list"));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::contract(format!("tail percentage {k_percent} outside (0, 100]")));
    }
    let n = costs.len();
    // guard against 0.1 + 0.2 style representation error before rounding up
    let tail = ((n as f64 * k_percent / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| costs[j].total_cmp(&costs[i]).then(i.cmp(&j)));
    let worst: f64 = order[..tail].iter().map(|&i| costs[i]).sum();
    Ok(worst / tail as f64 - reference_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> Interval {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Interval {
        lo: quantile(&stats, tail),
        hi: quantile(&stats, 1.0 - tail),
    }
}

fn check_bootstrap(config: &BootstrapConfig) -> Result<()> {
    if config.resamples == 0 || !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::config("bootstrap needs resamples > 0 and level in (0, 1)"));
    }
    Ok(())
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], config: &BootstrapConfig) -> Result<Interval> {
    check_bootstrap(config)?;
    match values.len() {
        0 => Err(Error::contract("bootstrap of an empty sample")),
        1 => {
            warn!("bootstrap of a single value gives a degenerate interval");
            Ok(Interval {
                lo: values[0],
                hi: values[0],
            })
        }
        n => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let stats = (0..config.resamples)
                .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
                .collect();
            Ok(percentile_interval(stats, config.level))
        }
    }
}

/// Two-level bootstrap: resample seeds, then episodes within each drawn seed.
pub fn hierarchical_bootstrap_ci(groups: &[Vec<f64>], config: &BootstrapConfig) -> Result<Interval> {
    check_bootstrap(config)?;
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(Error::contract("hierarchical bootstrap needs non-empty groups"));
    }
    if groups.len() == 1 {
        return bootstrap_ci(&groups[0], config);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = groups.len();
    let stats = (0..config.resamples)
        .map(|_| {
            let mut total = 0.0;
            let mut count = 0usize;
            for _ in 0..g {
                let group = &groups[rng.gen_range(0..g)];
                for _ in 0..group.len() {
                    total += group[rng.gen_range(0..group.len())];
                }
                count += group.len();
            }
            total / count as f64
        })
        .collect();
    Ok(percentile_interval(stats, config.level))
}

/// Metrics of one seed's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mean_return: f64,
    pub mean_cost: f64,
    pub cvar: BTreeMap<u32, f64>,
    pub normalized_return: f64,
    pub normalized_cost: f64,
    /// Exact undiscounted expectations of the evaluated policy.
    pub exact_return: f64,
    pub exact_cost: f64,
    /// Exact discounted expected cost, the quantity the constraint bounds.
    pub exact_discounted_cost: f64,
    pub exact_normalized_return: f64,
    pub exact_normalized_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeStats>,
    pub per_seed: Vec<SeedMetrics>,
    pub normalized_return: f64,
    pub normalized_cost: f64,
    pub cvar_cost: BTreeMap<u32, f64>,
    pub ci: BTreeMap<String, Interval>,
    pub baselines: Baselines,
}

/// Evaluate one seed's policy: rollouts plus exact values.
pub fn seed_metrics(
    env: &TabularCmdp,
    policy: &Policy,
    baselines: &Baselines,
    seed: u64,
    episodes: usize,
    eval_seed: u64,
) -> Result<(SeedMetrics, EpisodeStats)> {
    let stats = evaluate_policy(env, policy, episodes, eval_seed, None)?;
    let table = policy.tabulate(env)?;
    let exact = evaluate_exact(env, &table, 1.0)?;
    let exact_disc = evaluate_exact(env, &table, env.discount())?;
    let (nr, nc) = baselines.normalize(stats.mean_return(), stats.mean_cost())?;
    let (enr, enc) = baselines.normalize(exact.ret, exact.cost)?;
    let cvar = CVAR_LEVELS
        .iter()
        .map(|&k| Ok((k, cvar_cost(&stats.costs, k as f64, baselines.reference_cost)?)))
        .collect::<Result<_>>()?;
    Ok((
        SeedMetrics {
            seed,
            mean_return: stats.mean_return(),
            mean_cost: stats.mean_cost(),
            cvar,
            normalized_return: nr,
            normalized_cost: nc,
            exact_return: exact.ret,
            exact_cost: exact.cost,
            exact_discounted_cost: exact_disc.cost,
            exact_normalized_return: enr,
            exact_normalized_cost: enc,
        },
        stats,
    ))
}

/// Pool per-seed evaluations into a report with bootstrap intervals.
pub fn build_report(
    per_seed: Vec<SeedMetrics>,
    episodes: Vec<EpisodeStats>,
    baselines: Baselines,
    bootstrap: &BootstrapConfig,
) -> Result<EvalReport> {
    if per_seed.is_empty() || per_seed.len() != episodes.len() {
        return Err(Error::contract("report needs one episode set per seed"));
    }
    let span = baselines.reference_return - baselines.random_return;
    let norm_returns: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| e.returns.iter().map(|r| (r - baselines.random_return) / span).collect())
        .collect();
    let norm_costs: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| e.costs.iter().map(|c| c - baselines.reference_cost).collect())
        .collect();
    let pooled_costs: Vec<f64> = episodes.iter().flat_map(|e| e.costs.iter().copied()).collect();
    let mut ci = BTreeMap::new();
    ci.insert("normalized_return".to_string(), hierarchical_bootstrap_ci(&norm_returns, bootstrap)?);
    ci.insert("normalized_cost".to_string(), hierarchical_bootstrap_ci(&norm_costs, bootstrap)?);
    let seed_values = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    ci.insert(
        "exact_normalized_cost".to_string(),
        bootstrap_ci(&seed_values(|m| m.exact_normalized_cost), bootstrap)?,
    );
    ci.insert(
        "exact_normalized_return".to_string(),
        bootstrap_ci(&seed_values(|m| m.exact_normalized_return), bootstrap)?,
    );
    for &k in &CVAR_LEVELS {
        let values: Vec<f64> = per_seed.iter().map(|m| m.cvar[&k]).collect();
        ci.insert(format!("cvar{k}"), bootstrap_ci(&values, bootstrap)?);
    }
    let cvar_cost = CVAR_LEVELS
        .iter()
        .map(|&k| Ok((k, cvar_cost(&pooled_costs, k as f64, baselines.reference_cost)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        normalized_return: mean(&norm_returns.concat()),
        normalized_cost: mean(&norm_costs.concat()),
        cvar_cost,
        ci,
        baselines,
        per_seed,
        episodes,
    })
}
