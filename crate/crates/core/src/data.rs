//! Demonstration pools, quantile labeling, dataset assembly, and persistence.
//!
//! On disk a dataset is three files sharing a stem:
//! `<stem>.jsonl` (training view, one `{"steps": [[s,a],...]}` per line),
//! `<stem>.eval.jsonl` (hidden rewards/costs/class aligned by line), and
//! `<stem>.manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmdp::{rollout_with, Policy, TabularCmdp, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    NonPreferred,
    Unlabeled,
    EvalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub role: DatasetRole,
    /// True preferred fraction; unlabeled datasets only.
    pub alpha: Option<f64>,
    pub provenance: String,
    /// Hidden per-trajectory class (true = preferred). Evaluation only.
    pub preferred: Option<Vec<bool>>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Copy with every hidden annotation removed.
    pub fn training_view(&self) -> Self {
        Self {
            trajectories: self.trajectories.iter().map(Trajectory::training_view).collect(),
            role: self.role,
            alpha: self.alpha,
            provenance: self.provenance.clone(),
            preferred: None,
        }
    }

    pub fn validate_for(&self, env: &TabularCmdp) -> Result<()> {
        self.trajectories.iter().try_for_each(|t| t.validate_for(env))
    }
}

/// Hex SHA-256 of a serializable generator description.
pub fn provenance_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Roll out `n` annotated episodes: the first `ceil(n/2)` from the safe
/// policy, the rest from the risky one, each mixed with `epsilon` uniform noise.
pub fn generate_raw_pool(
    env: &TabularCmdp,
    safe: &Policy,
    risky: &Policy,
    n: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n < 2 {
        return Err(Error::config(format!("pool size must be at least 2, got {n}")));
    }
    if !(0.0..=0.3).contains(&epsilon) {
        return Err(Error::config(format!("epsilon must lie in [0, 0.3], got {epsilon}")));
    }
    let safe = safe.tabulate(env)?.with_epsilon(epsilon);
    let risky = risky.tabulate(env)?.with_epsilon(epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_safe = n.div_ceil(2);
    Ok((0..n)
        .map(|i| {
            let pol = if i < n_safe { &safe } else { &risky };
            rollout_with(env, pol, &mut rng)
        })
        .collect())
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub reward_quantile: f64,
    pub cost_hi: f64,
    pub cost_lo: f64,
    /// Label on discounted instead of plain episode sums.
    #[serde(default)]
    pub discounted: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            reward_quantile: 0.5,
            cost_hi: 0.75,
            cost_lo: 0.25,
            discounted: false,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        let Self {
            reward_quantile,
            cost_hi,
            cost_lo,
            ..
        } = *self;
        if !(0.0 < cost_lo && cost_lo < cost_hi && cost_hi < 1.0) {
            return Err(Error::config(format!(
                "need 0 < cost_lo < cost_hi < 1, got {cost_lo} and {cost_hi}"
            )));
        }
        if !(0.0..1.0).contains(&reward_quantile) {
            return Err(Error::config(format!("reward quantile {reward_quantile} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPool {
    pub preferred: Vec<Trajectory>,
    pub non_preferred: Vec<Trajectory>,
    pub discarded: Vec<Trajectory>,
}

/// Split a pool by reward and cost quantiles.
///
/// Both classes require total reward at or above the reward quantile;
/// non-preferred additionally needs cost at or above the upper cost quantile,
/// preferred cost at or below the lower one.
pub fn label_pool(pool: &[Trajectory], config: &LabelConfig, gamma: f64) -> Result<LabeledPool> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::Generation("cannot label an empty pool".into()));
    }
    let totals = pool
        .iter()
        .map(|t| {
            let pair = if config.discounted {
                t.discounted_reward(gamma).zip(t.discounted_cost(gamma))
            } else {
                t.total_reward().zip(t.total_cost())
            };
            pair.ok_or_else(|| Error::contract("labeling needs reward and cost annotations"))
        })
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = totals.iter().map(|x| x.0).collect();
    let costs: Vec<f64> = totals.iter().map(|x| x.1).collect();
    let r_cut = quantile(&rewards, config.reward_quantile);
    let c_hi = quantile(&costs, config.cost_hi);
    let c_lo = quantile(&costs, config.cost_lo);

    let mut out = LabeledPool::default();
    for (t, &(r, c)) in pool.iter().zip(&totals) {
        // the non-preferred test wins if the two cost cuts coincide
        if r >= r_cut && c >= c_hi && c > c_lo {
            out.non_preferred.push(t.clone());
        } else if r >= r_cut && c <= c_lo {
            out.preferred.push(t.clone());
        } else {
            out.discarded.push(t.clone());
        }
    }
    if out.preferred.is_empty() || out.non_preferred.is_empty() {
        return Err(Error::Generation(format!(
            "labeling produced {} preferred and {} non-preferred trajectories; \
             adjust the quantiles or demonstrator policies",
            out.preferred.len(),
            out.non_preferred.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleConfig {
    pub n_unlabeled: usize,
    pub n_negative: usize,
    pub alpha: f64,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            n_unlabeled: 200,
            n_negative: 50,
            alpha: 0.5,
        }
    }
}

/// Build D^N and D^U from labeled trajectories, drawing without replacement
/// so no trajectory lands in both datasets.
pub fn assemble_datasets(
    preferred: &[Trajectory],
    non_preferred: &[Trajectory],
    config: &AssembleConfig,
    provenance: &str,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    let AssembleConfig {
        n_unlabeled,
        n_negative,
        alpha,
    } = *config;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_unlabeled == 0 || n_negative == 0 {
        return Err(Error::config("dataset sizes must be positive"));
    }
    let n_pref = (alpha * n_unlabeled as f64).round() as usize;
    let n_np_unlabeled = n_unlabeled - n_pref;
    if preferred.len() < n_pref || non_preferred.len() < n_negative + n_np_unlabeled {
        return Err(Error::Generation(format!(
            "need {n_pref} preferred and {} non-preferred source trajectories, have {} and {}",
            n_negative + n_np_unlabeled,
            preferred.len(),
            non_preferred.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pref_idx: Vec<usize> = (0..preferred.len()).collect();
    let mut np_idx: Vec<usize> = (0..non_preferred.len()).collect();
    pref_idx.shuffle(&mut rng);
    np_idx.shuffle(&mut rng);

    let negative = TrajectoryDataset {
        trajectories: np_idx[..n_negative].iter().map(|&i| non_preferred[i].clone()).collect(),
        role: DatasetRole::NonPreferred,
        alpha: None,
        provenance: provenance.to_string(),
        preferred: Some(vec![false; n_negative]),
    };
    let mut mixed: Vec<(Trajectory, bool)> = pref_idx[..n_pref]
        .iter()
        .map(|&i| (preferred[i].clone(), true))
        .chain(
            np_idx[n_negative..n_negative + n_np_unlabeled]
                .iter()
                .map(|&i| (non_preferred[i].clone(), false)),
        )
        .collect();
    mixed.shuffle(&mut rng);
    let (trajectories, labels): (Vec<_>, Vec<_>) = mixed.into_iter().unzip();
    let unlabeled = TrajectoryDataset {
        trajectories,
        role: DatasetRole::Unlabeled,
        alpha: Some(n_pref as f64 / n_unlabeled as f64),
        provenance: provenance.to_string(),
        preferred: Some(labels),
    };
    Ok((negative, unlabeled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub role: DatasetRole,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferred_count: Option<usize>,
    pub provenance: String,
    pub has_sidecar: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingLine {
    steps: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarLine {
    rewards: Vec<f64>,
    costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preferred: Option<bool>,
}

/// Paths of the three files making up a dataset stored at `stem`.
pub fn dataset_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut name = stem.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        stem.with_file_name(name)
    };
    (with(".jsonl"), with(".eval.jsonl"), with(".manifest.json"))
}

fn write_lines<T: Serialize>(path: &Path, lines: impl Iterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for line in lines {
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(Error::parse(path, line, "truncated final line"));
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Write the training view, the evaluation sidecar (when annotations are
/// present), and the manifest.
pub fn save_dataset(stem: &Path, dataset: &TrajectoryDataset) -> Result<Manifest> {
    let (train_path, sidecar_path, manifest_path) = dataset_paths(stem);
    write_lines(
        &train_path,
        dataset.trajectories.iter().map(|t| TrainingLine { steps: t.steps.clone() }),
    )?;
    let has_sidecar = dataset.trajectories.iter().all(Trajectory::is_annotated) && !dataset.is_empty();
    if has_sidecar {
        write_lines(
            &sidecar_path,
            dataset.trajectories.iter().enumerate().map(|(i, t)| SidecarLine {
                rewards: t.hidden_rewards.clone().unwrap_or_default(),
                costs: t.hidden_costs.clone().unwrap_or_default(),
                preferred: dataset.preferred.as_ref().map(|p| p[i]),
            }),
        )?;
    }
    let manifest = Manifest {
        role: dataset.role,
        count: dataset.len(),
        alpha: dataset.alpha,
        preferred_count: dataset.preferred.as_ref().map(|p| p.iter().filter(|x| **x).count()),
        provenance: dataset.provenance.clone(),
        has_sidecar,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Load the training view only; hidden annotations are never read.
pub fn load_dataset(stem: &Path) -> Result<TrajectoryDataset> {
    let (train_path, _, manifest_path) = dataset_paths(stem);
    let manifest = read_manifest(&manifest_path)?;
    let lines: Vec<TrainingLine> = read_lines(&train_path)?;
    if lines.len() != manifest.count {
        return Err(Error::parse(
            &train_path,
            lines.len(),
            format!("manifest lists {} trajectories, file has {}", manifest.count, lines.len()),
        ));
    }
    Ok(TrajectoryDataset {
        trajectories: lines.into_iter().map(|l| Trajectory::new(l.steps)).collect(),
        role: manifest.role,
        alpha: manifest.alpha,
        provenance: manifest.provenance,
        preferred: None,
    })
}

/// Load the training view and join the evaluation sidecar onto it.
pub fn load_dataset_with_sidecar(stem: &Path) -> Result<TrajectoryDataset> {
    let mut dataset = load_dataset(stem)?;
    let (_, sidecar_path, _) = dataset_paths(stem);
    let sidecar: Vec<SidecarLine> = read_lines(&sidecar_path)?;
    if sidecar.len() != dataset.len() {
        return Err(Error::parse(
            &sidecar_path,
            sidecar.len(),
            format!("sidecar has {} lines, training view {}", sidecar.len(), dataset.len()),
        ));
    }
    let mut preferred = Vec::with_capacity(sidecar.len());
    for (i, (t, line)) in dataset.trajectories.iter_mut().zip(sidecar).enumerate() {
        *t = Trajectory::annotated(std::mem::take(&mut t.steps), line.rewards, line.costs)
            .map_err(|e| Error::parse(&sidecar_path, i + 1, e.to_string()))?;
        preferred.push(line.preferred);
    }
    dataset.preferred = preferred.into_iter().collect();
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_speed_chain, exact_policy_eval, solve_constrained, solve_unconstrained, TabularPolicy};

    fn traj(reward: f64, cost: f64) -> Trajectory {
        Trajectory::annotated(vec![(0, 0)], vec![reward], vec![cost]).unwrap()
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn noise_free_pool_has_two_distinct_trajectories() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        let safe = Policy::Tabular(TabularPolicy::deterministic(3, &[1; 10]).unwrap());
        let risky = Policy::Tabular(TabularPolicy::deterministic(3, &[2; 10]).unwrap());
        let pool = generate_raw_pool(&env, &safe, &risky, 20, 0.0, 3).unwrap();
        let mut distinct = pool.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
        assert_eq!(pool, generate_raw_pool(&env, &safe, &risky, 20, 0.0, 3).unwrap());
        assert!(generate_raw_pool(&env, &safe, &risky, 1, 0.0, 3).is_err());
        assert!(generate_raw_pool(&env, &safe, &risky, 4, 0.4, 3).is_err());
    }

    #[test]
    fn risky_half_costs_more() {
        let env = build_speed_chain(16, 14, 3.0, 0.99).unwrap();
        let safe = Policy::Tabular(solve_constrained(&env.with_threshold(2.0).unwrap()).unwrap());
        let risky = Policy::Tabular(solve_unconstrained(&env));
        assert!(exact_policy_eval(&env, &risky).unwrap().cost > exact_policy_eval(&env, &safe).unwrap().cost);
        let pool = generate_raw_pool(&env, &safe, &risky, 200, 0.05, 0).unwrap();
        let mean = |ts: &[Trajectory]| ts.iter().map(|t| t.total_cost().unwrap()).sum::<f64>() / ts.len() as f64;
        assert!(mean(&pool[100..]) > mean(&pool[..100]));
    }

    #[test]
    fn cost_split_on_bimodal_pool() {
        let pool: Vec<_> = (0..8).map(|i| traj(5.0, if i < 4 { 0.0 } else { 10.0 })).collect();
        let labeled = label_pool(&pool, &LabelConfig::default(), 0.99).unwrap();
        assert_eq!(labeled.preferred.len(), 4);
        assert_eq!(labeled.non_preferred.len(), 4);
        assert!(labeled.non_preferred.iter().all(|t| t.total_cost().unwrap() == 10.0));
    }

    #[test]
    fn identical_pool_is_rejected() {
        let pool = vec![traj(1.0, 1.0); 10];
        assert!(matches!(
            label_pool(&pool, &LabelConfig::default(), 0.99),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn assembled_unlabeled_has_requested_mix() {
        let pref: Vec<_> = (0..150).map(|i| traj(1.0, i as f64 * 1e-3)).collect();
        let np: Vec<_> = (0..200).map(|i| traj(1.0, 10.0 + i as f64)).collect();
        let (dn, du) = assemble_datasets(&pref, &np, &AssembleConfig::default(), "x", 1).unwrap();
        assert_eq!(dn.len(), 50);
        assert_eq!(du.len(), 200);
        let labels = du.preferred.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|x| **x).count(), 100);
        assert_eq!(du.alpha, Some(0.5));
        for t in &dn.trajectories {
            assert!(!pref.contains(t));
            assert!(!du.trajectories.contains(t));
        }
        let short = AssembleConfig {
            n_unlabeled: 400,
            ..AssembleConfig::default()
        };
        assert!(matches!(
            assemble_datasets(&pref, &np, &short, "x", 1),
            Err(Error::Generation(_))
        ));
    }
}
