use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::cmdp::{
    evaluate_exact, solve_constrained, solve_unconstrained, Policy, PolicyValue, TabularCmdp, TabularPolicy,
    Trajectory,
};
use crate::data::{
    assemble_datasets, generate_raw_pool, label_pool, load_dataset, provenance_hash, save_dataset, TrajectoryDataset,
};
use crate::error::{Error, Result};
use crate::eval::{seed_metrics, Baselines, EpisodeStats, SeedMetrics};
use crate::mil::{curve_csv, holdout_pair_accuracy, train_cost_model, CostModel, Holdout, TrainedCostModel};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::policy::{policy_curve_csv, train_policy, Method, TrainedPolicy};

const HOLDOUT_SALT: u64 = 0x686f_6c64_6f75_74;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// The two scripted demonstrators behind the raw pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstrators {
    /// Constrained optimum at the tightened threshold.
    pub safe: TabularPolicy,
    /// Unconstrained optimum.
    pub risky: TabularPolicy,
}

pub fn demonstrators(env: &TabularCmdp, config: &ExperimentConfig) -> Result<Demonstrators> {
    let tight = env.with_threshold(env.threshold() * config.data.safe_threshold_scale)?;
    Ok(Demonstrators {
        safe: solve_constrained(&tight)?,
        risky: solve_unconstrained(env),
    })
}

/// Class sizes and means, computed from hidden annotations at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub provenance: String,
    pub pool_size: usize,
    pub preferred: usize,
    pub non_preferred: usize,
    pub discarded: usize,
    pub mean_return_preferred: f64,
    pub mean_cost_preferred: f64,
    pub mean_return_non_preferred: f64,
    pub mean_cost_non_preferred: f64,
    pub n_negative: usize,
    pub n_unlabeled: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub negative: TrajectoryDataset,
    pub unlabeled: TrajectoryDataset,
    pub holdout: Option<(TrajectoryDataset, TrajectoryDataset)>,
    pub summary: DataSummary,
}

impl GeneratedData {
    pub fn holdout(&self) -> Option<Holdout<'_>> {
        self.holdout.as_ref().map(|(n, u)| Holdout {
            negative: n,
            unlabeled: u,
        })
    }
}

fn class_means(trajs: &[Trajectory]) -> (f64, f64) {
    let n = trajs.len().max(1) as f64;
    let r = trajs.iter().filter_map(Trajectory::total_reward).sum::<f64>() / n;
    let c = trajs.iter().filter_map(Trajectory::total_cost).sum::<f64>() / n;
    (r, c)
}

fn build_datasets(
    env: &TabularCmdp,
    demos: &Demonstrators,
    config: &ExperimentConfig,
    provenance: &str,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset, DataSummary)> {
    let spec = &config.data;
    let pool = generate_raw_pool(
        env,
        &Policy::Tabular(demos.safe.clone()),
        &Policy::Tabular(demos.risky.clone()),
        spec.pool_size,
        spec.epsilon,
        seed,
    )?;
    let labeled = label_pool(&pool, &spec.label, env.discount())?;
    let (negative, unlabeled) =
        assemble_datasets(&labeled.preferred, &labeled.non_preferred, &spec.assemble, provenance, seed)?;
    let (rp, cp) = class_means(&labeled.preferred);
    let (rn, cn) = class_means(&labeled.non_preferred);
    let summary = DataSummary {
        provenance: provenance.to_string(),
        pool_size: pool.len(),
        preferred: labeled.preferred.len(),
        non_preferred: labeled.non_preferred.len(),
        discarded: labeled.discarded.len(),
        mean_return_preferred: rp,
        mean_cost_preferred: cp,
        mean_return_non_preferred: rn,
        mean_cost_non_preferred: cn,
        n_negative: negative.len(),
        n_unlabeled: unlabeled.len(),
        alpha: unlabeled.alpha.unwrap_or(spec.assemble.alpha),
    };
    Ok((negative, unlabeled, summary))
}

/// Generate D^N and D^U (and an independent held-out pair) from the config.
pub fn generate_data(config: &ExperimentConfig) -> Result<GeneratedData> {
    let env = config.env.build()?;
    let demos = demonstrators(&env, config)?;
    let provenance = provenance_hash(&(&config.env, &config.data))?;
    let (negative, unlabeled, summary) = build_datasets(&env, &demos, config, &provenance, config.data.seed)?;
    let holdout = if config.data.holdout {
        let (n, u, _) = build_datasets(&env, &demos, config, &provenance, config.data.seed ^ HOLDOUT_SALT)?;
        Some((n, u))
    } else {
        None
    };
    Ok(GeneratedData {
        negative,
        unlabeled,
        holdout,
        summary,
    })
}

const DATASET_STEMS: [&str; 4] = ["negative", "unlabeled", "holdout_negative", "holdout_unlabeled"];

pub fn save_data(dir: &Path, data: &GeneratedData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dataset(&dir.join(DATASET_STEMS[0]), &data.negative)?;
    save_dataset(&dir.join(DATASET_STEMS[1]), &data.unlabeled)?;
    if let Some((n, u)) = &data.holdout {
        save_dataset(&dir.join(DATASET_STEMS[2]), n)?;
        save_dataset(&dir.join(DATASET_STEMS[3]), u)?;
    }
    write_json(&dir.join("summary.json"), &data.summary)
}

/// Load the training views written by [`save_data`].
pub fn load_data(dir: &Path) -> Result<GeneratedData> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        return Err(Error::config(format!(
            "no datasets in {}; run `gen-data` first",
            dir.display()
        )));
    }
    let holdout = if dir.join("holdout_negative.manifest.json").exists() {
        Some((
            load_dataset(&dir.join(DATASET_STEMS[2]))?,
            load_dataset(&dir.join(DATASET_STEMS[3]))?,
        ))
    } else {
        None
    };
    Ok(GeneratedData {
        negative: load_dataset(&dir.join(DATASET_STEMS[0]))?,
        unlabeled: load_dataset(&dir.join(DATASET_STEMS[1]))?,
        holdout,
        summary: read_json(&summary_path)?,
    })
}

/// Reference quantities shared by every run in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub policy: TabularPolicy,
    pub baselines: Baselines,
    /// Discounted value of the reference policy under the environment discount.
    pub discounted: PolicyValue,
    pub threshold: f64,
}

pub fn solve_reference(env: &TabularCmdp) -> Result<Reference> {
    let policy = solve_constrained(env)?;
    Ok(Reference {
        discounted: evaluate_exact(env, &policy, env.discount())?,
        baselines: Baselines::for_env(env)?,
        threshold: env.threshold(),
        policy,
    })
}

/// One (method, seed, K, H) training-and-evaluation unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub bag_size: usize,
    pub segment_len: usize,
}

impl Cell {
    fn cost_key(&self) -> (u64, usize, usize) {
        (self.seed, self.bag_size, self.segment_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

/// Everything recorded about one cell; paths are relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    #[serde(flatten)]
    pub cell: Cell,
    pub provenance: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
    pub final_objective: Option<f64>,
    pub holdout_pair_accuracy: Option<f64>,
    pub metrics: Option<SeedMetrics>,
    pub failure: Option<Failure>,
    pub wall_clock_secs: BTreeMap<String, f64>,
}

pub fn train_cost_for(
    env: &TabularCmdp,
    data: &GeneratedData,
    config: &ExperimentConfig,
    seed: u64,
    bag_size: usize,
    segment_len: usize,
) -> Result<TrainedCostModel> {
    let mut cfg = config.cost.clone();
    cfg.seed = seed;
    cfg.bag_size = bag_size;
    cfg.segment_len = segment_len;
    train_cost_model(env, &data.negative, &data.unlabeled, data.holdout(), &cfg)
}

/// Held-out ordering accuracy at the end of training.
pub fn final_holdout_accuracy(
    trained: &TrainedCostModel,
    data: &GeneratedData,
    config: &ExperimentConfig,
    bag_size: usize,
    segment_len: usize,
) -> Result<Option<f64>> {
    let Some(holdout) = data.holdout() else {
        return Ok(None);
    };
    if let Some(acc) = trained
        .curve
        .last()
        .filter(|p| p.step == config.cost.steps)
        .and_then(|p| p.holdout_pair_accuracy)
    {
        return Ok(Some(acc));
    }
    let acc = holdout_pair_accuracy(
        &trained.model,
        holdout,
        bag_size,
        segment_len,
        config.cost.gamma,
        config.cost.holdout_pairs,
        trained.model.net().seed(),
    )?;
    Ok(Some(acc))
}

pub fn train_cell_policy(
    env: &TabularCmdp,
    data: &GeneratedData,
    config: &ExperimentConfig,
    cell: &Cell,
    cost: Option<&CostModel>,
) -> Result<TrainedPolicy> {
    let mut cfg = config.policy.clone();
    cfg.method = cell.method;
    cfg.seed = cell.seed;
    train_policy(env, &data.negative, &data.unlabeled, cost, &cfg)
}

/// The policy actually evaluated: the network, or its greedy table.
pub fn evaluation_policy(env: &TabularCmdp, policy: Policy, greedy: bool) -> Result<Policy> {
    if greedy {
        Ok(Policy::Tabular(policy.tabulate(env)?.greedy()))
    } else {
        Ok(policy)
    }
}

pub fn evaluate_cell(
    env: &TabularCmdp,
    config: &ExperimentConfig,
    baselines: &Baselines,
    policy: Policy,
    seed: u64,
) -> Result<(SeedMetrics, EpisodeStats)> {
    let policy = evaluation_policy(env, policy, config.eval.greedy)?;
    seed_metrics(
        env,
        &policy,
        baselines,
        seed,
        config.eval.episodes,
        config.eval.seed.wrapping_add(seed),
    )
}

/// Shared state for running many cells against one dataset.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub env: TabularCmdp,
    pub data: &'a GeneratedData,
    pub baselines: Baselines,
    pub config_hash: String,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a ExperimentConfig, data: &'a GeneratedData) -> Result<Self> {
        let env = config.env.build()?;
        Ok(Self {
            baselines: Baselines::for_env(&env)?,
            config_hash: provenance_hash(config)?,
            env,
            config,
            data,
        })
    }
}

/// Result of one cell: its record plus the raw episodes when evaluation ran.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub record: RunRecord,
    pub episodes: Option<EpisodeStats>,
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

type CostOutcome = std::result::Result<(TrainedCostModel, Option<f64>, f64), Failure>;

/// Train, checkpoint, and evaluate every cell; cost models are shared by
/// cells with the same (seed, K, H). Failures are recorded, not propagated.
pub fn run_cells(ctx: &Context<'_>, cells: &[Cell], root: &Path, dir_of: impl Fn(&Cell) -> PathBuf + Sync) -> Vec<CellResult> {
    let mut keys: Vec<_> = cells.iter().filter(|c| c.method.uses_cost_model()).map(Cell::cost_key).collect();
    keys.sort_unstable();
    keys.dedup();
    let costs: BTreeMap<_, CostOutcome> = keys
        .par_iter()
        .map(|&(seed, k, h)| {
            let start = Instant::now();
            let out = train_cost_for(&ctx.env, ctx.data, ctx.config, seed, k, h).and_then(|trained| {
                let acc = final_holdout_accuracy(&trained, ctx.data, ctx.config, k, h)?;
                Ok((trained, acc, start.elapsed().as_secs_f64()))
            });
            let out = out.map_err(|e| {
                warn!("cost training failed for seed {seed}, K={k}, H={h}: {e}");
                Failure {
                    stage: "cost".into(),
                    message: e.to_string(),
                }
            });
            ((seed, k, h), out)
        })
        .collect();
    cells
        .par_iter()
        .map(|cell| run_one(ctx, cell, root, &dir_of(cell), costs.get(&cell.cost_key())))
        .collect()
}

fn run_one(ctx: &Context<'_>, cell: &Cell, root: &Path, dir: &Path, cost: Option<&CostOutcome>) -> CellResult {
    let mut record = RunRecord {
        env: ctx.config.env.name().to_string(),
        cell: *cell,
        provenance: ctx.data.summary.provenance.clone(),
        config_hash: ctx.config_hash.clone(),
        artifacts: BTreeMap::new(),
        final_objective: None,
        holdout_pair_accuracy: None,
        metrics: None,
        failure: None,
        wall_clock_secs: BTreeMap::new(),
    };
    let mut episodes = None;
    let outcome = (|| -> std::result::Result<(), Failure> {
        let stage = |name: &str| {
            let name = name.to_string();
            move |e: Error| Failure {
                stage: name,
                message: e.to_string(),
            }
        };
        fs::create_dir_all(dir).map_err(|e| stage("setup")(Error::io(dir, e)))?;
        let model = match (cell.method.uses_cost_model(), cost) {
            (false, _) => None,
            (true, Some(Ok((trained, acc, secs)))) => {
                let ckpt = dir.join("cost_model.ckpt");
                let curve = dir.join("cost_curve.csv");
                save_checkpoint(&ckpt, trained.model.net(), ctx.config.cost.steps as u64).map_err(stage("cost"))?;
                write_file(&curve, curve_csv(&trained.curve)).map_err(stage("cost"))?;
                record.artifacts.insert("cost_model".into(), rel(root, &ckpt));
                record.artifacts.insert("cost_curve".into(), rel(root, &curve));
                record.holdout_pair_accuracy = *acc;
                record.wall_clock_secs.insert("cost".into(), *secs);
                Some(&trained.model)
            }
            (true, Some(Err(f))) => return Err(f.clone()),
            (true, None) => {
                return Err(Failure {
                    stage: "cost".into(),
                    message: "cost model missing".into(),
                })
            }
        };
        let start = Instant::now();
        let trained = train_cell_policy(&ctx.env, ctx.data, ctx.config, cell, model).map_err(stage("policy"))?;
        record.wall_clock_secs.insert("policy".into(), start.elapsed().as_secs_f64());
        record.final_objective = trained.curve.last().map(|p| p.objective);
        let ckpt = dir.join("policy.ckpt");
        let curve = dir.join("policy_curve.csv");
        save_checkpoint(&ckpt, &trained.net, ctx.config.policy.steps as u64).map_err(stage("policy"))?;
        write_file(&curve, policy_curve_csv(&trained.curve)).map_err(stage("policy"))?;
        record.artifacts.insert("policy".into(), rel(root, &ckpt));
        record.artifacts.insert("policy_curve".into(), rel(root, &curve));
        if let Some(aux) = &trained.auxiliary {
            let path = dir.join("auxiliary.ckpt");
            save_checkpoint(&path, aux, ctx.config.policy.aux_steps as u64).map_err(stage("policy"))?;
            record.artifacts.insert("auxiliary".into(), rel(root, &path));
        }

        let start = Instant::now();
        let (metrics, eps) =
            evaluate_cell(&ctx.env, ctx.config, &ctx.baselines, trained.policy(), cell.seed).map_err(stage("eval"))?;
        record.wall_clock_secs.insert("eval".into(), start.elapsed().as_secs_f64());
        let ep_path = dir.join("episodes.json");
        write_json(&ep_path, &eps).map_err(stage("eval"))?;
        record.artifacts.insert("episodes".into(), rel(root, &ep_path));
        record.metrics = Some(metrics);
        episodes = Some(eps);
        Ok(())
    })();
    if let Err(f) = outcome {
        warn!("{} seed {} failed during {}: {}", cell.method, cell.seed, f.stage, f.message);
        record.failure = Some(f);
    }
    let path = dir.join("record.json");
    if let Err(e) = write_json(&path, &record) {
        warn!("could not write {}: {e}", path.display());
    }
    CellResult { record, episodes }
}

/// Train a single cell from datasets on disk; errors propagate.
pub fn train_single(config: &ExperimentConfig, cell: &Cell) -> Result<RunRecord> {
    let data = load_data(&config.out.join("data"))?;
    let ctx = Context::new(config, &data)?;
    let env = &ctx.env;
    let dir = run_dir(&config.out, cell);
    let mut artifacts = BTreeMap::new();
    let mut wall_clock_secs = BTreeMap::new();
    let mut holdout = None;
    let cost = if cell.method.uses_cost_model() {
        let start = Instant::now();
        let trained = train_cost_for(env, &data, config, cell.seed, cell.bag_size, cell.segment_len)?;
        wall_clock_secs.insert("cost".to_string(), start.elapsed().as_secs_f64());
        holdout = final_holdout_accuracy(&trained, &data, config, cell.bag_size, cell.segment_len)?;
        let ckpt = dir.join("cost_model.ckpt");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_checkpoint(&ckpt, trained.model.net(), config.cost.steps as u64)?;
        write_file(&dir.join("cost_curve.csv"), curve_csv(&trained.curve))?;
        artifacts.insert("cost_model".to_string(), rel(&config.out, &ckpt));
        artifacts.insert("cost_curve".to_string(), rel(&config.out, &dir.join("cost_curve.csv")));
        Some(trained.model)
    } else {
        None
    };
    let start = Instant::now();
    let trained = train_cell_policy(env, &data, config, cell, cost.as_ref())?;
    wall_clock_secs.insert("policy".to_string(), start.elapsed().as_secs_f64());
    let ckpt = dir.join("policy.ckpt");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_checkpoint(&ckpt, &trained.net, config.policy.steps as u64)?;
    write_file(&dir.join("policy_curve.csv"), policy_curve_csv(&trained.curve))?;
    artifacts.insert("policy".to_string(), rel(&config.out, &ckpt));
    artifacts.insert("policy_curve".to_string(), rel(&config.out, &dir.join("policy_curve.csv")));
    let record = RunRecord {
        env: config.env.name().to_string(),
        cell: *cell,
        provenance: data.summary.provenance.clone(),
        config_hash: ctx.config_hash.clone(),
        artifacts,
        final_objective: trained.curve.last().map(|p| p.objective),
        holdout_pair_accuracy: holdout,
        metrics: None,
        failure: None,
        wall_clock_secs,
    };
    write_json(&dir.join("record.json"), &record)?;
    Ok(record)
}

/// Evaluate a saved policy checkpoint for one seed.
pub fn eval_checkpoint(
    config: &ExperimentConfig,
    checkpoint: &Path,
    seed: u64,
) -> Result<(SeedMetrics, EpisodeStats, Baselines)> {
    let env = config.env.build()?;
    let baselines = Baselines::for_env(&env)?;
    let (net, _) = load_checkpoint(checkpoint)?;
    let (metrics, episodes) = evaluate_cell(&env, config, &baselines, Policy::Mlp(net), seed)?;
    Ok((metrics, episodes, baselines))
}

pub fn run_dir(root: &Path, cell: &Cell) -> PathBuf {
    root.join("runs").join(cell.method.name()).join(format!("seed{}", cell.seed))
}

pub fn sweep_dir(root: &Path, cell: &Cell) -> PathBuf {
    root.join("sweep")
        .join(cell.method.name())
        .join(format!("k{}_h{}", cell.bag_size, cell.segment_len))
        .join(format!("seed{}", cell.seed))
}

/// Default cells: every configured method × seed at the configured K and H.
pub fn suite_cells(config: &ExperimentConfig) -> Vec<Cell> {
    config
        .methods
        .iter()
        .flat_map(|&method| {
            config.seeds.iter().map(move |&seed| Cell {
                method,
                seed,
                bag_size: config.cost.bag_size,
                segment_len: config.cost.segment_len,
            })
        })
        .collect()
}

/// Bag-size sweep at the configured H, then segment-length sweep at the
/// configured K; duplicates appear once.
pub fn sweep_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let s = &config.sweep;
    let grid = s
        .bag_sizes
        .iter()
        .map(|&k| (k, config.cost.segment_len))
        .chain(s.segment_lengths.iter().map(|&h| (s.length_sweep_bag_size, h)));
    let mut pairs = Vec::new();
    for p in grid {
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let mut cells = Vec::new();
    for &method in &s.methods {
        for &(bag_size, segment_len) in &pairs {
            for &seed in &config.seeds {
                cells.push(Cell {
                    method,
                    seed,
                    bag_size,
                    segment_len,
                });
            }
        }
    }
    cells
}

/// Generate data (or reuse it when `reuse_data`) and write the config snapshot.
pub fn prepare(config: &ExperimentConfig, reuse_data: bool) -> Result<GeneratedData> {
    config.validate()?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), config.to_toml()?)?;
    let data_dir = out.join("data");
    if reuse_data && data_dir.join("summary.json").exists() {
        return load_data(&data_dir);
    }
    let data = generate_data(config)?;
    save_data(&data_dir, &data)?;
    info!(
        "generated {} non-preferred and {} unlabeled trajectories",
        data.negative.len(),
        data.unlabeled.len()
    );
    // training only ever sees what is on disk
    load_data(&data_dir)
}
