use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{read_json, run_dir, sweep_cells, sweep_dir, write_file, write_json, CellResult, RunRecord};
use crate::error::Result;
use crate::eval::{build_report, hierarchical_bootstrap_ci, mean, Baselines, EpisodeStats, EvalReport, Interval};
use crate::policy::Method;

pub const SUMMARY_HEADER: &str = "method,env,seed,return,cost,cvar50,cvar30,cvar20,cvar10,norm_return,norm_cost";

/// One row per evaluated record, in the order given.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in records {
        if let Some(m) = &r.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.cell.method,
                r.env,
                r.cell.seed,
                m.mean_return,
                m.mean_cost,
                m.cvar[&50],
                m.cvar[&30],
                m.cvar[&20],
                m.cvar[&10],
                m.normalized_return,
                m.normalized_cost
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub report: EvalReport,
}

/// Per-environment table of every method that has completed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub env: String,
    pub baselines: Baselines,
    pub methods: Vec<MethodReport>,
    /// `method/seed` pairs with no evaluated run on disk.
    pub missing: Vec<String>,
    pub failed: Vec<String>,
}

impl SuiteReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn load_cell(dir: &Path) -> Option<(RunRecord, EpisodeStats)> {
    let record: RunRecord = read_json(&dir.join("record.json")).ok()?;
    record.metrics.as_ref()?;
    let episodes = read_json(&dir.join("episodes.json")).ok()?;
    Some((record, episodes))
}

/// Build the per-method report from the run directories under `root`.
pub fn build_suite_report(config: &ExperimentConfig, root: &Path, baselines: Baselines) -> Result<SuiteReport> {
    let mut methods = Vec::new();
    let mut missing = Vec::new();
    let mut failed = Vec::new();
    for &method in &config.methods {
        let mut metrics = Vec::new();
        let mut episodes = Vec::new();
        let mut seeds = Vec::new();
        for &seed in &config.seeds {
            let cell = super::pipeline::Cell {
                method,
                seed,
                bag_size: config.cost.bag_size,
                segment_len: config.cost.segment_len,
            };
            let dir = run_dir(root, &cell);
            match load_cell(&dir) {
                Some((record, eps)) => {
                    metrics.push(record.metrics.expect("checked by load_cell"));
                    episodes.push(eps);
                    seeds.push(seed);
                }
                None => {
                    let record: Option<RunRecord> = read_json(&dir.join("record.json")).ok();
                    match record.and_then(|r| r.failure) {
                        Some(f) => failed.push(format!("{method}/seed{seed}: {} ({})", f.stage, f.message)),
                        None => missing.push(format!("{method}/seed{seed}")),
                    }
                }
            }
        }
        if !metrics.is_empty() {
            let report = build_report(metrics, episodes, baselines, &config.eval.bootstrap)?;
            methods.push(MethodReport { method, seeds, report });
        }
    }
    Ok(SuiteReport {
        env: config.env.name().to_string(),
        baselines,
        methods,
        missing,
        failed,
    })
}

fn push_interval(out: &mut String, value: f64, iv: Interval) {
    let _ = write!(out, ",{value},{},{}", iv.lo, iv.hi);
}

/// Mean and 95% interval per method for raw and normalized metrics.
pub fn report_table_csv(report: &SuiteReport) -> String {
    let mut out = String::from(
        "method,env,seeds,return,return_lo,return_hi,cost,cost_lo,cost_hi,\
         cvar50,cvar50_lo,cvar50_hi,cvar30,cvar30_lo,cvar30_hi,cvar20,cvar20_lo,cvar20_hi,cvar10,cvar10_lo,cvar10_hi,\
         norm_return,norm_return_lo,norm_return_hi,norm_cost,norm_cost_lo,norm_cost_hi,\
         exact_norm_return,exact_norm_return_lo,exact_norm_return_hi,exact_norm_cost,exact_norm_cost_lo,exact_norm_cost_hi\n",
    );
    let b = &report.baselines;
    let span = b.reference_return - b.random_return;
    for m in &report.methods {
        let r = &m.report;
        let nr = r.ci["normalized_return"];
        let nc = r.ci["normalized_cost"];
        let _ = write!(out, "{},{},{}", m.method, report.env, m.seeds.len());
        let raw = |x: f64| x * span + b.random_return;
        push_interval(
            &mut out,
            raw(r.normalized_return),
            Interval {
                lo: raw(nr.lo),
                hi: raw(nr.hi),
            },
        );
        let shift = |x: f64| x + b.reference_cost;
        push_interval(
            &mut out,
            shift(r.normalized_cost),
            Interval {
                lo: shift(nc.lo),
                hi: shift(nc.hi),
            },
        );
        for k in crate::eval::CVAR_LEVELS {
            let per_seed: Vec<f64> = r.per_seed.iter().map(|s| s.cvar[&k]).collect();
            push_interval(&mut out, mean(&per_seed), r.ci[&format!("cvar{k}")]);
        }
        push_interval(&mut out, r.normalized_return, nr);
        push_interval(&mut out, r.normalized_cost, nc);
        let enr: Vec<f64> = r.per_seed.iter().map(|s| s.exact_normalized_return).collect();
        let enc: Vec<f64> = r.per_seed.iter().map(|s| s.exact_normalized_cost).collect();
        push_interval(&mut out, mean(&enr), r.ci["exact_normalized_return"]);
        push_interval(&mut out, mean(&enc), r.ci["exact_normalized_cost"]);
        out.push('\n');
    }
    out
}

pub fn write_suite_report(root: &Path, report: &SuiteReport) -> Result<()> {
    write_json(&root.join("report.json"), report)?;
    write_file(&root.join("report.csv"), report_table_csv(report))
}

/// Aggregate over seeds for one (method, K, H) sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub bag_size: usize,
    pub segment_len: usize,
    pub seeds: usize,
    pub norm_return: f64,
    pub norm_return_ci: Interval,
    pub norm_cost: f64,
    pub norm_cost_ci: Interval,
    pub exact_norm_cost: f64,
    pub holdout_pair_accuracy: Option<f64>,
}

const SWEEP_ROW_HEADER: &str = "env,method,bag_size,segment_len,seed,status,return,cost,norm_return,norm_cost,\
                                exact_norm_return,exact_norm_cost,holdout_pair_accuracy";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format sweep rows, one per cell.
pub fn sweep_rows_csv(results: &[CellResult]) -> String {
    let mut out = format!("{SWEEP_ROW_HEADER}\n");
    for r in results {
        let rec = &r.record;
        let c = &rec.cell;
        let status = match &rec.failure {
            Some(f) => format!("failed:{}", f.stage),
            None => "ok".to_string(),
        };
        let m = rec.metrics.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.env,
            c.method,
            c.bag_size,
            c.segment_len,
            c.seed,
            status,
            opt(m.map(|m| m.mean_return)),
            opt(m.map(|m| m.mean_cost)),
            opt(m.map(|m| m.normalized_return)),
            opt(m.map(|m| m.normalized_cost)),
            opt(m.map(|m| m.exact_normalized_return)),
            opt(m.map(|m| m.exact_normalized_cost)),
            opt(rec.holdout_pair_accuracy),
        );
    }
    out
}

pub fn aggregate_sweep(results: &[CellResult], config: &ExperimentConfig, baselines: &Baselines) -> Result<Vec<SweepPoint>> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<&CellResult>> = BTreeMap::new();
    for (order, r) in results.iter().enumerate() {
        if r.episodes.is_some() {
            let c = &r.record.cell;
            let method_idx = config.sweep.methods.iter().position(|m| *m == c.method).unwrap_or(order);
            groups.entry((method_idx, c.bag_size, c.segment_len)).or_default().push(r);
        }
    }
    let span = baselines.reference_return - baselines.random_return;
    let mut points = Vec::new();
    for members in groups.values() {
        let cell = members[0].record.cell;
        let eps: Vec<&EpisodeStats> = members.iter().filter_map(|r| r.episodes.as_ref()).collect();
        let nr: Vec<Vec<f64>> = eps
            .iter()
            .map(|e| e.returns.iter().map(|x| (x - baselines.random_return) / span).collect())
            .collect();
        let nc: Vec<Vec<f64>> = eps
            .iter()
            .map(|e| e.costs.iter().map(|x| x - baselines.reference_cost).collect())
            .collect();
        let metrics: Vec<_> = members.iter().filter_map(|r| r.record.metrics.as_ref()).collect();
        let accs: Vec<f64> = members.iter().filter_map(|r| r.record.holdout_pair_accuracy).collect();
        points.push(SweepPoint {
            method: cell.method,
            bag_size: cell.bag_size,
            segment_len: cell.segment_len,
            seeds: members.len(),
            norm_return: mean(&nr.concat()),
            norm_return_ci: hierarchical_bootstrap_ci(&nr, &config.eval.bootstrap)?,
            norm_cost: mean(&nc.concat()),
            norm_cost_ci: hierarchical_bootstrap_ci(&nc, &config.eval.bootstrap)?,
            exact_norm_cost: metrics.iter().map(|m| m.exact_normalized_cost).sum::<f64>() / metrics.len() as f64,
            holdout_pair_accuracy: (!accs.is_empty()).then(|| mean(&accs)),
        });
    }
    Ok(points)
}

pub fn sweep_summary_csv(env: &str, points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "env,method,bag_size,segment_len,seeds,norm_return,norm_return_lo,norm_return_hi,\
         norm_cost,norm_cost_lo,norm_cost_hi,exact_norm_cost,holdout_pair_accuracy\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{env},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.method,
            p.bag_size,
            p.segment_len,
            p.seeds,
            p.norm_return,
            p.norm_return_ci.lo,
            p.norm_return_ci.hi,
            p.norm_cost,
            p.norm_cost_ci.lo,
            p.norm_cost_ci.hi,
            p.exact_norm_cost,
            opt(p.holdout_pair_accuracy)
        );
    }
    out
}

/// Reload sweep results written under `root/sweep`.
pub fn load_sweep(config: &ExperimentConfig, root: &Path) -> Vec<CellResult> {
    sweep_cells(config)
        .iter()
        .filter_map(|cell| {
            let dir = sweep_dir(root, cell);
            let record: RunRecord = read_json(&dir.join("record.json")).ok()?;
            let episodes = read_json(&dir.join("episodes.json")).ok();
            Some(CellResult { record, episodes })
        })
        .collect()
}
