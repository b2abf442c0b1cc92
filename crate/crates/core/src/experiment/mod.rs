//! Experiment orchestration: config, data generation, training cells,
//! evaluation, sweeps, and report emission.
//!
//! Output layout under `out`:
//!
//! ```text
//! config.toml  reference.json  summary.csv  report.json  report.csv
//! data/        negative.*, unlabeled.*, holdout_*.*, summary.json
//! runs/<method>/seed<s>/   policy.ckpt, *_curve.csv, episodes.json, record.json
//! sweep/<method>/k<K>_h<H>/seed<s>/   same files; sweep.csv, sweep_summary.csv
//! ```

mod config;
mod pipeline;
mod report;

use std::path::Path;

use log::warn;

pub use config::{DataSpec, EvalSpec, ExperimentConfig, SweepSpec};
pub use pipeline::{
    demonstrators, eval_checkpoint, evaluate_cell, evaluation_policy, final_holdout_accuracy, generate_data,
    load_data, prepare, run_cells, run_dir, save_data, solve_reference, suite_cells, sweep_cells, sweep_dir,
    train_cell_policy, train_cost_for, train_single, Cell, CellResult, Context, DataSummary, Demonstrators, Failure,
    GeneratedData, Reference, RunRecord,
};
pub use report::{
    aggregate_sweep, build_suite_report, load_sweep, report_table_csv, summary_csv, sweep_rows_csv,
    sweep_summary_csv, write_suite_report, MethodReport, SuiteReport, SweepPoint, SUMMARY_HEADER,
};

use crate::error::Result;
use crate::eval::Baselines;

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub data: DataSummary,
    pub results: Vec<CellResult>,
    pub report: SuiteReport,
    pub summary_csv: String,
}

fn write_reference(config: &ExperimentConfig) -> Result<Baselines> {
    let env = config.env.build()?;
    let reference = solve_reference(&env)?;
    pipeline::write_json(&config.out.join("reference.json"), &reference)?;
    Ok(reference.baselines)
}

/// Full default pipeline: data, every method × seed, summary and report.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteOutput> {
    let data = prepare(config, false)?;
    let baselines = write_reference(config)?;
    let ctx = Context::new(config, &data)?;
    let root = config.out.as_path();
    let results = run_cells(&ctx, &suite_cells(config), root, |c| run_dir(root, c));
    let records: Vec<RunRecord> = results.iter().map(|r| r.record.clone()).collect();
    let csv = summary_csv(&records);
    pipeline::write_file(&root.join("summary.csv"), &csv)?;
    let report = build_suite_report(config, root, baselines)?;
    write_suite_report(root, &report)?;
    Ok(SuiteOutput {
        data: data.summary.clone(),
        results,
        report,
        summary_csv: csv,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results: Vec<CellResult>,
    pub points: Vec<SweepPoint>,
    pub baselines: Baselines,
}

impl SweepOutput {
    pub fn point(&self, method: crate::policy::Method, bag_size: usize, segment_len: usize) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.method == method && p.bag_size == bag_size && p.segment_len == segment_len)
    }
}

/// Sensitivity sweep over K and H; reuses datasets already in `out/data`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let data = prepare(config, true)?;
    let baselines = write_reference(config)?;
    let ctx = Context::new(config, &data)?;
    let root = config.out.as_path();
    let results = run_cells(&ctx, &sweep_cells(config), root, |c| sweep_dir(root, c));
    write_sweep_tables(config, root, &results, &baselines).map(|points| SweepOutput {
        results,
        points,
        baselines,
    })
}

fn write_sweep_tables(
    config: &ExperimentConfig,
    root: &Path,
    results: &[CellResult],
    baselines: &Baselines,
) -> Result<Vec<SweepPoint>> {
    let failed = results.iter().filter(|r| r.record.failure.is_some()).count();
    if failed > 0 {
        warn!("{failed} sweep cells failed; see sweep.csv");
    }
    pipeline::write_file(&root.join("sweep").join("sweep.csv"), sweep_rows_csv(results))?;
    let points = aggregate_sweep(results, config, baselines)?;
    pipeline::write_file(
        &root.join("sweep").join("sweep_summary.csv"),
        sweep_summary_csv(config.env.name(), &points),
    )?;
    Ok(points)
}

/// Rebuild report tables from whatever runs exist under `config.out`.
pub fn run_report(config: &ExperimentConfig) -> Result<SuiteReport> {
    let root = config.out.as_path();
    let env = config.env.build()?;
    let baselines = Baselines::for_env(&env)?;
    let report = build_suite_report(config, root, baselines)?;
    for m in &report.missing {
        warn!("missing run: {m}");
    }
    write_suite_report(root, &report)?;
    let sweep = load_sweep(config, root);
    if !sweep.is_empty() {
        write_sweep_tables(config, root, &sweep, &baselines)?;
    }
    Ok(report)
}
