use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use safemil::cmdp::EnvKind;
use safemil::eval::{build_report, EvalReport};
use safemil::experiment::{
    eval_checkpoint, generate_data, run_dir, run_report, run_suite, run_sweep, save_data, solve_reference,
    summary_csv, train_single, Cell, ExperimentConfig, RunRecord,
};
use safemil::policy::Method;
use safemil::{Error, Result};

#[derive(Parser)]
#[command(name = "safemil", version, about = "Safe imitation learning from non-preferred and unlabeled demonstrations")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvChoice {
    SpeedChain,
    HazardGrid,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); bundled defaults for `--env` when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "speed-chain")]
    env: EnvChoice,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default config file.
    Init {
        #[command(flatten)]
        common: Common,
        /// Destination of the TOML file.
        path: PathBuf,
    },
    /// Generate D^N, D^U, held-out sets, sidecars and manifests.
    GenData(Common),
    /// Solve the CMDP exactly and write the reference policy and baselines.
    Solve(Common),
    /// Train one method for one seed on datasets in `<out>/data`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
    },
    /// Evaluate a trained policy checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        /// Checkpoint to evaluate; defaults to the run directory of `--method`/`--seed`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Bag-size and segment-length sensitivity sweep.
    Sweep(Common),
    /// Rebuild report tables from completed runs.
    Report(Common),
    /// Full pipeline: data, every method × seed, summary and report.
    Run(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(match common.env {
            EnvChoice::SpeedChain => EnvKind::SpeedChain,
            EnvChoice::HazardGrid => EnvKind::HazardGrid,
        }),
    };
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

fn single_seed(config: &ExperimentConfig, common: &Common) -> u64 {
    common.seed.unwrap_or(config.seeds[0])
}

fn write(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Init { common, path } => {
            let config = load_config(&common)?;
            write(&path, &config.to_toml()?)?;
            println!("{}", path.display());
        }
        Command::GenData(common) => {
            let config = load_config(&common)?;
            let data = generate_data(&config)?;
            let dir = config.out.join("data");
            save_data(&dir, &data)?;
            write(&config.out.join("config.toml"), &config.to_toml()?)?;
            println!("{}", serde_json::to_string_pretty(&data.summary)?);
        }
        Command::Solve(common) => {
            let config = load_config(&common)?;
            let reference = solve_reference(&config.env.build()?)?;
            let path = config.out.join("reference.json");
            write(&path, &(serde_json::to_string_pretty(&reference)? + "\n"))?;
            println!("{}", serde_json::to_string_pretty(&reference.baselines)?);
        }
        Command::Train { common, method } => {
            let config = load_config(&common)?;
            let cell = Cell {
                method,
                seed: single_seed(&config, &common),
                bag_size: config.cost.bag_size,
                segment_len: config.cost.segment_len,
            };
            let record = train_single(&config, &cell)?;
            for (name, path) in &record.artifacts {
                println!("{name}: {}", config.out.join(path).display());
            }
        }
        Command::Eval {
            common,
            method,
            checkpoint,
        } => {
            let config = load_config(&common)?;
            let seed = single_seed(&config, &common);
            let cell = Cell {
                method,
                seed,
                bag_size: config.cost.bag_size,
                segment_len: config.cost.segment_len,
            };
            let dir = run_dir(&config.out, &cell);
            let checkpoint = checkpoint.unwrap_or_else(|| dir.join("policy.ckpt"));
            let (metrics, episodes, baselines) = eval_checkpoint(&config, &checkpoint, seed)?;
            let report: EvalReport = build_report(vec![metrics.clone()], vec![episodes], baselines, &config.eval.bootstrap)?;
            write(&dir.join("eval.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            let record = RunRecord {
                env: config.env.name().to_string(),
                cell,
                provenance: String::new(),
                config_hash: safemil::data::provenance_hash(&config)?,
                artifacts: [("eval".to_string(), "eval.json".to_string())].into(),
                final_objective: None,
                holdout_pair_accuracy: None,
                metrics: Some(metrics),
                failure: None,
                wall_clock_secs: Default::default(),
            };
            let csv = summary_csv(&[record]);
            write(&dir.join("eval_summary.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Sweep(common) => {
            let config = load_config(&common)?;
            let out = run_sweep(&config)?;
            print!("{}", safemil::experiment::sweep_summary_csv(config.env.name(), &out.points));
        }
        Command::Report(common) => {
            let config = load_config(&common)?;
            let report = run_report(&config)?;
            print!("{}", safemil::experiment::report_table_csv(&report));
            if !report.missing.is_empty() {
                info!("{} runs missing", report.missing.len());
            }
        }
        Command::Run(common) => {
            let config = load_config(&common)?;
            let out = run_suite(&config)?;
            print!("{}", out.summary_csv);
            let failed = out.results.iter().filter(|r| r.record.failure.is_some()).count();
            if failed > 0 {
                return Err(Error::Training {
                    step: 0,
                    message: format!("{failed} runs failed; see report.json"),
                });
            }
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Training { .. } | Error::Generation(_) | Error::Infeasible { .. } | Error::Solver(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
