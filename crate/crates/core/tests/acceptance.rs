//! Acceptance checks for the twelve release criteria, one PASS/FAIL line each.
//!
//! Heavy criteria share a handful of experiment runs (two SpeedChain suites,
//! one HazardGrid suite, one SpeedChain sweep) written under the cargo
//! integration-test scratch directory. Criteria listed in `KNOWN_RED` are
//! reported but do not fail the target; everything else does.
//!
//! `ACCEPTANCE_ONLY=1,2,11` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safemil::cmdp::{
    episodic_moments, evaluate_exact, random_cmdp, solve_constrained, solve_safest, solve_unconstrained, EnvKind,
    Policy, TabularCmdp, TabularPolicy, Trajectory,
};
use safemil::data::{DatasetRole, TrajectoryDataset};
use safemil::eval::{cvar_cost, seed_metrics, Baselines, Interval};
use safemil::experiment::{generate_data, run_suite, run_sweep, ExperimentConfig, GeneratedData, SuiteOutput, SweepOutput};
use safemil::mil::{bag_pair_loss, bag_score, bag_score_with, lemma1_probability, sample_bag, Bag, BagLabel, CostModel, Segment};
use safemil::nn::{grad_check, load_checkpoint, Head, Mlp};
use safemil::policy::dwbc::{discriminator_net, log_prob_table};
use safemil::policy::{nu_loss, policy_net, trex_pair_loss, weighted_nll, Method, WeightedTransitions};

/// Criteria expected to fail for reasons recorded in the decisions ledger.
const KNOWN_RED: &[u32] = &[7, 9];

const HIDDEN: [usize; 2] = [64, 64];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_iv(iv: &Interval) -> String {
    format!("[{:.3}, {:.3}]", iv.lo, iv.hi)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn speed_chain_config(name: &str) -> ExperimentConfig {
    let mut config = ExperimentConfig::default_for(EnvKind::SpeedChain);
    config.out = scratch(name);
    config
}

fn hazard_grid_config(name: &str) -> ExperimentConfig {
    let mut config = ExperimentConfig::default_for(EnvKind::HazardGrid);
    config.out = scratch(name);
    config
}

// ---------------------------------------------------------------------------

fn criterion_1() -> (bool, String) {
    let n_bags = 100_000;
    let mut details = Vec::new();
    let mut pass = true;
    for (alpha, k) in [(0.25, 8), (0.5, 16), (0.5, 64)] {
        let n = 1000;
        let n_pref = (alpha * n as f64).round() as usize;
        let dataset = TrajectoryDataset {
            trajectories: vec![Trajectory::new(vec![(0, 0)]); n],
            role: DatasetRole::Unlabeled,
            alpha: Some(alpha),
            provenance: String::new(),
            preferred: Some((0..n).map(|i| i < n_pref).collect()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let hits = (0..n_bags)
            .filter(|_| {
                sample_bag(&dataset, k, 1, &mut rng)
                    .expect("bag")
                    .contains_preferred()
                    .expect("provenance")
            })
            .count();
        let p = lemma1_probability(alpha, k).expect("valid");
        let freq = hits as f64 / n_bags as f64;
        // Var of the frequency; floor keeps p ≈ 1 from demanding exact equality
        let se = (p * (1.0 - p) / n_bags as f64).sqrt().max(1.0 / n_bags as f64);
        let z = (freq - p).abs() / se;
        pass &= z <= 3.0;
        details.push(format!("(α={alpha},K={k}) freq {freq:.5} vs {p:.5} |z|={z:.2}"));
    }
    (pass, details.join("; "))
}

fn random_bag(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Bag {
    let k = rng.gen_range(1..=64);
    let segments = (0..k)
        .map(|_| {
            let h = rng.gen_range(1..=10);
            Segment {
                steps: (0..h).map(|_| (rng.gen_range(0..ns), rng.gen_range(0..na))).collect(),
                source: 0,
                start: 0,
                preferred: None,
            }
        })
        .collect();
    Bag {
        segments,
        label: BagLabel::Unlabeled,
    }
}

fn criterion_2() -> (bool, String) {
    let env = speed_chain_config("unused").env.build().expect("env");
    let (ns, na) = (env.num_states(), env.num_actions());
    let model = CostModel::new(ns, na, &HIDDEN, 7).expect("model");
    let table = model.table().expect("table");
    let score = |bag: &Bag| bag_score_with(bag, 0.99, |s, a| table[s * na + a]).to_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut bag = random_bag(&mut rng, ns, na);
        let reference = bag_score(&model, &bag, 0.99).expect("score").to_bits();
        for _ in 0..20 {
            bag.segments.shuffle(&mut rng);
            if score(&bag) != reference {
                mismatches += 1;
            }
        }
    }
    (mismatches == 0, format!("{mismatches} of 20000 permuted scores differ"))
}

fn grad_instances(data: &GeneratedData, env: &TabularCmdp) -> Vec<(String, f64)> {
    let (ns, na) = (env.num_states(), env.num_actions());
    let gamma = env.discount();
    let coords = Some(256);
    let mut out = Vec::new();
    for inst in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let cost = CostModel::new(ns, na, &HIDDEN, 10 + inst).expect("model");
        let table = cost.table().expect("table");

        let pairs: Vec<(Bag, Bag)> = (0..4)
            .map(|_| {
                (
                    sample_bag(&data.negative, 16, 5, &mut rng).expect("bag"),
                    sample_bag(&data.unlabeled, 16, 5, &mut rng).expect("bag"),
                )
            })
            .collect();
        let r = grad_check(
            cost.net(),
            |net| bag_pair_loss(&CostModel::from_net(net.clone(), ns, na)?, &pairs, gamma),
            coords,
            inst,
        )
        .expect("bag-pair check");
        out.push(("bag ranking".to_string(), r.max_rel_error));

        let trajs = &data.unlabeled.trajectories;
        let policy = policy_net(ns, na, &HIDDEN, 20 + inst).expect("policy");
        let beta = 1.0;
        let weights: Vec<f64> = trajs
            .iter()
            .map(|t| {
                let c = safemil::policy::learned_cost(&table, na, t, gamma);
                (-c / beta).exp()
            })
            .collect();
        let w_traj = WeightedTransitions::per_trajectory(trajs, &weights)
            .expect("weights")
            .table(ns, na);
        let r = grad_check(&policy, |net| weighted_nll(net, &w_traj), coords, inst).expect("traj check");
        out.push(("trajectory-weighted BC".to_string(), r.max_rel_error));

        let w_step = WeightedTransitions::per_step(trajs, |s, a| 1.0 - table[s * na + a]).table(ns, na);
        let r = grad_check(&policy, |net| weighted_nll(net, &w_step), coords, inst).expect("step check");
        out.push(("transition-weighted BC".to_string(), r.max_rel_error));

        let reward = Mlp::new(&[ns + na, HIDDEN[0], HIDDEN[1], 1], Head::Linear, 30 + inst).expect("reward");
        let trex_pairs: Vec<(&Trajectory, &Trajectory)> = (0..8)
            .map(|_| {
                (
                    &trajs[rng.gen_range(0..trajs.len())],
                    &data.negative.trajectories[rng.gen_range(0..data.negative.len())],
                )
            })
            .collect();
        let r = grad_check(&reward, |net| trex_pair_loss(net, ns, na, &trex_pairs), coords, inst).expect("trex");
        out.push(("T-REX".to_string(), r.max_rel_error));

        let disc = discriminator_net(ns, na, &HIDDEN, 40 + inst).expect("disc");
        let logp = log_prob_table(&policy).expect("log probs");
        let samples = |ds: &TrajectoryDataset, rng: &mut ChaCha8Rng| -> Vec<(usize, usize, f64)> {
            (0..32)
                .map(|_| {
                    let t = &ds.trajectories[rng.gen_range(0..ds.len())];
                    let (s, a) = t.steps[rng.gen_range(0..t.len())];
                    (s, a, logp[s * na + a])
                })
                .collect()
        };
        let neg = samples(&data.negative, &mut rng);
        let unl = samples(&data.unlabeled, &mut rng);
        let r = grad_check(&disc, |net| nu_loss(net, ns, na, &neg, &unl, 0.5), coords, inst).expect("nu");
        out.push(("DWBC-NU".to_string(), r.max_rel_error));
    }
    out
}

fn criterion_3() -> (bool, String) {
    let config = speed_chain_config("grad");
    let env = config.env.build().expect("env");
    let data = generate_data(&config).expect("data");
    let mut worst: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (name, err) in grad_instances(&data, &env) {
        let e = worst.entry(name).or_insert((0.0, 0));
        e.0 = e.0.max(err);
        e.1 += 1;
    }
    let pass = worst.values().all(|&(err, n)| err < 1e-4 && n >= 5);
    let detail = worst
        .iter()
        .map(|(k, (err, n))| format!("{k}: max rel {err:.1e} over {n}"))
        .collect::<Vec<_>>()
        .join("; ");
    (pass, detail)
}

/// Best discounted return over feasible deterministic time-dependent policies.
fn enumerate_best(env: &TabularCmdp) -> Option<f64> {
    let (ns, na, t) = (env.num_states(), env.num_actions(), env.horizon());
    let slots = ns * t;
    let total = na.pow(slots as u32);
    let mut best: Option<f64> = None;
    let mut digits = vec![0usize; slots];
    for code in 0..total {
        let mut c = code;
        for d in digits.iter_mut() {
            *d = c % na;
            c /= na;
        }
        let actions: Vec<Vec<usize>> = digits.chunks(ns).map(<[usize]>::to_vec).collect();
        let policy = TabularPolicy::deterministic_time_dependent(na, &actions).expect("policy");
        let v = evaluate_exact(env, &policy, env.discount()).expect("eval");
        if v.cost <= env.threshold() + 1e-9 {
            best = Some(best.map_or(v.ret, |b: f64| b.max(v.ret)));
        }
    }
    best
}

fn criterion_4() -> (bool, String) {
    // (states, actions, horizon) keeping the policy count enumerable
    let shapes = [(2, 2, 4), (3, 2, 4), (4, 2, 3), (4, 2, 4), (2, 3, 4), (3, 3, 3), (4, 3, 2), (3, 3, 2)];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_slack = f64::NEG_INFINITY;
    for i in 0..20 {
        let (ns, na, t) = shapes[i % shapes.len()];
        let probe = random_cmdp(&mut rng, ns, na, t, 0.0, 0.9).expect("cmdp");
        let lo = evaluate_exact(&probe, &solve_safest(&probe), 0.9).expect("eval").cost;
        let hi = evaluate_exact(&probe, &solve_unconstrained(&probe), 0.9).expect("eval").cost;
        let b = lo + rng.gen_range(0.1..0.9) * (hi - lo).max(0.0);
        let env = probe.with_threshold(b).expect("threshold");
        let lp = solve_constrained(&env).expect("solve");
        let v = evaluate_exact(&env, &lp, 0.9).expect("eval");
        let best = enumerate_best(&env).unwrap_or(f64::NEG_INFINITY);
        worst_gap = worst_gap.max(best - v.ret);
        worst_slack = worst_slack.max(v.cost - b);
    }
    let pass = worst_gap <= 1e-6 && worst_slack <= 1e-6;
    (
        pass,
        format!("20 CMDPs: max(best det − LP return) = {worst_gap:.2e}, max(LP cost − b) = {worst_slack:.2e}"),
    )
}

fn criterion_5(sweep: &SweepOutput, config: &ExperimentConfig) -> (bool, String) {
    let env = config.env.build().expect("env");
    let (ns, na) = (env.num_states(), env.num_actions());
    let data = generate_data(config).expect("data");
    let mut pass = true;
    let mut details = Vec::new();
    for r in &sweep.results {
        let cell = &r.record.cell;
        if cell.bag_size != 64 || cell.segment_len != 5 {
            continue;
        }
        let acc = r.record.holdout_pair_accuracy.unwrap_or(0.0);
        let Some(path) = r.record.artifacts.get("cost_model") else {
            pass = false;
            details.push(format!("seed {}: no cost model", cell.seed));
            continue;
        };
        let (net, _) = load_checkpoint(&config.out.join(path)).expect("checkpoint");
        let table = CostModel::from_net(net, ns, na).expect("model").table().expect("table");
        let (mut pref, mut nonpref) = (Vec::new(), Vec::new());
        for ds in [&data.negative, &data.unlabeled] {
            for (i, t) in ds.trajectories.iter().enumerate() {
                let preferred = ds.preferred.as_ref().is_some_and(|p| p[i]) && ds.role != DatasetRole::NonPreferred;
                let bucket = if preferred { &mut pref } else { &mut nonpref };
                bucket.extend(t.steps.iter().map(|&(s, a)| table[s * na + a]));
            }
        }
        let gap = safemil::eval::mean(&nonpref) - safemil::eval::mean(&pref);
        let secs = r.record.wall_clock_secs.get("cost").copied().unwrap_or(0.0);
        pass &= acc >= 0.90 && gap >= 0.1 && secs < 180.0;
        details.push(format!("seed {}: acc {acc:.3}, ĉ gap {gap:.3}, {secs:.0}s", cell.seed));
    }
    pass &= !details.is_empty();
    (pass, details.join("; "))
}

fn criterion_6(runs: &[(&str, &SuiteOutput, f64)], elapsed: Duration) -> (bool, String) {
    let mut pass = elapsed < Duration::from_secs(15 * 60);
    let mut details = Vec::new();
    for (name, out, threshold) in runs {
        let seeds = |m: Method| out.report.method(m).expect("method").report.per_seed.clone();
        let mil = seeds(Method::SafemilTrajectory);
        let bc = seeds(Method::BcUnlabeled);
        let mil_cost = median(mil.iter().map(|s| s.exact_discounted_cost).collect());
        let bc_cost = median(bc.iter().map(|s| s.exact_discounted_cost).collect());
        let mil_ret = median(mil.iter().map(|s| s.exact_normalized_return).collect());
        let ok = mil.len() == 5 && mil_cost <= *threshold && mil_cost < bc_cost && mil_ret >= 0.8;
        pass &= ok;
        details.push(format!(
            "{name}: SafeMIL cost {mil_cost:.3} (b={threshold}), BC-U cost {bc_cost:.3}, SafeMIL norm return {mil_ret:.3}"
        ));
    }
    details.push(format!("{:.0}s", elapsed.as_secs_f64()));
    (pass, details.join("; "))
}

fn criterion_7(sweep: &SweepOutput, h: usize) -> (bool, String) {
    let at = |k| sweep.point(Method::SafemilTrajectory, k, h).expect("sweep point");
    let (k1, k128) = (at(1), at(128));
    let pass = k128.norm_cost <= k1.norm_cost && k128.norm_cost_ci.hi <= k1.norm_cost_ci.lo;
    (
        pass,
        format!(
            "K=1 {:.3} {}, K=128 {:.3} {}",
            k1.norm_cost,
            fmt_iv(&k1.norm_cost_ci),
            k128.norm_cost,
            fmt_iv(&k128.norm_cost_ci)
        ),
    )
}

fn criterion_8(sweep: &SweepOutput) -> (bool, String) {
    let points: Vec<_> = [1, 5, 10]
        .iter()
        .map(|&h| (h, sweep.point(Method::SafemilTrajectory, 128, h).expect("sweep point")))
        .collect();
    let mut pass = true;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            pass &= a.1.norm_cost_ci.overlaps(&b.1.norm_cost_ci);
        }
    }
    let detail = points
        .iter()
        .map(|(h, p)| format!("H={h} {:.3} {}", p.norm_cost, fmt_iv(&p.norm_cost_ci)))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, detail)
}

fn criterion_9(runs: &[(&str, &SuiteOutput, f64)]) -> (bool, String) {
    let mut pass = true;
    let mut details = Vec::new();
    for (name, out, _) in runs {
        let ci = |m: Method| {
            let r = &out.report.method(m).expect("method").report;
            (r.normalized_cost, r.ci["normalized_cost"])
        };
        let (traj, traj_ci) = ci(Method::SafemilTrajectory);
        let (step, step_ci) = ci(Method::SafemilTransition);
        pass &= traj_ci.overlaps(&step_ci);
        details.push(format!(
            "{name}: trajectory {traj:.3} {}, transition {step:.3} {}",
            fmt_iv(&traj_ci),
            fmt_iv(&step_ci)
        ));
    }
    (pass, details.join("; "))
}

fn criterion_10() -> (bool, String) {
    let episodes = 50;
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [EnvKind::SpeedChain, EnvKind::HazardGrid] {
        let env = ExperimentConfig::default_for(kind).env.build().expect("env");
        let baselines = Baselines::for_env(&env).expect("baselines");
        let reference = Policy::Tabular(solve_constrained(&env).expect("solve"));
        let (m, _) = seed_metrics(&env, &reference, &baselines, 0, episodes, 10).expect("metrics");
        let sigma = (episodic_moments(&env, &reference, 1.0).expect("moments").cost_var / episodes as f64).sqrt();
        let uniform = Policy::Tabular(TabularPolicy::uniform(env.num_states(), env.num_actions()));
        // the random baseline is noisy relative to the normalization span, so
        // it gets enough episodes for the ±0.05 band to be a meaningful test
        let (u, _) = seed_metrics(&env, &uniform, &baselines, 0, 10_000, 11).expect("metrics");
        let ok = (0.95..=1.05).contains(&m.normalized_return)
            && m.normalized_cost.abs() <= 3.0 * sigma + 1e-12
            && u.normalized_return.abs() <= 0.05;
        pass &= ok;
        details.push(format!(
            "{}: reference return {:.3}, cost {:+.3} (3σ={:.3}); random return {:+.3}",
            env_name(kind),
            m.normalized_return,
            m.normalized_cost,
            3.0 * sigma,
            u.normalized_return
        ));
    }
    (pass, details.join("; "))
}

fn env_name(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::SpeedChain => "SpeedChain",
        EnvKind::HazardGrid => "HazardGrid",
    }
}

fn criterion_11() -> (bool, String) {
    let hand = [
        (vec![0.0, 0.0, 0.0, 0.0, 10.0], 20.0, 0.0, 10.0),
        (vec![3.0; 7], 30.0, 1.0, 2.0),
        ((1..=10).map(f64::from).collect(), 30.0, 0.0, 9.0),
        ((1..=10).map(f64::from).collect(), 50.0, 2.0, 6.0),
        (vec![5.0, 1.0, 4.0, 2.0], 10.0, 0.5, 4.5),
        (vec![2.0, 8.0, 6.0], 50.0, 0.0, 7.0),
    ];
    let exact = hand
        .iter()
        .all(|(costs, k, r, want)| cvar_cost(costs, *k, *r).expect("cvar") == *want);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0f64).floor() * 0.5).collect();
        let mut prev = f64::INFINITY;
        for k in 1..=100 {
            let v = cvar_cost(&costs, k as f64, 0.0).expect("cvar");
            if v > prev {
                violations += 1;
            }
            prev = v;
        }
    }
    (
        exact && violations == 0,
        format!("hand examples exact: {exact}; {violations} monotonicity violations over 1000 vectors × k=1..100"),
    )
}

fn criterion_12(first: &SuiteOutput, second: &SuiteOutput, config: &ExperimentConfig, other: &ExperimentConfig) -> (bool, String) {
    let read = |c: &ExperimentConfig| std::fs::read(c.out.join("summary.csv")).expect("summary.csv");
    let same_text = first.summary_csv == second.summary_csv;
    let same_files = read(config) == read(other);
    (
        same_text && same_files && !first.summary_csv.is_empty(),
        format!(
            "{} rows, in-memory identical: {same_text}, files identical: {same_files}",
            first.summary_csv.lines().count().saturating_sub(1)
        ),
    )
}

// ---------------------------------------------------------------------------

fn selected() -> Option<Vec<u32>> {
    let raw = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(raw.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let wanted = |ids: &[u32]| only.as_ref().map_or(true, |o| ids.iter().any(|i| o.contains(i)));
    let mut outcomes = Vec::new();
    let mut record = |id: u32, (result, elapsed): ((bool, String), Duration), budget: Option<Duration>| {
        let (mut pass, mut detail) = result;
        if let Some(limit) = budget {
            if elapsed > limit {
                pass = false;
                detail.push_str(&format!(" [over the {}s budget]", limit.as_secs()));
            }
        }
        let line = Outcome {
            id,
            pass,
            detail,
            elapsed,
        };
        println!(
            "criterion {:>2}: {} ({:.1}s) {}",
            line.id,
            if line.pass { "PASS" } else { "FAIL" },
            line.elapsed.as_secs_f64(),
            line.detail
        );
        outcomes.push(line);
    };

    if wanted(&[1]) {
        record(1, timed(criterion_1), Some(Duration::from_secs(30)));
    }
    if wanted(&[2]) {
        record(2, timed(criterion_2), Some(Duration::from_secs(10)));
    }
    if wanted(&[3]) {
        record(3, timed(criterion_3), Some(Duration::from_secs(120)));
    }
    if wanted(&[4]) {
        record(4, timed(criterion_4), Some(Duration::from_secs(60)));
    }
    if wanted(&[10]) {
        record(10, timed(criterion_10), None);
    }
    if wanted(&[11]) {
        record(11, timed(criterion_11), None);
    }

    let sc_config = speed_chain_config("speed_chain");
    let hg_config = hazard_grid_config("hazard_grid");
    let mut sc_suite = None;
    if wanted(&[6, 9, 12]) {
        let (suites, suite_time) = timed(|| {
            let sc = run_suite(&sc_config).expect("SpeedChain suite");
            let hg = run_suite(&hg_config).expect("HazardGrid suite");
            (sc, hg)
        });
        let (sc, hg) = suites;
        let runs = [
            ("SpeedChain", &sc, sc_config.env.threshold),
            ("HazardGrid", &hg, hg_config.env.threshold),
        ];
        if wanted(&[6]) {
            record(6, (criterion_6(&runs, suite_time), suite_time), None);
        }
        if wanted(&[9]) {
            record(9, (criterion_9(&runs), suite_time), Some(Duration::from_secs(15 * 60)));
        }
        sc_suite = Some(sc);
    }

    if wanted(&[5, 7, 8]) {
        let mut sweep_config = sc_config.clone();
        sweep_config.sweep.bag_sizes = vec![1, 64, 128];
        let (sweep, sweep_time) = timed(|| run_sweep(&sweep_config).expect("sweep"));
        if wanted(&[5]) {
            record(5, timed(|| criterion_5(&sweep, &sweep_config)), None);
        }
        let h = sweep_config.cost.segment_len;
        if wanted(&[7]) {
            record(7, (criterion_7(&sweep, h), sweep_time), Some(Duration::from_secs(20 * 60)));
        }
        if wanted(&[8]) {
            record(8, (criterion_8(&sweep), sweep_time), Some(Duration::from_secs(20 * 60)));
        }
    }

    if let (true, Some(sc)) = (wanted(&[12]), &sc_suite) {
        let repeat_config = speed_chain_config("speed_chain_repeat");
        let (repeat, repeat_time) = timed(|| run_suite(&repeat_config).expect("repeat suite"));
        record(12, (criterion_12(sc, &repeat, &sc_config, &repeat_config), repeat_time), None);
    }

    outcomes.sort_by_key(|o| o.id);
    let unexpected: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_RED.contains(&o.id))
        .map(|o| o.id)
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    for o in outcomes.iter().filter(|o| o.pass && KNOWN_RED.contains(&o.id)) {
        println!("note: criterion {} is listed as known-red but passed", o.id);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
