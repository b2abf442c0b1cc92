//! The occupancy-LP solver against brute force and simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safemil::cmdp::{
    episodic_moments, evaluate_exact, random_cmdp, rollout, solve_constrained, solve_safest, solve_unconstrained,
    EnvConfig, Policy, TabularCmdp, TabularPolicy,
};
use safemil::Error;

/// Every deterministic time-dependent policy, with its discounted value.
fn all_deterministic(env: &TabularCmdp) -> Vec<(f64, f64)> {
    let (ns, na, t) = (env.num_states(), env.num_actions(), env.horizon());
    let slots = ns * t;
    (0..na.pow(slots as u32))
        .map(|mut code| {
            let digits: Vec<usize> = (0..slots)
                .map(|_| {
                    let d = code % na;
                    code /= na;
                    d
                })
                .collect();
            let actions: Vec<Vec<usize>> = digits.chunks(ns).map(<[usize]>::to_vec).collect();
            let policy = TabularPolicy::deterministic_time_dependent(na, &actions).unwrap();
            let v = evaluate_exact(env, &policy, env.discount()).unwrap();
            (v.ret, v.cost)
        })
        .collect()
}

#[test]
fn lp_dominates_every_feasible_deterministic_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (ns, na, t) in [(2, 2, 3), (3, 2, 3), (2, 3, 3), (3, 3, 2)] {
        let probe = random_cmdp(&mut rng, ns, na, t, 0.0, 0.95).unwrap();
        let values = all_deterministic(&probe);
        let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let b = lo + rng.gen_range(0.2..0.8) * (hi - lo);
        let env = probe.with_threshold(b).unwrap();
        let best = values.iter().filter(|v| v.1 <= b).map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let lp = evaluate_exact(&env, &solve_constrained(&env).unwrap(), 0.95).unwrap();
        assert!(lp.cost <= b + 1e-6, "cost {} over budget {b}", lp.cost);
        assert!(lp.ret >= best - 1e-6, "LP {} below enumeration {best}", lp.ret);
    }
}

#[test]
fn unconstrained_solution_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let env = random_cmdp(&mut rng, 3, 2, 3, 0.0, 0.9).unwrap();
        let best = all_deterministic(&env).iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let v = evaluate_exact(&env, &solve_unconstrained(&env), 0.9).unwrap();
        assert!((v.ret - best).abs() < 1e-9);
    }
}

#[test]
fn safest_policy_attains_minimum_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let env = random_cmdp(&mut rng, 3, 3, 2, 0.0, 0.9).unwrap();
    let min = all_deterministic(&env).iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let v = evaluate_exact(&env, &solve_safest(&env), 0.9).unwrap();
    assert!((v.cost - min).abs() < 1e-9);
}

#[test]
fn budget_below_minimum_cost_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let probe = random_cmdp(&mut rng, 3, 2, 3, 0.0, 0.9).unwrap();
    let min = evaluate_exact(&probe, &solve_safest(&probe), 0.9).unwrap().cost;
    let env = probe.with_threshold(min * 0.5).unwrap();
    assert!(matches!(solve_constrained(&env), Err(Error::Infeasible { .. })));
}

#[test]
fn rollouts_converge_to_exact_values() {
    for config in [EnvConfig::speed_chain_default(), EnvConfig::hazard_grid_default()] {
        let env = config.build().unwrap();
        let policy = Policy::Tabular(solve_constrained(&env).unwrap().with_epsilon(0.2));
        let moments = episodic_moments(&env, &policy, env.discount()).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i| rollout(&env, &policy, i).unwrap().discounted_cost(env.discount()).unwrap())
            .sum::<f64>()
            / n as f64;
        let se = (moments.cost_var / n as f64).sqrt();
        assert!(
            (mean - moments.cost_mean).abs() <= 3.0 * se,
            "{}: {mean} vs {} (se {se})",
            config.name(),
            moments.cost_mean
        );
    }
}
