//! Exact finite-horizon evaluation and planning.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use super::{Policy, TabularCmdp, TabularPolicy};
use crate::error::{Error, Result};

/// Largest `states * actions` product [`solve_constrained`] accepts by default.
pub const DEFAULT_SOLVER_CAP: usize = 4096;

const TIE_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-12;

/// Expected discounted return and cost from the initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub ret: f64,
    pub cost: f64,
}

/// Mean and variance of the episodic return and cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMoments {
    pub return_mean: f64,
    pub return_var: f64,
    pub cost_mean: f64,
    pub cost_var: f64,
}

/// Backward induction over `Σ_{t<T} gamma^t x_t` for rewards and costs.
///
/// `gamma = 1.0` yields undiscounted episodic sums.
pub fn evaluate_exact(env: &TabularCmdp, policy: &TabularPolicy, gamma: f64) -> Result<PolicyValue> {
    let m = episodic_moments_tab(env, policy, gamma, false)?;
    Ok(PolicyValue {
        ret: m.return_mean,
        cost: m.cost_mean,
    })
}

/// Discounted value under the environment's own discount.
pub fn exact_policy_eval(env: &TabularCmdp, policy: &Policy) -> Result<PolicyValue> {
    let table = policy.tabulate(env)?;
    evaluate_exact(env, &table, env.discount())
}

pub fn episodic_moments(env: &TabularCmdp, policy: &Policy, gamma: f64) -> Result<EpisodicMoments> {
    let table = policy.tabulate(env)?;
    episodic_moments_tab(env, &table, gamma, true)
}

fn episodic_moments_tab(
    env: &TabularCmdp,
    policy: &TabularPolicy,
    gamma: f64,
    second: bool,
) -> Result<EpisodicMoments> {
    policy.check_shape(env)?;
    let (ns, na) = (env.num_states(), env.num_actions());
    // first and second moments of the return-to-go, per state
    let mut r1 = vec![0.0; ns];
    let mut r2 = vec![0.0; ns];
    let mut c1 = vec![0.0; ns];
    let mut c2 = vec![0.0; ns];
    let mut nr1 = vec![0.0; ns];
    let mut nr2 = vec![0.0; ns];
    let mut nc1 = vec![0.0; ns];
    let mut nc2 = vec![0.0; ns];
    for t in (0..env.horizon()).rev() {
        for s in 0..ns {
            let probs = policy.probs(t, s);
            let (mut a_r1, mut a_r2, mut a_c1, mut a_c2) = (0.0, 0.0, 0.0, 0.0);
            for a in 0..na {
                let pa = probs[a];
                if pa == 0.0 {
                    continue;
                }
                let (mut er1, mut er2, mut ec1, mut ec2) = (0.0, 0.0, 0.0, 0.0);
                for (next, &p) in env.next_state_dist(s, a).iter().enumerate() {
                    if p != 0.0 {
                        er1 += p * r1[next];
                        ec1 += p * c1[next];
                        if second {
                            er2 += p * r2[next];
                            ec2 += p * c2[next];
                        }
                    }
                }
                let (r, c) = (env.reward(s, a), env.cost(s, a));
                a_r1 += pa * (r + gamma * er1);
                a_c1 += pa * (c + gamma * ec1);
                if second {
                    a_r2 += pa * (r * r + 2.0 * gamma * r * er1 + gamma * gamma * er2);
                    a_c2 += pa * (c * c + 2.0 * gamma * c * ec1 + gamma * gamma * ec2);
                }
            }
            nr1[s] = a_r1;
            nr2[s] = a_r2;
            nc1[s] = a_c1;
            nc2[s] = a_c2;
        }
        std::mem::swap(&mut r1, &mut nr1);
        std::mem::swap(&mut r2, &mut nr2);
        std::mem::swap(&mut c1, &mut nc1);
        std::mem::swap(&mut c2, &mut nc2);
    }
    let rho = env.initial_dist();
    let dot = |v: &[f64]| rho.iter().zip(v).map(|(p, x)| p * x).sum::<f64>();
    let (rm, cm) = (dot(&r1), dot(&c1));
    Ok(EpisodicMoments {
        return_mean: rm,
        return_var: if second { (dot(&r2) - rm * rm).max(0.0) } else { 0.0 },
        cost_mean: cm,
        cost_var: if second { (dot(&c2) - cm * cm).max(0.0) } else { 0.0 },
    })
}

fn expected_next(env: &TabularCmdp, s: usize, a: usize, v: &[f64]) -> f64 {
    env.next_state_dist(s, a)
        .iter()
        .zip(v)
        .filter(|(p, _)| **p != 0.0)
        .map(|(p, x)| p * x)
        .sum()
}

fn argmax_lowest(q: &[f64]) -> usize {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + best.abs());
    q.iter().position(|&x| x >= best - tol).unwrap_or(0)
}

/// Reward-only finite-horizon value iteration; greedy with ties to the lowest action id.
pub fn solve_unconstrained(env: &TabularCmdp) -> TabularPolicy {
    let (ns, na, horizon) = (env.num_states(), env.num_actions(), env.horizon());
    let gamma = env.discount();
    let mut v = vec![0.0; ns];
    let mut actions = vec![vec![0; ns]; horizon];
    let mut q = vec![0.0; na];
    for t in (0..horizon).rev() {
        let mut nv = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                q[a] = env.reward(s, a) + gamma * expected_next(env, s, a, &v);
            }
            let best = argmax_lowest(&q);
            actions[t][s] = best;
            nv[s] = q[best];
        }
        v = nv;
    }
    TabularPolicy::deterministic_time_dependent(na, &actions).expect("valid action table")
}

/// Lexicographic planner: minimum discounted cost first, then maximum return.
pub fn solve_safest(env: &TabularCmdp) -> TabularPolicy {
    let (ns, na, horizon) = (env.num_states(), env.num_actions(), env.horizon());
    let gamma = env.discount();
    let mut vc = vec![0.0; ns];
    let mut vr = vec![0.0; ns];
    let mut actions = vec![vec![0; ns]; horizon];
    for t in (0..horizon).rev() {
        let mut nvc = vec![0.0; ns];
        let mut nvr = vec![0.0; ns];
        for s in 0..ns {
            let qc: Vec<f64> = (0..na)
                .map(|a| env.cost(s, a) + gamma * expected_next(env, s, a, &vc))
                .collect();
            let min_c = qc.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-10 * (1.0 + min_c.abs());
            let mut best = None;
            let mut best_r = f64::NEG_INFINITY;
            for a in 0..na {
                if qc[a] > min_c + tol {
                    continue;
                }
                let qr = env.reward(s, a) + gamma * expected_next(env, s, a, &vr);
                if qr > best_r + TIE_TOL * (1.0 + best_r.abs()) || best.is_none() {
                    best = Some(a);
                    best_r = qr;
                }
            }
            let a = best.unwrap_or(0);
            actions[t][s] = a;
            nvc[s] = qc[a];
            nvr[s] = best_r;
        }
        vc = nvc;
        vr = nvr;
    }
    TabularPolicy::deterministic_time_dependent(na, &actions).expect("valid action table")
}

pub fn solve_constrained(env: &TabularCmdp) -> Result<TabularPolicy> {
    solve_constrained_with_cap(env, DEFAULT_SOLVER_CAP)
}

/// Return-maximising policy subject to expected discounted cost at most the threshold.
///
/// Solves the occupancy-measure LP over time-indexed variables
/// `x_t(s, a) >= 0` with flow conservation from the initial distribution,
/// then re-solves for the lowest cost among return-optimal occupancies.
/// States the optimal occupancy never visits act like [`solve_safest`].
pub fn solve_constrained_with_cap(env: &TabularCmdp, cap: usize) -> Result<TabularPolicy> {
    let (ns, na, horizon) = (env.num_states(), env.num_actions(), env.horizon());
    if ns * na > cap {
        return Err(Error::config(format!(
            "{ns} states x {na} actions exceeds the exact-solver cap {cap}"
        )));
    }
    let gamma = env.discount();
    let safest = solve_safest(env);
    let min_cost = evaluate_exact(env, &safest, gamma)?.cost;
    let threshold = env.threshold();
    if threshold < min_cost - 1e-9 {
        return Err(Error::Infeasible { threshold, min_cost });
    }
    let budget = threshold.max(min_cost);

    // reachable states per timestep
    let mut reach = vec![vec![false; ns]; horizon];
    for s in 0..ns {
        reach[0][s] = env.initial_dist()[s] > 0.0;
    }
    for t in 1..horizon {
        let (done, rest) = reach.split_at_mut(t);
        for s in (0..ns).filter(|&s| done[t - 1][s]) {
            for a in 0..na {
                for (next, &p) in env.next_state_dist(s, a).iter().enumerate() {
                    if p > 0.0 {
                        rest[0][next] = true;
                    }
                }
            }
        }
    }

    let build = |direction: OptimizationDirection, objective_is_reward: bool| {
        let mut lp = Problem::new(direction);
        let mut vars: Vec<Vec<Option<Variable>>> = vec![vec![None; ns * na]; horizon];
        let mut disc = 1.0;
        for t in 0..horizon {
            for s in (0..ns).filter(|&s| reach[t][s]) {
                for a in 0..na {
                    let coeff = if objective_is_reward { env.reward(s, a) } else { env.cost(s, a) };
                    vars[t][s * na + a] = Some(lp.add_var(disc * coeff, (0.0, f64::INFINITY)));
                }
            }
            disc *= gamma;
        }
        for t in 0..horizon {
            for s in (0..ns).filter(|&s| reach[t][s]) {
                let mut terms: Vec<(Variable, f64)> = (0..na).filter_map(|a| vars[t][s * na + a].map(|v| (v, 1.0))).collect();
                let rhs = if t == 0 {
                    env.initial_dist()[s]
                } else {
                    for prev in (0..ns).filter(|&p| reach[t - 1][p]) {
                        for a in 0..na {
                            let p = env.next_state_dist(prev, a)[s];
                            if p > 0.0 {
                                terms.push((vars[t - 1][prev * na + a].expect("reachable"), -p));
                            }
                        }
                    }
                    0.0
                };
                lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, rhs);
            }
        }
        let weighted = |table: &dyn Fn(usize, usize) -> f64| {
            let mut terms = Vec::new();
            let mut disc = 1.0;
            for t in 0..horizon {
                for s in 0..ns {
                    for a in 0..na {
                        if let Some(v) = vars[t][s * na + a] {
                            let c = disc * table(s, a);
                            if c != 0.0 {
                                terms.push((v, c));
                            }
                        }
                    }
                }
                disc *= gamma;
            }
            terms
        };
        let cost_terms = weighted(&|s, a| env.cost(s, a));
        let reward_terms = weighted(&|s, a| env.reward(s, a));
        (lp, vars, cost_terms, reward_terms)
    };

    let (mut lp, _, cost_terms, _) = build(OptimizationDirection::Maximize, true);
    if !cost_terms.is_empty() {
        lp.add_constraint(cost_terms.as_slice(), ComparisonOp::Le, budget);
    }
    let best_return = match lp.solve().map(|o| o.into_solution()) {
        Ok(Ok(sol)) => sol.objective(),
        Ok(Err(_)) => return Err(Error::Solver("occupancy LP interrupted".into())),
        Err(microlp::Error::Infeasible) => return Err(Error::Infeasible { threshold, min_cost }),
        Err(e) => return Err(Error::Solver(format!("occupancy LP failed: {e}"))),
    };

    // tie-break toward lower cost among return-optimal occupancies
    let (mut lp2, vars, cost_terms, reward_terms) = build(OptimizationDirection::Minimize, false);
    if !cost_terms.is_empty() {
        lp2.add_constraint(cost_terms.as_slice(), ComparisonOp::Le, budget);
    }
    let slack = 1e-7 * (1.0 + best_return.abs());
    lp2.add_constraint(reward_terms.as_slice(), ComparisonOp::Ge, best_return - slack);
    let solution = match lp2.solve().map(|o| o.into_solution()) {
        Ok(Ok(sol)) => sol,
        _ => {
            // fall back to the return-optimal vertex
            let (mut lp, vars1, cost_terms, _) = build(OptimizationDirection::Maximize, true);
            if !cost_terms.is_empty() {
                lp.add_constraint(cost_terms.as_slice(), ComparisonOp::Le, budget);
            }
            let sol = lp
                .solve()
                .map_err(|e| Error::Solver(format!("occupancy LP failed: {e}")))?
                .into_solution()
                .map_err(|_| Error::Solver("occupancy LP interrupted".into()))?;
            return extract(env, &safest, &vars1, |v| sol.var_value(v));
        }
    };
    extract(env, &safest, &vars, |v| solution.var_value(v))
}

fn extract(
    env: &TabularCmdp,
    fallback: &TabularPolicy,
    vars: &[Vec<Option<Variable>>],
    value: impl Fn(Variable) -> f64,
) -> Result<TabularPolicy> {
    let (ns, na, horizon) = (env.num_states(), env.num_actions(), env.horizon());
    let mut probs = vec![0.0; horizon * ns * na];
    for t in 0..horizon {
        for s in 0..ns {
            let row = &mut probs[(t * ns + s) * na..(t * ns + s + 1) * na];
            let mass: Vec<f64> = (0..na)
                .map(|a| vars[t][s * na + a].map_or(0.0, |v| value(v).max(0.0)))
                .collect();
            let total: f64 = mass.iter().sum();
            if total > MASS_TOL {
                for a in 0..na {
                    let p = mass[a] / total;
                    row[a] = if p < MASS_TOL { 0.0 } else { p };
                }
                let renorm: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= renorm);
            } else {
                row.copy_from_slice(fallback.probs(t, s));
            }
        }
    }
    TabularPolicy::new(ns, na, Some(horizon), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::env::{SPRINT, STAY, WALK};
    use crate::cmdp::{build_hazard_grid, build_speed_chain, CmdpTables};

    fn eval(env: &TabularCmdp, p: &TabularPolicy) -> PolicyValue {
        evaluate_exact(env, p, env.discount()).unwrap()
    }

    #[test]
    fn zero_cost_env_has_zero_cost() {
        let env = build_hazard_grid(4, &[], 6, 0.0, 0.9, 0.2).unwrap();
        let v = eval(&env, &TabularPolicy::uniform(16, 4));
        assert_eq!(v.cost, 0.0);
    }

    #[test]
    fn unconstrained_sprints_until_clamped() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        let p = solve_unconstrained(&env);
        // positions visited from 0: 0, 2, 4, 6 sprint; at 8 walk and sprint both advance one cell
        for (t, s) in [(0, 0), (1, 2), (2, 4), (3, 6)] {
            assert_eq!(p.probs(t, s)[SPRINT], 1.0, "t={t} s={s}");
        }
        assert_eq!(p.probs(4, 8)[WALK], 1.0);
        assert_eq!(p.probs(5, 9)[STAY], 1.0);
    }

    #[test]
    fn zero_reward_prefers_action_zero() {
        let env = TabularCmdp::new(CmdpTables {
            num_states: 2,
            num_actions: 3,
            transition: vec![0.5; 12],
            reward: vec![0.0; 6],
            cost: vec![0.0; 6],
            threshold: 0.0,
            discount: 0.9,
            horizon: 3,
            initial_dist: vec![0.5, 0.5],
            terminal: vec![false; 2],
        })
        .unwrap();
        let p = solve_unconstrained(&env);
        for t in 0..3 {
            for s in 0..2 {
                assert_eq!(p.probs(t, s)[0], 1.0);
            }
        }
    }

    #[test]
    fn constrained_chain_respects_budget_and_beats_walking() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        let p = solve_constrained(&env).unwrap();
        let v = eval(&env, &p);
        assert!(v.cost <= 2.0 + 1e-6);
        let walk = eval(&env, &TabularPolicy::deterministic(3, &[WALK; 10]).unwrap());
        assert!(v.ret > walk.ret);
        let unconstrained = eval(&env, &solve_unconstrained(&env));
        assert!(unconstrained.ret >= v.ret - 1e-9);
    }

    #[test]
    fn loose_budget_recovers_unconstrained_optimum() {
        let env = build_speed_chain(10, 8, 100.0, 0.99).unwrap();
        let p = solve_constrained(&env).unwrap();
        let opt = eval(&env, &solve_unconstrained(&env));
        assert!((eval(&env, &p).ret - opt.ret).abs() < 1e-6);
    }

    #[test]
    fn detour_around_blocking_hazard() {
        // two offset walls force a snake path through the gaps
        let hazards = [[3, 0], [3, 1], [3, 2], [3, 3], [1, 1], [1, 2], [1, 3], [1, 4]];
        let env = build_hazard_grid(5, &hazards, 20, 0.0, 0.99, 0.0).unwrap();
        let constrained = solve_constrained(&env).unwrap();
        let unconstrained = solve_unconstrained(&env);
        let vc = eval(&env, &constrained);
        let vu = eval(&env, &unconstrained);
        assert!(vc.cost.abs() < 1e-9);
        assert!(vc.ret < vu.ret);
        assert!(vu.cost > 0.0);
    }

    #[test]
    fn infeasible_threshold_is_reported() {
        let env = build_hazard_grid(3, &[[1, 0], [1, 1], [2, 1]], 6, 0.0, 0.9, 0.2).unwrap();
        assert!(matches!(solve_constrained(&env), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn cap_is_enforced() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        assert!(matches!(solve_constrained_with_cap(&env, 29), Err(Error::Config(_))));
    }

    #[test]
    fn moments_of_deterministic_policy_have_zero_variance() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        let p = Policy::Tabular(TabularPolicy::deterministic(3, &[SPRINT; 10]).unwrap());
        let m = episodic_moments(&env, &p, 1.0).unwrap();
        assert_eq!(m.cost_mean, 8.0);
        assert!(m.cost_var.abs() < 1e-9 && m.return_var.abs() < 1e-9);
    }
}
