use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CmdpTables, TabularCmdp};
use crate::error::{Error, Result};

/// `[row, col]` with row 0 at the top.
pub type GridCell = [usize; 2];

const STEP_PENALTY: f64 = -0.01;
const GOAL_REWARD: f64 = 1.0;

pub const STAY: usize = 0;
pub const WALK: usize = 1;
pub const SPRINT: usize = 2;

/// Chain where actions {stay, walk, sprint} advance {0, 1, 2} cells.
///
/// Reward is the number of cells actually advanced (movement clamps at the
/// last cell) and every sprint costs 1. Transitions are deterministic and the
/// episode starts at cell 0.
pub fn build_speed_chain(length: usize, horizon: usize, threshold: f64, gamma: f64) -> Result<TabularCmdp> {
    if length < 4 {
        return Err(Error::config(format!("speed chain needs length >= 4, got {length}")));
    }
    let (ns, na) = (length, 3);
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut cost = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next = (s + a).min(ns - 1);
            transition[(s * na + a) * ns + next] = 1.0;
            reward[s * na + a] = (next - s) as f64;
            cost[s * na + a] = if a == SPRINT { 1.0 } else { 0.0 };
        }
    }
    let mut initial_dist = vec![0.0; ns];
    initial_dist[0] = 1.0;
    TabularCmdp::new(CmdpTables {
        num_states: ns,
        num_actions: na,
        transition,
        reward,
        cost,
        threshold,
        discount: gamma,
        horizon,
        initial_dist,
        terminal: vec![false; ns],
    })
}

/// Grid actions: up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// `side`×`side` navigation grid from the bottom-left corner to the top-right goal.
///
/// See [`build_hazard_grid_between`] for the dynamics.
pub fn build_hazard_grid(
    side: usize,
    hazards: &[GridCell],
    horizon: usize,
    threshold: f64,
    gamma: f64,
    slip: f64,
) -> Result<TabularCmdp> {
    if side < 3 {
        return Err(Error::config(format!("hazard grid needs side >= 3, got {side}")));
    }
    build_hazard_grid_between(side, [side - 1, 0], [0, side - 1], hazards, horizon, threshold, gamma, slip)
}

/// Navigation grid with explicit start and goal cells.
///
/// With probability `slip` the agent moves in one of the three other
/// directions, chosen uniformly. Bumping into the border leaves it in place.
/// Entering the goal pays +1 and absorbs; every other step pays -0.01. Ending
/// a step on a hazard cell costs 1. Reward and cost tables hold expectations
/// over the slip outcome.
#[allow(clippy::too_many_arguments)]
pub fn build_hazard_grid_between(
    side: usize,
    start: GridCell,
    goal: GridCell,
    hazards: &[GridCell],
    horizon: usize,
    threshold: f64,
    gamma: f64,
    slip: f64,
) -> Result<TabularCmdp> {
    if side < 3 {
        return Err(Error::config(format!("hazard grid needs side >= 3, got {side}")));
    }
    if start.iter().chain(goal.iter()).any(|&x| x >= side) || start == goal {
        return Err(Error::config(format!("invalid start {start:?} / goal {goal:?} for side {side}")));
    }
    if !(0.0..0.5).contains(&slip) {
        return Err(Error::config(format!("slip must lie in [0, 0.5), got {slip}")));
    }
    let idx = |c: GridCell| c[0] * side + c[1];
    let mut is_hazard = vec![false; side * side];
    for &h in hazards {
        if h[0] >= side || h[1] >= side {
            return Err(Error::config(format!("hazard {h:?} outside the {side}x{side} grid")));
        }
        if h == start || h == goal {
            return Err(Error::config(format!("hazard {h:?} covers the start or goal cell")));
        }
        is_hazard[idx(h)] = true;
    }

    let (ns, na) = (side * side, 4);
    let goal_id = idx(goal);
    let step = |cell: GridCell, dir: usize| -> usize {
        let (dr, dc) = MOVES[dir];
        let r = cell[0] as isize + dr;
        let c = cell[1] as isize + dc;
        if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
            idx(cell)
        } else {
            r as usize * side + c as usize
        }
    };

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut cost = vec![0.0; ns * na];
    let mut terminal = vec![false; ns];
    terminal[goal_id] = true;
    for s in 0..ns {
        let cell = [s / side, s % side];
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            if s == goal_id {
                row[s] = 1.0;
                continue;
            }
            for dir in 0..na {
                let p = if dir == a { 1.0 - slip } else { slip / 3.0 };
                if p > 0.0 {
                    row[step(cell, dir)] += p;
                }
            }
            let mut r = 0.0;
            let mut c = 0.0;
            for (next, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                r += p * if next == goal_id { GOAL_REWARD } else { STEP_PENALTY };
                if is_hazard[next] {
                    c += p;
                }
            }
            reward[s * na + a] = r;
            cost[s * na + a] = c;
        }
    }
    let mut initial_dist = vec![0.0; ns];
    initial_dist[idx(start)] = 1.0;
    TabularCmdp::new(CmdpTables {
        num_states: ns,
        num_actions: na,
        transition,
        reward,
        cost,
        threshold,
        discount: gamma,
        horizon,
        initial_dist,
        terminal,
    })
}

/// Random dense CMDP with rewards and costs in [0, 1).
///
/// Roughly a third of the transition entries are zeroed to create structure;
/// every row keeps at least one successor.
pub fn random_cmdp<R: Rng>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    threshold: f64,
    gamma: f64,
) -> Result<TabularCmdp> {
    let (ns, na) = (num_states, num_actions);
    let mut transition = vec![0.0; ns * na * ns];
    for row in transition.chunks_mut(ns) {
        let keep = rng.gen_range(0..ns);
        for (j, p) in row.iter_mut().enumerate() {
            if j == keep || rng.gen_bool(0.67) {
                *p = rng.gen_range(0.05..1.0);
            }
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    let reward = (0..ns * na).map(|_| rng.gen::<f64>()).collect();
    let cost = (0..ns * na).map(|_| rng.gen::<f64>()).collect();
    let mut initial_dist: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = initial_dist.iter().sum();
    initial_dist.iter_mut().for_each(|p| *p /= total);
    TabularCmdp::new(CmdpTables {
        num_states: ns,
        num_actions: na,
        transition,
        reward,
        cost,
        threshold,
        discount: gamma,
        horizon,
        initial_dist,
        terminal: vec![false; ns],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    SpeedChain,
    HazardGrid,
}

/// Serializable environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazards: Option<Vec<GridCell>>,
    pub horizon: usize,
    pub threshold: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip: Option<f64>,
    /// Grid start cell; bottom-left when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<GridCell>,
    /// Grid goal cell; top-right when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GridCell>,
    /// Default seed for evaluation rollouts in this environment.
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn speed_chain_default() -> Self {
        Self {
            kind: EnvKind::SpeedChain,
            length: Some(16),
            side: None,
            hazards: None,
            horizon: 14,
            threshold: 3.0,
            gamma: 0.99,
            slip: None,
            start: None,
            goal: None,
            seed: 0,
        }
    }

    pub fn hazard_grid_default() -> Self {
        Self {
            kind: EnvKind::HazardGrid,
            length: None,
            side: Some(5),
            hazards: Some(vec![[2, 2]]),
            horizon: 14,
            threshold: 0.3,
            gamma: 0.99,
            slip: Some(0.1),
            start: Some([4, 2]),
            goal: Some([0, 2]),
            seed: 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::SpeedChain => "speed_chain",
            EnvKind::HazardGrid => "hazard_grid",
        }
    }

    pub fn build(&self) -> Result<TabularCmdp> {
        match self.kind {
            EnvKind::SpeedChain => {
                let length = self
                    .length
                    .ok_or_else(|| Error::config("speed_chain requires `length`"))?;
                build_speed_chain(length, self.horizon, self.threshold, self.gamma)
            }
            EnvKind::HazardGrid => {
                let side = self
                    .side
                    .ok_or_else(|| Error::config("hazard_grid requires `side`"))?;
                let hazards = self.hazards.clone().unwrap_or_default();
                if side < 3 {
                    return Err(Error::config(format!("hazard grid needs side >= 3, got {side}")));
                }
                build_hazard_grid_between(
                    side,
                    self.start.unwrap_or([side - 1, 0]),
                    self.goal.unwrap_or([0, side - 1]),
                    &hazards,
                    self.horizon,
                    self.threshold,
                    self.gamma,
                    self.slip.unwrap_or(0.0),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cmdp::{exact_policy_eval, Policy, TabularPolicy};

    fn undiscounted_cost(env: &TabularCmdp, actions: &[usize]) -> f64 {
        let mut s = 0;
        let mut total = 0.0;
        for _ in 0..env.horizon() {
            let a = actions[s];
            total += env.cost(s, a);
            s = env.next_state_dist(s, a).iter().position(|p| *p == 1.0).unwrap();
        }
        total
    }

    #[test]
    fn speed_chain_costs() {
        let env = build_speed_chain(10, 8, 2.0, 0.99).unwrap();
        assert_eq!(undiscounted_cost(&env, &[SPRINT; 10]), 8.0);
        assert_eq!(undiscounted_cost(&env, &[WALK; 10]), 0.0);
        assert!(build_speed_chain(3, 8, 2.0, 0.99).is_err());
        // clamped at the last cell
        assert_eq!(env.next_state_dist(9, SPRINT)[9], 1.0);
        assert_eq!(env.reward(8, SPRINT), 1.0);
    }

    #[test]
    fn hazard_grid_rows_are_stochastic_with_slip() {
        let env = build_hazard_grid(5, &[[2, 2]], 10, 0.5, 0.99, 0.1).unwrap();
        for s in 0..env.num_states() {
            for a in 0..env.num_actions() {
                let total: f64 = env.next_state_dist(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hazard_grid_rejects_bad_layouts() {
        assert!(matches!(
            build_hazard_grid(4, &[[3, 0]], 10, 0.0, 0.99, 0.0),
            Err(Error::Config(_))
        ));
        assert!(build_hazard_grid(4, &[[0, 3]], 10, 0.0, 0.99, 0.0).is_err());
        assert!(build_hazard_grid(2, &[], 10, 0.0, 0.99, 0.0).is_err());
        assert!(build_hazard_grid(4, &[], 10, 0.0, 0.99, 0.5).is_err());
    }

    #[test]
    fn shortest_path_without_hazards_is_free() {
        // up along the left column, then right along the top row
        let env = build_hazard_grid(4, &[[2, 2]], 8, 0.0, 0.99, 0.0).unwrap();
        let mut actions = vec![0; 16];
        for col in 0..4 {
            actions[col] = 1;
        }
        let v = exact_policy_eval(&env, &Policy::Tabular(TabularPolicy::deterministic(4, &actions).unwrap()))
            .unwrap();
        assert_eq!(v.cost, 0.0);
        assert!(v.ret > 0.9);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = EnvConfig::hazard_grid_default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"kind\":\"hazard_grid\""));
        let back: EnvConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        back.build().unwrap();
        let chain: EnvConfig = serde_json::from_str(
            r#"{"kind":"speed_chain","length":10,"horizon":8,"threshold":2,"gamma":0.99,"seed":3}"#,
        )
        .unwrap();
        assert_eq!(chain.build().unwrap().num_states(), 10);
        let bad: EnvConfig =
            serde_json::from_str(r#"{"kind":"hazard_grid","horizon":8,"threshold":2,"gamma":0.99}"#).unwrap();
        assert!(matches!(bad.build(), Err(Error::Config(_))));
    }

    #[test]
    fn random_cmdps_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            random_cmdp(&mut rng, 4, 3, 4, 1.0, 0.9).unwrap();
        }
    }
}
