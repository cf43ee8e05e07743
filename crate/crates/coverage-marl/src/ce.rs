//! Correlated-equilibrium joint-action selection.
//!
//! At each decision point the per-agent Q-values over joint actions form a
//! normal-form game. The utilitarian correlated equilibrium is the joint
//! distribution p maximizing the summed expected Q-values subject to one
//! rationality constraint per agent and ordered action pair. The resulting
//! distribution is collapsed into one unique joint action deterministically
//! (argmax probability, lexicographic tie-break) so every agent following
//! the same ranking convention agrees on the action.

use crate::env::{
    apply_action, num_joint_actions, GridSpec, JointAction, JointState, NUM_ACTIONS,
};
use crate::error::CoverageError;
use crate::lp::{self, Constraint, LpProblem, LpStatus};

/// Per-agent payoffs over joint actions, agent-0-major joint-action index.
///
/// The learner always uses six actions per agent; the general action-count
/// constructor exists for testing the CE machinery on small games.
#[derive(Debug, Clone)]
pub struct JointActionTable {
    action_counts: Vec<usize>,
    q: Vec<Vec<f64>>,
}

impl JointActionTable {
    /// Table for `m` agents with the standard six actions each.
    pub fn new(m: usize, q: Vec<Vec<f64>>) -> Result<Self, CoverageError> {
        Self::with_action_counts(vec![NUM_ACTIONS; m], q)
    }

    pub fn with_action_counts(
        action_counts: Vec<usize>,
        q: Vec<Vec<f64>>,
    ) -> Result<Self, CoverageError> {
        let m = action_counts.len();
        if q.len() != m {
            return Err(CoverageError::LengthMismatch(format!(
                "{} Q vectors for {m} agents",
                q.len()
            )));
        }
        if action_counts.iter().any(|&c| c == 0) {
            return Err(CoverageError::InvalidConfig("agent with zero actions".into()));
        }
        let n: usize = action_counts.iter().product();
        for (i, qi) in q.iter().enumerate() {
            if qi.len() != n {
                return Err(CoverageError::LengthMismatch(format!(
                    "agent {i} Q vector has length {}, expected {n}",
                    qi.len()
                )));
            }
        }
        Ok(Self { action_counts, q })
    }

    pub fn num_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_joint_actions(&self) -> usize {
        self.action_counts.iter().product()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn q(&self, agent: usize) -> &[f64] {
        &self.q[agent]
    }

    /// Stride of agent `i`'s digit in the joint index.
    fn stride(&self, agent: usize) -> usize {
        self.action_counts[agent + 1..].iter().product()
    }

    /// Agent `i`'s individual action inside joint index `idx`.
    fn digit(&self, idx: usize, agent: usize) -> usize {
        (idx / self.stride(agent)) % self.action_counts[agent]
    }

    /// Total payoff of a joint action across agents.
    pub fn utilitarian(&self, idx: usize) -> f64 {
        self.q.iter().map(|qi| qi[idx]).sum()
    }
}

/// A probability distribution over joint actions. Tiny negative entries from
/// the LP are clamped to zero on read.
#[derive(Debug, Clone)]
pub struct CeDistribution {
    p: Vec<f64>,
}

impl CeDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self, CoverageError> {
        if p.iter().any(|&v| v < -1e-9 || !v.is_finite()) {
            return Err(CoverageError::CeSolve(format!(
                "distribution entry out of range: {:?}",
                p.iter().find(|&&v| v < -1e-9 || !v.is_finite())
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CoverageError::CeSolve(format!("distribution sums to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn prob(&self, idx: usize) -> f64 {
        self.p[idx].max(0.0)
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.p.iter().map(|&v| v.max(0.0))
    }

    /// Expected value of an agent's Q vector under this distribution.
    pub fn expected(&self, q: &[f64]) -> f64 {
        self.probs().zip(q).map(|(p, v)| p * v).sum()
    }
}

/// Build the utilitarian CE linear program over joint-action probabilities.
///
/// Variables: p(A), one per joint action. Maximize sum_A p(A) sum_i Q_i(A)
/// subject to sum_A p(A) = 1, p >= 0, and for every agent i and ordered pair
/// of distinct actions (a, a'):
/// `sum_{A : A_i = a} p(A) [Q_i(A) - Q_i(A with i -> a')] >= 0`.
pub fn build_ce_lp(table: &JointActionTable) -> LpProblem {
    let n = table.num_joint_actions();
    let m = table.num_agents();
    let objective: Vec<f64> = (0..n).map(|idx| table.utilitarian(idx)).collect();
    let mut constraints = Vec::new();
    constraints.push(Constraint::eq(vec![1.0; n], 1.0));
    for i in 0..m {
        let count = table.action_counts[i];
        let stride = table.stride(i);
        for a in 0..count {
            for a_alt in 0..count {
                if a_alt == a {
                    continue;
                }
                let mut coeffs = vec![0.0; n];
                for idx in 0..n {
                    if table.digit(idx, i) == a {
                        let alt_idx =
                            (idx as i64 + (a_alt as i64 - a as i64) * stride as i64) as usize;
                        coeffs[idx] = table.q[i][idx] - table.q[i][alt_idx];
                    }
                }
                constraints.push(Constraint::ge(coeffs, 0.0));
            }
        }
    }
    LpProblem { objective, constraints }
}

/// Largest rationality-constraint violation of `dist`, re-evaluated directly
/// from the table (independent of the LP path).
pub fn rationality_violation(table: &JointActionTable, dist: &CeDistribution) -> f64 {
    let n = table.num_joint_actions();
    let mut worst = 0.0f64;
    for i in 0..table.num_agents() {
        let count = table.action_counts[i];
        let stride = table.stride(i);
        for a in 0..count {
            for a_alt in 0..count {
                if a_alt == a {
                    continue;
                }
                let mut gain = 0.0;
                for idx in 0..n {
                    if table.digit(idx, i) == a {
                        let alt_idx =
                            (idx as i64 + (a_alt as i64 - a as i64) * stride as i64) as usize;
                        gain += dist.prob(idx) * (table.q[i][idx] - table.q[i][alt_idx]);
                    }
                }
                worst = worst.max(-gain);
            }
        }
    }
    worst
}

/// Solve the utilitarian CE program. A CE always exists, so an infeasible
/// status is reported as an internal solve error; the learner falls back to
/// random exploration on failure.
pub fn solve_ce(table: &JointActionTable) -> Result<CeDistribution, CoverageError> {
    let problem = build_ce_lp(table);
    let solution = lp::solve(&problem)?;
    match solution.status {
        LpStatus::Optimal => CeDistribution::new(solution.x.unwrap()),
        LpStatus::Infeasible => {
            Err(CoverageError::CeSolve("CE program reported infeasible".into()))
        }
        LpStatus::Unbounded => {
            Err(CoverageError::CeSolve("CE program reported unbounded".into()))
        }
    }
}

/// Joint actions admissible under the rank-ordered collision filter.
///
/// Agent 0 commits first; each lower-ranked agent may not move onto a cell
/// already committed by a higher-ranked agent. Blocked border moves count as
/// occupying the current cell.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    mask: Vec<bool>,
    count: usize,
    m: usize,
}

impl AdmissibleSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn num_agents(&self) -> usize {
        self.m
    }

    /// Admissible canonical indices, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| i)
    }

    /// The `k`-th admissible index (0-based, ascending).
    pub fn nth(&self, k: usize) -> Option<usize> {
        self.indices().nth(k)
    }
}

/// Enumerate all joint actions surviving the sequential collision filter.
pub fn filter_collisions(joint: &JointState, grid: &GridSpec) -> AdmissibleSet {
    let m = joint.num_agents();
    let n = num_joint_actions(m);
    // Successor cell per (agent, individual action).
    let succ: Vec<[crate::env::AgentState; NUM_ACTIONS]> = (0..m)
        .map(|i| {
            let s = joint.agent(i);
            core::array::from_fn(|a| {
                apply_action(s, crate::env::ActionId::from_index(a).unwrap(), grid)
            })
        })
        .collect();
    let mut mask = vec![false; n];
    let mut count = 0;
    let mut digits = vec![0usize; m];
    for (idx, slot) in mask.iter_mut().enumerate() {
        let mut rem = idx;
        for i in (0..m).rev() {
            digits[i] = rem % NUM_ACTIONS;
            rem /= NUM_ACTIONS;
        }
        let mut ok = true;
        'outer: for i in 1..m {
            let si = succ[i][digits[i]];
            for j in 0..i {
                if succ[j][digits[j]] == si {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            *slot = true;
            count += 1;
        }
    }
    AdmissibleSet { mask, count, m }
}

/// Collapse a CE distribution into one unique joint action: the admissible
/// action with maximum probability, ties broken by smallest canonical index
/// (rank-order agent priority). If no admissible action carries mass, the
/// smallest admissible index wins.
pub fn select_joint_action(
    dist: &CeDistribution,
    admissible: &AdmissibleSet,
) -> Result<JointAction, CoverageError> {
    if admissible.is_empty() {
        return Err(CoverageError::EmptyAdmissibleSet);
    }
    let mut best: Option<(usize, f64)> = None;
    for idx in admissible.indices() {
        let p = dist.prob(idx);
        match best {
            None => best = Some((idx, p)),
            Some((_, bp)) if p > bp => best = Some((idx, p)),
            _ => {}
        }
    }
    let (mut idx, p) = best.unwrap();
    if p < 1e-12 {
        idx = admissible.indices().next().unwrap();
    }
    Ok(JointAction::from_canonical_index(idx, admissible.num_agents()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AgentState, ActionId, apply_joint_action};

    #[test]
    fn single_agent_ce_is_greedy() {
        let table = JointActionTable::new(1, vec![vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let dist = solve_ce(&table).unwrap();
        assert!((dist.prob(1) - 1.0).abs() < 1e-6);
        for idx in [0, 2, 3, 4, 5] {
            assert!(dist.prob(idx) < 1e-6);
        }
    }

    #[test]
    fn dominant_joint_action_gets_all_mass() {
        // Two agents, identical payoffs, strictly dominant joint action (2, 3).
        let m = 2;
        let n = num_joint_actions(m);
        let star = JointAction(vec![ActionId::South, ActionId::East]).canonical_index();
        let mut q = vec![0.0; n];
        for (idx, v) in q.iter_mut().enumerate() {
            // Payoff decreases with distance from the dominant action in
            // each agent's digit, making deviation strictly bad.
            let a0 = idx / 6;
            let a1 = idx % 6;
            *v = 10.0 - (a0 as f64 - 2.0).abs() - (a1 as f64 - 3.0).abs();
        }
        let table = JointActionTable::new(m, vec![q.clone(), q]).unwrap();
        let dist = solve_ce(&table).unwrap();
        assert!((dist.prob(star) - 1.0).abs() < 1e-6);
        assert!(rationality_violation(&table, &dist) < 1e-6);
    }

    #[test]
    fn all_zero_game_returns_valid_simplex_point() {
        let n = num_joint_actions(2);
        let table = JointActionTable::new(2, vec![vec![0.0; n], vec![0.0; n]]).unwrap();
        let dist = solve_ce(&table).unwrap();
        let sum: f64 = dist.probs().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(rationality_violation(&table, &dist) < 1e-6);
    }

    #[test]
    fn anti_coordination_avoids_diagonal() {
        // 2x2 game, both agents penalized for matching actions.
        let q = vec![-1.0, 1.0, 1.0, -1.0];
        let table = JointActionTable::with_action_counts(vec![2, 2], vec![q.clone(), q]).unwrap();
        let dist = solve_ce(&table).unwrap();
        assert!(dist.prob(0) <= 1e-6);
        assert!(dist.prob(3) <= 1e-6);
        assert!(rationality_violation(&table, &dist) < 1e-6);
    }

    #[test]
    fn beats_uniform_when_uniform_is_feasible() {
        // Symmetric game where every agent is indifferent across own actions:
        // uniform satisfies all rationality constraints.
        let q = vec![1.0, 2.0, 2.0, 1.0];
        let table = JointActionTable::with_action_counts(vec![2, 2], vec![q.clone(), q]).unwrap();
        let uniform = CeDistribution::new(vec![0.25; 4]).unwrap();
        assert!(rationality_violation(&table, &uniform) < 1e-9);
        let dist = solve_ce(&table).unwrap();
        let got: f64 = (0..2).map(|i| dist.expected(table.q(i))).sum();
        let base: f64 = (0..2).map(|i| uniform.expected(table.q(i))).sum();
        assert!(got >= base - 1e-6);
    }

    #[test]
    fn constant_shift_preserves_selection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 2)]);
        let admissible = filter_collisions(&joint, &grid);
        let n = num_joint_actions(2);
        let q: Vec<Vec<f64>> =
            (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let table = JointActionTable::new(2, q.clone()).unwrap();
        let a1 = select_joint_action(&solve_ce(&table).unwrap(), &admissible).unwrap();
        let shifted: Vec<Vec<f64>> =
            q.iter().map(|qi| qi.iter().map(|v| v + 3.5).collect()).collect();
        let table2 = JointActionTable::new(2, shifted).unwrap();
        let a2 = select_joint_action(&solve_ce(&table2).unwrap(), &admissible).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn far_apart_agents_all_admissible() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 1)]);
        let admissible = filter_collisions(&joint, &grid);
        assert_eq!(admissible.len(), 36);
    }

    #[test]
    fn adjacent_agents_filtered() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        // Agent 0 moves East onto (3,2,1); agent 1 at (3,2,1) takes the
        // floor-blocked Down and stays put: collision, inadmissible.
        let joint = JointState(vec![AgentState::new(2, 2, 1), AgentState::new(3, 2, 1)]);
        let admissible = filter_collisions(&joint, &grid);
        let bad = JointAction(vec![ActionId::East, ActionId::Down]).canonical_index();
        assert!(!admissible.contains(bad));
        // Agent 1 stepping away is fine.
        let ok = JointAction(vec![ActionId::East, ActionId::East]).canonical_index();
        assert!(admissible.contains(ok));
    }

    #[test]
    fn single_agent_all_admissible() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(0, 0, 1)]);
        assert_eq!(filter_collisions(&joint, &grid).len(), 6);
    }

    #[test]
    fn filtered_actions_never_collide() {
        let grid = GridSpec::with_unit_aperture(3, 3, 2).unwrap();
        // Sample of adjacent joint states on the tiny grid.
        let states = [
            JointState(vec![AgentState::new(0, 0, 1), AgentState::new(1, 0, 1)]),
            JointState(vec![AgentState::new(1, 1, 1), AgentState::new(1, 1, 2)]),
            JointState(vec![AgentState::new(2, 2, 2), AgentState::new(2, 1, 2)]),
        ];
        for joint in &states {
            let admissible = filter_collisions(joint, &grid);
            assert!(!admissible.is_empty());
            for idx in admissible.indices() {
                let action = JointAction::from_canonical_index(idx, 2);
                apply_joint_action(joint, &action, &grid).unwrap();
            }
        }
    }

    #[test]
    fn select_point_mass() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 1)]);
        let admissible = filter_collisions(&joint, &grid);
        let star = JointAction(vec![ActionId::Up, ActionId::West]);
        let mut p = vec![0.0; 36];
        p[star.canonical_index()] = 1.0;
        let dist = CeDistribution::new(p).unwrap();
        assert_eq!(select_joint_action(&dist, &admissible).unwrap(), star);
    }

    #[test]
    fn select_uniform_breaks_ties_to_zero() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 1)]);
        let admissible = filter_collisions(&joint, &grid);
        let dist = CeDistribution::new(vec![1.0 / 36.0; 36]).unwrap();
        let got = select_joint_action(&dist, &admissible).unwrap();
        assert_eq!(got, JointAction(vec![ActionId::North, ActionId::North]));
    }

    #[test]
    fn select_skips_inadmissible_mass() {
        let grid = GridSpec::with_unit_aperture(7, 7, 5).unwrap();
        let joint = JointState(vec![AgentState::new(2, 2, 1), AgentState::new(3, 2, 1)]);
        let admissible = filter_collisions(&joint, &grid);
        let bad = JointAction(vec![ActionId::East, ActionId::Down]).canonical_index();
        assert!(!admissible.contains(bad));
        let mut p = vec![0.0; 36];
        p[bad] = 1.0;
        let dist = CeDistribution::new(p).unwrap();
        // All admissible mass is zero: smallest admissible index wins.
        let got = select_joint_action(&dist, &admissible).unwrap();
        let first = admissible.indices().next().unwrap();
        assert_eq!(got.canonical_index(), first);
    }
}
