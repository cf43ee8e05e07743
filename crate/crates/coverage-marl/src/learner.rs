//! Episodic training loop: epsilon-greedy CE action selection, global-reward
//! evaluation, and per-agent TD updates — plus the independent-learner
//! baseline that skips equilibrium computation entirely.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::{best_joint_q, td_update, FeatureScheme, ParamVector};
use crate::ce::{filter_collisions, select_joint_action, solve_ce, AdmissibleSet, JointActionTable};
use crate::env::{
    apply_action, apply_joint_action, num_joint_actions, AgentState, Environment, JointAction,
    JointState, ALL_ACTIONS, NUM_ACTIONS,
};
use crate::error::CoverageError;

pub const EPSILON_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ce,
    Baseline,
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Baseline reward per covered field cell.
    pub coverage_unit: f64,
    /// Baseline penalty per overlapping square.
    pub overlap_penalty: f64,
    /// Write a parameter snapshot every this many episodes (0 = never);
    /// consumed by the scenario runner.
    pub checkpoint_every: usize,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), CoverageError> {
        let ok = self.alpha > 0.0
            && self.alpha <= 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&self.epsilon0)
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0
            && self.max_steps >= 1;
        if !ok {
            return Err(CoverageError::InvalidConfig(format!(
                "alpha={} gamma={} epsilon0={} decay={} max_steps={}",
                self.alpha, self.gamma, self.epsilon0, self.epsilon_decay, self.max_steps
            )));
        }
        Ok(())
    }
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon0: 0.9,
            epsilon_decay: 0.995,
            episodes: 2000,
            max_steps: 2000,
            seed: 0,
            mode: Mode::Ce,
            coverage_unit: 1.0,
            overlap_penalty: 0.01,
            checkpoint_every: 0,
        }
    }
}

/// Per-episode experiment record.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub goal_reached: bool,
    pub coverage_sum: usize,
    pub overlap_sum: usize,
    pub cumulative_reward: f64,
    pub epsilon: f64,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub thetas: Vec<ParamVector>,
    pub logs: Vec<EpisodeLog>,
    /// One greedy (epsilon = 0) episode run after training.
    pub eval: Option<EpisodeLog>,
    pub lp_calls: usize,
    pub lp_fallbacks: usize,
}

/// Exploration schedule: `epsilon0 * decay^episode`, floored at 0.01.
pub fn epsilon_at(episode: usize, config: &LearnerConfig) -> f64 {
    (config.epsilon0 * config.epsilon_decay.powi(episode as i32)).max(EPSILON_FLOOR)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StepStats {
    pub lp_calls: usize,
    pub lp_fallbacks: usize,
}

fn random_admissible(admissible: &AdmissibleSet, rng: &mut impl Rng) -> JointAction {
    let k = rng.random_range(0..admissible.len());
    JointAction::from_canonical_index(admissible.nth(k).unwrap(), admissible.num_agents())
}

/// Per-agent Q vectors over all `6^m` joint actions at state `joint`.
fn joint_table(
    joint: &JointState,
    thetas: &[ParamVector],
    scheme: &FeatureScheme,
) -> Result<JointActionTable, CoverageError> {
    let m = thetas.len();
    let n = num_joint_actions(m);
    let block = scheme.block_len();
    let state_phi = scheme.state_activations(joint);
    let mut q = Vec::with_capacity(m);
    for theta in thetas {
        let mut qi = Vec::with_capacity(n);
        for idx in 0..n {
            let offset = idx * block;
            let mut v = 0.0;
            for &(i, phi) in state_phi.entries() {
                v += theta.get(offset + i) * phi;
            }
            qi.push(v);
        }
        q.push(qi);
    }
    JointActionTable::new(m, q)
}

/// One CE-mode step: epsilon-greedy joint-action choice over the
/// collision-filtered set, transition, and global reward on the successor.
pub fn step_ce(
    joint: &JointState,
    thetas: &[ParamVector],
    scheme: &FeatureScheme,
    env: &Environment,
    epsilon: f64,
    rng: &mut impl Rng,
    stats: &mut StepStats,
) -> Result<(JointAction, JointState, f64), CoverageError> {
    let admissible = filter_collisions(joint, &env.grid);
    if admissible.is_empty() {
        return Err(CoverageError::EmptyAdmissibleSet);
    }
    // Draw the exploration coin unconditionally so the stream of random
    // numbers (and thus the trajectory) is reproducible per seed.
    let explore = rng.random::<f64>() < epsilon;
    let action = if explore {
        random_admissible(&admissible, rng)
    } else {
        let table = joint_table(joint, thetas, scheme)?;
        stats.lp_calls += 1;
        match solve_ce(&table) {
            Ok(dist) => select_joint_action(&dist, &admissible)?,
            Err(err) => {
                log::warn!("CE solve failed ({err}); falling back to random action");
                stats.lp_fallbacks += 1;
                random_admissible(&admissible, rng)
            }
        }
    };
    let next = apply_joint_action(joint, &action, &env.grid)?;
    let reward = env.global_reward(&next);
    Ok((action, next, reward))
}

/// Independent per-agent TD updates from one shared transition. Each agent
/// bootstraps from its own pre-update parameters, so update order is
/// irrelevant.
pub fn update_agents(
    thetas: &mut [ParamVector],
    joint: &JointState,
    action: &JointAction,
    reward: f64,
    next: &JointState,
    scheme: &FeatureScheme,
    env: &Environment,
    config: &LearnerConfig,
) -> Result<(), CoverageError> {
    let phi_now = scheme.features(joint, action);
    let admissible_next = filter_collisions(next, &env.grid);
    for theta in thetas.iter_mut() {
        let (_, max_next_q) = best_joint_q(theta, next, scheme, &admissible_next)?;
        td_update(theta, &phi_now, reward, max_next_q, config.alpha, config.gamma)?;
    }
    Ok(())
}

/// Uniform random collision-free joint start state.
pub fn random_start(env: &Environment, m: usize, rng: &mut impl Rng) -> JointState {
    loop {
        let agents: Vec<AgentState> = (0..m)
            .map(|_| {
                AgentState::new(
                    rng.random_range(0..env.grid.dim_x),
                    rng.random_range(0..env.grid.dim_y),
                    rng.random_range(1..=env.grid.dim_z),
                )
            })
            .collect();
        let distinct = agents
            .iter()
            .enumerate()
            .all(|(i, a)| agents[i + 1..].iter().all(|b| a != b));
        if distinct {
            return JointState(agents);
        }
    }
}

/// One training episode: random start, then step + update until the goal
/// state or the step cap.
pub fn run_episode(
    thetas: &mut [ParamVector],
    env: &Environment,
    scheme: &FeatureScheme,
    config: &LearnerConfig,
    episode: usize,
    epsilon: f64,
    rng: &mut impl Rng,
    stats: &mut StepStats,
) -> Result<EpisodeLog, CoverageError> {
    let start = Instant::now();
    let mut joint = random_start(env, thetas.len(), rng);
    let mut steps = 0;
    let mut goal_reached = false;
    let mut cumulative_reward = 0.0;
    while steps < config.max_steps {
        let (action, next, reward) =
            step_ce(&joint, thetas, scheme, env, epsilon, rng, stats)?;
        update_agents(thetas, &joint, &action, reward, &next, scheme, env, config)?;
        cumulative_reward += reward;
        joint = next;
        steps += 1;
        if reward > 0.0 {
            goal_reached = true;
            break;
        }
    }
    let (coverage_sum, overlap_sum) = env.team_counts(&joint);
    Ok(EpisodeLog {
        episode,
        steps,
        goal_reached,
        coverage_sum,
        overlap_sum,
        cumulative_reward,
        epsilon,
        duration: start.elapsed(),
    })
}

/// Full training run per the configured mode. Returns learned parameters,
/// per-episode logs, and a final greedy evaluation episode.
pub fn train(
    env: &Environment,
    scheme: &FeatureScheme,
    m: usize,
    config: &LearnerConfig,
) -> Result<TrainResult, CoverageError> {
    train_with_observer(env, scheme, m, config, |_, _| Ok(()))
}

/// [`train`] with a per-episode callback (episode index, current thetas);
/// the scenario runner uses it for periodic checkpoints.
pub fn train_with_observer(
    env: &Environment,
    scheme: &FeatureScheme,
    m: usize,
    config: &LearnerConfig,
    mut observer: impl FnMut(usize, &[ParamVector]) -> Result<(), CoverageError>,
) -> Result<TrainResult, CoverageError> {
    config.validate()?;
    match config.mode {
        Mode::Ce => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut thetas = vec![ParamVector::zeros(scheme.len()); m];
            let mut logs = Vec::with_capacity(config.episodes);
            let mut stats = StepStats::default();
            for e in 0..config.episodes {
                let eps = epsilon_at(e, config);
                let log = run_episode(
                    &mut thetas, env, scheme, config, e, eps, &mut rng, &mut stats,
                )?;
                logs.push(log);
                observer(e, &thetas)?;
            }
            let eval = if config.episodes > 0 {
                Some(run_episode(
                    &mut thetas.clone(),
                    env,
                    scheme,
                    config,
                    config.episodes,
                    0.0,
                    &mut rng,
                    &mut stats,
                )?)
            } else {
                None
            };
            Ok(TrainResult {
                thetas,
                logs,
                eval,
                lp_calls: stats.lp_calls,
                lp_fallbacks: stats.lp_fallbacks,
            })
        }
        Mode::Baseline => train_baseline(env, m, config, observer),
    }
}

// ---------------------------------------------------------------------------
// Independent-learner baseline
// ---------------------------------------------------------------------------

/// Per-agent tabular Q over (own state, own action).
#[derive(Debug, Clone)]
pub struct BaselineQ {
    values: Vec<f64>,
    dim_y: usize,
    dim_z: usize,
}

impl BaselineQ {
    pub fn zeros(env: &Environment) -> Self {
        Self {
            values: vec![0.0; env.grid.agent_states() * NUM_ACTIONS],
            dim_y: env.grid.dim_y,
            dim_z: env.grid.dim_z,
        }
    }

    fn index(&self, s: AgentState, a: usize) -> usize {
        ((s.x * self.dim_y + s.y) * self.dim_z + (s.z - 1)) * NUM_ACTIONS + a
    }

    pub fn get(&self, s: AgentState, a: usize) -> f64 {
        self.values[self.index(s, a)]
    }

    pub fn max_at(&self, s: AgentState) -> f64 {
        (0..NUM_ACTIONS).map(|a| self.get(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn set(&mut self, s: AgentState, a: usize, v: f64) {
        let i = self.index(s, a);
        self.values[i] = v;
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One baseline step: each agent independently epsilon-greedily maximizes its
/// own Q over its six actions, in rank order with earlier agents' successor
/// cells excluded. Individual rewards are coverage minus the per-square
/// overlap penalty on the successor state; each Q is updated in place.
pub fn step_baseline(
    joint: &JointState,
    qs: &mut [BaselineQ],
    env: &Environment,
    config: &LearnerConfig,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<(JointAction, JointState, Vec<f64>), CoverageError> {
    let m = joint.num_agents();
    let mut committed: Vec<AgentState> = Vec::with_capacity(m);
    let mut picks = Vec::with_capacity(m);
    for i in 0..m {
        let s = joint.agent(i);
        let candidates: Vec<usize> = (0..NUM_ACTIONS)
            .filter(|&a| {
                let succ = apply_action(s, ALL_ACTIONS[a], &env.grid);
                !committed.contains(&succ)
            })
            .collect();
        if candidates.is_empty() {
            return Err(CoverageError::EmptyAdmissibleSet);
        }
        let explore = rng.random::<f64>() < epsilon;
        let pick = if explore {
            candidates[rng.random_range(0..candidates.len())]
        } else {
            *candidates
                .iter()
                .max_by(|&&a, &&b| self::cmp_q(qs[i].get(s, a), qs[i].get(s, b), a, b))
                .unwrap()
        };
        committed.push(apply_action(s, ALL_ACTIONS[pick], &env.grid));
        picks.push(ALL_ACTIONS[pick]);
    }
    let action = JointAction(picks);
    let next = apply_joint_action(joint, &action, &env.grid)?;
    let mut rewards = Vec::with_capacity(m);
    for i in 0..m {
        let (f_i, o_i) = env.agent_counts(&next, i);
        let r_i = config.coverage_unit * f_i as f64 - config.overlap_penalty * o_i as f64;
        let s = joint.agent(i);
        let a = action.0[i].index();
        let target = r_i + config.gamma * qs[i].max_at(next.agent(i));
        let updated = (1.0 - config.alpha) * qs[i].get(s, a) + config.alpha * target;
        qs[i].set(s, a, updated);
        rewards.push(r_i);
    }
    Ok((action, next, rewards))
}

/// Greater-Q wins; ties go to the smaller action index.
fn cmp_q(qa: f64, qb: f64, a: usize, b: usize) -> std::cmp::Ordering {
    qa.partial_cmp(&qb)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(b.cmp(&a))
}

fn train_baseline(
    env: &Environment,
    m: usize,
    config: &LearnerConfig,
    mut observer: impl FnMut(usize, &[ParamVector]) -> Result<(), CoverageError>,
) -> Result<TrainResult, CoverageError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut qs: Vec<BaselineQ> = (0..m).map(|_| BaselineQ::zeros(env)).collect();
    let mut logs = Vec::with_capacity(config.episodes);
    for e in 0..config.episodes {
        let eps = epsilon_at(e, config);
        let start = Instant::now();
        let mut joint = random_start(env, m, &mut rng);
        let mut steps = 0;
        let mut goal_reached = false;
        let mut cumulative_reward = 0.0;
        while steps < config.max_steps {
            let (_, next, _) = step_baseline(&joint, &mut qs, env, config, eps, &mut rng)?;
            let reward = env.global_reward(&next);
            cumulative_reward += reward;
            joint = next;
            steps += 1;
            if reward > 0.0 {
                goal_reached = true;
                break;
            }
        }
        let (coverage_sum, overlap_sum) = env.team_counts(&joint);
        logs.push(EpisodeLog {
            episode: e,
            steps,
            goal_reached,
            coverage_sum,
            overlap_sum,
            cumulative_reward,
            epsilon: eps,
            duration: start.elapsed(),
        });
        let snapshot: Vec<ParamVector> = qs
            .iter()
            .map(|q| ParamVector::from_values(q.clone().into_values()))
            .collect();
        observer(e, &snapshot)?;
    }
    let thetas = qs
        .into_iter()
        .map(|q| ParamVector::from_values(q.into_values()))
        .collect();
    Ok(TrainResult { thetas, logs, eval: None, lp_calls: 0, lp_fallbacks: 0 })
}
