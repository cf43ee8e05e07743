//! wasm-bindgen bindings for the browser demo page. Three operations are
//! exposed, all speaking JSON strings so the page stays framework-free:
//! a footprint/coverage explorer, a CE game solver, and a small in-browser
//! training run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use coverage_marl::approx::FeatureScheme;
use coverage_marl::ce::{rationality_violation, solve_ce, JointActionTable};
use coverage_marl::env::{fov_cells, AgentState, Environment, FieldMask, GridSpec, JointState};
use coverage_marl::learner::{train, LearnerConfig, Mode};

fn stringify(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Deserialize)]
struct CoverageRequest {
    dim_x: usize,
    dim_y: usize,
    dim_z: usize,
    /// Rows of '#' (field) and '.' (background), top row first.
    field: Vec<String>,
    /// [x, y, z] per agent.
    agents: Vec<[usize; 3]>,
}

#[derive(Serialize)]
struct CoverageResponse {
    /// Per ground cell: number of agent footprints covering it.
    cover_counts: Vec<Vec<usize>>,
    field: Vec<Vec<bool>>,
    coverage_sum: usize,
    overlap_sum: usize,
    goal: bool,
}

/// Evaluate team coverage for a hand-placed joint state.
pub fn coverage_report_impl(request_json: &str) -> Result<String, String> {
    let req: CoverageRequest = serde_json::from_str(request_json).map_err(stringify)?;
    let grid = GridSpec::with_unit_aperture(req.dim_x, req.dim_y, req.dim_z).map_err(stringify)?;
    let field = FieldMask::parse(&(req.field.join("\n") + "\n")).map_err(stringify)?;
    let env = Environment::new(grid.clone(), field, 0.1).map_err(stringify)?;
    let joint = JointState(
        req.agents.iter().map(|&[x, y, z]| AgentState::new(x, y, z)).collect(),
    );
    joint.validate(&grid).map_err(stringify)?;
    let mut cover_counts = vec![vec![0usize; req.dim_x]; req.dim_y];
    for i in 0..joint.num_agents() {
        for (x, y) in fov_cells(joint.agent(i), &grid).cells() {
            cover_counts[y][x] += 1;
        }
    }
    let field_grid = (0..req.dim_y)
        .map(|y| (0..req.dim_x).map(|x| env.field.cells().contains(x, y)).collect())
        .collect();
    let (coverage_sum, overlap_sum) = env.team_counts(&joint);
    let resp = CoverageResponse {
        cover_counts,
        field: field_grid,
        coverage_sum,
        overlap_sum,
        goal: env.is_goal(&joint),
    };
    serde_json::to_string(&resp).map_err(stringify)
}

#[derive(Deserialize)]
struct CeRequest {
    /// Per-agent payoff vectors over joint actions (agent-0-major order).
    q: Vec<Vec<f64>>,
    /// Individual action count per agent.
    actions: Vec<usize>,
}

#[derive(Serialize)]
struct CeResponse {
    probabilities: Vec<f64>,
    utilitarian_value: f64,
    rationality_violation: f64,
}

/// Solve a correlated equilibrium for an arbitrary small game.
pub fn solve_ce_game_impl(request_json: &str) -> Result<String, String> {
    let req: CeRequest = serde_json::from_str(request_json).map_err(stringify)?;
    let table = JointActionTable::with_action_counts(req.actions, req.q).map_err(stringify)?;
    let dist = solve_ce(&table).map_err(stringify)?;
    let probabilities: Vec<f64> = dist.probs().collect();
    let utilitarian_value = probabilities
        .iter()
        .enumerate()
        .map(|(j, p)| p * table.utilitarian(j))
        .sum();
    let resp = CeResponse {
        rationality_violation: rationality_violation(&table, &dist),
        probabilities,
        utilitarian_value,
    };
    serde_json::to_string(&resp).map_err(stringify)
}

#[derive(Serialize)]
struct TrainResponse {
    steps_per_episode: Vec<usize>,
    goal_flags: Vec<bool>,
    final_goal_rate: f64,
}

/// Train a single agent on a 5x5x2 grid with a centered 3x3 field and
/// return the learning curve. Small enough to finish in well under a
/// second inside the browser.
pub fn train_demo_impl(episodes: u32, seed: u32) -> Result<String, String> {
    let grid = GridSpec::with_unit_aperture(5, 5, 2).map_err(stringify)?;
    let field = FieldMask::parse(".....\n.###.\n.###.\n.###.\n.....\n").map_err(stringify)?;
    let env = Environment::new(grid.clone(), field, 0.1).map_err(stringify)?;
    let scheme = FeatureScheme::tabular(&grid, 1);
    let config = LearnerConfig {
        alpha: 0.5,
        epsilon_decay: 0.995,
        episodes: episodes as usize,
        max_steps: 100,
        seed: seed as u64,
        mode: Mode::Ce,
        ..LearnerConfig::default()
    };
    let result = train(&env, &scheme, 1, &config).map_err(stringify)?;
    let steps_per_episode: Vec<usize> = result.logs.iter().map(|l| l.steps).collect();
    let goal_flags: Vec<bool> = result.logs.iter().map(|l| l.goal_reached).collect();
    let tail = steps_per_episode.len().div_ceil(10).max(1);
    let final_goal_rate = if goal_flags.is_empty() {
        0.0
    } else {
        let goals = goal_flags[goal_flags.len() - tail..].iter().filter(|&&g| g).count();
        goals as f64 / tail as f64
    };
    let resp = TrainResponse { steps_per_episode, goal_flags, final_goal_rate };
    serde_json::to_string(&resp).map_err(stringify)
}

/// Deterministic RBF demo basis, exposed so the page can visualize centers.
pub fn rbf_centers_impl(seed: u32) -> Result<String, String> {
    let grid = GridSpec::with_unit_aperture(7, 7, 5).map_err(stringify)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let scheme = FeatureScheme::rbf_default(&grid, 3, &mut rng).map_err(stringify)?;
    let basis = scheme.rbf_basis().unwrap();
    serde_json::to_string(&(&basis.centers, &basis.radii)).map_err(stringify)
}


// Thin wasm exports. JsValue may only be materialized inside a wasm
// runtime, so all logic lives in the `_impl` functions above, which also
// back the native tests.

#[wasm_bindgen]
pub fn coverage_report(request_json: &str) -> Result<String, JsValue> {
    coverage_report_impl(request_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn solve_ce_game(request_json: &str) -> Result<String, JsValue> {
    solve_ce_game_impl(request_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn train_demo(episodes: u32, seed: u32) -> Result<String, JsValue> {
    train_demo_impl(episodes, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rbf_centers(seed: u32) -> Result<String, JsValue> {
    rbf_centers_impl(seed).map_err(|e| JsValue::from_str(&e))
}
