//! Scenario-driven experiment runner: TOML experiment configs, per-episode
//! CSV output, run summaries, and parameter checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::approx::{save_checkpoint, FeatureScheme, SchemeKind};
use crate::env::{Environment, FieldMask, GridSpec};
use crate::error::CoverageError;
use crate::learner::{train_with_observer, EpisodeLog, LearnerConfig, Mode, TrainResult};

pub const CSV_HEADER: &str =
    "episode,steps,goal_reached,coverage_sum,overlap_sum,cumulative_reward,epsilon";

/// Maximum team size: the CE LP has 6^m variables, and 6^4 = 1296 is the
/// largest we solve per step.
pub const MAX_AGENTS: usize = 4;

#[derive(Debug, Deserialize)]
struct RawScenario {
    name: String,
    grid: RawGrid,
    field_mask: String,
    agents: usize,
    learner: RawLearner,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Deserialize)]
struct RawGrid {
    dim_x: usize,
    dim_y: usize,
    dim_z: usize,
    #[serde(default = "default_tan")]
    tan_theta1: f64,
    #[serde(default = "default_tan")]
    tan_theta2: f64,
}

fn default_tan() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
struct RawLearner {
    alpha: f64,
    gamma: f64,
    epsilon0: f64,
    epsilon_decay: f64,
    episodes: usize,
    max_steps: usize,
    reward: f64,
    fb: Option<usize>,
    scheme: String,
    #[serde(default = "default_mode")]
    mode: String,
}

fn default_mode() -> String {
    "ce".into()
}

#[derive(Debug, Default, Deserialize)]
struct RawRun {
    #[serde(default)]
    seeds: Vec<u64>,
    out_dir: Option<String>,
    #[serde(default)]
    checkpoint_every: usize,
}

/// A validated experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub field: FieldMask,
    pub agents: usize,
    pub scheme: SchemeKind,
    pub mode: Mode,
    pub reward: f64,
    pub fb: Option<usize>,
    pub config: LearnerConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

pub fn parse_scheme(s: &str) -> Result<(SchemeKind, Option<Mode>), CoverageError> {
    match s {
        "fsr" => Ok((SchemeKind::Fsr, None)),
        "rbf" => Ok((SchemeKind::Rbf, None)),
        "tabular" => Ok((SchemeKind::Tabular, None)),
        // Convenience alias: the baseline is an independent tabular learner.
        "baseline" => Ok((SchemeKind::Tabular, Some(Mode::Baseline))),
        other => Err(CoverageError::Scenario(format!(
            "unknown scheme '{other}' (expected fsr|rbf|tabular|baseline)"
        ))),
    }
}

pub fn parse_mode(s: &str) -> Result<Mode, CoverageError> {
    match s {
        "ce" => Ok(Mode::Ce),
        "baseline" => Ok(Mode::Baseline),
        other => Err(CoverageError::Scenario(format!(
            "unknown mode '{other}' (expected ce|baseline)"
        ))),
    }
}

/// Parse and validate a scenario file. The field mask is resolved relative
/// to the scenario file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, CoverageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoverageError::Scenario(format!("{}: {e}", path.display())))?;
    let raw: RawScenario = toml::from_str(&text)
        .map_err(|e| CoverageError::Scenario(format!("{}: {e}", path.display())))?;
    let grid = GridSpec::new(
        raw.grid.dim_x,
        raw.grid.dim_y,
        raw.grid.dim_z,
        raw.grid.tan_theta1,
        raw.grid.tan_theta2,
    )?;
    let mask_path = path.parent().unwrap_or(Path::new(".")).join(&raw.field_mask);
    let mask_text = std::fs::read_to_string(&mask_path)
        .map_err(|e| CoverageError::Scenario(format!("{}: {e}", mask_path.display())))?;
    let field = FieldMask::parse(&mask_text)?;
    if field.width() != grid.dim_x || field.height() != grid.dim_y {
        return Err(CoverageError::Scenario(format!(
            "field mask {} is {}x{} but grid is {}x{}",
            mask_path.display(),
            field.width(),
            field.height(),
            grid.dim_x,
            grid.dim_y
        )));
    }
    if raw.agents == 0 || raw.agents > MAX_AGENTS {
        return Err(CoverageError::Scenario(format!(
            "agents must be in 1..={MAX_AGENTS}, got {}",
            raw.agents
        )));
    }
    if let Some(fb) = raw.learner.fb {
        if fb == 0 || fb > field.num_cells() {
            return Err(CoverageError::Scenario(format!(
                "fb must be in 1..={}, got {fb}",
                field.num_cells()
            )));
        }
    }
    let (scheme, scheme_mode) = parse_scheme(&raw.learner.scheme)?;
    let mode = match scheme_mode {
        Some(m) => m,
        None => parse_mode(&raw.learner.mode)?,
    };
    let config = LearnerConfig {
        alpha: raw.learner.alpha,
        gamma: raw.learner.gamma,
        epsilon0: raw.learner.epsilon0,
        epsilon_decay: raw.learner.epsilon_decay,
        episodes: raw.learner.episodes,
        max_steps: raw.learner.max_steps,
        seed: 0,
        mode,
        checkpoint_every: raw.run.checkpoint_every,
        ..LearnerConfig::default()
    };
    config.validate()?;
    let seeds = if raw.run.seeds.is_empty() { vec![0] } else { raw.run.seeds.clone() };
    let out_dir = PathBuf::from(raw.run.out_dir.unwrap_or_else(|| format!("runs/{}", raw.name)));
    Ok(Scenario {
        name: raw.name,
        grid,
        field,
        agents: raw.agents,
        scheme,
        mode,
        reward: raw.learner.reward,
        fb: raw.learner.fb,
        config,
        seeds,
        out_dir,
    })
}

impl Scenario {
    pub fn environment(&self) -> Result<Environment, CoverageError> {
        let env = Environment::new(self.grid.clone(), self.field.clone(), self.reward)?;
        match self.fb {
            Some(fb) => env.with_fb(fb),
            None => Ok(env),
        }
    }

    /// Feature scheme for a given run seed. The RBF basis (for teams) is
    /// drawn from its own generator keyed on the seed so basis placement is
    /// reproducible and independent of the training stream.
    pub fn feature_scheme(&self, seed: u64) -> Result<FeatureScheme, CoverageError> {
        match self.scheme {
            SchemeKind::Fsr => Ok(FeatureScheme::fsr(&self.grid, self.agents)),
            SchemeKind::Tabular => Ok(FeatureScheme::tabular(&self.grid, self.agents)),
            SchemeKind::Rbf => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5242_4653); // "RBFS"
                FeatureScheme::rbf_default(&self.grid, self.agents, &mut rng)
            }
        }
    }
}

/// Post-hoc statistics over one run's episode logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub episodes: usize,
    /// Mean and median steps over four equal phases of training.
    pub phase_mean_steps: Vec<f64>,
    pub phase_median_steps: Vec<f64>,
    /// Goal rate over the final 10% of episodes.
    pub final_goal_rate: f64,
    pub final_median_steps: f64,
    pub first_goal_episode: Option<usize>,
    pub converged: bool,
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Summary statistics from episode logs: per-phase step stats, final-phase
/// goal rate, first goal episode, and a convergence verdict (goal rate
/// >= 0.9 over the final 10% of episodes).
pub fn summarize(logs: &[EpisodeLog]) -> Result<Summary, CoverageError> {
    if logs.is_empty() {
        return Err(CoverageError::Scenario("cannot summarize an empty log list".into()));
    }
    let n = logs.len();
    let phases = 4.min(n);
    let mut phase_mean_steps = Vec::with_capacity(phases);
    let mut phase_median_steps = Vec::with_capacity(phases);
    for p in 0..phases {
        let lo = p * n / phases;
        let hi = (p + 1) * n / phases;
        let mut steps: Vec<usize> = logs[lo..hi].iter().map(|l| l.steps).collect();
        steps.sort_unstable();
        phase_mean_steps.push(steps.iter().sum::<usize>() as f64 / steps.len() as f64);
        phase_median_steps.push(median(&steps));
    }
    let tail = n.div_ceil(10);
    let final_logs = &logs[n - tail..];
    let goals = final_logs.iter().filter(|l| l.goal_reached).count();
    let final_goal_rate = goals as f64 / tail as f64;
    let mut tail_steps: Vec<usize> = final_logs.iter().map(|l| l.steps).collect();
    tail_steps.sort_unstable();
    let final_median_steps = median(&tail_steps);
    let first_goal_episode = logs.iter().find(|l| l.goal_reached).map(|l| l.episode);
    Ok(Summary {
        episodes: n,
        phase_mean_steps,
        phase_median_steps,
        final_goal_rate,
        final_median_steps,
        first_goal_episode,
        converged: final_goal_rate >= 0.9,
    })
}

/// Render one run's episode logs as CSV (versioned stable schema).
pub fn logs_to_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::with_capacity(64 * (logs.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for l in logs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            l.episode,
            l.steps,
            l.goal_reached,
            l.coverage_sum,
            l.overlap_sum,
            l.cumulative_reward,
            l.epsilon
        );
    }
    out
}

/// Human-readable run record: config echo plus the convergence verdict.
pub fn summary_record(scenario: &Scenario, seed: u64, summary: &Summary, result: &TrainResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario = {}", scenario.name);
    let _ = writeln!(out, "scheme = {}", scenario.scheme.name());
    let _ = writeln!(
        out,
        "mode = {}",
        match scenario.mode {
            Mode::Ce => "ce",
            Mode::Baseline => "baseline",
        }
    );
    let _ = writeln!(out, "agents = {}", scenario.agents);
    let _ = writeln!(
        out,
        "grid = {}x{}x{}",
        scenario.grid.dim_x, scenario.grid.dim_y, scenario.grid.dim_z
    );
    let _ = writeln!(out, "field_cells = {}", scenario.field.num_cells());
    let _ = writeln!(out, "seed = {seed}");
    let _ = writeln!(out, "alpha = {}", scenario.config.alpha);
    let _ = writeln!(out, "gamma = {}", scenario.config.gamma);
    let _ = writeln!(out, "epsilon0 = {}", scenario.config.epsilon0);
    let _ = writeln!(out, "epsilon_decay = {}", scenario.config.epsilon_decay);
    let _ = writeln!(out, "episodes = {}", summary.episodes);
    let _ = writeln!(out, "max_steps = {}", scenario.config.max_steps);
    let _ = writeln!(out, "converged = {}", summary.converged);
    let _ = writeln!(out, "final_goal_rate = {}", summary.final_goal_rate);
    let _ = writeln!(out, "final_median_steps = {}", summary.final_median_steps);
    let _ = writeln!(
        out,
        "first_goal_episode = {}",
        summary
            .first_goal_episode
            .map_or_else(|| "none".to_string(), |e| e.to_string())
    );
    let _ = writeln!(out, "lp_calls = {}", result.lp_calls);
    let _ = writeln!(out, "lp_fallbacks = {}", result.lp_fallbacks);
    out
}

/// Output paths for one replicate.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub summary: Summary,
}

/// Execute every replicate of a scenario: train, then write the per-episode
/// CSV, the summary record, and a final parameter checkpoint per seed.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<RunOutput>, CoverageError> {
    std::fs::create_dir_all(&scenario.out_dir)?;
    let env = scenario.environment()?;
    let mut outputs = Vec::with_capacity(scenario.seeds.len());
    for &seed in &scenario.seeds {
        let scheme = scenario.feature_scheme(seed)?;
        let config = LearnerConfig { seed, ..scenario.config.clone() };
        let stem = format!(
            "{}_{}_{}_seed{}",
            scenario.name,
            scenario.scheme.name(),
            match scenario.mode {
                Mode::Ce => "ce",
                Mode::Baseline => "baseline",
            },
            seed
        );
        let checkpoint_path = scenario.out_dir.join(format!("{stem}.theta"));
        let every = config.checkpoint_every;
        let ckpt_scheme = scheme.clone();
        let ckpt_path = checkpoint_path.clone();
        let result = train_with_observer(&env, &scheme, scenario.agents, &config, |e, thetas| {
            if every > 0 && (e + 1) % every == 0 && config.mode == Mode::Ce {
                save_checkpoint(&ckpt_path, &ckpt_scheme, thetas)?;
            }
            Ok(())
        })?;
        if config.mode == Mode::Ce {
            save_checkpoint(&checkpoint_path, &scheme, &result.thetas)?;
        }
        let summary = summarize(&result.logs)?;
        let csv_path = scenario.out_dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, logs_to_csv(&result.logs))?;
        let summary_path = scenario.out_dir.join(format!("{stem}.summary"));
        std::fs::write(&summary_path, summary_record(scenario, seed, &summary, &result))?;
        log::info!(
            "{stem}: converged={} final_goal_rate={} first_goal={:?}",
            summary.converged,
            summary.final_goal_rate,
            summary.first_goal_episode
        );
        outputs.push(RunOutput { seed, csv_path, summary_path, checkpoint_path, summary });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn write_scenario(dir: &Path, mask: &str, extra: &str) -> PathBuf {
        std::fs::write(dir.join("field.mask"), mask).unwrap();
        let toml = format!(
            r#"
name = "test"
field_mask = "field.mask"
agents = 2

[grid]
dim_x = 3
dim_y = 3
dim_z = 2

[learner]
alpha = 0.1
gamma = 0.9
epsilon0 = 0.9
epsilon_decay = 0.99
episodes = 3
max_steps = 20
reward = 0.1
scheme = "tabular"
{extra}
"#
        );
        let path = dir.join("test.toml");
        std::fs::write(&path, toml).unwrap();
        path
    }

    #[test]
    fn load_valid_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "###\n###\n###\n", "");
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.agents, 2);
        assert_eq!(s.grid.dim_x, 3);
        assert_eq!(s.field.num_cells(), 9);
        assert_eq!(s.scheme, SchemeKind::Tabular);
        assert_eq!(s.mode, Mode::Ce);
        assert_eq!(s.seeds, vec![0]);
    }

    #[test]
    fn mask_grid_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "##\n##\n", "");
        let err = load_scenario(&path).unwrap_err();
        assert!(err.to_string().contains("2x2"), "{err}");
    }

    #[test]
    fn agent_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "###\n###\n###\n", "");
        let text = std::fs::read_to_string(&path).unwrap().replace("agents = 2", "agents = 5");
        std::fs::write(&path, text).unwrap();
        assert!(load_scenario(&path).is_err());
    }

    #[test]
    fn baseline_scheme_alias() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "###\n###\n###\n", "");
        let text =
            std::fs::read_to_string(&path).unwrap().replace("scheme = \"tabular\"", "scheme = \"baseline\"");
        std::fs::write(&path, text).unwrap();
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.mode, Mode::Baseline);
    }

    fn fake_log(episode: usize, steps: usize, goal: bool) -> EpisodeLog {
        EpisodeLog {
            episode,
            steps,
            goal_reached: goal,
            coverage_sum: 0,
            overlap_sum: 0,
            cumulative_reward: if goal { 0.1 } else { 0.0 },
            epsilon: 0.5,
            duration: Duration::ZERO,
        }
    }

    #[test]
    fn summarize_all_capped() {
        let logs: Vec<EpisodeLog> = (0..20).map(|e| fake_log(e, 2000, false)).collect();
        let s = summarize(&logs).unwrap();
        assert!(!s.converged);
        assert_eq!(s.final_goal_rate, 0.0);
        assert_eq!(s.first_goal_episode, None);
        assert_eq!(s.final_median_steps, 2000.0);
    }

    #[test]
    fn summarize_all_one_step_goals() {
        let logs: Vec<EpisodeLog> = (0..20).map(|e| fake_log(e, 1, true)).collect();
        let s = summarize(&logs).unwrap();
        assert!(s.converged);
        assert_eq!(s.final_goal_rate, 1.0);
        assert_eq!(s.first_goal_episode, Some(0));
        assert_eq!(s.phase_median_steps, vec![1.0; 4]);
    }

    #[test]
    fn summarize_hand_computed_mixed() {
        // 10 logs: first 5 capped at 100 steps, last 5 goals in 10 steps.
        let logs: Vec<EpisodeLog> = (0..10)
            .map(|e| if e < 5 { fake_log(e, 100, false) } else { fake_log(e, 10, true) })
            .collect();
        let s = summarize(&logs).unwrap();
        // Final 10% = 1 episode (a goal) -> rate 1.0, converged.
        assert_eq!(s.final_goal_rate, 1.0);
        assert!(s.converged);
        assert_eq!(s.first_goal_episode, Some(5));
        // Phases of 2-3 episodes: first phase mean 100, last phase mean 10.
        assert_eq!(s.phase_mean_steps[0], 100.0);
        assert_eq!(*s.phase_mean_steps.last().unwrap(), 10.0);
    }

    #[test]
    fn summarize_empty_errors() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_shape() {
        let logs: Vec<EpisodeLog> = (0..3).map(|e| fake_log(e, 5, false)).collect();
        let csv = logs_to_csv(&logs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,5,false,0,0,0,0.5");
    }

    #[test]
    fn run_scenario_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "###\n###\n###\n", "");
        let mut s = load_scenario(&path).unwrap();
        s.out_dir = dir.path().join("out");
        s.seeds = vec![1, 2];
        let outputs = run_scenario(&s).unwrap();
        assert_eq!(outputs.len(), 2);
        for out in &outputs {
            let csv = std::fs::read_to_string(&out.csv_path).unwrap();
            assert_eq!(csv.lines().count(), 3 + 1); // episodes + header
            assert!(out.summary_path.exists());
            assert!(out.checkpoint_path.exists());
        }
    }

    #[test]
    fn run_scenario_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scenario(dir.path(), "###\n###\n###\n", "");
        let mut s = load_scenario(&path).unwrap();
        s.seeds = vec![7];
        s.out_dir = dir.path().join("a");
        let a = run_scenario(&s).unwrap();
        s.out_dir = dir.path().join("b");
        let b = run_scenario(&s).unwrap();
        let csv_a = std::fs::read(&a[0].csv_path).unwrap();
        let csv_b = std::fs::read(&b[0].csv_path).unwrap();
        assert_eq!(csv_a, csv_b);
    }
}
