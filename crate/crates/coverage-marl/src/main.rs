use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coverage_marl::scenario::{load_scenario, parse_mode, parse_scheme, run_scenario};

#[derive(Parser)]
#[command(name = "coverage-marl", about = "Cooperative multi-agent coverage learning runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file: train each replicate, write CSV metrics,
    /// a summary record, and parameter checkpoints.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a scenario TOML file.
    scenario: PathBuf,
    /// Override the value-function scheme (fsr|rbf|tabular|baseline).
    #[arg(long)]
    scheme: Option<String>,
    /// Override the learning mode (ce|baseline).
    #[arg(long)]
    mode: Option<String>,
    /// Replace the scenario's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the per-episode step cap.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("COVERAGE_MARL_LOG", "error"),
    )
    .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::FAILURE
            }
        },
    }
}

fn run(args: RunArgs) -> Result<(), coverage_marl::CoverageError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(s) = &args.scheme {
        let (scheme, mode) = parse_scheme(s)?;
        scenario.scheme = scheme;
        if let Some(mode) = mode {
            scenario.mode = mode;
        }
    }
    if let Some(m) = &args.mode {
        scenario.mode = parse_mode(m)?;
    }
    if let Some(seed) = args.seed {
        scenario.seeds = vec![seed];
    }
    if let Some(episodes) = args.episodes {
        scenario.config.episodes = episodes;
    }
    if let Some(max_steps) = args.max_steps {
        scenario.config.max_steps = max_steps;
    }
    if let Some(out) = args.out {
        scenario.out_dir = out;
    }
    scenario.config.mode = scenario.mode;
    let outputs = run_scenario(&scenario)?;
    for out in outputs {
        println!(
            "seed {}: converged={} final_goal_rate={:.3} first_goal={} csv={}",
            out.seed,
            out.summary.converged,
            out.summary.final_goal_rate,
            out.summary
                .first_goal_episode
                .map_or_else(|| "none".to_string(), |e| e.to_string()),
            out.csv_path.display()
        );
    }
    Ok(())
}
