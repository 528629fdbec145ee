//! Command-line front end: validate scenario bundles, plan turning rows,
//! run the parking simulator, and measure decision times.
//!
//! Exit codes: 0 success, 1 validation failure, 2 infeasible plan, 3 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mixplan::baseline::backward_plan_binary;
use mixplan::behavior::{validate_behavior, StageSpec};
use mixplan::bench::run_bench;
use mixplan::io::{
    self, bench_csv, cars_csv, load_scenario, load_scenario_raw, policy_to_json, summary_csv,
    unparked_csv, IoError,
};
use mixplan::planner::{backward_plan, PlanError, PlanProblem};
use mixplan::sim::{run_scenario, update_rewards, Algorithm};

#[derive(Parser)]
#[command(name = "mixplan", version, about = "Blend source behaviors into chance-constrained plans and simulate them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    Composed,
    Binary,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Composed => Algorithm::Composed,
            AlgorithmArg::Binary => Algorithm::Binary,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate every behavior table a scenario references.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Plan over the reachable window at a state and write the policy table.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Conditioning state to plan from and print.
        #[arg(long)]
        state: String,
        /// Horizon; defaults to the scenario's planner window.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the scenario to completion and write the metrics CSVs.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Measure planner decision time over a (sources, horizon) grid.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        /// Inclusive source-count range, e.g. `1:6`.
        #[arg(long, default_value = "1:6")]
        s_range: String,
        /// Inclusive horizon range, e.g. `1:5`.
        #[arg(long, default_value = "1:5")]
        t_range: String,
        /// Timing repetitions per grid cell.
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;

enum CmdError {
    Validation(String),
    Infeasible(String),
    Io(String),
}

impl From<IoError> for CmdError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::InvalidBehavior { .. } | IoError::Behavior(_) | IoError::Scenario(_) => {
                CmdError::Validation(e.to_string())
            }
            IoError::UnknownState { .. } => CmdError::Validation(e.to_string()),
            _ => CmdError::Io(e.to_string()),
        }
    }
}

impl From<PlanError> for CmdError {
    fn from(e: PlanError) -> Self {
        match &e {
            PlanError::Infeasible { .. } => CmdError::Infeasible(e.to_string()),
            _ => CmdError::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Plan {
            scenario,
            state,
            window,
            algorithm,
            out_dir,
        } => cmd_plan(&scenario, &state, window, algorithm, &out_dir),
        Command::Simulate {
            scenario,
            seed,
            algorithm,
            out_dir,
        } => cmd_simulate(&scenario, seed, algorithm, &out_dir),
        Command::Bench {
            scenario,
            s_range,
            t_range,
            reps,
            seed,
            out_dir,
        } => cmd_bench(&scenario, &s_range, &t_range, reps, seed, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CmdError::Infeasible(msg)) => {
            eprintln!("infeasible plan: {msg}");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(CmdError::Io(msg)) => {
            eprintln!("i/o error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn cmd_validate(scenario: &Path) -> Result<(), CmdError> {
    let (graph, tables) = load_scenario_raw(scenario)?;
    let mut clean = true;
    for (path, rows) in &tables {
        let report = validate_behavior(&graph, rows);
        if report.is_ok() {
            println!("{}: ok", path.display());
        } else {
            clean = false;
            print!("{}:\n{report}", path.display());
        }
    }
    // Structural checks passed; now make sure the smoothed bundle the
    // planners consume is usable end to end.
    if clean {
        match load_scenario(scenario) {
            Ok(_) => println!("scenario: ok"),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    } else {
        Err(CmdError::Validation("behavior tables have defects".into()))
    }
}

fn cmd_plan(
    scenario: &Path,
    state_name: &str,
    window: Option<usize>,
    algorithm: Option<AlgorithmArg>,
    out_dir: &Path,
) -> Result<(), CmdError> {
    let loaded = load_scenario(scenario)?;
    let mut cfg = loaded.config;
    if let Some(a) = algorithm {
        cfg.algorithm = a.into();
    }
    let window = window.unwrap_or(cfg.window).max(1);
    let graph = cfg.graph().clone();
    let state = graph
        .lookup(state_name)
        .ok_or_else(|| CmdError::Validation(format!("unknown state `{state_name}`")))?;

    let behaviors = &cfg.behavior_sets[cfg.preferred_lot];
    let spec = StageSpec {
        rewards: update_rewards(&vec![0; cfg.lots.len()], &cfg),
        safe_set: cfg.safe_set.clone(),
        epsilon: cfg.epsilon,
    };
    let mut problem =
        PlanProblem::repeated(behaviors, &spec, window).map_err(CmdError::from)?;
    problem.solver = cfg.solver.clone();
    let scope = graph.reachable_within(state, window);
    let table = match cfg.algorithm {
        Algorithm::Composed => backward_plan(&problem, Some(&scope)),
        Algorithm::Binary => backward_plan_binary(&problem, Some(&scope)),
    }
    .map_err(CmdError::from)?;

    let path = out_dir.join("policy.json");
    io::write_file(&path, &policy_to_json(&table, &graph))?;

    let entry = table
        .entry(1, state)
        .expect("planned state is in scope at stage 1");
    println!("stage-1 turning row at `{state_name}` (cost {}):", entry.cost);
    for (succ, p) in graph.successors(state).iter().zip(entry.row.probs()) {
        println!("  {} {}", graph.id(*succ), p);
    }
    println!("policy table written to {}", path.display());
    Ok(())
}

fn cmd_simulate(
    scenario: &Path,
    seed: Option<u64>,
    algorithm: Option<AlgorithmArg>,
    out_dir: &Path,
) -> Result<(), CmdError> {
    let loaded = load_scenario(scenario)?;
    let mut cfg = loaded.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = algorithm {
        cfg.algorithm = a.into();
    }
    let metrics = run_scenario(&cfg).map_err(|e| CmdError::Validation(e.to_string()))?;
    io::write_file(&out_dir.join("unparked.csv"), &unparked_csv(&metrics))?;
    io::write_file(&out_dir.join("cars.csv"), &cars_csv(&metrics))?;
    io::write_file(&out_dir.join("summary.csv"), &summary_csv(&metrics))?;
    println!(
        "parked {}/{} cars; attp {} ± {}; {} ticks; outputs in {}",
        metrics.parked,
        metrics.total,
        metrics.attp_mean,
        metrics.attp_std,
        metrics.final_tick,
        out_dir.display()
    );
    if metrics.budget_exhausted {
        println!("tick budget exhausted before every car parked");
    }
    Ok(())
}

fn parse_range(text: &str) -> Result<Vec<usize>, CmdError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| CmdError::Validation(format!("bad range `{text}`")))
    };
    let (lo, hi) = match text.split_once(':') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let v = parse(text)?;
            (v, v)
        }
    };
    if lo == 0 || hi < lo {
        return Err(CmdError::Validation(format!("bad range `{text}`")));
    }
    Ok((lo..=hi).collect())
}

fn cmd_bench(
    scenario: &Path,
    s_range: &str,
    t_range: &str,
    reps: usize,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), CmdError> {
    let loaded = load_scenario(scenario)?;
    let cfg = loaded.config;
    let s_values = parse_range(s_range)?;
    let t_values = parse_range(t_range)?;
    let seed = seed.unwrap_or(cfg.seed);
    let result = run_bench(&cfg, &s_values, &t_values, reps, seed).map_err(CmdError::from)?;
    let path = out_dir.join("bench.csv");
    io::write_file(&path, &bench_csv(&result))?;
    for cell in &result.cells {
        println!(
            "S={} T={} mean {:.6}s std {:.6}s",
            cell.sources, cell.horizon, cell.mean_seconds, cell.std_seconds
        );
    }
    println!("grid written to {}", path.display());
    Ok(())
}
