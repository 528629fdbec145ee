//! File formats: graph text, behavior JSON, scenario JSON, policy JSON, and
//! the metrics / benchmark CSVs.
//!
//! Graph files are plain text, one state per line:
//!
//! ```text
//! # comment
//! state_id: succ1,succ2
//! ```
//!
//! Behavior files are JSON objects mapping each state to its probability
//! vector, aligned with the graph's successor order. Scenario files tie a
//! graph, source behaviors and per-lot target behaviors (referenced by path,
//! relative to the scenario file) together with the simulation parameters.
//!
//! All writers iterate ordered maps and fixed schemas, so outputs are
//! byte-stable given identical inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::behavior::{
    validate_behavior, Behavior, BehaviorError, BehaviorSet, ConditionalPmf, ValidationReport,
    DEFAULT_SMOOTHING,
};
use crate::bench::BenchResult;
use crate::graph::{GraphError, LinkGraph, StateId, StateSet};
use crate::planner::PolicyTable;
use crate::sim::{Algorithm, Metrics, ParkingLot, ScenarioConfig, SimError};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: expected `state: succ1,succ2,...`")]
    GraphSyntax { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        source: GraphError,
    },
    #[error("{path}: behavior references unknown state `{state}`")]
    UnknownState { path: PathBuf, state: String },
    #[error("{path}: behavior table is not usable:\n{report}")]
    InvalidBehavior {
        path: PathBuf,
        report: ValidationReport,
    },
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Scenario(#[from] SimError),
    #[error("scenario error: {0}")]
    ScenarioShape(String),
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses the one-line-per-state graph format. Blank lines and `#` comments
/// are ignored.
pub fn parse_graph(text: &str, path: &Path) -> Result<LinkGraph, IoError> {
    let mut entries = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((state, rest)) = line.split_once(':') else {
            return Err(IoError::GraphSyntax {
                path: path.to_path_buf(),
                line: number + 1,
            });
        };
        let succs: Vec<String> = rest
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        entries.push((state.trim().to_string(), succs));
    }
    LinkGraph::new(entries).map_err(|source| IoError::Graph {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_graph(path: &Path) -> Result<LinkGraph, IoError> {
    parse_graph(&read_to_string(path)?, path)
}

/// Raw behavior rows as stored on disk, ordered by state index; `None` marks
/// states the file does not cover. No validation beyond state-name lookup.
pub fn load_behavior_rows(
    path: &Path,
    graph: &LinkGraph,
) -> Result<Vec<Option<Vec<f64>>>, IoError> {
    let text = read_to_string(path)?;
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&text).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; graph.state_count()];
    for (state, probs) in map {
        let id = graph.lookup(&state).ok_or_else(|| IoError::UnknownState {
            path: path.to_path_buf(),
            state: state.clone(),
        })?;
        rows[id.index()] = Some(probs);
    }
    Ok(rows)
}

/// Loads and validates a behavior table.
pub fn load_behavior(path: &Path, graph: &LinkGraph) -> Result<Behavior, IoError> {
    let rows = load_behavior_rows(path, graph)?;
    let report = validate_behavior(graph, &rows);
    if !report.is_ok() {
        return Err(IoError::InvalidBehavior {
            path: path.to_path_buf(),
            report,
        });
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, probs)| ConditionalPmf::new(StateId(i), probs.expect("validated present")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Behavior::new(graph, rows)?)
}

fn default_travel_time() -> u64 {
    1
}
fn default_window() -> usize {
    5
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_fallback() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_algorithm() -> Algorithm {
    Algorithm::Composed
}
fn default_budget() -> u64 {
    10_000
}
fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LotFile {
    gate: String,
    capacity: u32,
    /// Path to the target behavior leading to this lot.
    target: String,
}

/// Arrivals: either an explicit `[[id, tick], ...]` list or a generator.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ArrivalsFile {
    List(Vec<(u32, u64)>),
    Pattern {
        count: u32,
        interval: u64,
        #[serde(default)]
        start: u64,
    },
}

impl ArrivalsFile {
    fn resolve(&self) -> Vec<(u32, u64)> {
        match self {
            ArrivalsFile::List(list) => list.clone(),
            ArrivalsFile::Pattern {
                count,
                interval,
                start,
            } => (0..*count)
                .map(|i| (i, start + u64::from(i) * interval))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    graph: String,
    sources: Vec<String>,
    lots: Vec<LotFile>,
    entry_state: String,
    #[serde(default)]
    obstructed_links: Vec<String>,
    arrivals: ArrivalsFile,
    #[serde(default = "default_travel_time")]
    travel_time_default: u64,
    #[serde(default)]
    travel_time_overrides: BTreeMap<String, u64>,
    #[serde(default = "default_window")]
    planner_window: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    /// Safe set is the whole graph minus these links.
    #[serde(default)]
    forbidden_links: Vec<String>,
    #[serde(default = "default_fallback")]
    epsilon_fallback: Vec<f64>,
    #[serde(default)]
    preferred_lot: usize,
    seed: u64,
    #[serde(default = "default_algorithm")]
    algorithm: Algorithm,
    #[serde(default = "default_budget")]
    tick_budget: u64,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
}

/// A scenario plus the raw (pre-smoothing) tables it referenced, kept for
/// validation reporting.
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub graph: LinkGraph,
    /// `(path, rows)` for every behavior file, sources first, then lot
    /// targets in lot order.
    pub raw_tables: Vec<(PathBuf, Vec<Option<Vec<f64>>>)>,
}

fn parse_scenario_file(path: &Path) -> Result<(ScenarioFile, PathBuf), IoError> {
    let text = read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((file, base))
}

/// Loads the bundle a scenario references without failing on invalid
/// probability rows, so callers can report every defect at once. Graph
/// problems and unknown state names still error out: nothing downstream is
/// interpretable without the graph.
pub fn load_scenario_raw(path: &Path) -> Result<(LinkGraph, Vec<(PathBuf, Vec<Option<Vec<f64>>>)>), IoError> {
    let (file, base) = parse_scenario_file(path)?;
    let graph = load_graph(&base.join(&file.graph))?;
    let mut tables = Vec::new();
    for source in &file.sources {
        let p = base.join(source);
        let rows = load_behavior_rows(&p, &graph)?;
        tables.push((p, rows));
    }
    for lot in &file.lots {
        let p = base.join(&lot.target);
        let rows = load_behavior_rows(&p, &graph)?;
        tables.push((p, rows));
    }
    Ok((graph, tables))
}

/// Loads and fully resolves a scenario: graph, validated behaviors smoothed
/// at the configured level, one behavior set per lot.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, IoError> {
    let (file, base) = parse_scenario_file(path)?;
    let graph = load_graph(&base.join(&file.graph))?;

    let mut raw_tables = Vec::new();
    let mut sources = Vec::new();
    for source in &file.sources {
        let p = base.join(source);
        raw_tables.push((p.clone(), load_behavior_rows(&p, &graph)?));
        sources.push(load_behavior(&p, &graph)?);
    }

    let mut lots = Vec::new();
    let mut behavior_sets = Vec::new();
    for lot in &file.lots {
        let gate = graph
            .lookup(&lot.gate)
            .ok_or_else(|| IoError::UnknownState {
                path: path.to_path_buf(),
                state: lot.gate.clone(),
            })?;
        let p = base.join(&lot.target);
        raw_tables.push((p.clone(), load_behavior_rows(&p, &graph)?));
        let target = load_behavior(&p, &graph)?;
        behavior_sets.push(BehaviorSet::smoothed(
            graph.clone(),
            sources.clone(),
            target,
            file.smoothing,
        )?);
        lots.push(ParkingLot {
            gate,
            capacity: lot.capacity,
        });
    }

    let lookup = |name: &str| -> Result<StateId, IoError> {
        graph.lookup(name).ok_or_else(|| IoError::UnknownState {
            path: path.to_path_buf(),
            state: name.to_string(),
        })
    };

    let entry_state = lookup(&file.entry_state)?;
    let obstructed: StateSet = file
        .obstructed_links
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<_, _>>()?;
    let forbidden: StateSet = file
        .forbidden_links
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<_, _>>()?;
    let safe_set: StateSet = graph.states().filter(|s| !forbidden.contains(s)).collect();

    let mut travel_time = vec![file.travel_time_default; graph.state_count()];
    for (name, ticks) in &file.travel_time_overrides {
        travel_time[lookup(name)?.index()] = *ticks;
    }

    let mut arrivals = file.arrivals.resolve();
    arrivals.sort_by_key(|&(id, tick)| (tick, id));

    let config = ScenarioConfig {
        behavior_sets,
        lots,
        entry_state,
        obstructed,
        arrivals,
        travel_time,
        window: file.planner_window,
        epsilon: file.epsilon,
        safe_set,
        epsilon_fallback: file.epsilon_fallback,
        preferred_lot: file.preferred_lot,
        seed: file.seed,
        algorithm: file.algorithm,
        tick_budget: file.tick_budget,
        solver: SolverConfig::default(),
    };
    config.validate()?;
    Ok(LoadedScenario {
        config,
        graph,
        raw_tables,
    })
}

/// Serializes a policy table: per stage and state the weights, the blended
/// row (aligned with the graph's successor order) and the stage cost.
pub fn policy_to_json(table: &PolicyTable, graph: &LinkGraph) -> String {
    use serde_json::{json, Value};
    let stages: Vec<Value> = (1..=table.horizon())
        .map(|k| {
            let rows: BTreeMap<String, Value> = table
                .stage_entries(k)
                .map(|(state, entry)| {
                    (
                        graph.id(state).to_string(),
                        json!({
                            "alpha": entry.alpha,
                            "row": entry.row.probs(),
                            "cost": entry.cost,
                            "feasible": entry.feasible,
                        }),
                    )
                })
                .collect();
            json!({ "stage": k, "states": rows })
        })
        .collect();
    let doc = json!({ "horizon": table.horizon(), "stages": stages });
    serde_json::to_string_pretty(&doc).expect("policy serialization is infallible") + "\n"
}

/// `tick,unparked_count` over the whole run.
pub fn unparked_csv(metrics: &Metrics) -> String {
    let mut out = String::from("tick,unparked_count\n");
    for (tick, count) in metrics.unparked_curve.iter().enumerate() {
        out.push_str(&format!("{tick},{count}\n"));
    }
    out
}

/// `car_id,enter_tick,park_tick,time_to_park`; unparked cars leave the last
/// two fields empty.
pub fn cars_csv(metrics: &Metrics) -> String {
    let mut out = String::from("car_id,enter_tick,park_tick,time_to_park\n");
    for car in &metrics.cars {
        match car.park_tick {
            Some(park) => out.push_str(&format!(
                "{},{},{},{}\n",
                car.id,
                car.enter_tick,
                park,
                park - car.enter_tick
            )),
            None => out.push_str(&format!("{},{},,\n", car.id, car.enter_tick)),
        }
    }
    out
}

/// One-line run summary plus audit counters.
pub fn summary_csv(metrics: &Metrics) -> String {
    let mut out = String::from(
        "attp_mean,attp_std,parked,total,decisions,infeasible_fallbacks,constraint_violations,max_unsafe_mass,budget_exhausted,final_tick\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        metrics.attp_mean,
        metrics.attp_std,
        metrics.parked,
        metrics.total,
        metrics.decisions,
        metrics.infeasible_fallbacks,
        metrics.constraint_violations,
        metrics.max_unsafe_mass,
        metrics.budget_exhausted,
        metrics.final_tick
    ));
    out
}

/// `S,T,mean_seconds,std_seconds` grid.
pub fn bench_csv(result: &BenchResult) -> String {
    let mut out = String::from("S,T,mean_seconds,std_seconds\n");
    for cell in &result.cells {
        out.push_str(&format!(
            "{},{},{:.9},{:.9}\n",
            cell.sources, cell.horizon, cell.mean_seconds, cell.std_seconds
        ));
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IoError::Write {
            path: path.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}
