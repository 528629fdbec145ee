//! Deterministic discrete-time routing and parking simulator.
//!
//! Cars arrive at an entry link, traverse links with per-link constant travel
//! times, and replan every time they reach the end of a link: a receding
//! horizon plan at the current link yields a turning row, the next link is
//! sampled from it, and the car parks when it enters a lot gate with space.
//! Lot rewards follow occupancy (open lots attract, full lots do not) and
//! obstructed links repel. Everything is driven by one seeded generator and
//! cars are processed in id order, so a configuration maps to exactly one
//! run.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{support_mass, BehaviorSet, ConditionalPmf, StageSpec};
use crate::graph::{LinkGraph, StateId, StateSet};
use crate::planner::{receding_step, sample_next, PlanError, PlanProblem, PolicyTable};
use crate::baseline::backward_plan_binary;
use crate::solver::SolverConfig;

/// Reward on a lot gate while the lot has space.
pub const REWARD_LOT_OPEN: f64 = 3.8;
/// Reward on a lot gate once the lot is full.
pub const REWARD_LOT_FULL: f64 = 0.0;
/// Reward on an obstructed link.
pub const REWARD_OBSTRUCTED: f64 = -20.0;

/// Which planner the cars run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Blended weights over the full simplex.
    Composed,
    /// Single-source selection at every stage and state.
    Binary,
}

/// A parking lot, reachable through the `gate` link.
#[derive(Debug, Clone, PartialEq)]
pub struct ParkingLot {
    pub gate: StateId,
    pub capacity: u32,
}

/// Fully resolved scenario: everything a run needs, in memory.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// One behavior set per lot: the shared sources paired with the target
    /// behavior leading to that lot. A car plans with the set of its current
    /// target lot.
    pub behavior_sets: Vec<BehaviorSet>,
    pub lots: Vec<ParkingLot>,
    pub entry_state: StateId,
    pub obstructed: StateSet,
    /// `(car id, arrival tick)`, sorted by tick then id, ids unique.
    pub arrivals: Vec<(u32, u64)>,
    /// Ticks to traverse each link, indexed by state.
    pub travel_time: Vec<u64>,
    /// Receding-horizon window.
    pub window: usize,
    /// Chance-constraint tolerance applied at every stage.
    pub epsilon: f64,
    /// States the next link must land in with probability `1 - epsilon`.
    pub safe_set: StateSet,
    /// Epsilon values to retry with when a plan is infeasible; ending the
    /// schedule at 1.0 guarantees progress.
    pub epsilon_fallback: Vec<f64>,
    /// Lot every arriving car initially heads for.
    pub preferred_lot: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Hard stop; expiry is reported in the metrics, not an error.
    pub tick_budget: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario needs at least one parking lot")]
    NoLots,
    #[error("{lots} lots but {sets} behavior sets; they pair one-to-one")]
    LotTargetMismatch { lots: usize, sets: usize },
    #[error("preferred lot {0} out of range")]
    PreferredLotOutOfRange(usize),
    #[error("travel times cover {actual} states, graph has {expected}")]
    TravelTimeLength { expected: usize, actual: usize },
    #[error("arrivals must be sorted by tick with unique, increasing ids on ties")]
    UnsortedArrivals,
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("epsilon {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
}

impl ScenarioConfig {
    pub fn graph(&self) -> &LinkGraph {
        self.behavior_sets[0].graph()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.lots.is_empty() {
            return Err(SimError::NoLots);
        }
        if self.behavior_sets.len() != self.lots.len() {
            return Err(SimError::LotTargetMismatch {
                lots: self.lots.len(),
                sets: self.behavior_sets.len(),
            });
        }
        if self.preferred_lot >= self.lots.len() {
            return Err(SimError::PreferredLotOutOfRange(self.preferred_lot));
        }
        let states = self.graph().state_count();
        if self.travel_time.len() != states {
            return Err(SimError::TravelTimeLength {
                expected: states,
                actual: self.travel_time.len(),
            });
        }
        for pair in self.arrivals.windows(2) {
            let ((id_a, t_a), (id_b, t_b)) = (pair[0], pair[1]);
            if t_a > t_b || (t_a == t_b && id_a >= id_b) {
                return Err(SimError::UnsortedArrivals);
            }
        }
        if self.window == 0 {
            return Err(SimError::ZeroWindow);
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SimError::EpsilonOutOfRange(self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CarStatus {
    Driving,
    Parked,
    /// Removed from the network. The shipped scenarios have no exit links,
    /// so runs never produce this status.
    Exited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Car {
    pub id: u32,
    pub status: CarStatus,
    pub link: StateId,
    pub enter_tick: u64,
    pub park_tick: Option<u64>,
    pub target_lot: usize,
    /// Ticks left on the current link.
    remaining: u64,
}

/// Mutable world state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u64,
    pub cars: Vec<Car>,
    pub occupancy: Vec<u32>,
    pub rewards: Vec<f64>,
    /// Bumps whenever the reward field changes; keys the plan cache.
    pub reward_version: u64,
    next_arrival: usize,
}

/// Reward field implied by lot occupancy and obstructions: open-lot gates
/// attract, full-lot gates go neutral, obstructed links repel (overriding a
/// gate if both apply), all other links are neutral.
pub fn update_rewards(occupancy: &[u32], cfg: &ScenarioConfig) -> Vec<f64> {
    let mut rewards = vec![0.0; cfg.graph().state_count()];
    for (lot, &occ) in cfg.lots.iter().zip(occupancy) {
        rewards[lot.gate.index()] = if occ < lot.capacity {
            REWARD_LOT_OPEN
        } else {
            REWARD_LOT_FULL
        };
    }
    for state in &cfg.obstructed {
        rewards[state.index()] = REWARD_OBSTRUCTED;
    }
    rewards
}

/// Per-car record kept in the metrics output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarRecord {
    pub id: u32,
    pub enter_tick: u64,
    pub park_tick: Option<u64>,
}

/// Run outcome: the unparked-over-time curve, per-car times, and the
/// time-to-park aggregate over parked cars, plus planner audit counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Cars arrived but not yet parked, recorded at the end of each tick.
    pub unparked_curve: Vec<u32>,
    pub cars: Vec<CarRecord>,
    pub attp_mean: f64,
    pub attp_std: f64,
    pub parked: u32,
    pub total: u32,
    /// Turning rows consumed (one per junction decision).
    pub decisions: u64,
    /// Plans actually computed; the rest were cache hits on an unchanged
    /// reward field.
    pub plans_computed: u64,
    pub infeasible_fallbacks: u64,
    /// Decisions whose row exceeded the chance tolerance in force.
    pub constraint_violations: u64,
    /// Largest mass any consumed row placed outside the safe set.
    pub max_unsafe_mass: f64,
    pub budget_exhausted: bool,
    pub final_tick: u64,
}

/// A scenario in motion. Use [`run_scenario`] unless a test needs to observe
/// intermediate states.
pub struct Simulation {
    cfg: ScenarioConfig,
    state: SimState,
    rng: ChaCha8Rng,
    plan_cache: HashMap<(u64, usize, usize), ConditionalPmf>,
    unparked_curve: Vec<u32>,
    decisions: u64,
    plans_computed: u64,
    infeasible_fallbacks: u64,
    constraint_violations: u64,
    max_unsafe_mass: f64,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let occupancy = vec![0; cfg.lots.len()];
        let rewards = update_rewards(&occupancy, &cfg);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            state: SimState {
                clock: 0,
                cars: Vec::new(),
                occupancy,
                rewards,
                reward_version: 0,
                next_arrival: 0,
            },
            cfg,
            rng,
            plan_cache: HashMap::new(),
            unparked_curve: Vec::new(),
            decisions: 0,
            plans_computed: 0,
            infeasible_fallbacks: 0,
            constraint_violations: 0,
            max_unsafe_mass: 0.0,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// All arrived cars are parked and no arrivals remain.
    pub fn all_parked(&self) -> bool {
        self.state.next_arrival == self.cfg.arrivals.len()
            && self
                .state
                .cars
                .iter()
                .all(|c| matches!(c.status, CarStatus::Parked))
    }

    /// Advances one tick: moves driving cars (replanning and sampling at
    /// junctions, in car order), spawns arrivals due this tick, then records
    /// the curve. Arrivals join at the end of their tick, so a link's full
    /// travel time elapses before the car's first junction.
    pub fn step(&mut self) {
        let now = self.state.clock;
        for i in 0..self.state.cars.len() {
            if self.state.cars[i].status != CarStatus::Driving {
                continue;
            }
            self.state.cars[i].remaining = self.state.cars[i].remaining.saturating_sub(1);
            if self.state.cars[i].remaining == 0 {
                let here = self.state.cars[i].link;
                let row = self.turning_row(here, self.state.cars[i].target_lot);
                let next = sample_next(&row, self.cfg.graph().successors(here), &mut self.rng);
                self.enter_link(i, next);
            }
        }

        while self.state.next_arrival < self.cfg.arrivals.len()
            && self.cfg.arrivals[self.state.next_arrival].1 == now
        {
            let (id, _) = self.cfg.arrivals[self.state.next_arrival];
            self.state.next_arrival += 1;
            let car_index = self.state.cars.len();
            self.state.cars.push(Car {
                id,
                status: CarStatus::Driving,
                link: self.cfg.entry_state,
                enter_tick: now,
                park_tick: None,
                target_lot: self.cfg.preferred_lot,
                remaining: 0,
            });
            self.enter_link(car_index, self.cfg.entry_state);
        }

        let unparked = self
            .state
            .cars
            .iter()
            .filter(|c| !matches!(c.status, CarStatus::Parked))
            .count() as u32;
        self.unparked_curve.push(unparked);
        self.state.clock += 1;
    }

    /// Places the car on `link`: parks it when the link is an open lot gate,
    /// retargets it when the link is its own target's gate and that lot is
    /// full, otherwise starts the traversal.
    fn enter_link(&mut self, car_index: usize, link: StateId) {
        self.state.cars[car_index].link = link;
        if let Some(lot_index) = self.cfg.lots.iter().position(|l| l.gate == link) {
            if self.state.occupancy[lot_index] < self.cfg.lots[lot_index].capacity {
                self.state.occupancy[lot_index] += 1;
                self.state.cars[car_index].status = CarStatus::Parked;
                self.state.cars[car_index].park_tick = Some(self.state.clock);
                if self.state.occupancy[lot_index] == self.cfg.lots[lot_index].capacity {
                    self.refresh_rewards();
                }
                return;
            }
            if self.state.cars[car_index].target_lot == lot_index {
                self.retarget(car_index, lot_index);
            }
        }
        self.state.cars[car_index].remaining = self.cfg.travel_time[link.index()].max(1);
    }

    /// Round-robin to the next lot with space; keeps the target when every
    /// lot is full.
    fn retarget(&mut self, car_index: usize, full_lot: usize) {
        let lots = self.cfg.lots.len();
        for offset in 1..lots {
            let candidate = (full_lot + offset) % lots;
            if self.state.occupancy[candidate] < self.cfg.lots[candidate].capacity {
                self.state.cars[car_index].target_lot = candidate;
                return;
            }
        }
    }

    fn refresh_rewards(&mut self) {
        self.state.rewards = update_rewards(&self.state.occupancy, &self.cfg);
        self.state.reward_version += 1;
    }

    /// Turning row at `state` for a car heading to `target_lot`, with the
    /// current reward snapshot. Cached per (reward version, state, lot):
    /// cache hits replay the planner's exact output.
    fn turning_row(&mut self, state: StateId, target_lot: usize) -> ConditionalPmf {
        self.decisions += 1;
        let key = (self.state.reward_version, state.index(), target_lot);
        let row = match self.plan_cache.get(&key) {
            Some(row) => row.clone(),
            None => {
                let row = self.compute_turning_row(state, target_lot);
                self.plans_computed += 1;
                self.plan_cache.insert(key, row.clone());
                row
            }
        };
        let unsafe_mass = 1.0
            - support_mass(
                &row,
                self.cfg.graph().successors(state),
                &self.cfg.safe_set,
            );
        if unsafe_mass > self.max_unsafe_mass {
            self.max_unsafe_mass = unsafe_mass;
        }
        if unsafe_mass > self.cfg.epsilon + 1e-9 {
            self.constraint_violations += 1;
        }
        row
    }

    fn compute_turning_row(&mut self, state: StateId, target_lot: usize) -> ConditionalPmf {
        let behaviors = &self.cfg.behavior_sets[target_lot];
        let mut epsilons = vec![self.cfg.epsilon];
        epsilons.extend_from_slice(&self.cfg.epsilon_fallback);
        for (attempt, &epsilon) in epsilons.iter().enumerate() {
            let spec = StageSpec {
                rewards: self.state.rewards.clone(),
                safe_set: self.cfg.safe_set.clone(),
                epsilon,
            };
            let outcome = match self.cfg.algorithm {
                Algorithm::Composed => {
                    receding_step(behaviors, &spec, &self.cfg.solver, state, self.cfg.window)
                }
                Algorithm::Binary => {
                    binary_receding_step(behaviors, &spec, &self.cfg.solver, state, self.cfg.window)
                }
            };
            match outcome {
                Ok(row) => {
                    if attempt > 0 {
                        self.infeasible_fallbacks += 1;
                    }
                    return row;
                }
                Err(PlanError::Infeasible { .. }) => continue,
                Err(e) => panic!("planning failed on validated scenario data: {e}"),
            }
        }
        // Every epsilon in the schedule was infeasible (possible only when
        // the schedule does not end at 1.0): hold course uniformly.
        self.infeasible_fallbacks += 1;
        ConditionalPmf::uniform(state, self.cfg.graph().out_degree(state))
    }

    fn into_metrics(self, budget_exhausted: bool) -> Metrics {
        let cars: Vec<CarRecord> = self
            .state
            .cars
            .iter()
            .map(|c| CarRecord {
                id: c.id,
                enter_tick: c.enter_tick,
                park_tick: c.park_tick,
            })
            .collect();
        let times: Vec<f64> = cars
            .iter()
            .filter_map(|c| c.park_tick.map(|p| (p - c.enter_tick) as f64))
            .collect();
        let parked = times.len() as u32;
        let attp_mean = if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        let attp_std = if times.len() < 2 {
            0.0
        } else {
            let var = times
                .iter()
                .map(|t| (t - attp_mean).powi(2))
                .sum::<f64>()
                / (times.len() - 1) as f64;
            var.sqrt()
        };
        Metrics {
            unparked_curve: self.unparked_curve,
            total: self.cfg.arrivals.len() as u32,
            cars,
            attp_mean,
            attp_std,
            parked,
            decisions: self.decisions,
            plans_computed: self.plans_computed,
            infeasible_fallbacks: self.infeasible_fallbacks,
            constraint_violations: self.constraint_violations,
            max_unsafe_mass: self.max_unsafe_mass,
            budget_exhausted,
            final_tick: self.state.clock,
        }
    }
}

/// Runs the scenario until every car parks or the tick budget expires.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Metrics, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    while !sim.all_parked() && sim.state.clock < cfg.tick_budget {
        sim.step();
    }
    let exhausted = !sim.all_parked();
    Ok(sim.into_metrics(exhausted))
}

/// Stage-1 row of the binary (single-source) plan over the reachable window.
fn binary_receding_step(
    behaviors: &BehaviorSet,
    stage: &StageSpec,
    solver: &SolverConfig,
    current_state: StateId,
    window: usize,
) -> Result<ConditionalPmf, PlanError> {
    let mut problem = PlanProblem::repeated(behaviors, stage, window)?;
    problem.solver = solver.clone();
    let scope = behaviors.graph().reachable_within(current_state, window);
    let table: PolicyTable = backward_plan_binary(&problem, Some(&scope))?;
    Ok(table
        .entry(1, current_state)
        .expect("start state is always in scope at stage 1")
        .row
        .clone())
}

/// Convenience used by the planners' callers: plan one turning row with the
/// configured algorithm, without running a simulation.
pub fn plan_turning_row(
    cfg: &ScenarioConfig,
    state: StateId,
    target_lot: usize,
    window: usize,
) -> Result<ConditionalPmf, PlanError> {
    let behaviors = &cfg.behavior_sets[target_lot];
    let occupancy = vec![0; cfg.lots.len()];
    let spec = StageSpec {
        rewards: update_rewards(&occupancy, cfg),
        safe_set: cfg.safe_set.clone(),
        epsilon: cfg.epsilon,
    };
    match cfg.algorithm {
        Algorithm::Composed => receding_step(behaviors, &spec, &cfg.solver, state, window),
        Algorithm::Binary => binary_receding_step(behaviors, &spec, &cfg.solver, state, window),
    }
}
