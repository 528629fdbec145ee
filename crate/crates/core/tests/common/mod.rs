//! Shared generators for the randomized test suites. Everything is driven by
//! explicit ChaCha seeds so failures reproduce exactly.

// Each test binary compiles this module separately and uses its own subset.
#![allow(dead_code)]

use mixplan::behavior::{Behavior, BehaviorSet, ConditionalPmf, StageSpec};
use mixplan::graph::{LinkGraph, StateId, StateSet};
use mixplan::objective::StageInputs;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Star graph: state 0 has `deg` successors, each successor loops to itself.
/// Stage-level tests only ever condition on state 0.
pub fn star_graph(deg: usize) -> LinkGraph {
    let mut entries = vec![(
        "hub".to_string(),
        (0..deg).map(|i| format!("leaf{i}")).collect::<Vec<_>>(),
    )];
    for i in 0..deg {
        entries.push((format!("leaf{i}"), vec![format!("leaf{i}")]));
    }
    LinkGraph::new(entries).unwrap()
}

/// Flat-Dirichlet row smoothed toward uniform by `lambda`.
pub fn random_row(rng: &mut ChaCha8Rng, origin: StateId, n: usize, lambda: f64) -> ConditionalPmf {
    let mut raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = raw.iter().sum();
    for v in &mut raw {
        *v = (1.0 - lambda) * (*v / sum) + lambda / n as f64;
    }
    let total: f64 = raw.iter().sum();
    for v in &mut raw {
        *v /= total;
    }
    ConditionalPmf::new(origin, raw).unwrap()
}

/// Random point on the probability simplex.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = raw.iter().sum();
    for v in &mut raw {
        *v /= sum;
    }
    raw
}

/// One random stage problem at the hub of a star graph.
pub struct StageInstance {
    pub graph: LinkGraph,
    pub sources: Vec<ConditionalPmf>,
    pub target: ConditionalPmf,
    pub rewards: Vec<f64>,
    pub safe_set: StateSet,
    pub epsilon: f64,
}

impl StageInstance {
    pub fn inputs(&self) -> StageInputs<'_> {
        StageInputs::new(
            self.sources.iter().collect(),
            &self.target,
            self.rewards.clone(),
        )
        .unwrap()
    }

    pub fn successors(&self) -> &[StateId] {
        self.graph.successors(StateId(0))
    }
}

/// Smoothed random instance with `s` sources over `deg` successors; rewards
/// uniform in [-3, 3], safe set a random subset, epsilon uniform in [0, 1].
pub fn random_stage_instance(
    rng: &mut ChaCha8Rng,
    s: usize,
    deg: usize,
    lambda: f64,
) -> StageInstance {
    let graph = star_graph(deg);
    let hub = StateId(0);
    let sources: Vec<ConditionalPmf> = (0..s).map(|_| random_row(rng, hub, deg, lambda)).collect();
    let target = random_row(rng, hub, deg, lambda);
    let rewards: Vec<f64> = (0..deg).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
    let safe_set: StateSet = graph
        .successors(hub)
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < 0.5)
        .collect();
    let epsilon = rng.random::<f64>();
    StageInstance {
        graph,
        sources,
        target,
        rewards,
        safe_set,
        epsilon,
    }
}

/// Random strongly-coverable graph: `states` states, each with `deg` distinct
/// successors drawn at random.
pub fn random_graph(rng: &mut ChaCha8Rng, states: usize, deg: usize) -> LinkGraph {
    let names: Vec<String> = (0..states).map(|i| format!("s{i}")).collect();
    let entries = names
        .iter()
        .map(|name| {
            let mut succs = Vec::new();
            while succs.len() < deg.min(states) {
                let pick = names[rng.random_range(0..states)].clone();
                if !succs.contains(&pick) {
                    succs.push(pick);
                }
            }
            (name.clone(), succs)
        })
        .collect();
    LinkGraph::new(entries).unwrap()
}

/// Random smoothed behavior over a graph.
pub fn random_behavior(rng: &mut ChaCha8Rng, graph: &LinkGraph, lambda: f64) -> Behavior {
    let rows = graph
        .states()
        .map(|s| random_row(rng, s, graph.out_degree(s), lambda))
        .collect();
    Behavior::new(graph, rows).unwrap()
}

/// Random behavior set plus per-stage specs for a `horizon`-stage problem.
pub fn random_plan_instance(
    rng: &mut ChaCha8Rng,
    states: usize,
    deg: usize,
    sources: usize,
    horizon: usize,
    lambda: f64,
) -> (BehaviorSet, Vec<StageSpec>, StateId) {
    let graph = random_graph(rng, states, deg);
    let source_tables: Vec<Behavior> = (0..sources)
        .map(|_| random_behavior(rng, &graph, lambda))
        .collect();
    let target = random_behavior(rng, &graph, lambda);
    let set = BehaviorSet::new(graph.clone(), source_tables, target).unwrap();
    let stages = (0..horizon)
        .map(|_| {
            let rewards: Vec<f64> = (0..states).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            StageSpec::new(&graph, rewards, graph.states().collect(), 1.0).unwrap()
        })
        .collect();
    let start = StateId(rng.random_range(0..states));
    (set, stages, start)
}

/// Full-objective evaluation of a two-stage assignment by forward path
/// enumeration, from first principles: no planner or solver code involved.
///
/// `alpha1` applies at `start` in stage 1; `alpha2[x]` applies at state `x`
/// in stage 2. Only states reachable from `start` matter.
pub fn path_sum_objective(
    set: &BehaviorSet,
    stages: &[StageSpec],
    start: StateId,
    alpha1: &[f64],
    alpha2: &dyn Fn(StateId) -> Vec<f64>,
) -> f64 {
    assert_eq!(stages.len(), 2);
    let graph = set.graph();
    let blend = |state: StateId, alpha: &[f64], idx: usize| -> f64 {
        set.sources()
            .iter()
            .zip(alpha)
            .map(|(b, &a)| a * b.row(state).probs()[idx])
            .sum()
    };
    let mut total = 0.0;
    for (i1, &x1) in graph.successors(start).iter().enumerate() {
        let p1 = blend(start, alpha1, i1);
        if p1 == 0.0 {
            continue;
        }
        let t1 = set.target().row(start).probs()[i1];
        let stage1 = (p1 / t1).ln() - stages[0].rewards[x1.index()];
        let a2 = alpha2(x1);
        for (i2, &x2) in graph.successors(x1).iter().enumerate() {
            let p2 = blend(x1, &a2, i2);
            if p2 == 0.0 {
                continue;
            }
            let t2 = set.target().row(x1).probs()[i2];
            let stage2 = (p2 / t2).ln() - stages[1].rewards[x2.index()];
            total += p1 * p2 * (stage1 + stage2);
        }
    }
    total
}

/// Exhaustive minimum of [`path_sum_objective`] over per-(stage, state)
/// weight grids of the given spacing, for S = 2 sources.
pub fn exhaustive_two_stage_minimum(
    set: &BehaviorSet,
    stages: &[StageSpec],
    start: StateId,
    spacing: f64,
) -> f64 {
    assert_eq!(set.source_count(), 2);
    let graph = set.graph();
    let ticks = (1.0 / spacing).round() as usize;
    let grid: Vec<f64> = (0..=ticks).map(|i| i as f64 / ticks as f64).collect();
    let succ: Vec<StateId> = graph.successors(start).to_vec();

    // Full product grid over every decision coordinate that can influence
    // the objective from `start`: the stage-1 weight there and one stage-2
    // weight per distinct successor. Unreachable states cannot change the
    // path sum.
    let mut best = f64::INFINITY;
    let mut assignment: std::collections::BTreeMap<StateId, Vec<f64>> = Default::default();
    // Pre-grid stage-2 choices per distinct successor.
    let mut distinct: Vec<StateId> = succ.clone();
    distinct.sort();
    distinct.dedup();
    let combos = grid.len().pow(distinct.len() as u32);
    for combo in 0..combos {
        let mut rest = combo;
        for &state in &distinct {
            let a = grid[rest % grid.len()];
            rest /= grid.len();
            assignment.insert(state, vec![a, 1.0 - a]);
        }
        for &a1 in &grid {
            let alpha1 = [a1, 1.0 - a1];
            let value = path_sum_objective(set, stages, start, &alpha1, &|x| {
                assignment.get(&x).cloned().unwrap_or_else(|| vec![1.0, 0.0])
            });
            if value < best {
                best = value;
            }
        }
    }
    best
}
