//! Decision-time study over source count and horizon length.
//!
//! For each `(S, T)` cell the planner runs once per link of the network (the
//! link acting as the conditioning state, with the window-restricted scope it
//! would use while driving) and the wall-clock time of the planning call
//! alone is recorded. Averaging over every link gives a fair estimate, since
//! the state count a call touches depends on the connectivity around each
//! link. Extra synthetic sources are derived from the configured ones by
//! blending in seeded noise when the scenario supplies fewer than requested.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{Behavior, BehaviorSet, ConditionalPmf, StageSpec};
use crate::planner::{receding_step, PlanError};
use crate::sim::{update_rewards, ScenarioConfig};

/// Blend weight of the noise used to derive extra sources.
const SYNTH_NOISE: f64 = 0.3;

/// One `(sources, horizon)` cell: decision-time mean and sample standard
/// deviation over all links and repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub sources: usize,
    pub horizon: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
}

impl BenchResult {
    pub fn cell(&self, sources: usize, horizon: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.sources == sources && c.horizon == horizon)
    }
}

/// First `count` sources for a study: the set's own sources, extended past
/// their number by noisy copies (seeded, deterministic).
pub fn synthesize_sources(set: &BehaviorSet, count: usize, seed: u64) -> Vec<Behavior> {
    let graph = set.graph();
    let base = set.sources();
    let mut out: Vec<Behavior> = base.iter().take(count).cloned().collect();
    for j in base.len()..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let origin = &base[j % base.len()];
        let rows = graph
            .states()
            .map(|state| {
                let row = origin.row(state);
                let mut noise: Vec<f64> = (0..row.len()).map(|_| rng.random::<f64>()).collect();
                let noise_sum: f64 = noise.iter().sum();
                for v in &mut noise {
                    *v /= noise_sum;
                }
                let mut probs: Vec<f64> = row
                    .probs()
                    .iter()
                    .zip(&noise)
                    .map(|(p, n)| (1.0 - SYNTH_NOISE) * p + SYNTH_NOISE * n)
                    .collect();
                let sum: f64 = probs.iter().sum();
                for v in &mut probs {
                    *v /= sum;
                }
                ConditionalPmf::new(state, probs).expect("blend of pmfs is a pmf")
            })
            .collect();
        out.push(Behavior::new(graph, rows).expect("synthesized rows align with the graph"));
    }
    out
}

/// Runs the grid study on the scenario's preferred-lot behavior set with its
/// initial reward field.
pub fn run_bench(
    cfg: &ScenarioConfig,
    s_values: &[usize],
    t_values: &[usize],
    reps: usize,
    seed: u64,
) -> Result<BenchResult, PlanError> {
    let base_set = &cfg.behavior_sets[cfg.preferred_lot];
    let graph = base_set.graph().clone();
    let rewards = update_rewards(&vec![0; cfg.lots.len()], cfg);
    let spec = StageSpec {
        rewards,
        safe_set: cfg.safe_set.clone(),
        epsilon: cfg.epsilon,
    };

    let mut cells = Vec::new();
    for &s in s_values {
        let sources = synthesize_sources(base_set, s, seed);
        let set = BehaviorSet::new(graph.clone(), sources, base_set.target().clone())
            .expect("synthesized sources stay strictly positive");
        for &t in t_values {
            let mut samples = Vec::with_capacity(graph.state_count() * reps);
            for _ in 0..reps.max(1) {
                for state in graph.states() {
                    let started = Instant::now();
                    receding_step(&set, &spec, &cfg.solver, state, t)?;
                    samples.push(started.elapsed().as_secs_f64());
                }
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let std = if samples.len() < 2 {
                0.0
            } else {
                (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                    / (samples.len() - 1) as f64)
                    .sqrt()
            };
            cells.push(BenchCell {
                sources: s,
                horizon: t,
                mean_seconds: mean,
                std_seconds: std,
            });
        }
    }
    Ok(BenchResult { cells })
}
