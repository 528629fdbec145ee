//! Randomized verification of the backward recursion: an exhaustive
//! path-enumeration oracle on tiny instances, internal cost-to-go
//! consistency, restriction soundness, and dominance over the single-source
//! baseline.

mod common;

use common::{exhaustive_two_stage_minimum, random_plan_instance};
use mixplan::baseline::backward_plan_binary;
use mixplan::behavior::ConditionalPmf;
use mixplan::graph::StateId;
use mixplan::objective::{stage_cost, StageInputs};
use mixplan::planner::{backward_plan, sample_next, PlanProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_stage_plans_match_the_exhaustive_path_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..5 {
        let (set, stages, start) = random_plan_instance(&mut rng, 4, 2, 2, 2, 0.2);
        let problem = PlanProblem::new(&set, stages.clone()).unwrap();
        let table = backward_plan(&problem, None).unwrap();
        let planned = table.total_cost(start).unwrap();
        let brute = exhaustive_two_stage_minimum(&set, &stages, start, 0.02);
        assert!(
            (planned - brute).abs() <= 1e-3,
            "planned {planned} vs exhaustive {brute}"
        );
        // the recursion can only beat a grid-restricted search
        assert!(planned <= brute + 1e-9);
    }
}

#[test]
fn stored_costs_recompute_from_scratch() {
    let mut rng = ChaCha8Rng::seed_from_u64(910);
    for _ in 0..10 {
        let (set, stages, _) = random_plan_instance(&mut rng, 6, 3, 3, 3, 0.05);
        let problem = PlanProblem::new(&set, stages.clone()).unwrap();
        let table = backward_plan(&problem, None).unwrap();
        let graph = set.graph();
        for k in (1..=problem.horizon()).rev() {
            for state in graph.states() {
                let entry = table.entry(k, state).unwrap();
                // rebuild the stage rewards this stage saw
                let stage_rewards: Vec<f64> = graph
                    .successors(state)
                    .iter()
                    .map(|succ| {
                        let cost_to_go = if k == problem.horizon() {
                            0.0
                        } else {
                            table.entry(k + 1, *succ).unwrap().cost
                        };
                        stages[k - 1].rewards[succ.index()] - cost_to_go
                    })
                    .collect();
                let inputs = StageInputs::new(
                    set.source_rows(state),
                    set.target().row(state),
                    stage_rewards,
                )
                .unwrap();
                let recomputed = stage_cost(&entry.alpha, &inputs).unwrap().expect_finite();
                assert!(
                    (recomputed - entry.cost).abs() <= 1e-10,
                    "stage {k}: {} vs {}",
                    recomputed,
                    entry.cost
                );
            }
        }
    }
}

#[test]
fn restriction_never_changes_computed_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(911);
    for _ in 0..10 {
        let (set, stages, start) = random_plan_instance(&mut rng, 7, 2, 2, 3, 0.05);
        let problem = PlanProblem::new(&set, stages).unwrap();
        let full = backward_plan(&problem, None).unwrap();
        let scope = set.graph().reachable_within(start, problem.horizon());
        let restricted = backward_plan(&problem, Some(&scope)).unwrap();
        for k in 1..=problem.horizon() {
            for (state, entry) in restricted.stage_entries(k) {
                let reference = full.entry(k, state).unwrap();
                assert!((entry.cost - reference.cost).abs() <= 1e-12);
                for (p, q) in entry.row.probs().iter().zip(reference.row.probs()) {
                    assert!((p - q).abs() <= 1e-12);
                }
            }
        }
        assert!(restricted.total_cost(start).is_some());
    }
}

#[test]
fn blended_plans_dominate_binary_plans() {
    let mut rng = ChaCha8Rng::seed_from_u64(912);
    let mut strict_improvement = 0.0f64;
    for _ in 0..100 {
        let states = rng.random_range(4..=7);
        let sources = rng.random_range(2..=4);
        let horizon = rng.random_range(1..=3);
        let (set, stages, start) = random_plan_instance(&mut rng, states, 2, sources, horizon, 0.05);
        let problem = PlanProblem::new(&set, stages).unwrap();
        let blended = backward_plan(&problem, None).unwrap().total_cost(start).unwrap();
        let binary = backward_plan_binary(&problem, None)
            .unwrap()
            .total_cost(start)
            .unwrap();
        assert!(
            blended <= binary + 1e-8,
            "blend {blended} worse than binary {binary}"
        );
        strict_improvement = strict_improvement.max(binary - blended);
    }
    assert!(
        strict_improvement > 1e-6,
        "blending never strictly improved: {strict_improvement}"
    );
}

#[test]
fn binary_stage_choices_equal_the_best_feasible_vertex() {
    let mut rng = ChaCha8Rng::seed_from_u64(913);
    for _ in 0..50 {
        let inst = common::random_stage_instance(&mut rng, 4, 5, 0.05);
        let inputs = inst.inputs();
        let picked = mixplan::baseline::select_source(
            &inputs,
            inst.successors(),
            &inst.safe_set,
            inst.epsilon,
        )
        .unwrap();
        // independent vertex scan
        let mut best: Option<(usize, f64)> = None;
        for i in 0..4 {
            let mass = mixplan::support_mass(
                inputs.source_rows()[i],
                inst.successors(),
                &inst.safe_set,
            );
            if mass < 1.0 - inst.epsilon {
                continue;
            }
            let mut w = vec![0.0; 4];
            w[i] = 1.0;
            let cost = stage_cost(&w, &inputs).unwrap().expect_finite();
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((i, cost));
            }
        }
        match (picked, best) {
            (None, None) => {}
            (Some((pi, pc)), Some((bi, bc))) => {
                assert_eq!(pi, bi);
                assert!((pc - bc).abs() < 1e-12);
            }
            other => panic!("selection disagrees with vertex scan: {other:?}"),
        }
    }
}

#[test]
fn planners_agree_when_the_blended_optimum_is_a_vertex() {
    use mixplan::solver::{solve_stage, SolverConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(915);
    let cfg = SolverConfig::default();
    let mut vertex_cases = 0;
    for _ in 0..400 {
        let inst = common::random_stage_instance(&mut rng, 3, 4, 0.05);
        let inputs = inst.inputs();
        let sol = solve_stage(&inputs, inst.successors(), &inst.safe_set, inst.epsilon, &cfg)
            .unwrap();
        if !sol.feasible {
            continue;
        }
        let at_vertex = sol
            .alpha_star
            .iter()
            .any(|&a| (a - 1.0).abs() <= 1e-9);
        if !at_vertex {
            continue;
        }
        vertex_cases += 1;
        let (_, binary_cost) = mixplan::baseline::select_source(
            &inputs,
            inst.successors(),
            &inst.safe_set,
            inst.epsilon,
        )
        .unwrap()
        .unwrap();
        assert!(
            (binary_cost - sol.cost_star).abs() <= 1e-8,
            "vertex optimum {} vs selection {}",
            sol.cost_star,
            binary_cost
        );
    }
    assert!(vertex_cases > 10, "only {vertex_cases} vertex-optimal cases");
}

#[test]
fn sampling_frequencies_concentrate() {
    let origin = StateId(0);
    let graph = common::star_graph(2);
    let row = ConditionalPmf::new(origin, vec![0.5, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(914);
    let draws = 10_000;
    let mut first = 0usize;
    for _ in 0..draws {
        if sample_next(&row, graph.successors(origin), &mut rng) == graph.successors(origin)[0] {
            first += 1;
        }
    }
    let freq = first as f64 / draws as f64;
    assert!((0.48..=0.52).contains(&freq), "frequency {freq}");
}
