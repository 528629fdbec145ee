//! Per-stage convex solver over the simplex with a chance constraint.
//!
//! The stage problem minimizes the stage cost over blending weights `alpha`
//! subject to `alpha` on the probability simplex and the chance constraint
//! `sum_i alpha_i * safe_mass_i >= 1 - epsilon`, where `safe_mass_i` is the
//! mass source `i` places on the safe set. The feasible set is the
//! intersection of the simplex with one halfspace; it is nonempty exactly
//! when some source alone satisfies the constraint (see
//! [`check_feasibility`]).
//!
//! Method: projected gradient descent with Armijo backtracking and an exact
//! (active-set) Euclidean projection onto the feasible polytope. Descent
//! starts from the cheapest feasible vertex, so the result never costs more
//! than selecting a single source. All arithmetic is deterministic:
//! identical inputs and config produce bitwise-identical output.

use thiserror::Error;

use crate::behavior::{support_mass, ConditionalPmf};
use crate::graph::{StateId, StateSet};
use crate::objective::{stage_cost, stage_gradient, stage_hessian, ExtReal, ObjectiveError, StageInputs};

/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
/// Line search halving factor.
const BACKTRACK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stationarity tolerance on the projected-gradient residual.
    pub tol_opt: f64,
    /// Cap on gradient iterations.
    pub max_iters: usize,
    /// Slack allowed on constraint satisfaction checks.
    pub tol_feas: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_opt: 1e-8,
            max_iters: 10_000,
            tol_feas: 1e-9,
        }
    }
}

/// Outcome of one stage solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    /// Optimal blending weights; empty when the stage is infeasible.
    pub alpha_star: Vec<f64>,
    /// Cost at `alpha_star`; `f64::INFINITY` when infeasible.
    pub cost_star: f64,
    /// Whether the constraint set is nonempty. Infeasibility is a value, not
    /// an error: the caller decides what to do with it.
    pub feasible: bool,
    /// False when the iteration limit ran out; `alpha_star` is then the best
    /// iterate found.
    pub converged: bool,
    pub iterations: usize,
}

impl StageSolution {
    fn infeasible() -> Self {
        Self {
            alpha_star: Vec::new(),
            cost_star: f64::INFINITY,
            feasible: false,
            converged: true,
            iterations: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("grid step {0} outside (0, 0.5]")]
    GridStep(f64),
}

/// Mass each source places on the safe set.
pub fn safe_masses(
    source_rows: &[&ConditionalPmf],
    successors: &[StateId],
    safe_set: &StateSet,
) -> Vec<f64> {
    source_rows
        .iter()
        .map(|row| support_mass(row, successors, safe_set))
        .collect()
}

/// The stage problem is feasible iff at least one source alone satisfies the
/// chance constraint. Exact characterization, both directions: blends are
/// convex combinations of the per-source safe masses, so no blend can exceed
/// their maximum.
pub fn check_feasibility(
    source_rows: &[&ConditionalPmf],
    successors: &[StateId],
    safe_set: &StateSet,
    epsilon: f64,
) -> bool {
    safe_masses(source_rows, successors, safe_set)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
        >= 1.0 - epsilon
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("weights are finite"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Exact Euclidean projection onto `simplex ∩ {x : s.x >= bound}`.
///
/// When the simplex projection already satisfies the halfspace it is the
/// answer. Otherwise the chance constraint is tight at the projection and
/// the KKT system gives `y_i = max(0, v_i + theta + mu * s_i)` for scalars
/// `(theta, mu)` fixed by `sum y = 1` and `s.y = bound`; enumerating the
/// support set (weight counts stay small, so `2^n` cases are cheap) solves
/// the 2x2 system per support and keeps the one satisfying all sign
/// conditions. Deterministic and exact, which matters near corners where
/// iterative schemes crawl.
///
/// The intersection must be nonempty: callers check feasibility first.
fn project_feasible(v: &[f64], s: &[f64], bound: f64) -> Vec<f64> {
    let simple = project_simplex(v);
    let mass: f64 = simple.iter().zip(s).map(|(a, b)| a * b).sum();
    if mass >= bound {
        return simple;
    }

    let n = v.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for support in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| support & (1 << i) != 0).collect();
        let k = members.len() as f64;
        let sum_v: f64 = members.iter().map(|&i| v[i]).sum();
        let sum_s: f64 = members.iter().map(|&i| s[i]).sum();
        let sum_ss: f64 = members.iter().map(|&i| s[i] * s[i]).sum();
        let sum_sv: f64 = members.iter().map(|&i| s[i] * v[i]).sum();
        // Solve  k*theta + sum_s*mu = 1 - sum_v
        //        sum_s*theta + sum_ss*mu = bound - sum_sv
        let det = k * sum_ss - sum_s * sum_s;
        let (theta, mu) = if det.abs() > 1e-14 {
            let rhs1 = 1.0 - sum_v;
            let rhs2 = bound - sum_sv;
            (
                (rhs1 * sum_ss - rhs2 * sum_s) / det,
                (k * rhs2 - sum_s * rhs1) / det,
            )
        } else {
            // `s` constant on this support: the halfspace is either implied
            // by the simplex constraint or unsatisfiable on it.
            let c = sum_s / k;
            if (c - bound).abs() > 1e-12 {
                continue;
            }
            ((1.0 - sum_v) / k, 0.0)
        };
        if mu < -1e-12 {
            continue;
        }
        let mut y = vec![0.0; n];
        let mut ok = true;
        for i in 0..n {
            let raw = v[i] + theta + mu * s[i];
            if support & (1 << i) != 0 {
                if raw < -1e-12 {
                    ok = false;
                    break;
                }
                y[i] = raw.max(0.0);
            } else if raw > 1e-12 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let dist: f64 = y.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(_, bd)| dist < *bd) {
            best = Some((y, dist));
        }
    }

    match best {
        Some((y, _)) => y,
        // Numerically degenerate inputs: fall back to the closest feasible
        // vertex blend, which always exists when the caller checked
        // feasibility.
        None => {
            let safest = s
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("masses are finite"))
                .map(|(i, _)| i)
                .expect("projection needs at least one coordinate");
            let mut y = vec![0.0; n];
            y[safest] = 1.0;
            y
        }
    }
}

/// Cost as a plain float for comparisons; the +inf sentinel maps to
/// `f64::INFINITY`.
fn cost_value(weights: &[f64], inputs: &StageInputs) -> Result<f64, SolverError> {
    Ok(match stage_cost(weights, inputs)? {
        ExtReal::Finite(v) => v,
        ExtReal::PosInf => f64::INFINITY,
    })
}

fn vertex(s: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; s];
    v[i] = 1.0;
    v
}

/// Solves the stage problem.
///
/// Returns an infeasible [`StageSolution`] when no source satisfies the
/// chance constraint; otherwise the minimizer over the feasible set, with
/// the projected-gradient residual driven below `cfg.tol_opt` (or the best
/// iterate after `cfg.max_iters`, flagged via `converged`).
pub fn solve_stage(
    inputs: &StageInputs,
    successors: &[StateId],
    safe_set: &StateSet,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<StageSolution, SolverError> {
    let s_count = inputs.source_count();
    let masses = safe_masses(inputs.source_rows(), successors, safe_set);
    let bound = 1.0 - epsilon;
    if masses.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) < bound {
        return Ok(StageSolution::infeasible());
    }

    // Start from the cheapest feasible vertex (ties to the lowest index);
    // descent is monotone from there, so blending never loses to selecting a
    // single source.
    let mut best_vertex: Option<(usize, f64)> = None;
    for i in 0..s_count {
        if masses[i] >= bound {
            let c = cost_value(&vertex(s_count, i), inputs)?;
            if best_vertex.is_none_or(|(_, bc)| c < bc) {
                best_vertex = Some((i, c));
            }
        }
    }
    let (start_index, vertex_cost) = best_vertex.expect("feasibility check passed");

    let mut alpha = vertex(s_count, start_index);
    let mut cost = vertex_cost;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled_steps = 0;

    while iterations < cfg.max_iters {
        let grad = match stage_gradient(&alpha, inputs) {
            Ok(g) => g,
            // Unsmoothed inputs can make the log-cost derivative blow up at a
            // boundary iterate; report the best point reached instead.
            Err(ObjectiveError::ZeroBlendMass { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        iterations += 1;

        // Stationarity: distance to the projected unit gradient step.
        let probe: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a - g).collect();
        let projected = project_feasible(&probe, &masses, bound);
        let residual = alpha
            .iter()
            .zip(&projected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= cfg.tol_opt {
            converged = true;
            break;
        }

        // Initial step 1/L with L estimated from the Hessian trace.
        let hess = match stage_hessian(&alpha, inputs) {
            Ok(h) => h,
            Err(ObjectiveError::ZeroBlendMass { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        let trace: f64 = (0..s_count).map(|i| hess[i][i]).sum();
        let mut step = 1.0 / trace.max(1e-12);

        let mut accepted = false;
        while step > 1e-18 {
            let trial: Vec<f64> = alpha
                .iter()
                .zip(&grad)
                .map(|(a, g)| a - step * g)
                .collect();
            let candidate = project_feasible(&trial, &masses, bound);
            let decrease: f64 = grad
                .iter()
                .zip(candidate.iter().zip(&alpha))
                .map(|(g, (c, a))| g * (c - a))
                .sum();
            let trial_cost = cost_value(&candidate, inputs)?;
            if trial_cost <= cost + ARMIJO_C1 * decrease {
                let progress = cost - trial_cost;
                alpha = candidate;
                cost = trial_cost;
                accepted = true;
                // Descent can keep producing epsilon-sized improvements long
                // after the cost has converged; treat a run of them as done.
                if progress <= 1e-14 * cost.abs().max(1.0) {
                    stalled_steps += 1;
                } else {
                    stalled_steps = 0;
                }
                break;
            }
            step *= BACKTRACK;
        }
        if !accepted || stalled_steps >= 3 {
            // No float step improves the cost: numerically stationary.
            converged = true;
            break;
        }
    }

    // Belt and braces for the early-exit paths: never return worse than the
    // best feasible vertex.
    if vertex_cost < cost {
        alpha = vertex(s_count, start_index);
        cost = vertex_cost;
    }

    Ok(StageSolution {
        alpha_star: alpha,
        cost_star: cost,
        feasible: true,
        converged,
        iterations,
    })
}

/// Shrink factor and round count for the oracle's local refinement.
const ORACLE_REFINE_FACTOR: usize = 5;
const ORACLE_REFINE_ROUNDS: usize = 2;

/// Exhaustive lattice search over the simplex, spacing `step`, refined
/// locally around the incumbent.
///
/// The base scan evaluates the stage cost at every weight vector with
/// entries that are multiples of `1/round(1/step)`, discarding lattice
/// points that violate the chance constraint. Simplex vertices are always
/// lattice points, so the feasibility characterization carries over exactly.
/// Two extra candidate families keep the scan honest when the constraint
/// binds: each infeasible lattice point slid onto the constraint plane
/// (toward the safest vertex) and every crossing of the plane with a simplex
/// edge — a bare lattice would miss a plane-bound optimum by O(step).
/// Refinement then rescans a shrinking box around the incumbent at 5x finer
/// spacing per round, so the returned cost carries much finer accuracy than
/// the base spacing.
///
/// Intended as an independent verification oracle: it shares no code path
/// with [`solve_stage`] beyond the cost function itself. The lattice is
/// combinatorial in the source count; keep it to a handful of sources.
pub fn grid_oracle(
    inputs: &StageInputs,
    successors: &[StateId],
    safe_set: &StateSet,
    epsilon: f64,
    step: f64,
) -> Result<StageSolution, SolverError> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(SolverError::GridStep(step));
    }
    let s_count = inputs.source_count();
    let masses = safe_masses(inputs.source_rows(), successors, safe_set);
    let bound = 1.0 - epsilon;

    let safest = masses
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("masses are finite"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let constraint_can_bind = bound > 0.0 && masses[safest] >= bound;

    let mut search = OracleSearch {
        inputs,
        masses: &masses,
        bound,
        safest,
        constraint_can_bind,
        best: None,
        evaluated: 0,
    };

    let base_n = (1.0 / step).round().max(1.0) as usize;
    search.scan(base_n, None)?;

    if constraint_can_bind {
        // Plane-edge crossings: with weight t on source i and 1-t on source
        // j, the plane is met at t = (bound - m_j) / (m_i - m_j).
        for i in 0..s_count {
            if masses[i] < bound {
                continue;
            }
            for j in 0..s_count {
                if masses[j] >= bound {
                    continue;
                }
                let t = (bound - masses[j]) / (masses[i] - masses[j]);
                let mut alpha = vec![0.0; s_count];
                alpha[i] = t;
                alpha[j] = 1.0 - t;
                search.consider(alpha)?;
            }
        }
    }

    let mut n = base_n;
    for _ in 0..ORACLE_REFINE_ROUNDS {
        let Some((incumbent, _)) = search.best.clone() else {
            break;
        };
        n *= ORACLE_REFINE_FACTOR;
        search.scan(n, Some((&incumbent, 2 * ORACLE_REFINE_FACTOR)))?;
    }

    Ok(match search.best {
        Some((alpha, cost)) => StageSolution {
            alpha_star: alpha,
            cost_star: cost,
            feasible: true,
            converged: true,
            iterations: search.evaluated,
        },
        None => StageSolution::infeasible(),
    })
}

/// Working state of one [`grid_oracle`] run.
struct OracleSearch<'a, 'b> {
    inputs: &'a StageInputs<'b>,
    masses: &'a [f64],
    bound: f64,
    safest: usize,
    constraint_can_bind: bool,
    best: Option<(Vec<f64>, f64)>,
    evaluated: usize,
}

impl OracleSearch<'_, '_> {
    fn consider(&mut self, alpha: Vec<f64>) -> Result<(), SolverError> {
        let cost = cost_value(&alpha, self.inputs)?;
        self.evaluated += 1;
        if self.best.as_ref().is_none_or(|(_, bc)| cost < *bc) {
            self.best = Some((alpha, cost));
        }
        Ok(())
    }

    /// One lattice pass at resolution `n`, optionally boxed around a center
    /// point (counts within `halfwidth` of `center * n`).
    fn scan(&mut self, n: usize, window: Option<(&[f64], usize)>) -> Result<(), SolverError> {
        let s_count = self.inputs.source_count();
        let bounds: Vec<(usize, usize)> = match window {
            None => vec![(0, n); s_count],
            Some((center, halfwidth)) => center
                .iter()
                .map(|&c| {
                    let mid = (c * n as f64).round() as isize;
                    let lo = (mid - halfwidth as isize).max(0) as usize;
                    let hi = ((mid + halfwidth as isize).max(0) as usize).min(n);
                    (lo, hi)
                })
                .collect(),
        };
        let mut counts = vec![0usize; s_count];
        enumerate_bounded_compositions(n, 0, &bounds, &mut counts, &mut |counts| {
            let alpha: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
            let mass: f64 = alpha.iter().zip(self.masses).map(|(a, m)| a * m).sum();
            if mass >= self.bound - 1e-12 {
                self.consider(alpha)
            } else if self.constraint_can_bind {
                // Slide the infeasible point onto the constraint plane along
                // the segment toward the safest vertex; the result stays in
                // the simplex and meets the plane exactly.
                let t = (self.bound - mass) / (self.masses[self.safest] - mass);
                let mut on_plane: Vec<f64> = alpha.iter().map(|a| a * (1.0 - t)).collect();
                on_plane[self.safest] += t;
                self.consider(on_plane)
            } else {
                Ok(())
            }
        })
    }
}

/// Visits every way of writing `n` as an ordered sum of non-negative
/// integers with `counts[i]` restricted to `bounds[i]`.
fn enumerate_bounded_compositions<F>(
    remaining: usize,
    index: usize,
    bounds: &[(usize, usize)],
    counts: &mut Vec<usize>,
    visit: &mut F,
) -> Result<(), SolverError>
where
    F: FnMut(&[usize]) -> Result<(), SolverError>,
{
    if index == counts.len() - 1 {
        let (lo, hi) = bounds[index];
        if remaining < lo || remaining > hi {
            return Ok(());
        }
        counts[index] = remaining;
        return visit(counts);
    }
    let (lo, hi) = bounds[index];
    for c in lo..=hi.min(remaining) {
        counts[index] = c;
        enumerate_bounded_compositions(remaining - c, index + 1, bounds, counts, visit)?;
    }
    Ok(())
}
