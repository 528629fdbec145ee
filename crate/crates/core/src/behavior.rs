//! Conditional distributions over graph successors and bundles thereof.
//!
//! A behavior assigns to every state a probability row over that state's
//! successors. A [`BehaviorSet`] bundles the source behaviors an agent can
//! blend, together with the target behavior it tracks. Rows are stored dense
//! over the successor list; the successor order of the graph is the canonical
//! alignment for all vectors.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{LinkGraph, StateId, StateSet};

/// Absolute tolerance on stored row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Absolute tolerance on user-supplied mixing weights (looser: solvers
/// produce them).
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Default smoothing level used when a bundle needs strictly positive rows.
pub const DEFAULT_SMOOTHING: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("row sums to {sum} (must be 1 within {ROW_SUM_TOL:e})")]
    RowSum { sum: f64 },
    #[error("row entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("row has {actual} entries but the state has {expected} successors")]
    RowLength { expected: usize, actual: usize },
    #[error("behavior covers {actual} states, graph has {expected}")]
    TableLength { expected: usize, actual: usize },
    #[error("row origins differ")]
    OriginMismatch,
    #[error("smoothing level {0} must lie strictly inside (0, 1)")]
    SmoothingOutOfRange(f64),
    #[error("mixing weights sum to {sum} (must be 1 within {WEIGHT_SUM_TOL:e})")]
    WeightSum { sum: f64 },
    #[error("mixing weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("{count} weights supplied for {expected} rows")]
    WeightCount { expected: usize, count: usize },
    #[error("no rows to mix")]
    EmptyMix,
    #[error("a behavior set needs at least one source")]
    NoSources,
    #[error("behavior set is not usable:\n{0}")]
    Invalid(ValidationReport),
}

/// One row of transition probabilities, aligned with `successors(origin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPmf {
    origin: StateId,
    probs: Vec<f64>,
}

impl ConditionalPmf {
    /// Validates non-negativity and unit sum (within [`ROW_SUM_TOL`]).
    pub fn new(origin: StateId, probs: Vec<f64>) -> Result<Self, BehaviorError> {
        for (index, &value) in probs.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(BehaviorError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(BehaviorError::RowSum { sum });
        }
        Ok(Self { origin, probs })
    }

    /// Uniform row over `n` successors.
    pub fn uniform(origin: StateId, n: usize) -> Self {
        Self {
            origin,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn origin(&self) -> StateId {
        self.origin
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Total mass the row places on `subset`, i.e. the probability that the next
/// state lands inside it. `successors` must be the row's alignment.
pub fn support_mass(row: &ConditionalPmf, successors: &[StateId], subset: &StateSet) -> f64 {
    row.probs()
        .iter()
        .zip(successors)
        .filter(|(_, s)| subset.contains(s))
        .map(|(p, _)| p)
        .sum()
}

/// Entrywise convex combination of rows sharing an origin.
///
/// `weights` must lie on the probability simplex within [`WEIGHT_SUM_TOL`];
/// the result is renormalized so it satisfies the stored-row invariant
/// exactly.
pub fn mix(rows: &[&ConditionalPmf], weights: &[f64]) -> Result<ConditionalPmf, BehaviorError> {
    if rows.is_empty() {
        return Err(BehaviorError::EmptyMix);
    }
    if rows.len() != weights.len() {
        return Err(BehaviorError::WeightCount {
            expected: rows.len(),
            count: weights.len(),
        });
    }
    let origin = rows[0].origin();
    let n = rows[0].len();
    for row in rows {
        if row.origin() != origin || row.len() != n {
            return Err(BehaviorError::OriginMismatch);
        }
    }
    let mut sum = 0.0;
    for (index, &w) in weights.iter().enumerate() {
        if w < -WEIGHT_SUM_TOL || !w.is_finite() {
            return Err(BehaviorError::NegativeWeight { index, value: w });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(BehaviorError::WeightSum { sum });
    }
    let mut probs = vec![0.0; n];
    for (row, &w) in rows.iter().zip(weights) {
        for (acc, &p) in probs.iter_mut().zip(row.probs()) {
            *acc += w * p;
        }
    }
    // Clear the tiny negatives / drift the weight tolerance admits.
    let mut total = 0.0;
    for p in &mut probs {
        *p = p.max(0.0);
        total += *p;
    }
    for p in &mut probs {
        *p /= total;
    }
    ConditionalPmf::new(origin, probs)
}

/// A full table of conditional rows, one per graph state.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    rows: Vec<ConditionalPmf>,
}

impl Behavior {
    /// `rows[i]` must be the row for state `i`, matching its out-degree.
    pub fn new(graph: &LinkGraph, rows: Vec<ConditionalPmf>) -> Result<Self, BehaviorError> {
        if rows.len() != graph.state_count() {
            return Err(BehaviorError::TableLength {
                expected: graph.state_count(),
                actual: rows.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.origin() != StateId(i) {
                return Err(BehaviorError::OriginMismatch);
            }
            let expected = graph.out_degree(StateId(i));
            if row.len() != expected {
                return Err(BehaviorError::RowLength {
                    expected,
                    actual: row.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(graph: &LinkGraph) -> Self {
        let rows = graph
            .states()
            .map(|s| ConditionalPmf::uniform(s, graph.out_degree(s)))
            .collect();
        Self { rows }
    }

    pub fn row(&self, state: StateId) -> &ConditionalPmf {
        &self.rows[state.index()]
    }

    pub fn rows(&self) -> &[ConditionalPmf] {
        &self.rows
    }
}

/// Blends every row with the uniform row: `(1-lambda)*row + lambda*uniform`.
///
/// This bounds each entry into `[lambda/out_degree, 1]`, giving the strictly
/// positive rows later stages require.
pub fn smooth_behavior(behavior: &Behavior, lambda: f64) -> Result<Behavior, BehaviorError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(BehaviorError::SmoothingOutOfRange(lambda));
    }
    let rows = behavior
        .rows
        .iter()
        .map(|row| {
            let n = row.len() as f64;
            let probs = row
                .probs()
                .iter()
                .map(|p| (1.0 - lambda) * p + lambda / n)
                .collect();
            ConditionalPmf::new(row.origin(), probs)
        })
        .collect::<Result<_, _>>()?;
    Ok(Behavior { rows })
}

/// One defect found while validating a behavior table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ValidationFinding {
    /// Row does not sum to 1; `deviation` is `sum - 1`.
    RowSumDeviation { state: String, deviation: f64 },
    NegativeEntry {
        state: String,
        successor: String,
        value: f64,
    },
    RowLengthMismatch {
        state: String,
        expected: usize,
        actual: usize,
    },
    MissingRow { state: String },
    /// Target places zero mass where source `source` has positive mass, so a
    /// blend using that source cannot be tracked at finite cost.
    AbsoluteContinuity {
        state: String,
        successor: String,
        source: usize,
        source_mass: f64,
    },
    /// Some source is not bounded away from zero on the union support at this
    /// state, so blend costs are not uniformly well defined there.
    ZeroSourceOnSupport {
        state: String,
        successor: String,
        source: usize,
    },
}

/// Outcome of validating behavior tables; empty iff the input is usable.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<ValidationFinding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.findings.is_empty() {
            return write!(f, "ok");
        }
        for finding in &self.findings {
            match finding {
                ValidationFinding::RowSumDeviation { state, deviation } => {
                    writeln!(f, "state `{state}`: row sum off by {deviation:+e}")?
                }
                ValidationFinding::NegativeEntry {
                    state,
                    successor,
                    value,
                } => writeln!(f, "state `{state}`: negative mass {value} on `{successor}`")?,
                ValidationFinding::RowLengthMismatch {
                    state,
                    expected,
                    actual,
                } => writeln!(
                    f,
                    "state `{state}`: row has {actual} entries, expected {expected}"
                )?,
                ValidationFinding::MissingRow { state } => {
                    writeln!(f, "state `{state}`: no row defined")?
                }
                ValidationFinding::AbsoluteContinuity {
                    state,
                    successor,
                    source,
                    source_mass,
                } => writeln!(
                    f,
                    "state `{state}`: target has zero mass on `{successor}` but source {source} has {source_mass}"
                )?,
                ValidationFinding::ZeroSourceOnSupport {
                    state,
                    successor,
                    source,
                } => writeln!(
                    f,
                    "state `{state}`: source {source} has zero mass on supported successor `{successor}`"
                )?,
            }
        }
        Ok(())
    }
}

/// Structural validation of a table of raw rows against its graph: row sums,
/// negative entries, and alignment with the successor lists. `rows[i]` is the
/// candidate row for state `i`; `None` marks a state the table does not
/// cover.
///
/// Reporting only; an empty report means the table is usable on its own.
pub fn validate_behavior(graph: &LinkGraph, rows: &[Option<Vec<f64>>]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for state in graph.states() {
        let Some(Some(row)) = rows.get(state.index()) else {
            report.findings.push(ValidationFinding::MissingRow {
                state: graph.id(state).to_string(),
            });
            continue;
        };
        let succs = graph.successors(state);
        if row.len() != succs.len() {
            report.findings.push(ValidationFinding::RowLengthMismatch {
                state: graph.id(state).to_string(),
                expected: succs.len(),
                actual: row.len(),
            });
            continue;
        }
        let mut sum = 0.0;
        for (i, &p) in row.iter().enumerate() {
            if p < 0.0 {
                report.findings.push(ValidationFinding::NegativeEntry {
                    state: graph.id(state).to_string(),
                    successor: graph.id(succs[i]).to_string(),
                    value: p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            report.findings.push(ValidationFinding::RowSumDeviation {
                state: graph.id(state).to_string(),
                deviation: sum - 1.0,
            });
        }
    }
    report
}

/// [`validate_behavior`] over an already-constructed table.
pub fn validate_behavior_table(graph: &LinkGraph, behavior: &Behavior) -> ValidationReport {
    let rows: Vec<Option<Vec<f64>>> = behavior
        .rows()
        .iter()
        .map(|r| Some(r.probs().to_vec()))
        .collect();
    validate_behavior(graph, &rows)
}

/// Cross-table validation of sources against the target: absolute continuity
/// (finite tracking cost) and positivity of every source on the union
/// support (bounded blend costs).
pub fn validate_sources_against_target(
    graph: &LinkGraph,
    sources: &[Behavior],
    target: &Behavior,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for state in graph.states() {
        let succs = graph.successors(state);
        for (j, &succ) in succs.iter().enumerate() {
            let union_supported = sources.iter().any(|b| b.row(state).probs()[j] > 0.0);
            if !union_supported {
                continue;
            }
            for (i, b) in sources.iter().enumerate() {
                let mass = b.row(state).probs()[j];
                if mass > 0.0 && target.row(state).probs()[j] == 0.0 {
                    report.findings.push(ValidationFinding::AbsoluteContinuity {
                        state: graph.id(state).to_string(),
                        successor: graph.id(succ).to_string(),
                        source: i,
                        source_mass: mass,
                    });
                }
                if mass == 0.0 {
                    report.findings.push(ValidationFinding::ZeroSourceOnSupport {
                        state: graph.id(state).to_string(),
                        successor: graph.id(succ).to_string(),
                        source: i,
                    });
                }
            }
        }
    }
    report
}

/// The source behaviors an agent can blend plus the target it tracks.
///
/// Construction validates every table and records the entry bounds
/// `lower_bound <= p <= upper_bound` holding over the union support, with
/// `lower_bound > 0`. Raw route tables usually fail that bound; build them
/// through [`BehaviorSet::smoothed`] instead.
#[derive(Debug, Clone)]
pub struct BehaviorSet {
    graph: LinkGraph,
    sources: Vec<Behavior>,
    target: Behavior,
    lower_bound: f64,
    upper_bound: f64,
}

impl BehaviorSet {
    pub fn new(
        graph: LinkGraph,
        sources: Vec<Behavior>,
        target: Behavior,
    ) -> Result<Self, BehaviorError> {
        if sources.is_empty() {
            return Err(BehaviorError::NoSources);
        }
        let mut report = ValidationReport::default();
        for source in &sources {
            report.merge(validate_behavior_table(&graph, source));
        }
        report.merge(validate_behavior_table(&graph, &target));
        report.merge(validate_sources_against_target(&graph, &sources, &target));
        if !report.is_ok() {
            return Err(BehaviorError::Invalid(report));
        }
        let mut lower = f64::INFINITY;
        let mut upper = 0.0f64;
        for source in &sources {
            for row in source.rows() {
                for &p in row.probs() {
                    if p > 0.0 {
                        lower = lower.min(p);
                    }
                    upper = upper.max(p);
                }
            }
        }
        Ok(Self {
            graph,
            sources,
            target,
            lower_bound: lower,
            upper_bound: upper,
        })
    }

    /// Smooths both sources and target with `lambda`, then validates.
    ///
    /// Smoothing the sources bounds their entries into `[lambda/deg, 1)`;
    /// smoothing the target as well guarantees absolute continuity, hence
    /// finite tracking cost, regardless of the raw tables' supports.
    pub fn smoothed(
        graph: LinkGraph,
        sources: Vec<Behavior>,
        target: Behavior,
        lambda: f64,
    ) -> Result<Self, BehaviorError> {
        let sources = sources
            .iter()
            .map(|b| smooth_behavior(b, lambda))
            .collect::<Result<Vec<_>, _>>()?;
        let target = smooth_behavior(&target, lambda)?;
        Self::new(graph, sources, target)
    }

    pub fn graph(&self) -> &LinkGraph {
        &self.graph
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[Behavior] {
        &self.sources
    }

    pub fn target(&self) -> &Behavior {
        &self.target
    }

    /// Source rows conditioned on `state`, in source order.
    pub fn source_rows(&self, state: StateId) -> Vec<&ConditionalPmf> {
        self.sources.iter().map(|b| b.row(state)).collect()
    }

    /// Smallest positive source entry (the bound `m` with `m > 0`).
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// Largest source entry (the bound `M`).
    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }
}

/// Per-stage reward field, safe set and chance tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    /// Reward for arriving at each state, indexed by `StateId`.
    pub rewards: Vec<f64>,
    /// States the next state must land in with probability `1 - epsilon`.
    pub safe_set: StateSet,
    pub epsilon: f64,
}

#[derive(Debug, Error)]
pub enum StageSpecError {
    #[error("epsilon {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("reward field covers {actual} states, graph has {expected}")]
    RewardLength { expected: usize, actual: usize },
    #[error("safe set contains a state outside the graph")]
    SafeSetOutOfRange,
}

impl StageSpec {
    pub fn new(
        graph: &LinkGraph,
        rewards: Vec<f64>,
        safe_set: StateSet,
        epsilon: f64,
    ) -> Result<Self, StageSpecError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(StageSpecError::EpsilonOutOfRange(epsilon));
        }
        if rewards.len() != graph.state_count() {
            return Err(StageSpecError::RewardLength {
                expected: graph.state_count(),
                actual: rewards.len(),
            });
        }
        if safe_set.iter().any(|s| s.index() >= graph.state_count()) {
            return Err(StageSpecError::SafeSetOutOfRange);
        }
        Ok(Self {
            rewards,
            safe_set,
            epsilon,
        })
    }

    /// Unconstrained stage: zero rewards, every state safe, epsilon 1.
    pub fn unconstrained(graph: &LinkGraph) -> Self {
        Self {
            rewards: vec![0.0; graph.state_count()],
            safe_set: graph.states().collect(),
            epsilon: 1.0,
        }
    }
}
