//! Stage objective: divergence to the target minus expected stage reward.
//!
//! For a blend `q = sum_i alpha_i * source_i` conditioned on one state, the
//! stage cost is
//!
//! ```text
//! c(alpha) = D(q || target) - sum_x' q(x') * reward(x')
//! ```
//!
//! with `D(p || q) = sum_{p(x)>0} p(x) ln(p(x)/q(x))`. The gradient and
//! Hessian are computed in closed form:
//!
//! ```text
//! dc/dalpha_j   = sum_x' s_j(x') * (ln q(x') - ln target(x') - reward(x') + 1)
//! d2c/da_j da_m = sum_x' s_j(x') * s_m(x') / q(x')
//! ```
//!
//! where `s_i` are the source rows and sums run over successors with
//! `q(x') > 0`. The Hessian is positive semidefinite, so the stage problem is
//! convex in `alpha`.
//!
//! These formulas treat `alpha` as a free vector (the simplex constraint is
//! handled by the solver), so the cost accepts small off-simplex excursions;
//! finite-difference probes rely on that.

use thiserror::Error;

use crate::behavior::ConditionalPmf;

/// Extended-real cost: finite, or the +infinity sentinel raised when the
/// blend places mass where the target has none. A typed value, never a
/// floating-point overflow, so callers can branch on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInf => None,
        }
    }

    /// Finite value, or panic: for call sites whose inputs guarantee
    /// absolute continuity.
    pub fn expect_finite(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => panic!("cost is +inf: blend not absolutely continuous w.r.t. target"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("rows are not aligned (different origin or length)")]
    MisalignedRows,
    #[error("no source rows supplied")]
    NoSources,
    #[error("{count} weights supplied for {expected} sources")]
    WeightCount { expected: usize, count: usize },
    #[error("stage rewards must be finite (entry {index} is {value})")]
    NonFiniteReward { index: usize, value: f64 },
    #[error("reward vector has {actual} entries, rows have {expected}")]
    RewardLength { expected: usize, actual: usize },
    #[error("blend has zero mass on supported successor {successor_index}; log-cost derivative undefined there")]
    ZeroBlendMass { successor_index: usize },
}

/// Inputs of one stage problem at a fixed conditioning state: the source
/// rows, the target row, and the stage reward on each successor.
#[derive(Debug, Clone)]
pub struct StageInputs<'a> {
    source_rows: Vec<&'a ConditionalPmf>,
    target_row: &'a ConditionalPmf,
    stage_rewards: Vec<f64>,
}

impl<'a> StageInputs<'a> {
    pub fn new(
        source_rows: Vec<&'a ConditionalPmf>,
        target_row: &'a ConditionalPmf,
        stage_rewards: Vec<f64>,
    ) -> Result<Self, ObjectiveError> {
        if source_rows.is_empty() {
            return Err(ObjectiveError::NoSources);
        }
        let origin = target_row.origin();
        let n = target_row.len();
        if source_rows
            .iter()
            .any(|r| r.origin() != origin || r.len() != n)
        {
            return Err(ObjectiveError::MisalignedRows);
        }
        if stage_rewards.len() != n {
            return Err(ObjectiveError::RewardLength {
                expected: n,
                actual: stage_rewards.len(),
            });
        }
        if let Some((index, &value)) = stage_rewards
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(ObjectiveError::NonFiniteReward { index, value });
        }
        Ok(Self {
            source_rows,
            target_row,
            stage_rewards,
        })
    }

    pub fn source_count(&self) -> usize {
        self.source_rows.len()
    }

    pub fn successor_count(&self) -> usize {
        self.target_row.len()
    }

    pub fn source_rows(&self) -> &[&'a ConditionalPmf] {
        &self.source_rows
    }

    pub fn target_row(&self) -> &ConditionalPmf {
        self.target_row
    }

    pub fn stage_rewards(&self) -> &[f64] {
        &self.stage_rewards
    }

    fn check_weights(&self, weights: &[f64]) -> Result<(), ObjectiveError> {
        if weights.len() != self.source_count() {
            return Err(ObjectiveError::WeightCount {
                expected: self.source_count(),
                count: weights.len(),
            });
        }
        Ok(())
    }

    /// Blend entry at successor `x`: `sum_i weights[i] * source_i(x)`.
    fn blend_at(&self, weights: &[f64], x: usize) -> f64 {
        self.source_rows
            .iter()
            .zip(weights)
            .map(|(row, &w)| w * row.probs()[x])
            .sum()
    }
}

/// `sum over p(x) > 0 of p(x) ln(p(x)/q(x))`; zero-mass entries contribute
/// nothing, and mass where `q` vanishes yields the +inf sentinel.
///
/// Non-negative, and zero iff the rows are equal.
pub fn kl_divergence(p: &ConditionalPmf, q: &ConditionalPmf) -> Result<ExtReal, ObjectiveError> {
    if p.origin() != q.origin() || p.len() != q.len() {
        return Err(ObjectiveError::MisalignedRows);
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi > 0.0 {
            if qi == 0.0 {
                return Ok(ExtReal::PosInf);
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(ExtReal::Finite(total))
}

/// Stage cost `D(blend || target) - E_blend[reward]` as a function of the
/// blending weights.
pub fn stage_cost(weights: &[f64], inputs: &StageInputs) -> Result<ExtReal, ObjectiveError> {
    inputs.check_weights(weights)?;
    let target = inputs.target_row.probs();
    let mut total = 0.0;
    for x in 0..inputs.successor_count() {
        let q = inputs.blend_at(weights, x);
        if q > 0.0 {
            if target[x] == 0.0 {
                return Ok(ExtReal::PosInf);
            }
            total += q * ((q / target[x]).ln() - inputs.stage_rewards[x]);
        }
    }
    Ok(ExtReal::Finite(total))
}

/// Analytic gradient of [`stage_cost`] in the blending weights.
///
/// Requires the blend to be positive on every successor some source
/// supports; guaranteed for smoothed sources, otherwise a
/// [`ObjectiveError::ZeroBlendMass`] domain error.
pub fn stage_gradient(weights: &[f64], inputs: &StageInputs) -> Result<Vec<f64>, ObjectiveError> {
    inputs.check_weights(weights)?;
    let target = inputs.target_row.probs();
    let mut grad = vec![0.0; inputs.source_count()];
    for x in 0..inputs.successor_count() {
        let supported = inputs.source_rows.iter().any(|r| r.probs()[x] > 0.0);
        if !supported {
            continue;
        }
        let q = inputs.blend_at(weights, x);
        if q <= 0.0 {
            return Err(ObjectiveError::ZeroBlendMass { successor_index: x });
        }
        let term = q.ln() - target[x].ln() - inputs.stage_rewards[x] + 1.0;
        for (g, row) in grad.iter_mut().zip(&inputs.source_rows) {
            *g += row.probs()[x] * term;
        }
    }
    Ok(grad)
}

/// Analytic Hessian of [`stage_cost`]: `h[j][m] = sum_x s_j(x) s_m(x) / q(x)`.
///
/// Symmetric positive semidefinite.
pub fn stage_hessian(weights: &[f64], inputs: &StageInputs) -> Result<Vec<Vec<f64>>, ObjectiveError> {
    inputs.check_weights(weights)?;
    let s = inputs.source_count();
    let mut hess = vec![vec![0.0; s]; s];
    for x in 0..inputs.successor_count() {
        let supported = inputs.source_rows.iter().any(|r| r.probs()[x] > 0.0);
        if !supported {
            continue;
        }
        let q = inputs.blend_at(weights, x);
        if q <= 0.0 {
            return Err(ObjectiveError::ZeroBlendMass { successor_index: x });
        }
        for j in 0..s {
            let pj = inputs.source_rows[j].probs()[x];
            if pj == 0.0 {
                continue;
            }
            for m in j..s {
                let v = pj * inputs.source_rows[m].probs()[x] / q;
                hess[j][m] += v;
                if m != j {
                    hess[m][j] += v;
                }
            }
        }
    }
    Ok(hess)
}
