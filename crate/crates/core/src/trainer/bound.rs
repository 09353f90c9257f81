//! Expected-suboptimality bound for quantized GD with `eta_t = 1 / (lambda t)`:
//!
//! ```text
//! E[l(w_T)] - l(w*) <= 2 mu / (lambda^2 T^2) * sum_t G_t^2
//! G_t^2 = (1/M^2) sum_m d Delta_{t,m}^2 / (4 (k_{t,m} - 1)^2) + L^2
//! ```

use super::{LossKind, Result, RoundMetrics, TrainerError};
use crate::quantizer::variance_bound;

/// Loss family plus the curvature constants the bound needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub strong_convexity: Option<f64>,
    pub smoothness: Option<f64>,
    pub gradient_bound: Option<f64>,
}

impl LossSpec {
    pub fn new(
        kind: LossKind,
        strong_convexity: Option<f64>,
        smoothness: Option<f64>,
        gradient_bound: Option<f64>,
    ) -> Result<Self> {
        let positive = |v: Option<f64>, name: &str| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => Err(TrainerError::InvalidLoss(format!(
                "{name} must be finite and > 0, got {x}"
            ))),
            _ => Ok(()),
        };
        positive(strong_convexity, "strong convexity")?;
        positive(smoothness, "smoothness")?;
        positive(gradient_bound, "gradient bound")?;
        if let (Some(l), Some(m)) = (strong_convexity, smoothness) {
            // eigenvalue roundoff can leave lambda a hair above mu
            if l > m * (1.0 + 1e-12) {
                return Err(TrainerError::InvalidLoss(format!(
                    "strong convexity {l} exceeds smoothness {m}"
                )));
            }
        }
        Ok(Self {
            kind,
            strong_convexity,
            smoothness,
            gradient_bound,
        })
    }

    /// `(lambda, mu, L)` when all three are set.
    pub fn constants(&self) -> Result<(f64, f64, f64)> {
        match (self.strong_convexity, self.smoothness, self.gradient_bound) {
            (Some(l), Some(m), Some(g)) => Ok((l, m, g)),
            _ => Err(TrainerError::BoundUnavailable),
        }
    }
}

/// `(1/M^2) sum_m variance_bound(Delta_m, k_m, d)`.
pub fn quantization_variance(deltas: &[f64], budgets: &[u32], dim: usize) -> Result<f64> {
    if deltas.len() != budgets.len() || deltas.is_empty() {
        return Err(TrainerError::UserCountMismatch {
            expected: deltas.len(),
            actual: budgets.len(),
        });
    }
    let m = deltas.len() as f64;
    let mut total = 0.0;
    for (&delta, &k) in deltas.iter().zip(budgets) {
        total += variance_bound(delta, k, dim)?;
    }
    Ok(total / (m * m))
}

/// Bound after `horizon` rounds given per-round quantization variances.
pub fn bound_from_variances(spec: &LossSpec, variances: &[f64]) -> Result<f64> {
    let (lambda, mu, l) = spec.constants()?;
    if variances.is_empty() {
        return Err(TrainerError::MissingRound(1));
    }
    let t = variances.len() as f64;
    let sum: f64 = variances.iter().map(|v| v + l * l).sum();
    Ok(2.0 * mu / (lambda * lambda * t * t) * sum)
}

/// Evaluates the bound over logged rounds `1..=horizon`.
pub fn convergence_bound(spec: &LossSpec, rounds: &[RoundMetrics], horizon: usize) -> Result<f64> {
    let mut variances = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let round = rounds
            .get(t - 1)
            .filter(|r| r.t == t as u64)
            .ok_or(TrainerError::MissingRound(t as u64))?;
        variances.push(round.variance_bound.ok_or(TrainerError::BoundUnavailable)?);
    }
    bound_from_variances(spec, &variances)
}
