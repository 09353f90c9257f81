//! Quantization budget allocation against a capacity region.
//!
//! The PS picks one budget `k_m >= 2` per user to minimise the summed
//! quantization variance `sum_m d * delta_m^2 / (4 (k_m - 1)^2)` subject to
//! `sum_{m in S} d * log2(k_m) <= s * C_S` for every constrained subset `S`.
//!
//! Solvers:
//! - [`solve_relaxed`]: real budgets, any number of users, solved in the
//!   log domain `b = log2(k)` where every constraint is linear.
//! - [`solve_two_user`]: closed-form stationarity equation for two users,
//!   solved by bisection and clamped to the region.
//! - [`round_allocation`]: floor plus greedy increments to integer budgets.
//! - [`solve_exhaustive`]: brute-force integer optimum for small instances.

mod exhaustive;
mod relaxed;
mod rounding;
mod two_user;

pub use exhaustive::{solve_exhaustive, MAX_ENUMERATION};
pub use relaxed::{solve_relaxed, RelaxedSolution};
pub use rounding::{round_allocation, uniform_allocation};
pub use two_user::{solve_two_user, stationarity_ratio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{CapacityRegion, ChannelError, MacSpec, UserSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocatorError {
    #[error("expected {expected} dynamic ranges, got {actual}")]
    DeltaCount { expected: usize, actual: usize },
    #[error("dynamic range of user {user} must be finite and non-negative, got {value}")]
    InvalidDelta { user: usize, value: f64 },
    #[error("budget of user {user} must be at least 2, got {value}")]
    BudgetTooSmall { user: usize, value: f64 },
    #[error("subset {subset} cannot give every member at least 2 levels (cap {cap_bits:.3} bits)")]
    Infeasible { subset: UserSet, cap_bits: f64 },
    #[error("the two-user solver needs exactly 2 users, got {0}")]
    NotTwoUsers(usize),
    #[error("joint budget cap {0:.4} is below 4, no pair with both budgets >= 2 exists")]
    JointCapTooSmall(f64),
    #[error("exhaustive search over {0} tuples exceeds the enumeration guard")]
    EnumerationTooLarge(u128),
    #[error("relaxed solver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, AllocatorError>;

/// Per-user dynamic ranges plus the region and model size they compete in.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    deltas: Vec<f64>,
    region: CapacityRegion,
    dim: usize,
}

impl AllocationProblem {
    pub fn new(deltas: Vec<f64>, spec: &MacSpec) -> Result<Self> {
        Self::with_region(deltas, spec.region(), spec.dim())
    }

    pub fn with_region(deltas: Vec<f64>, region: CapacityRegion, dim: usize) -> Result<Self> {
        if deltas.len() != region.users() {
            return Err(AllocatorError::DeltaCount {
                expected: region.users(),
                actual: deltas.len(),
            });
        }
        if let Some((user, &value)) = deltas
            .iter()
            .enumerate()
            .find(|(_, d)| !d.is_finite() || **d < 0.0)
        {
            return Err(AllocatorError::InvalidDelta {
                user: user + 1,
                value,
            });
        }
        if dim == 0 {
            return Err(ChannelError::ZeroDimension.into());
        }
        Ok(Self {
            deltas,
            region,
            dim,
        })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn region(&self) -> &CapacityRegion {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> usize {
        self.deltas.len()
    }

    /// Cap of `subset` in log-budget units, `s * C_S / d`.
    pub(crate) fn log_cap(&self, subset: UserSet) -> Option<f64> {
        self.region.cap_bits(subset).map(|b| b / self.dim as f64)
    }

    pub fn rates(&self, k: &[f64]) -> Vec<f64> {
        k.iter().map(|&k| self.dim as f64 * k.log2()).collect()
    }

    pub fn is_feasible(&self, k: &[f64]) -> Result<bool> {
        Ok(self.region.is_feasible(&self.rates(k))?)
    }

    /// Rejects regions where some subset cannot give all members `k = 2`.
    pub(crate) fn check_minimum_budgets(&self) -> Result<()> {
        for c in self.region.constraints() {
            let need = c.users.len() as f64 * self.dim as f64;
            if c.bits + crate::channel::FEASIBILITY_RTOL * c.bits.max(1.0) < need {
                return Err(AllocatorError::Infeasible {
                    subset: c.users,
                    cap_bits: c.bits,
                });
            }
        }
        Ok(())
    }
}

/// `sum_m d * delta_m^2 / (4 (k_m - 1)^2)` for real or integer budgets.
pub fn objective(problem: &AllocationProblem, k: &[f64]) -> Result<f64> {
    if k.len() != problem.users() {
        return Err(AllocatorError::DeltaCount {
            expected: problem.users(),
            actual: k.len(),
        });
    }
    let mut total = 0.0;
    for (user, (&delta, &k)) in problem.deltas.iter().zip(k).enumerate() {
        if !(k >= 2.0) {
            return Err(AllocatorError::BudgetTooSmall {
                user: user + 1,
                value: k,
            });
        }
        total += user_objective(problem.dim, delta, k);
    }
    Ok(total)
}

#[inline]
pub(crate) fn user_objective(dim: usize, delta: f64, k: f64) -> f64 {
    let km1 = k - 1.0;
    dim as f64 * delta * delta / (4.0 * km1 * km1)
}

/// Integer budgets with their rates and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub k_int: Vec<u32>,
    pub k_real: Vec<f64>,
    pub rates: Vec<f64>,
    pub objective: f64,
}

impl Allocation {
    pub(crate) fn from_integer(
        problem: &AllocationProblem,
        k_int: Vec<u32>,
        k_real: Vec<f64>,
    ) -> Self {
        let as_real: Vec<f64> = k_int.iter().map(|&k| k as f64).collect();
        let rates = problem.rates(&as_real);
        let objective = problem
            .deltas
            .iter()
            .zip(&as_real)
            .map(|(&d, &k)| user_objective(problem.dim, d, k))
            .sum();
        Self {
            k_int,
            k_real,
            rates,
            objective,
        }
    }
}

/// Relaxed solve followed by rounding: the MAC-aware allocation.
pub fn allocate(problem: &AllocationProblem) -> Result<Allocation> {
    let relaxed = solve_relaxed(problem)?;
    round_allocation(problem, &relaxed.k)
}
