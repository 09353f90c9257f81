//! Analytical two-user solution.
//!
//! With the joint cap `K = 2^(s C_12 / d)` active, `k_2 = K / k_1` and the
//! stationarity condition reduces to a single equation in `k_1`:
//!
//! ```text
//! delta_1 / delta_2 = phi(k_1) = sqrt(K k_1 (k_1 - 1)^3 / (K - k_1)^3)
//! ```
//!
//! `phi` is strictly increasing on `(1, K)`, so bisection finds the unique
//! root. The root is then clamped to the part of the joint-cap segment that
//! respects the individual caps and the `k >= 2` floor: an individual cap
//! binds first and the other user takes `K / cap`; if a budget would fall
//! below 2 it is fixed at 2 and the other user takes the remainder.

use super::{AllocationProblem, AllocatorError, Result};
use crate::channel::UserSet;

const ROOT_RTOL: f64 = 1e-9;

/// `phi(k_1)` for joint cap `K`.
pub fn stationarity_ratio(joint_cap: f64, k1: f64) -> f64 {
    let km1 = k1 - 1.0;
    let rest = joint_cap - k1;
    (joint_cap * k1 * km1 * km1 * km1 / (rest * rest * rest)).sqrt()
}

fn solve_phi(joint_cap: f64, ratio: f64) -> f64 {
    let eps = 1e-9 * joint_cap;
    let mut lo = 1.0 + eps;
    let mut hi = joint_cap - eps;
    if ratio <= stationarity_ratio(joint_cap, lo) {
        return lo;
    }
    if ratio >= stationarity_ratio(joint_cap, hi) {
        return hi;
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let phi = stationarity_ratio(joint_cap, mid);
        if (phi - ratio).abs() <= ROOT_RTOL * ratio {
            break;
        }
        if phi < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    mid
}

/// Optimal real budgets `(k_1, k_2)` of the two-user relaxation.
pub fn solve_two_user(problem: &AllocationProblem) -> Result<(f64, f64)> {
    if problem.users() != 2 {
        return Err(AllocatorError::NotTwoUsers(problem.users()));
    }
    problem.check_minimum_budgets()?;
    let cap1 = problem
        .log_cap(UserSet::singleton(0))
        .map_or(f64::INFINITY, f64::exp2);
    let cap2 = problem
        .log_cap(UserSet::singleton(1))
        .map_or(f64::INFINITY, f64::exp2);
    let joint = match problem.log_cap(UserSet::full(2)) {
        Some(c) => c.exp2(),
        // no joint constraint: each user simply takes its own cap
        None => return Ok((cap1, cap2)),
    };
    if joint < 4.0 * (1.0 - 1e-12) {
        return Err(AllocatorError::JointCapTooSmall(joint));
    }
    if joint >= cap1 * cap2 {
        return Ok((cap1, cap2));
    }

    let (d1, d2) = (problem.deltas()[0], problem.deltas()[1]);
    let lo = (joint / cap2).max(2.0);
    let hi = cap1.min(joint / 2.0);
    let k1 = match (d1 > 0.0, d2 > 0.0) {
        (false, false) => return Ok((2.0, 2.0)),
        (false, true) => lo,
        (true, false) => hi,
        (true, true) => solve_phi(joint, d1 / d2).clamp(lo, hi),
    };
    Ok((k1, joint / k1))
}
