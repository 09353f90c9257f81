//! Convex relaxation in the log domain.
//!
//! With `b_m = log2(k_m)` the capacity constraints become the polytope
//! `sum_{m in S} b_m <= s C_S / d`, `b_m >= 1`, and the objective
//! `sum_m w_m / (2^b_m - 1)^2` is separable and strictly convex in `b` for
//! every user with a positive range. The polytope is small (at most
//! `2^M - 1 + M` rows) so a primal active-set method with exact Newton steps
//! on each face reaches machine-precision KKT points in a handful of
//! iterations.
//!
//! Users with zero range are pinned at `k = 2`; their share of every cap is
//! released to the others.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use super::{AllocationProblem, AllocatorError, Result};
use crate::channel::UserSet;

const MAX_ITERATIONS: usize = 2_000;
const STATIONARY_STEP: f64 = 1e-13;
const DROP_TOLERANCE: f64 = 1e-12;

/// Real-valued minimiser of the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    /// Budgets `k_m = 2^b_m`.
    pub k: Vec<f64>,
    /// Log budgets `b_m`.
    pub log_budgets: Vec<f64>,
    /// Max of primal violation, dual infeasibility, stationarity and
    /// complementarity on the objective normalised by its largest weight.
    pub kkt_residual: f64,
    /// Capacity constraints active at the optimum.
    pub active: Vec<UserSet>,
    pub iterations: usize,
}

/// Row `sign * sum_{j in members} b_j <= rhs` over the free users.
#[derive(Debug, Clone)]
struct Row {
    members: Vec<usize>,
    sign: f64,
    rhs: f64,
    subset: Option<UserSet>,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.sign * self.members.iter().map(|&j| x[j]).sum::<f64>()
    }
}

struct Objective {
    weights: Vec<f64>,
}

impl Objective {
    fn value(&self, b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(b)
            .map(|(&w, &b)| {
                let e = b.exp2() - 1.0;
                w / (e * e)
            })
            .sum()
    }

    fn gradient(&self, b: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(b)
            .map(|(&w, &b)| {
                let p = b.exp2();
                let e = p - 1.0;
                -2.0 * LN_2 * w * p / (e * e * e)
            })
            .collect()
    }

    fn hessian_diag(&self, b: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(b)
            .map(|(&w, &b)| {
                let p = b.exp2();
                let e = p - 1.0;
                2.0 * LN_2 * LN_2 * w * p * (2.0 * p + 1.0) / (e * e * e * e)
            })
            .collect()
    }
}

/// Newton direction on the face `A_W b = rhs_W` and the multiplier estimate.
///
/// Solves the full KKT system `[H A^T; A 0] [p; lambda] = [-g; 0]` by LU.
/// Eliminating through `H^-1` instead loses digits when the curvatures of
/// different users differ by many orders of magnitude.
fn newton_step(rows: &[Row], working: &[usize], g: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    let w = working.len();
    let mut a = DMatrix::<f64>::zeros(w, n);
    for (i, &r) in working.iter().enumerate() {
        for &j in &rows[r].members {
            a[(i, j)] = rows[r].sign;
        }
    }
    if w >= n {
        // working rows are independent, so the face is a vertex
        let rhs = -DVector::from_vec(g.to_vec());
        let sol = a
            .transpose()
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(w));
        return (vec![0.0; n], sol.iter().copied().collect());
    }
    let mut kkt = DMatrix::<f64>::zeros(n + w, n + w);
    for j in 0..n {
        kkt[(j, j)] = h[j];
    }
    kkt.view_mut((n, 0), (w, n)).copy_from(&a);
    kkt.view_mut((0, n), (n, w)).copy_from(&a.transpose());
    let mut rhs = DVector::<f64>::zeros(n + w);
    for j in 0..n {
        rhs[j] = -g[j];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| DVector::zeros(n + w));
    let mut p: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    // coordinates held by an active single-user row do not move
    for &r in working {
        if let [j] = rows[r].members[..] {
            p[j] = 0.0;
        }
    }
    (p, sol.rows(n, w).iter().copied().collect())
}

fn kkt_residual(rows: &[Row], working: &[usize], lambda: &[f64], g: &[f64], b: &[f64]) -> f64 {
    let mut residual: f64 = 0.0;
    let mut stationarity = g.to_vec();
    for (i, &r) in working.iter().enumerate() {
        let l = lambda[i].max(0.0);
        residual = residual.max(-lambda[i]);
        residual = residual.max((l * (rows[r].rhs - rows[r].dot(b))).abs());
        for &j in &rows[r].members {
            stationarity[j] += rows[r].sign * l;
        }
    }
    for row in rows {
        residual = residual.max(row.dot(b) - row.rhs);
    }
    stationarity
        .iter()
        .fold(residual, |acc, s| acc.max(s.abs()))
}

/// Minimises the relaxation over real budgets `k_m >= 2`.
pub fn solve_relaxed(problem: &AllocationProblem) -> Result<RelaxedSolution> {
    problem.check_minimum_budgets()?;
    let users = problem.users();
    let free: Vec<usize> = (0..users).filter(|&m| problem.deltas()[m] > 0.0).collect();
    let position: Vec<Option<usize>> = {
        let mut pos = vec![None; users];
        for (j, &m) in free.iter().enumerate() {
            pos[m] = Some(j);
        }
        pos
    };
    let n = free.len();
    let mut log_budgets = vec![1.0; users];
    if n == 0 {
        return Ok(RelaxedSolution {
            k: vec![2.0; users],
            log_budgets,
            kkt_residual: 0.0,
            active: Vec::new(),
            iterations: 0,
        });
    }

    let mut rows = Vec::new();
    for c in problem.region().constraints() {
        let members: Vec<usize> = c.users.members().filter_map(|m| position[m]).collect();
        if members.is_empty() {
            continue;
        }
        let pinned = (c.users.len() - members.len()) as f64;
        rows.push(Row {
            members,
            sign: 1.0,
            rhs: c.bits / problem.dim() as f64 - pinned,
            subset: Some(c.users),
        });
    }
    let first_bound = rows.len();
    for j in 0..n {
        rows.push(Row {
            members: vec![j],
            sign: -1.0,
            rhs: -1.0,
            subset: None,
        });
    }

    let max_sq = free
        .iter()
        .map(|&m| problem.deltas()[m].powi(2))
        .fold(0.0, f64::max);
    let objective = Objective {
        weights: free
            .iter()
            .map(|&m| problem.deltas()[m].powi(2) / max_sq)
            .collect(),
    };

    let mut b = vec![1.0; n];
    // start at the all-minimum corner with every lower bound in the working set
    let mut working: Vec<usize> = (first_bound..rows.len()).collect();
    let mut iterations = 0;
    let lambda = loop {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(AllocatorError::NoConvergence(MAX_ITERATIONS));
        }
        let g = objective.gradient(&b);
        let h = objective.hessian_diag(&b);
        let (p, lambda) = newton_step(&rows, &working, &g, &h);
        let step_norm = p.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        // p' H p; -g'p is the same quantity but loses precision on a face
        let decrement: f64 = p.iter().zip(&h).map(|(p, h)| p * p * h).sum();
        if step_norm <= STATIONARY_STEP * b.iter().fold(1.0f64, |a, x| a.max(x.abs()))
            || decrement <= 1e-28
        {
            let (idx, &min) = lambda
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap_or((0, &0.0));
            if lambda.is_empty() || min >= -DROP_TOLERANCE {
                break lambda;
            }
            working.remove(idx);
            continue;
        }

        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for (r, row) in rows.iter().enumerate() {
            if working.contains(&r) {
                continue;
            }
            let rate = row.dot(&p);
            if rate > 0.0 {
                let slack = (row.rhs - row.dot(&b)).max(0.0);
                let alpha = slack / rate;
                if alpha < alpha_max {
                    alpha_max = alpha;
                    blocking = Some(r);
                }
            }
        }

        let mut alpha = alpha_max.min(1.0);
        let f0 = objective.value(&b);
        let slope = -decrement;
        let trial = |a: f64| -> Vec<f64> { b.iter().zip(&p).map(|(x, d)| x + a * d).collect() };
        let mut backtracked = false;
        // once the predicted decrease is below the rounding of f the line
        // search cannot certify anything; the full Newton step is safe there
        let certifiable = decrement > 8.0 * f64::EPSILON * f0;
        while certifiable
            && alpha > 1e-16
            && objective.value(&trial(alpha)) > f0 + 1e-4 * alpha * slope
        {
            alpha *= 0.5;
            backtracked = true;
        }
        b = trial(alpha);
        if !backtracked && alpha_max <= 1.0 {
            if let Some(r) = blocking {
                working.push(r);
            }
        }
    };

    let g = objective.gradient(&b);
    let kkt = kkt_residual(&rows, &working, &lambda, &g, &b);
    for (j, &m) in free.iter().enumerate() {
        log_budgets[m] = b[j];
    }
    let mut active: Vec<UserSet> = working.iter().filter_map(|&r| rows[r].subset).collect();
    active.sort();
    Ok(RelaxedSolution {
        k: log_budgets.iter().map(|b| b.exp2()).collect(),
        log_budgets,
        kkt_residual: kkt,
        active,
        iterations,
    })
}
