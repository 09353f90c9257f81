use super::{user_objective, Allocation, AllocationProblem, AllocatorError, Result};

/// Floors relaxed budgets and greedily spends leftover capacity.
///
/// Each pass increments the user with the largest objective decrease
/// `d delta^2 / 4 * (1/(k-1)^2 - 1/k^2)` among those whose increment stays
/// feasible. Users with zero range keep `k = 2`.
pub fn round_allocation(problem: &AllocationProblem, k_real: &[f64]) -> Result<Allocation> {
    if k_real.len() != problem.users() {
        return Err(AllocatorError::DeltaCount {
            expected: problem.users(),
            actual: k_real.len(),
        });
    }
    let mut k: Vec<u32> = k_real
        .iter()
        .map(|&x| {
            if x.is_finite() {
                x.floor().clamp(2.0, u32::MAX as f64) as u32
            } else {
                2
            }
        })
        .collect();
    let as_real = |k: &[u32]| k.iter().map(|&v| v as f64).collect::<Vec<_>>();
    if !problem.is_feasible(&as_real(&k))? {
        let rates = problem.rates(&as_real(&k));
        let (c, _) = problem
            .region()
            .worst_violation(&rates)?
            .expect("infeasible tuple has a violated constraint");
        return Err(AllocatorError::Infeasible {
            subset: c.users,
            cap_bits: c.bits,
        });
    }

    let dim = problem.dim();
    loop {
        let mut order: Vec<(usize, f64)> = problem
            .deltas()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(|(m, &d)| {
                let now = k[m] as f64;
                (
                    m,
                    user_objective(dim, d, now) - user_objective(dim, d, now + 1.0),
                )
            })
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut improved = false;
        for (m, _) in order {
            k[m] += 1;
            if problem.is_feasible(&as_real(&k))? {
                improved = true;
                break;
            }
            k[m] -= 1;
        }
        if !improved {
            break;
        }
    }
    Ok(Allocation::from_integer(problem, k, k_real.to_vec()))
}

/// Largest common budget `k` such that every user sending `d log2 k` bits
/// is feasible. Returns `None` when even `k = 2` is infeasible.
pub fn uniform_allocation(problem: &AllocationProblem) -> Result<Option<Allocation>> {
    let users = problem.users();
    let feasible = |k: u32| problem.is_feasible(&vec![k as f64; users]);
    if !feasible(2)? {
        return Ok(None);
    }
    // binding constraint: |S| * log2 k <= cap_S / d
    let bound = problem
        .region()
        .constraints()
        .iter()
        .map(|c| (c.bits / problem.dim() as f64 / c.users.len() as f64).exp2())
        .fold(f64::INFINITY, f64::min);
    let mut k = if bound.is_finite() {
        bound.floor().clamp(2.0, u32::MAX as f64 - 1.0) as u32
    } else {
        2
    };
    while k > 2 && !feasible(k)? {
        k -= 1;
    }
    while feasible(k + 1)? {
        k += 1;
    }
    let budgets = vec![k; users];
    let real = vec![k as f64; users];
    Ok(Some(Allocation::from_integer(problem, budgets, real)))
}
