use super::{user_objective, Allocation, AllocationProblem, AllocatorError, Result};

/// Largest number of budget tuples `solve_exhaustive` will visit.
pub const MAX_ENUMERATION: u128 = 10_000_000;

/// Exact integer optimum over `2 <= k_m <= cap_per_user`.
///
/// Depth-first over users; since the region is downward closed, the first
/// infeasible value of a user's budget ends that branch. Ties keep the
/// first tuple found in lexicographic order.
pub fn solve_exhaustive(problem: &AllocationProblem, cap_per_user: u32) -> Result<Allocation> {
    let users = problem.users();
    let cap = cap_per_user.max(2);
    let span = (cap - 1) as u128;
    let total = (0..users)
        .try_fold(1u128, |acc, _| acc.checked_mul(span))
        .unwrap_or(u128::MAX);
    if total > MAX_ENUMERATION {
        return Err(AllocatorError::EnumerationTooLarge(total));
    }
    problem.check_minimum_budgets()?;

    struct Search<'a> {
        problem: &'a AllocationProblem,
        cap: u32,
        // rates of users not yet assigned are zero
        rates: Vec<f64>,
        k: Vec<u32>,
        best: Option<(f64, Vec<u32>)>,
    }

    impl Search<'_> {
        fn visit(&mut self, user: usize, partial: f64) -> Result<()> {
            let dim = self.problem.dim();
            if user == self.k.len() {
                if self.best.as_ref().is_none_or(|(b, _)| partial < *b) {
                    self.best = Some((partial, self.k.clone()));
                }
                return Ok(());
            }
            let delta = self.problem.deltas()[user];
            for k in 2..=self.cap {
                self.rates[user] = dim as f64 * (k as f64).log2();
                if !self.problem.region().is_feasible(&self.rates)? {
                    break;
                }
                self.k[user] = k;
                self.visit(user + 1, partial + user_objective(dim, delta, k as f64))?;
            }
            self.rates[user] = 0.0;
            Ok(())
        }
    }

    let mut search = Search {
        problem,
        cap,
        rates: vec![0.0; users],
        k: vec![2; users],
        best: None,
    };
    search.visit(0, 0.0)?;
    let (_, k) = search.best.expect("k = 2 for every user is feasible");
    let real = k.iter().map(|&v| v as f64).collect();
    Ok(Allocation::from_integer(problem, k, real))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MacSpec;

    fn paper(deltas: Vec<f64>) -> AllocationProblem {
        let spec = MacSpec::new(vec![80.0, 20.0], 1.0, 2 * 7850, 7850).unwrap();
        AllocationProblem::new(deltas, &spec).unwrap()
    }

    #[test]
    fn balanced_optimum_is_ten_ten() {
        let a = solve_exhaustive(&paper(vec![50.0, 50.0]), 81).unwrap();
        assert_eq!(a.k_int, vec![10, 10]);
    }

    #[test]
    fn single_user_takes_its_cap() {
        let spec = MacSpec::new(vec![80.0], 1.0, 2 * 100, 100).unwrap();
        let p = AllocationProblem::new(vec![3.0], &spec).unwrap();
        assert_eq!(solve_exhaustive(&p, 1000).unwrap().k_int, vec![81]);
    }

    #[test]
    fn zero_range_user_gets_minimum() {
        let a = solve_exhaustive(&paper(vec![50.0, 0.0]), 128).unwrap();
        assert_eq!(a.k_int, vec![50, 2]);
    }

    #[test]
    fn guard() {
        let spec = MacSpec::new(vec![1.0; 5], 1.0, 10, 1).unwrap();
        let p = AllocationProblem::new(vec![1.0; 5], &spec).unwrap();
        assert!(matches!(
            solve_exhaustive(&p, 100),
            Err(AllocatorError::EnumerationTooLarge(_))
        ));
    }
}
