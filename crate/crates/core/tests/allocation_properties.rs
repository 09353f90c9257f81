use macfl::allocator::{allocate, objective, solve_relaxed, AllocationProblem, AllocatorError};
use macfl::channel::MacSpec;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..=3).prop_flat_map(|m| {
        (
            proptest::collection::vec(1.0f64..100.0, m),
            proptest::collection::vec(-2.0f64..2.0, m)
                .prop_map(|v| v.into_iter().map(|x| 10f64.powf(x)).collect()),
            1.0f64..3.0,
        )
    })
}

fn problem(powers: &[f64], deltas: &[f64], uses_per_dim: f64) -> AllocationProblem {
    let d = 400;
    let spec = MacSpec::new(powers.to_vec(), 1.0, (uses_per_dim * d as f64) as u64, d).unwrap();
    AllocationProblem::new(deltas.to_vec(), &spec).unwrap()
}

fn relaxed_objective(p: &AllocationProblem) -> Option<f64> {
    match solve_relaxed(p) {
        Ok(sol) => Some(objective(p, &sol.k).unwrap()),
        Err(AllocatorError::Infeasible { .. }) => None,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #[test]
    fn more_resources_never_hurt((powers, deltas, s) in instance(), user in 0usize..3, boost in 1.0f64..4.0) {
        let base = problem(&powers, &deltas, s);
        let Some(before) = relaxed_objective(&base) else { return Ok(()) };
        let more_uses = relaxed_objective(&problem(&powers, &deltas, s * boost)).unwrap();
        prop_assert!(more_uses <= before * (1.0 + 1e-9), "{more_uses} > {before}");
        let mut stronger = powers.clone();
        let u = user % powers.len();
        stronger[u] *= boost;
        let more_power = relaxed_objective(&problem(&stronger, &deltas, s)).unwrap();
        prop_assert!(more_power <= before * (1.0 + 1e-9), "{more_power} > {before}");
    }

    #[test]
    fn common_scale_leaves_budgets_unchanged((powers, deltas, s) in instance(), c in 0.01f64..100.0) {
        let base = problem(&powers, &deltas, s);
        let scaled: Vec<f64> = deltas.iter().map(|d| d * c).collect();
        let other = problem(&powers, &scaled, s);
        let (Ok(a), Ok(b)) = (allocate(&base), allocate(&other)) else { return Ok(()) };
        prop_assert_eq!(&a.k_int, &b.k_int);
        prop_assert!((b.objective - c * c * a.objective).abs() <= 1e-9 * b.objective.max(1e-300));
    }

    #[test]
    fn integer_allocations_are_feasible((powers, deltas, s) in instance()) {
        let p = problem(&powers, &deltas, s);
        let Ok(a) = allocate(&p) else { return Ok(()) };
        prop_assert!(a.k_int.iter().all(|&k| k >= 2));
        let k: Vec<f64> = a.k_int.iter().map(|&k| k as f64).collect();
        prop_assert!(p.is_feasible(&k).unwrap());
        prop_assert!(p.region().is_feasible(&a.rates).unwrap());
        // rounding never beats the relaxation
        prop_assert!(a.objective >= relaxed_objective(&p).unwrap() * (1.0 - 1e-9));
    }
}
