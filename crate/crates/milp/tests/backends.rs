//! Both backends against exhaustive enumeration on tiny bounded integer programs.

use changeover_milp::{
    solve, verify_assignment, Backend, LinExpr, MilpModel, ObjectiveSense, RowSense, SolveStatus, SolverSettings,
    VarKind,
};
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Tiny {
    bounds: Vec<(i64, i64)>,
    rows: Vec<(Vec<i64>, RowSense, i64)>,
    objective: Vec<i64>,
    maximize: bool,
}

fn tiny() -> impl Strategy<Value = Tiny> {
    (1usize..=4).prop_flat_map(|n| {
        let bounds = prop::collection::vec((-2i64..=1, 0i64..=3), n).prop_map(|b| b.into_iter().map(|(lo, w)| (lo, lo + w)).collect());
        let sense = prop_oneof![Just(RowSense::Le), Just(RowSense::Ge), Just(RowSense::Eq)];
        let row = (prop::collection::vec(-4i64..=4, n), sense, -6i64..=6);
        (bounds, prop::collection::vec(row, 0..=3), prop::collection::vec(-5i64..=5, n), any::<bool>()).prop_map(
            |(bounds, rows, objective, maximize)| Tiny {
                bounds,
                rows,
                objective,
                maximize,
            },
        )
    })
}

fn model(t: &Tiny) -> MilpModel {
    let mut m = MilpModel::new("tiny");
    let vars: Vec<_> = t
        .bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| m.add_var(format!("x{i}"), VarKind::Integer, lo as f64, hi as f64))
        .collect();
    for (r, (coefs, sense, rhs)) in t.rows.iter().enumerate() {
        let mut e = LinExpr::new();
        for (&v, &a) in vars.iter().zip(coefs) {
            e.add(v, a as f64);
        }
        m.add_constraint(format!("r{r}"), e, *sense, *rhs as f64);
    }
    let mut obj = LinExpr::new();
    for (&v, &c) in vars.iter().zip(&t.objective) {
        obj.add(v, c as f64);
    }
    let sense = if t.maximize { ObjectiveSense::Maximize } else { ObjectiveSense::Minimize };
    m.set_objective(sense, obj);
    m
}

fn enumerate(t: &Tiny) -> Option<i64> {
    let mut x: Vec<i64> = t.bounds.iter().map(|b| b.0).collect();
    let mut best: Option<i64> = None;
    loop {
        let feasible = t.rows.iter().all(|(coefs, sense, rhs)| {
            let lhs: i64 = coefs.iter().zip(&x).map(|(a, v)| a * v).sum();
            match sense {
                RowSense::Le => lhs <= *rhs,
                RowSense::Ge => lhs >= *rhs,
                RowSense::Eq => lhs == *rhs,
            }
        });
        if feasible {
            let v: i64 = t.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            best = Some(match best {
                None => v,
                Some(b) if t.maximize => b.max(v),
                Some(b) => b.min(v),
            });
        }
        let mut i = 0;
        loop {
            if i == x.len() {
                return best;
            }
            if x[i] < t.bounds[i].1 {
                x[i] += 1;
                break;
            }
            x[i] = t.bounds[i].0;
            i += 1;
        }
    }
}

fn backends() -> Vec<Backend> {
    vec![
        Backend::BranchAndBound,
        #[cfg(feature = "highs")]
        Backend::Highs,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backends_match_enumeration(t in tiny()) {
        let m = model(&t);
        let expected = enumerate(&t);
        for b in backends() {
            let out = solve(&m, &SolverSettings { backend: b, ..SolverSettings::default() });
            match expected {
                Some(v) => {
                    prop_assert_eq!(out.status, SolveStatus::Optimal, "{:?}", b);
                    prop_assert!((out.objective_value - v as f64).abs() < 1e-6, "{:?}: {} vs {}", b, out.objective_value, v);
                    prop_assert!(verify_assignment(&m, &out.assignment).is_ok(), "{:?}", b);
                }
                None => prop_assert_eq!(out.status, SolveStatus::Infeasible, "{:?}", b),
            }
        }
    }
}
