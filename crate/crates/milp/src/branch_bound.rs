//! Depth-first branch-and-bound over the dense simplex.

use std::time::Instant;

use crate::model::{MilpModel, ObjectiveSense, RowSense, VarKind};
use crate::simplex::{solve_lp, LpOutcome};
use crate::{RawSolution, SolveStatus, SolverSettings, INTEGRALITY_TOL};

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// LP bound of the parent, in maximisation sense.
    bound: f64,
}

pub(crate) fn solve(model: &MilpModel, settings: &SolverSettings) -> RawSolution {
    let start = Instant::now();
    let sign = match model.sense() {
        ObjectiveSense::Maximize => 1.0,
        ObjectiveSense::Minimize => -1.0,
    };
    let n = model.num_vars();
    let mut objective = vec![0.0; n];
    for (v, c) in model.objective().merged() {
        objective[v.index()] = sign * c;
    }
    let rows: Vec<(Vec<(usize, f64)>, RowSense, f64)> = model
        .constraints()
        .iter()
        .map(|c| {
            let coefs = c.expr.merged().into_iter().map(|(v, a)| (v.index(), a)).collect();
            (coefs, c.sense, c.rhs - c.expr.constant_term())
        })
        .collect();
    let integral: Vec<bool> = model.variables().iter().map(|v| v.kind.is_integral()).collect();
    let mut lower: Vec<f64> = Vec::with_capacity(n);
    let mut upper: Vec<f64> = Vec::with_capacity(n);
    for v in model.variables() {
        let (mut lo, mut up) = (v.lower, v.upper);
        if v.kind == VarKind::Binary {
            lo = lo.max(0.0);
            up = up.min(1.0);
        }
        if v.kind.is_integral() {
            lo = (lo - INTEGRALITY_TOL).ceil();
            up = (up + INTEGRALITY_TOL).floor();
        }
        lower.push(lo);
        upper.push(up);
    }

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut stack = vec![Node {
        lower,
        upper,
        bound: f64::INFINITY,
    }];
    let mut saw_unbounded = false;
    let abs_tol = 1e-9;

    while let Some(node) = stack.pop() {
        if start.elapsed() > settings.time_limit {
            return match incumbent {
                Some((x, obj)) => {
                    let best_open = stack.iter().map(|n| n.bound).fold(node.bound, f64::max);
                    RawSolution {
                        status: SolveStatus::TimeLimitFeasible,
                        values: x,
                        gap: relative_gap(best_open, obj),
                        message: Some("time limit reached".into()),
                    }
                }
                None => RawSolution {
                    status: SolveStatus::Error,
                    values: Vec::new(),
                    gap: f64::INFINITY,
                    message: Some("time limit reached without a feasible solution".into()),
                },
            };
        }
        if let Some((_, inc)) = &incumbent {
            if node.bound <= inc + prune_margin(*inc, settings.gap, abs_tol) {
                continue;
            }
        }
        let (x, obj) = match solve_lp(&objective, &rows, &node.lower, &node.upper) {
            LpOutcome::Optimal { x, objective } => (x, objective),
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                saw_unbounded = true;
                continue;
            }
            LpOutcome::IterationLimit => {
                return RawSolution {
                    status: SolveStatus::Error,
                    values: Vec::new(),
                    gap: f64::INFINITY,
                    message: Some("simplex iteration limit".into()),
                }
            }
        };
        if let Some((_, inc)) = &incumbent {
            if obj <= inc + prune_margin(*inc, settings.gap, abs_tol) {
                continue;
            }
        }
        // Most fractional integral variable.
        let mut branch: Option<(usize, f64)> = None;
        for j in 0..n {
            if integral[j] {
                let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
                if frac > INTEGRALITY_TOL && branch.map_or(true, |(_, f)| frac > f) {
                    branch = Some((j, frac));
                }
            }
        }
        match branch {
            None => {
                let mut xs = x;
                for j in 0..n {
                    if integral[j] {
                        xs[j] = xs[j].round();
                    }
                }
                incumbent = Some((xs, obj));
            }
            Some((j, _)) => {
                let v = x[j];
                let mut down = Node {
                    lower: node.lower.clone(),
                    upper: node.upper.clone(),
                    bound: obj,
                };
                down.upper[j] = v.floor();
                let mut up = Node {
                    lower: node.lower,
                    upper: node.upper,
                    bound: obj,
                };
                up.lower[j] = v.ceil();
                // Explore the nearer side first.
                if v - v.floor() < 0.5 {
                    stack.push(up);
                    stack.push(down);
                } else {
                    stack.push(down);
                    stack.push(up);
                }
            }
        }
    }

    match incumbent {
        Some((x, _)) => RawSolution {
            status: SolveStatus::Optimal,
            values: x,
            gap: 0.0,
            message: None,
        },
        None if saw_unbounded => RawSolution {
            status: SolveStatus::Error,
            values: Vec::new(),
            gap: f64::INFINITY,
            message: Some("LP relaxation unbounded".into()),
        },
        None => RawSolution {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            gap: f64::INFINITY,
            message: None,
        },
    }
}

fn prune_margin(incumbent: f64, gap: f64, abs_tol: f64) -> f64 {
    (gap * incumbent.abs().max(1.0)).max(abs_tol)
}

fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    ((bound - incumbent) / incumbent.abs().max(1.0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use crate::{solve, Backend, LinExpr, MilpModel, ObjectiveSense, RowSense, SolveStatus, SolverSettings, VarKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bnb() -> SolverSettings {
        SolverSettings {
            backend: Backend::BranchAndBound,
            ..Default::default()
        }
    }

    /// Exhaustive 0/1 knapsack optimum.
    fn knapsack_brute_force(values: &[i64], weights: &[i64], cap: i64) -> i64 {
        let n = values.len();
        (0u32..(1 << n))
            .filter_map(|mask| {
                let (mut v, mut w) = (0, 0);
                for i in 0..n {
                    if mask & (1 << i) != 0 {
                        v += values[i];
                        w += weights[i];
                    }
                }
                (w <= cap).then_some(v)
            })
            .max()
            .unwrap()
    }

    fn knapsack_model(values: &[i64], weights: &[i64], cap: i64) -> MilpModel {
        let mut m = MilpModel::new("knapsack");
        let mut obj = LinExpr::new();
        let mut row = LinExpr::new();
        for i in 0..values.len() {
            let x = m.add_binary(format!("x{i}"));
            obj.add(x, values[i] as f64);
            row.add(x, weights[i] as f64);
        }
        m.add_constraint("cap", row, RowSense::Le, cap as f64);
        m.set_objective(ObjectiveSense::Maximize, obj);
        m
    }

    #[test]
    fn random_knapsacks_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = rng.gen_range(1..=12);
            let values: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=30)).collect();
            let weights: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=20)).collect();
            let cap = rng.gen_range(5..=60);
            let expected = knapsack_brute_force(&values, &weights, cap) as f64;
            let model = knapsack_model(&values, &weights, cap);
            let out = solve(&model, &bnb());
            assert_eq!(out.status, SolveStatus::Optimal);
            assert!((out.objective_value - expected).abs() < 1e-6);
            #[cfg(feature = "highs")]
            {
                let h = solve(&model, &SolverSettings::default());
                assert!((h.objective_value - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn general_integers_with_equality() {
        // max 5x + 4y st 6x + 4y <= 24, x + 2y <= 6, x, y integer -> (4,0)=20 or (3,1)=19 ... 20
        let mut m = MilpModel::new("gi");
        let x = m.add_var("x", VarKind::Integer, 0.0, f64::INFINITY);
        let y = m.add_var("y", VarKind::Integer, 0.0, f64::INFINITY);
        m.add_constraint("a", LinExpr::new().with(x, 6.0).with(y, 4.0), RowSense::Le, 24.0);
        m.add_constraint("b", LinExpr::new().with(x, 1.0).with(y, 2.0), RowSense::Le, 6.0);
        m.set_objective(ObjectiveSense::Maximize, LinExpr::new().with(x, 5.0).with(y, 4.0));
        let out = solve(&m, &bnb());
        assert!((out.objective_value - 20.0).abs() < 1e-9);
    }

    #[test]
    fn zero_time_limit_reports_without_lying() {
        let model = knapsack_model(&[3, 4, 5, 6], &[2, 3, 4, 5], 5);
        let settings = SolverSettings {
            time_limit: std::time::Duration::ZERO,
            ..bnb()
        };
        let out = solve(&model, &settings);
        assert!(matches!(out.status, SolveStatus::Error | SolveStatus::TimeLimitFeasible));
    }
}
