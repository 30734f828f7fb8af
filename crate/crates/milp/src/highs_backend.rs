use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};

use crate::model::{MilpModel, ObjectiveSense, RowSense, VarKind};
use crate::{RawSolution, SolveStatus, SolverSettings};

pub(crate) fn solve(model: &MilpModel, settings: &SolverSettings) -> RawSolution {
    let mut costs = vec![0.0; model.num_vars()];
    for (v, c) in model.objective().merged() {
        costs[v.index()] = c;
    }
    let mut pb = RowProblem::default();
    let cols: Vec<_> = model
        .variables()
        .iter()
        .zip(&costs)
        .map(|(v, &cost)| {
            let (lo, up) = (v.lower, v.upper);
            pb.add_column_with_integrality(cost, lo..=up, v.kind != VarKind::Continuous)
        })
        .collect();
    for c in model.constraints() {
        let terms: Vec<_> = c.expr.merged().into_iter().map(|(v, a)| (cols[v.index()], a)).collect();
        let rhs = c.rhs - c.expr.constant_term();
        match c.sense {
            RowSense::Le => pb.add_row(..=rhs, terms),
            RowSense::Ge => pb.add_row(rhs.., terms),
            RowSense::Eq => pb.add_row(rhs..=rhs, terms),
        }
    }
    let sense = match model.sense() {
        ObjectiveSense::Maximize => Sense::Maximise,
        ObjectiveSense::Minimize => Sense::Minimise,
    };
    let mut hm = match pb.try_optimise(sense) {
        Ok(m) => m,
        Err(e) => return error(format!("HiGHS rejected the model: {e:?}")),
    };
    hm.make_quiet();
    hm.set_option("threads", settings.threads.max(1) as i32);
    hm.set_option("random_seed", (settings.seed % (i32::MAX as u64)) as i32);
    hm.set_option("mip_rel_gap", settings.gap);
    hm.set_option("mip_abs_gap", 1e-9);
    hm.set_option("time_limit", settings.time_limit.as_secs_f64());
    hm.set_option("mip_feasibility_tolerance", 1e-9);
    hm.set_option("primal_feasibility_tolerance", 1e-9);
    // Heuristic sub-solves can stall in root separation past the time limit.
    hm.set_option("mip_heuristic_run_rins", false);
    hm.set_option("mip_heuristic_run_rens", false);
    hm.set_option("mip_heuristic_run_root_reduced_cost", false);
    let solved = match hm.try_solve() {
        Ok(s) => s,
        Err(e) => return error(format!("HiGHS solve failed: {e:?}")),
    };
    let status = solved.status();
    let has_primal = matches!(solved.primal_solution_status(), HighsSolutionStatus::Feasible);
    let gap = if model.num_integer_vars() == 0 { 0.0 } else { solved.mip_gap() };
    let values = || solved.get_solution().columns().to_vec();
    match status {
        HighsModelStatus::Optimal => RawSolution {
            status: SolveStatus::Optimal,
            values: values(),
            gap: if gap.is_finite() { gap.max(0.0) } else { 0.0 },
            message: None,
        },
        HighsModelStatus::ModelEmpty => RawSolution {
            status: SolveStatus::Optimal,
            values: Vec::new(),
            gap: 0.0,
            message: None,
        },
        HighsModelStatus::Infeasible => RawSolution {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            gap: f64::INFINITY,
            message: None,
        },
        HighsModelStatus::UnboundedOrInfeasible => {
            let bounded = model.variables().iter().all(|v| v.lower.is_finite() && v.upper.is_finite());
            if bounded {
                RawSolution {
                    status: SolveStatus::Infeasible,
                    values: Vec::new(),
                    gap: f64::INFINITY,
                    message: Some("HiGHS: unbounded or infeasible on a bounded model".into()),
                }
            } else {
                error("HiGHS: unbounded or infeasible".into())
            }
        }
        HighsModelStatus::ReachedTimeLimit if has_primal => RawSolution {
            status: SolveStatus::TimeLimitFeasible,
            values: values(),
            gap,
            message: Some("time limit reached".into()),
        },
        other => error(format!("HiGHS returned status {other:?}")),
    }
}

fn error(message: String) -> RawSolution {
    RawSolution {
        status: SolveStatus::Error,
        values: Vec::new(),
        gap: f64::INFINITY,
        message: Some(message),
    }
}
