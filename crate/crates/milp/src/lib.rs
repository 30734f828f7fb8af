//! A deliberately small mixed-integer linear programming layer.
//!
//! Models are built with [`MilpModel`], solved through [`solve`] with one of
//! the [`Backend`]s, and every primal solution a backend reports is re-checked
//! against the model before it is handed back. The pure-Rust
//! [`Backend::BranchAndBound`] backend is meant for tiny models (a few dozen
//! integer variables); [`Backend::Highs`] is the production adapter.

mod branch_bound;
#[cfg(feature = "highs")]
mod highs_backend;
pub mod lp_format;
mod model;
mod simplex;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

pub use lp_format::export_lp_text;
pub use model::{Constraint, LinExpr, MilpModel, ObjectiveSense, RowSense, VarId, VarKind, Variable};
pub use simplex::{solve_lp, LpOutcome};

/// Absolute tolerance used when re-verifying a returned assignment.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Maximum distance from an integer for an integral variable's value.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("variable `{name}` has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("`{owner}` references variable #{index} which is not declared in this model")]
    UnknownVariable { owner: String, index: usize },
    #[error("`{0}` contains a non-finite coefficient")]
    NonFiniteCoefficient(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    /// HiGHS through its C API.
    #[cfg(feature = "highs")]
    Highs,
    /// Dense simplex plus depth-first branch-and-bound, no external code.
    BranchAndBound,
}

impl Default for Backend {
    fn default() -> Self {
        #[cfg(feature = "highs")]
        {
            Backend::Highs
        }
        #[cfg(not(feature = "highs"))]
        {
            Backend::BranchAndBound
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            #[cfg(feature = "highs")]
            "highs" => Ok(Backend::Highs),
            "bnb" | "branch-and-bound" => Ok(Backend::BranchAndBound),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Relative optimality gap at which a solve may stop and report optimal.
    pub gap: f64,
    pub time_limit: Duration,
    pub seed: u64,
    /// Backend worker threads; 1 forces run-to-run reproducibility.
    pub threads: u32,
    pub backend: Backend,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap: 1e-6,
            time_limit: Duration::from_secs(60),
            seed: 0,
            threads: 1,
            backend: Backend::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Stopped by the time limit while holding a feasible incumbent.
    TimeLimitFeasible,
    Error,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::TimeLimitFeasible)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Objective evaluated at `assignment` (not the backend's own report).
    pub objective_value: f64,
    /// Values indexed by [`VarId::index`]; empty when there is no solution.
    pub assignment: Vec<f64>,
    pub solve_time: Duration,
    /// Relative optimality gap reported by the backend.
    pub gap: f64,
    pub message: Option<String>,
}

impl SolveOutcome {
    pub(crate) fn failed(status: SolveStatus, message: impl Into<String>, solve_time: Duration) -> Self {
        Self {
            status,
            objective_value: f64::NAN,
            assignment: Vec::new(),
            solve_time,
            gap: f64::INFINITY,
            message: Some(message.into()),
        }
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.assignment[var.index()]
    }

    /// Assignment keyed by variable name.
    pub fn named_assignment(&self, model: &MilpModel) -> BTreeMap<String, f64> {
        model
            .variables()
            .iter()
            .zip(&self.assignment)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }
}

/// What a backend hands back before verification.
#[derive(Debug)]
pub(crate) struct RawSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub gap: f64,
    pub message: Option<String>,
}

/// Solves `model` with the configured backend.
///
/// Any assignment reported as optimal or time-limit-feasible is checked
/// against every bound, integrality requirement and constraint; a failed
/// check turns the outcome into [`SolveStatus::Error`].
pub fn solve(model: &MilpModel, settings: &SolverSettings) -> SolveOutcome {
    let start = Instant::now();
    if let Err(e) = model.validate() {
        return SolveOutcome::failed(SolveStatus::Error, format!("invalid model: {e}"), start.elapsed());
    }
    let raw = match settings.backend {
        #[cfg(feature = "highs")]
        Backend::Highs => highs_backend::solve(model, settings),
        Backend::BranchAndBound => branch_bound::solve(model, settings),
    };
    let solve_time = start.elapsed();
    if !raw.status.has_solution() {
        let msg = raw.message.unwrap_or_else(|| format!("{:?}", raw.status));
        return SolveOutcome::failed(raw.status, msg, solve_time);
    }
    if let Err(msg) = verify_assignment(model, &raw.values) {
        return SolveOutcome::failed(
            SolveStatus::Error,
            format!("backend returned an assignment that fails verification: {msg}"),
            solve_time,
        );
    }
    if raw.status == SolveStatus::Optimal && raw.gap > settings.gap + 1e-12 {
        return SolveOutcome::failed(
            SolveStatus::Error,
            format!("backend reported optimal with gap {} above tolerance {}", raw.gap, settings.gap),
            solve_time,
        );
    }
    SolveOutcome {
        status: raw.status,
        objective_value: model.objective().evaluate(&raw.values),
        assignment: raw.values,
        solve_time,
        gap: raw.gap,
        message: raw.message,
    }
}

/// Independent feasibility pass over a full assignment.
pub fn verify_assignment(model: &MilpModel, values: &[f64]) -> Result<(), String> {
    if values.len() != model.num_vars() {
        return Err(format!("expected {} values, got {}", model.num_vars(), values.len()));
    }
    for (v, &x) in model.variables().iter().zip(values) {
        if !x.is_finite() {
            return Err(format!("`{}` = {x}", v.name));
        }
        if x < v.lower - FEASIBILITY_TOL || x > v.upper + FEASIBILITY_TOL {
            return Err(format!("`{}` = {x} outside [{}, {}]", v.name, v.lower, v.upper));
        }
        if v.kind.is_integral() && (x - x.round()).abs() > INTEGRALITY_TOL {
            return Err(format!("`{}` = {x} is not integral", v.name));
        }
    }
    for c in model.constraints() {
        let viol = c.violation(values);
        if viol > FEASIBILITY_TOL {
            return Err(format!("row `{}` violated by {viol:e}", c.name));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backends() -> Vec<Backend> {
        vec![
            #[cfg(feature = "highs")]
            Backend::Highs,
            Backend::BranchAndBound,
        ]
    }

    fn settings(backend: Backend) -> SolverSettings {
        SolverSettings {
            backend,
            ..Default::default()
        }
    }

    #[test]
    fn maximize_single_integer() {
        for b in backends() {
            let mut m = MilpModel::new("one");
            let x = m.add_var("x", VarKind::Integer, 0.0, f64::INFINITY);
            m.add_constraint("cap", LinExpr::from(x), RowSense::Le, 5.0);
            m.set_objective(ObjectiveSense::Maximize, LinExpr::from(x));
            let out = solve(&m, &settings(b));
            assert_eq!(out.status, SolveStatus::Optimal, "{b:?}");
            assert!((out.objective_value - 5.0).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn infeasible_pair() {
        for b in backends() {
            let mut m = MilpModel::new("inf");
            let x = m.add_var("x", VarKind::Integer, 0.0, 10.0);
            m.add_constraint("lo", LinExpr::from(x), RowSense::Ge, 1.0);
            m.add_constraint("hi", LinExpr::from(x), RowSense::Le, 0.0);
            m.set_objective(ObjectiveSense::Maximize, LinExpr::from(x));
            assert_eq!(solve(&m, &settings(b)).status, SolveStatus::Infeasible, "{b:?}");
        }
    }

    #[test]
    fn invalid_model_is_error_not_panic() {
        let mut m = MilpModel::new("bad");
        m.add_var("x", VarKind::Continuous, 2.0, 1.0);
        let out = solve(&m, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Error);
        assert!(out.message.unwrap().contains("invalid bounds"));
    }

    #[test]
    fn minimize_with_equality_and_continuous() {
        for b in backends() {
            let mut m = MilpModel::new("mix");
            let x = m.add_var("x", VarKind::Integer, 0.0, 10.0);
            let y = m.add_var("y", VarKind::Continuous, 0.0, f64::INFINITY);
            // x + y = 3.5, minimise 2y + x  ->  x = 3, y = 0.5
            m.add_constraint("sum", LinExpr::new().with(x, 1.0).with(y, 1.0), RowSense::Eq, 3.5);
            m.set_objective(ObjectiveSense::Minimize, LinExpr::new().with(x, 1.0).with(y, 2.0));
            let out = solve(&m, &settings(b));
            assert_eq!(out.status, SolveStatus::Optimal, "{b:?}");
            assert!((out.objective_value - 4.0).abs() < 1e-7, "{b:?}: {}", out.objective_value);
            assert!((out.value(x) - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn objective_constant_is_carried() {
        for b in backends() {
            let mut m = MilpModel::new("c");
            let x = m.add_binary("x");
            let mut obj = LinExpr::from(x);
            obj.add_constant(10.0);
            m.set_objective(ObjectiveSense::Maximize, obj);
            let out = solve(&m, &settings(b));
            assert!((out.objective_value - 11.0).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn verify_catches_violations() {
        let mut m = MilpModel::new("v");
        let x = m.add_var("x", VarKind::Integer, 0.0, 4.0);
        m.add_constraint("r", LinExpr::from(x), RowSense::Le, 2.0);
        assert!(verify_assignment(&m, &[2.0]).is_ok());
        assert!(verify_assignment(&m, &[3.0]).unwrap_err().contains("row `r`"));
        assert!(verify_assignment(&m, &[1.5]).unwrap_err().contains("not integral"));
        assert!(verify_assignment(&m, &[5.0]).unwrap_err().contains("outside"));
    }
}
