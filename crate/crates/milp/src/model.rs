//! Model building blocks: variables, linear expressions, constraints.

use std::collections::HashSet;
use std::fmt;

use crate::ModelError;

/// Handle to a variable inside the [`MilpModel`] that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

/// Sparse affine expression `sum(coef * var) + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    /// Builder-style term addition.
    pub fn with(mut self, var: VarId, coef: f64) -> Self {
        self.add(var, coef);
        self
    }

    pub fn add(&mut self, var: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
    }

    pub fn add_constant(&mut self, value: f64) {
        self.constant += value;
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    /// Terms with duplicate variables merged and zero coefficients dropped,
    /// sorted by variable index.
    pub fn merged(&self) -> Vec<(VarId, f64)> {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(v, _)| v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        out
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(v, c)| c * values[v.0])
            .sum::<f64>()
            + self.constant
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::new().with(v, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for RowSense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    /// Signed violation at `values`; zero when satisfied.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.expr.evaluate(values);
        match self.sense {
            RowSense::Le => (lhs - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - lhs).max(0.0),
            RowSense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveSense {
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilpModel {
    pub name: String,
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: ObjectiveSense,
}

impl MilpModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            sense: ObjectiveSense::Maximize,
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, expr: LinExpr, sense: RowSense, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
            sense,
            rhs,
        });
    }

    pub fn set_objective(&mut self, sense: ObjectiveSense, expr: LinExpr) {
        self.sense = sense;
        self.objective = expr;
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    /// Tightens the bounds of an existing variable.
    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        let v = &mut self.variables[id.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn sense(&self) -> ObjectiveSense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_integer_vars(&self) -> usize {
        self.variables.iter().filter(|v| v.kind.is_integral()).count()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(ModelError::DuplicateName(v.name.clone()));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper || v.lower == f64::INFINITY {
                return Err(ModelError::InvalidBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        let n = self.variables.len();
        let check_expr = |owner: &str, expr: &LinExpr| -> Result<(), ModelError> {
            for &(v, c) in &expr.terms {
                if v.0 >= n {
                    return Err(ModelError::UnknownVariable {
                        owner: owner.to_string(),
                        index: v.0,
                    });
                }
                if !c.is_finite() {
                    return Err(ModelError::NonFiniteCoefficient(owner.to_string()));
                }
            }
            if !expr.constant.is_finite() {
                return Err(ModelError::NonFiniteCoefficient(owner.to_string()));
            }
            Ok(())
        };
        let mut row_names = HashSet::new();
        for c in &self.constraints {
            if !row_names.insert(c.name.as_str()) {
                return Err(ModelError::DuplicateName(c.name.clone()));
            }
            check_expr(&c.name, &c.expr)?;
            if !c.rhs.is_finite() {
                return Err(ModelError::NonFiniteCoefficient(c.name.clone()));
            }
        }
        check_expr("objective", &self.objective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_combines_duplicates() {
        let mut m = MilpModel::new("t");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 1.0);
        let y = m.add_var("y", VarKind::Continuous, 0.0, 1.0);
        let e = LinExpr::new().with(y, 2.0).with(x, 1.0).with(y, -2.0).with(x, 0.5);
        assert_eq!(e.merged(), vec![(x, 1.5)]);
    }

    #[test]
    fn validate_rejects_bad_bounds_and_duplicates() {
        let mut m = MilpModel::new("t");
        m.add_var("x", VarKind::Integer, 3.0, 1.0);
        assert!(matches!(m.validate(), Err(ModelError::InvalidBounds { .. })));

        let mut m = MilpModel::new("t");
        m.add_var("x", VarKind::Integer, 0.0, 1.0);
        m.add_var("x", VarKind::Integer, 0.0, 1.0);
        assert!(matches!(m.validate(), Err(ModelError::DuplicateName(_))));
    }

    #[test]
    fn validate_rejects_foreign_variable() {
        let mut other = MilpModel::new("o");
        other.add_var("a", VarKind::Continuous, 0.0, 1.0);
        let foreign = other.add_var("b", VarKind::Continuous, 0.0, 1.0);
        let mut m = MilpModel::new("t");
        m.add_constraint("r", LinExpr::from(foreign), RowSense::Le, 1.0);
        assert!(matches!(m.validate(), Err(ModelError::UnknownVariable { .. })));
    }

    #[test]
    fn violation_by_sense() {
        let mut m = MilpModel::new("t");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 10.0);
        let row = |sense| Constraint {
            name: "r".into(),
            expr: LinExpr::from(x),
            sense,
            rhs: 2.0,
        };
        assert_eq!(row(RowSense::Le).violation(&[3.0]), 1.0);
        assert_eq!(row(RowSense::Ge).violation(&[3.0]), 0.0);
        assert_eq!(row(RowSense::Eq).violation(&[1.5]), 0.5);
    }
}
