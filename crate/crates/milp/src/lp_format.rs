//! CPLEX-style LP text export.
//!
//! The output uses only the common subset understood by CPLEX, Gurobi, HiGHS,
//! CBC and SCIP readers: `Maximize`/`Minimize`, `Subject To`, `Bounds`,
//! `General`, `Binary`, `End`.

use std::fmt::Write;

use crate::model::{LinExpr, MilpModel, ObjectiveSense, VarKind};

const MAX_LINE: usize = 200;

pub fn export_lp_text(model: &MilpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ Problem name: {}", model.name);
    out.push_str(match model.sense() {
        ObjectiveSense::Maximize => "Maximize\n",
        ObjectiveSense::Minimize => "Minimize\n",
    });
    write_expr(&mut out, model, " obj:", model.objective(), true);
    out.push('\n');

    out.push_str("Subject To\n");
    for c in model.constraints() {
        let label = format!(" {}:", c.name);
        write_expr(&mut out, model, &label, &c.expr, false);
        let rhs = c.rhs - c.expr.constant_term();
        let _ = writeln!(out, " {} {}", c.sense, fmt_num(rhs));
    }

    out.push_str("Bounds\n");
    for v in model.variables() {
        if v.kind == VarKind::Binary {
            continue;
        }
        let lo = v.lower;
        let up = v.upper;
        let line = match (lo.is_finite(), up.is_finite()) {
            (true, true) if lo == up => format!(" {} = {}", v.name, fmt_num(lo)),
            (true, true) => format!(" {} <= {} <= {}", fmt_num(lo), v.name, fmt_num(up)),
            (true, false) if lo == 0.0 => continue,
            (true, false) => format!(" {} >= {}", v.name, fmt_num(lo)),
            (false, true) => format!(" -inf <= {} <= {}", v.name, fmt_num(up)),
            (false, false) => format!(" {} free", v.name),
        };
        out.push_str(&line);
        out.push('\n');
    }

    let generals: Vec<&str> = model
        .variables()
        .iter()
        .filter(|v| v.kind == VarKind::Integer)
        .map(|v| v.name.as_str())
        .collect();
    if !generals.is_empty() {
        out.push_str("General\n");
        write_names(&mut out, &generals);
    }
    let binaries: Vec<&str> = model
        .variables()
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binary\n");
        write_names(&mut out, &binaries);
    }
    out.push_str("End\n");
    out
}

fn write_expr(out: &mut String, model: &MilpModel, label: &str, expr: &LinExpr, with_constant: bool) {
    let mut line = label.to_string();
    let terms = expr.merged();
    let mut pieces: Vec<String> = terms
        .iter()
        .enumerate()
        .map(|(i, &(v, c))| {
            let name = &model.variable(v).name;
            let sign = if c < 0.0 { "-" } else if i == 0 { "" } else { "+" };
            let mag = c.abs();
            let coef = if mag == 1.0 { String::new() } else { format!("{} ", fmt_num(mag)) };
            if sign.is_empty() {
                format!("{coef}{name}")
            } else {
                format!("{sign} {coef}{name}")
            }
        })
        .collect();
    if with_constant && expr.constant_term() != 0.0 {
        let k = expr.constant_term();
        pieces.push(format!("{} {}", if k < 0.0 { "-" } else { "+" }, fmt_num(k.abs())));
    }
    if pieces.is_empty() {
        // Some readers reject a label with no terms.
        if let Some(first) = model.variables().first() {
            pieces.push(format!("0 {}", first.name));
        }
    }
    for p in pieces {
        if line.len() + p.len() + 1 > MAX_LINE {
            out.push_str(&line);
            out.push('\n');
            line = "  ".to_string();
        }
        line.push(' ');
        line.push_str(&p);
    }
    out.push_str(&line);
}

fn write_names(out: &mut String, names: &[&str]) {
    let mut line = String::new();
    for n in names {
        if !line.is_empty() && line.len() + n.len() + 1 > MAX_LINE {
            out.push_str(&line);
            out.push('\n');
            line.clear();
        }
        line.push(' ');
        line.push_str(n);
    }
    if !line.is_empty() {
        out.push_str(&line);
        out.push('\n');
    }
}

/// Shortest representation that round-trips through `f64` parsing.
fn fmt_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinExpr, MilpModel, ObjectiveSense, RowSense, VarKind};

    #[test]
    fn one_variable_model() {
        let mut m = MilpModel::new("single");
        let x = m.add_var("x", VarKind::Integer, 0.0, 5.0);
        m.set_objective(ObjectiveSense::Maximize, LinExpr::from(x));
        let text = export_lp_text(&m);
        assert!(text.contains("Maximize\n obj: x\n"));
        assert!(text.contains(" 0 <= x <= 5\n"));
        assert!(text.contains("General\n x\n"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn both_row_senses_and_negative_coefficients() {
        let mut m = MilpModel::new("rows");
        let x = m.add_var("x", VarKind::Continuous, 0.0, f64::INFINITY);
        let y = m.add_binary("y");
        m.add_constraint("le", LinExpr::new().with(x, 2.5).with(y, -1.0), RowSense::Le, 4.0);
        m.add_constraint("ge", LinExpr::new().with(x, 1.0), RowSense::Ge, -1.5);
        m.set_objective(ObjectiveSense::Minimize, LinExpr::new().with(x, -3.0));
        let text = export_lp_text(&m);
        assert!(text.contains(" le: 2.5 x - y <= 4\n"), "{text}");
        assert!(text.contains(" ge: x >= -1.5\n"), "{text}");
        assert!(text.contains("Minimize\n obj: - 3 x\n"), "{text}");
        assert!(text.contains("Binary\n y\n"));
        // non-negative continuous variables need no bound line
        assert!(!text.contains("x >= 0"));
    }

    #[test]
    fn long_rows_wrap() {
        let mut m = MilpModel::new("wide");
        let mut e = LinExpr::new();
        for i in 0..100 {
            let v = m.add_var(format!("variable_{i}"), VarKind::Continuous, 0.0, 1.0);
            e.add(v, 1.0 + i as f64);
        }
        m.add_constraint("wide_row", e, RowSense::Le, 1.0);
        let text = export_lp_text(&m);
        assert!(text.lines().all(|l| l.len() <= MAX_LINE + 40));
    }
}
