//! Dense two-phase tableau simplex for small bounded LPs.
//!
//! Only used by the branch-and-bound backend, so it favours robustness
//! (Bland's rule once pivots stall) over speed.

use crate::model::RowSense;

const PIVOT_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const MAX_ITERATIONS: usize = 200_000;
const STALL_BEFORE_BLAND: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// How an original variable maps onto non-negative tableau columns.
#[derive(Clone, Copy, Debug)]
enum ColumnMap {
    /// x = lower + y
    Shift { col: usize, lower: f64 },
    /// x = upper - y
    Flip { col: usize, upper: f64 },
    /// x = y_pos - y_neg
    Free { pos: usize, neg: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f.abs() > 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximises `cost · y` over the current feasible basis. Columns with
    /// `barred[j]` never enter.
    fn optimise(&mut self, cost: &[f64], barred: &[bool]) -> Result<(), LpOutcome> {
        let mut stall = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        for _ in 0..MAX_ITERATIONS {
            // reduced cost d_j = c_j - c_B B^-1 a_j ; enter on d_j > 0
            let mut best: Option<(usize, f64)> = None;
            let bland = stall >= STALL_BEFORE_BLAND;
            for j in 0..self.width {
                if barred[j] {
                    continue;
                }
                let mut d = cost[j];
                for (i, row) in self.rows.iter().enumerate() {
                    d -= cost[self.basis[i]] * row[j];
                }
                if d > PIVOT_TOL {
                    if bland {
                        best = Some((j, d));
                        break;
                    }
                    if best.map_or(true, |(_, bd)| d > bd) {
                        best = Some((j, d));
                    }
                }
            }
            let Some((enter, _)) = best else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpOutcome::Unbounded);
            };
            self.pivot(row, enter);
            let obj: f64 = (0..self.rows.len()).map(|i| cost[self.basis[i]] * self.rhs(i)).sum();
            if obj > last_obj + 1e-12 {
                stall = 0;
                last_obj = obj;
            } else {
                stall += 1;
            }
        }
        Err(LpOutcome::IterationLimit)
    }
}

/// Maximises `objective · x` subject to `rows` and `lower <= x <= upper`.
///
/// Each row is `(sparse coefficients, sense, rhs)`.
pub fn solve_lp(
    objective: &[f64],
    rows: &[(Vec<(usize, f64)>, RowSense, f64)],
    lower: &[f64],
    upper: &[f64],
) -> LpOutcome {
    let n = objective.len();
    debug_assert_eq!(lower.len(), n);
    debug_assert_eq!(upper.len(), n);

    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, up) = (lower[j], upper[j]);
        if lo > up + 1e-12 {
            return LpOutcome::Infeasible;
        }
        if lo.is_finite() {
            maps.push(ColumnMap::Shift { col: ncols, lower: lo });
            if up.is_finite() {
                bound_rows.push((ncols, up - lo));
            }
            ncols += 1;
        } else if up.is_finite() {
            maps.push(ColumnMap::Flip { col: ncols, upper: up });
            ncols += 1;
        } else {
            maps.push(ColumnMap::Free { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }

    // Rows over the structural columns, rhs already non-negative.
    let mut std_rows: Vec<(Vec<f64>, RowSense, f64)> = Vec::new();
    for (coefs, sense, rhs) in rows {
        let mut dense = vec![0.0; ncols];
        let mut b = *rhs;
        for &(j, a) in coefs {
            match maps[j] {
                ColumnMap::Shift { col, lower } => {
                    dense[col] += a;
                    b -= a * lower;
                }
                ColumnMap::Flip { col, upper } => {
                    dense[col] -= a;
                    b -= a * upper;
                }
                ColumnMap::Free { pos, neg } => {
                    dense[pos] += a;
                    dense[neg] -= a;
                }
            }
        }
        std_rows.push((dense, *sense, b));
    }
    for (col, cap) in bound_rows {
        let mut dense = vec![0.0; ncols];
        dense[col] = 1.0;
        std_rows.push((dense, RowSense::Le, cap));
    }
    for (dense, sense, b) in std_rows.iter_mut() {
        if *b < 0.0 {
            for v in dense.iter_mut() {
                *v = -*v;
            }
            *b = -*b;
            *sense = match *sense {
                RowSense::Le => RowSense::Ge,
                RowSense::Ge => RowSense::Le,
                RowSense::Eq => RowSense::Eq,
            };
        }
    }

    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.1 != RowSense::Eq).count();
    let n_art = std_rows.iter().filter(|r| r.1 != RowSense::Le).count();
    let width = ncols + n_slack + n_art;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        width,
    };
    let mut is_art = vec![false; width];
    let mut next_slack = ncols;
    let mut next_art = ncols + n_slack;
    for (dense, sense, b) in std_rows {
        let mut row = vec![0.0; width + 1];
        row[..ncols].copy_from_slice(&dense);
        row[width] = b;
        match sense {
            RowSense::Le => {
                row[next_slack] = 1.0;
                tab.basis.push(next_slack);
                next_slack += 1;
            }
            RowSense::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                is_art[next_art] = true;
                tab.basis.push(next_art);
                next_art += 1;
            }
            RowSense::Eq => {
                row[next_art] = 1.0;
                is_art[next_art] = true;
                tab.basis.push(next_art);
                next_art += 1;
            }
        }
        tab.rows.push(row);
    }

    // Phase 1: maximise -sum(artificials).
    if n_art > 0 {
        let cost1: Vec<f64> = (0..width).map(|j| if is_art[j] { -1.0 } else { 0.0 }).collect();
        let none_barred = vec![false; width];
        if let Err(e) = tab.optimise(&cost1, &none_barred) {
            return match e {
                LpOutcome::Unbounded => LpOutcome::IterationLimit,
                other => other,
            };
        }
        let infeas: f64 = (0..m).filter(|&i| is_art[tab.basis[i]]).map(|i| tab.rhs(i)).sum();
        if infeas > PHASE1_TOL {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.rows.len() {
            if is_art[tab.basis[i]] {
                let col = (0..width).find(|&j| !is_art[j] && tab.rows[i][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    let mut cost2 = vec![0.0; width];
    let mut obj_offset = 0.0;
    for j in 0..n {
        match maps[j] {
            ColumnMap::Shift { col, lower } => {
                cost2[col] += objective[j];
                obj_offset += objective[j] * lower;
            }
            ColumnMap::Flip { col, upper } => {
                cost2[col] -= objective[j];
                obj_offset += objective[j] * upper;
            }
            ColumnMap::Free { pos, neg } => {
                cost2[pos] += objective[j];
                cost2[neg] -= objective[j];
            }
        }
    }
    if let Err(e) = tab.optimise(&cost2, &is_art) {
        return e;
    }

    let mut y = vec![0.0; width];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            ColumnMap::Shift { col, lower } => lower + y[col],
            ColumnMap::Flip { col, upper } => upper - y[col],
            ColumnMap::Free { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective_value = objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    debug_assert!((objective_value - (obj_offset + cost2.iter().zip(&y).map(|(c, v)| c * v).sum::<f64>())).abs() < 1e-6);
    LpOutcome::Optimal {
        x,
        objective: objective_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y; x <= 4; 2y <= 12; 3x + 2y <= 18  ->  (2, 6), 36
        let rows = vec![
            (vec![(0, 1.0)], RowSense::Le, 4.0),
            (vec![(1, 2.0)], RowSense::Le, 12.0),
            (vec![(0, 3.0), (1, 2.0)], RowSense::Le, 18.0),
        ];
        let (x, obj) = opt(solve_lp(&[3.0, 5.0], &rows, &[0.0, 0.0], &[f64::INFINITY; 2]));
        assert!((obj - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn ge_and_eq_rows_with_negative_rhs() {
        // max -x - y; x + y >= 2; x - y = -1  ->  x = 0.5, y = 1.5
        let rows = vec![
            (vec![(0, 1.0), (1, 1.0)], RowSense::Ge, 2.0),
            (vec![(0, 1.0), (1, -1.0)], RowSense::Eq, -1.0),
        ];
        let (x, obj) = opt(solve_lp(&[-1.0, -1.0], &rows, &[0.0, 0.0], &[f64::INFINITY; 2]));
        assert!((obj + 2.0).abs() < 1e-9);
        assert!((x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn free_and_upper_only_variables() {
        // max x + y with x free, y <= 3 (no lower); x + y <= 10; x <= 4 via row
        let rows = vec![
            (vec![(0, 1.0), (1, 1.0)], RowSense::Le, 10.0),
            (vec![(0, 1.0)], RowSense::Le, 4.0),
        ];
        let (_, obj) = opt(solve_lp(
            &[1.0, 1.0],
            &rows,
            &[f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[f64::INFINITY, 3.0],
        ));
        assert!((obj - 7.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let rows = vec![(vec![(0, 1.0)], RowSense::Ge, 5.0)];
        assert_eq!(solve_lp(&[1.0], &rows, &[0.0], &[4.0]), LpOutcome::Infeasible);
        assert_eq!(solve_lp(&[1.0], &rows, &[0.0], &[f64::INFINITY]), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        // x + y = 2 twice; max x  ->  2
        let rows = vec![
            (vec![(0, 1.0), (1, 1.0)], RowSense::Eq, 2.0),
            (vec![(0, 2.0), (1, 2.0)], RowSense::Eq, 4.0),
        ];
        let (_, obj) = opt(solve_lp(&[1.0, 0.0], &rows, &[0.0, 0.0], &[f64::INFINITY; 2]));
        assert!((obj - 2.0).abs() < 1e-9);
    }
}
