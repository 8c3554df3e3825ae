//! Dense primal simplex for small standard-form linear programs
//!
//! ```text
//! min cᵀs   subject to   A·s = b,  s ≥ 0
//! ```
//!
//! Two phases on a full tableau, Bland's rule throughout. Infeasible
//! instances return a Farkas vector `y` with `Aᵀy ≥ 0` and `yᵀb < 0`, read
//! off the phase-one duals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub s: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Basic variable of each row; indices `≥ cols` are artificials left on
    /// redundant rows.
    pub basis: Vec<usize>,
}

struct Tableau {
    /// `rows × (cols + rows)`: original columns then one artificial per row.
    t: DMatrix<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Sign-normalized original columns, for reduced costs.
    orig: DMatrix<f64>,
    cols: usize,
    pivot_tol: f64,
}

impl Tableau {
    fn pivot(&mut self, r: usize, e: usize) {
        let piv = self.t[(r, e)];
        let width = self.t.ncols();
        for j in 0..width {
            self.t[(r, j)] /= piv;
        }
        self.rhs[r] /= piv;
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, e)];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                self.t[(i, j)] -= f * self.t[(r, j)];
            }
            self.t[(i, e)] = 0.0;
            self.rhs[i] -= f * self.rhs[r];
        }
        self.basis[r] = e;
    }

    /// Simplex duals `y = c_Bᵀ·B⁻¹`, read from the artificial columns.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let rows = self.t.nrows();
        (0..rows)
            .map(|a| (0..rows).map(|r| cost[self.basis[r]] * self.t[(r, self.cols + a)]).sum())
            .collect()
    }

    /// Runs Bland-rule iterations on `cost` over the columns in `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize, iterations: &mut usize, cap: usize) -> Result<()> {
        let cscale = cost.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        loop {
            if *iterations >= cap {
                return Err(Error::Solver(format!("simplex hit its iteration cap ({cap})")));
            }
            let y = self.duals(cost);
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let reduced = cost[j] - (0..y.len()).map(|r| y[r] * self.orig[(r, j)]).sum::<f64>();
                if reduced < -1e-12 * cscale {
                    entering = Some(j);
                    break;
                }
            }
            let Some(e) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.nrows() {
                let a = self.t[(r, e)];
                if a > self.pivot_tol {
                    let ratio = self.rhs[r].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio || (ratio == lratio && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Solver("linear program is unbounded".into()));
            };
            self.pivot(r, e);
            *iterations += 1;
        }
    }
}

/// Solves the standard-form program. `feas_tol` is the absolute tolerance
/// on the phase-one objective `Σ|residual|` below which the system counts as
/// feasible.
pub fn solve(a: &DMatrix<f64>, b: &[f64], c: &[f64], feas_tol: f64) -> Result<LpSolution> {
    let (rows, cols) = a.shape();
    if b.len() != rows || c.len() != cols {
        return Err(Error::usage("linear program dimensions disagree"));
    }
    // Sign-normalize rows so the artificial basis starts feasible.
    let signs: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut orig = DMatrix::zeros(rows, cols + rows);
    for i in 0..rows {
        for j in 0..cols {
            orig[(i, j)] = signs[i] * a[(i, j)];
        }
        orig[(i, cols + i)] = 1.0;
    }
    let rhs: Vec<f64> = (0..rows).map(|i| signs[i] * b[i]).collect();
    let ascale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut tab = Tableau { t: orig.clone(), orig, rhs, basis: (cols..cols + rows).collect(), cols, pivot_tol: 1e-11 * ascale };

    let cap = 50 * (rows + cols) + 100;
    let mut iterations = 0;

    let mut phase1 = vec![0.0; cols + rows];
    phase1[cols..].iter_mut().for_each(|v| *v = 1.0);
    tab.optimize(&phase1, cols, &mut iterations, cap)?;

    let infeas: f64 = (0..rows).filter(|&r| tab.basis[r] >= cols).map(|r| tab.rhs[r].abs()).sum();
    if infeas > feas_tol {
        let y1 = tab.duals(&phase1);
        // Phase one is optimal: 0 − y₁ᵀ(F·a_j) ≥ 0 and y₁ᵀ(F·b) > 0, so
        // y = −F·y₁ certifies infeasibility.
        let certificate: Vec<f64> = (0..rows).map(|i| -signs[i] * y1[i]).collect();
        let margin: f64 = certificate.iter().zip(b).map(|(y, v)| y * v).sum();
        return Err(Error::Infeasible { certificate, margin });
    }

    // Drive remaining artificials out of the basis where possible.
    for r in 0..rows {
        if tab.basis[r] < cols {
            continue;
        }
        let col = (0..cols)
            .filter(|j| !tab.basis.contains(j))
            .find(|&j| tab.t[(r, j)].abs() > tab.pivot_tol);
        if let Some(j) = col {
            tab.pivot(r, j);
        }
    }

    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat_n(0.0, rows));
    tab.optimize(&cost, cols, &mut iterations, cap)?;

    let mut s = vec![0.0; cols];
    for r in 0..rows {
        if tab.basis[r] < cols {
            s[tab.basis[r]] = tab.rhs[r].max(0.0);
        }
    }
    let objective = s.iter().zip(c).map(|(x, ci)| x * ci).sum();
    Ok(LpSolution { s, objective, iterations, basis: tab.basis })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let a = DMatrix::identity(3, 3);
        let sol = solve(&a, &[1.0, 2.0, 0.0], &[1.0; 3], 1e-12).unwrap();
        assert_eq!(sol.s, vec![1.0, 2.0, 0.0]);
        assert!((sol.objective - 3.0).abs() < 1e-15);
    }

    #[test]
    fn picks_cheaper_representation() {
        // Column 2 = column 0 + column 1 but costs only 1.5.
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let sol = solve(&a, &[1.0, 1.0], &[1.0, 1.0, 1.5], 1e-12).unwrap();
        assert!((sol.s[2] - 1.0).abs() < 1e-14 && sol.s[0].abs() < 1e-14);
        assert!((sol.objective - 1.5).abs() < 1e-14);
    }

    #[test]
    fn infeasible_gives_farkas_vector() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        // s0 + s1 = 1, s1 = 2 has no nonnegative solution.
        let b = [1.0, 2.0];
        match solve(&a, &b, &[1.0, 1.0], 1e-12) {
            Err(Error::Infeasible { certificate, margin }) => {
                assert!(margin < 0.0);
                for j in 0..2 {
                    let aty: f64 = (0..2).map(|i| a[(i, j)] * certificate[i]).sum();
                    assert!(aty >= -1e-12);
                }
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let sol = solve(&a, &[1.0, 2.0, 3.0], &[1.0, 1.0], 1e-12).unwrap();
        assert!((sol.s[0] - 1.0).abs() < 1e-14 && (sol.s[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn unbounded_is_an_error() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!(matches!(solve(&a, &[0.0], &[0.0, -1.0], 1e-12), Err(Error::Solver(_))));
    }
}
