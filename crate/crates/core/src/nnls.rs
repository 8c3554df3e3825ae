//! Nonnegative least squares, `min ‖M·λ − b‖₂` subject to `λ ≥ 0`, by the
//! Lawson–Hanson active-set method.

use nalgebra::{DMatrix, DVector};

use crate::linalg;

/// Relative tolerance on the dual (gradient) check, scaled by `‖Mᵀb‖₂`.
pub const DUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `‖M·x − b‖₂` recomputed at the returned `x`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the NNLS problem for a column-major `m`.
pub fn nnls(m: &DMatrix<f64>, b: &[f64]) -> NnlsSolution {
    nnls_masked(m, b, &vec![true; m.ncols()])
}

/// Like [`nnls`] but only columns with `usable[j]` may enter the solution;
/// the others stay at zero.
pub fn nnls_masked(m: &DMatrix<f64>, b: &[f64], usable: &[bool]) -> NnlsSolution {
    let (rows, cols) = m.shape();
    assert_eq!(b.len(), rows, "right-hand side length");
    assert_eq!(usable.len(), cols);
    let b = DVector::from_column_slice(b);

    let mtb = m.tr_mul(&b);
    let tol = (DUAL_TOL * mtb.norm()).max(f64::MIN_POSITIVE);

    let mut x = DVector::<f64>::zeros(cols);
    let mut passive: Vec<usize> = Vec::new();
    let mut allowed = usable.to_vec();
    let mut iterations = 0;
    let max_iter = 3 * cols.max(1) + 10;

    let mut w = mtb.clone();
    while iterations < max_iter {
        let candidate = (0..cols)
            .filter(|&j| allowed[j] && !passive.contains(&j))
            .filter(|&j| w[j] > tol)
            .max_by(|&a, &c| w[a].total_cmp(&w[c]).then(c.cmp(&a)));
        let Some(t) = candidate else { break };
        iterations += 1;

        if !independent_of(m, &passive, t) {
            // Column lies in the span of the passive set; it cannot lower the
            // residual further.
            allowed[t] = false;
            continue;
        }
        passive.push(t);

        // Every pass removes at least the blocking coordinate, so the
        // passive set empties after at most `cols` passes.
        for _ in 0..=cols {
            let z = solve_passive(m, &passive, &b);
            if z.iter().all(|v| *v > 0.0) {
                for (k, &j) in passive.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = 0;
            for (k, &j) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let step = if x[j] <= 0.0 { 0.0 } else { x[j] / (x[j] - z[k]) };
                    if step < alpha {
                        alpha = step;
                        blocking = j;
                    }
                }
            }
            for (k, &j) in passive.iter().enumerate() {
                x[j] += alpha * (z[k] - x[j]);
            }
            x[blocking] = 0.0;
            // Coordinates driven to (or past) zero leave the passive set.
            let xs = &mut x;
            passive.retain(|&j| {
                if xs[j] <= 0.0 {
                    xs[j] = 0.0;
                    false
                } else {
                    true
                }
            });
            if passive.is_empty() {
                break;
            }
        }

        allowed.copy_from_slice(usable);
        let r = &b - m * &x;
        w = m.tr_mul(&r);
    }

    let residual = (&b - m * &x).norm();
    NnlsSolution { x: x.iter().copied().collect(), residual, iterations }
}

fn solve_passive(m: &DMatrix<f64>, passive: &[usize], b: &DVector<f64>) -> Vec<f64> {
    let sub = m.select_columns(passive);
    match linalg::lstsq(&sub, b) {
        Some(z) => z.iter().copied().collect(),
        None => vec![0.0; passive.len()],
    }
}

/// Whether column `t` keeps a component outside the span of the passive
/// columns larger than round-off.
fn independent_of(m: &DMatrix<f64>, passive: &[usize], t: usize) -> bool {
    let col = m.column(t).into_owned();
    let cn = col.norm();
    if cn == 0.0 {
        return false;
    }
    if passive.is_empty() {
        return true;
    }
    if passive.len() >= m.nrows() {
        return false;
    }
    let sub = m.select_columns(passive);
    let Some(coef) = linalg::lstsq(&sub, &col) else { return false };
    let resid = (&col - sub * coef).norm();
    resid > 1e3 * f64::EPSILON * cn
}
