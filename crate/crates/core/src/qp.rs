//! Constrained approximate inverse of a mixing estimate.
//!
//! Solves
//!
//! ```text
//! min_B ½‖I − Â·B‖²_F   subject to   B·X ≥ 0
//! ```
//!
//! and recovers the sources as `B·X`. When `Â` is nearly singular the
//! problem is badly scaled in `B` (its Hessian `ÂᵀÂ ⊗ I` has condition number
//! `cond(Â)²`). With the SVD `Â = U·Σ·Vᵀ` and `B = V·Σ⁻¹·Z·Uᵀ` the objective
//! becomes `½‖I − Z‖²_F`, a projection, while each constraint stays linear
//! in `Z`. The solver works in `Z` with a primal active-set method started
//! from a feasible shift of the pseudo-inverse, so the objective never
//! increases between iterations.
//!
//! The objective separates over columns of `B` and the constraints over
//! rows, so neither decomposition alone is valid; the solve is joint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot2};
use crate::model::{Matrix, MixingEstimate, Provenance};
use crate::report::SolverReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    /// Allowed violation of `B·X ≥ 0`, relative to `max |B·X|`.
    pub feas_tol: f64,
    /// Allowed Lagrangian gradient norm relative to `‖Â‖_F`, and allowed
    /// complementary slackness.
    pub stat_tol: f64,
    pub max_iters: usize,
    /// Columns of `X` with norm below this fraction of the largest column
    /// norm do not contribute constraints. `None` keeps every nonzero column.
    pub norm_floor: Option<f64>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { feas_tol: 1e-9, stat_tol: 1e-7, max_iters: 200, norm_floor: None }
    }
}

impl QpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.stat_tol > 0.0) {
            return Err(Error::usage("QP tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::usage("QP max_iters must be at least 1"));
        }
        if let Some(f) = self.norm_floor {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::usage("QP norm floor must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Multiplier of the constraint `(B·X)[row, col] ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub b: Matrix,
    /// `B·X`, evaluated in the whitened coordinates.
    pub s_hat: Matrix,
    /// Nonzero constraint multipliers.
    pub multipliers: Vec<Multiplier>,
    pub report: SolverReport,
    /// Objective at the pseudo-inverse shifted onto the feasible set; the
    /// solution never exceeds it.
    pub reference_objective: f64,
}

/// First-order optimality residuals of a candidate `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max(0, −min B·X) / max |B·X|`.
    pub feasibility: f64,
    /// `‖Âᵀ(Â·B − I) − Λ·Xᵀ‖_F / ‖Â‖_F`.
    pub stationarity: f64,
    /// `Σ λ_ij·|(B·X)_ij|`.
    pub complementarity: f64,
    /// Most negative multiplier (0 if none is negative).
    pub dual_infeasibility: f64,
    pub objective: f64,
}

/// `½‖I − Â·B‖²_F` with the product evaluated in compensated arithmetic.
pub fn objective(a_hat: &Matrix, b: &Matrix) -> f64 {
    let ab = linalg::matmul2(&a_hat.to_dmatrix(), &b.to_dmatrix());
    let n = ab.nrows();
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = if i == j { 1.0 } else { 0.0 } - ab[(i, j)];
            f += r * r;
        }
    }
    0.5 * f
}

/// Recomputes the KKT residuals from `(Â, X, B, Λ)` directly in the
/// original coordinates, independently of the solver's internal state.
pub fn kkt_residuals(a_hat: &Matrix, x: &Matrix, b: &Matrix, multipliers: &[Multiplier]) -> KktResiduals {
    let a = a_hat.to_dmatrix();
    let bm = b.to_dmatrix();
    let xm = x.to_dmatrix();
    let bx = linalg::matmul2(&bm, &xm);
    let max_abs = bx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = bx.iter().copied().fold(f64::INFINITY, f64::min);
    let feasibility = if max_abs > 0.0 { (-min).max(0.0) / max_abs } else { 0.0 };

    let m = a.nrows();
    let mut resid = linalg::matmul2(&a, &bm);
    for i in 0..m {
        resid[(i, i)] -= 1.0;
    }
    let mut grad = a.transpose() * resid;
    let mut complementarity = 0.0;
    let mut dual_infeasibility = 0.0_f64;
    for mu in multipliers {
        for k in 0..m {
            grad[(mu.row, k)] -= mu.value * xm[(k, mu.col)];
        }
        complementarity += mu.value * bx[(mu.row, mu.col)].abs();
        dual_infeasibility = dual_infeasibility.max(-mu.value);
    }
    let anorm = a.norm();
    KktResiduals {
        feasibility,
        stationarity: grad.norm() / anorm,
        complementarity,
        dual_infeasibility,
        objective: objective(a_hat, b),
    }
}

/// Distance of a unit normal from the working-set span below which the
/// constraint counts as dependent.
const SPAN_TOL: f64 = 1e-10;

/// Value, in unit-normal coordinates, at which working constraints are held.
/// A few ulps above zero keeps `B·X` nonnegative after rounding when `Â` is
/// badly conditioned.
const MARGIN: f64 = 8.0 * f64::EPSILON;

/// Whitened problem data.
struct Whitened {
    m: usize,
    /// `V·Σ⁻¹`; row `i` is `w_iᵀ`.
    vs: DMatrix<f64>,
    u: DMatrix<f64>,
    /// `Uᵀ·X` restricted to the constrained columns.
    xt: DMatrix<f64>,
    cols: Vec<usize>,
    w_norm: Vec<f64>,
    x_norm: Vec<f64>,
}

impl Whitened {
    /// Constraint values `(V·Σ⁻¹·Z)·(Uᵀ·X)` for every constrained column.
    fn values(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let pz = linalg::matmul2(&self.vs, z);
        linalg::matmul2(&pz, &self.xt)
    }

    /// Unit normal of constraint `(i, c)` in vectorized `Z` (row-major).
    fn normal(&self, i: usize, c: usize) -> DVector<f64> {
        let m = self.m;
        let scale = 1.0 / (self.w_norm[i] * self.x_norm[c]);
        DVector::from_fn(m * m, |idx, _| {
            let (k, l) = (idx / m, idx % m);
            self.vs[(i, k)] * self.xt[(l, c)] * scale
        })
    }

    /// [`MARGIN`] expressed in the units of constraint `(i, c)` of `B·X`.
    fn margin(&self, i: usize, c: usize) -> f64 {
        MARGIN * self.w_norm[i] * self.x_norm[c]
    }

    fn to_b(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::matmul2(&linalg::matmul2(&self.vs, z), &self.u.transpose())
    }
}

fn objective_z(z: &DMatrix<f64>) -> f64 {
    let m = z.nrows();
    let mut f = 0.0;
    for i in 0..m {
        for j in 0..m {
            let r = z[(i, j)] - if i == j { 1.0 } else { 0.0 };
            f += r * r;
        }
    }
    0.5 * f
}

fn vec_z(z: &DMatrix<f64>) -> DVector<f64> {
    let m = z.nrows();
    DVector::from_fn(m * m, |idx, _| z[(idx / m, idx % m)])
}

fn unvec_z(v: &DVector<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| v[i * m + j])
}

/// Minimizer of `½‖Z − I‖²` on `{⟨N_w, Z⟩ = MARGIN, w ∈ W}` and the
/// normalized multipliers, via Householder QR of the working-set normals.
fn equality_step(normals: &[DVector<f64>], m: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let ident = vec_z(&DMatrix::identity(m, m));
    if normals.is_empty() {
        return Some((ident, DVector::zeros(0)));
    }
    let n = DMatrix::from_columns(normals);
    let qr = n.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    // With N = Q·R: Z = I − Q·Qᵀ·I + Q·R⁻ᵀ·δ.
    let y = r.transpose().solve_lower_triangular(&DVector::from_element(normals.len(), MARGIN))?;
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = &ident - &q * (q.transpose() * &ident) + &q * y;
    // Z − I = N·λ.
    let lambda = linalg::lstsq(&n, &(&z - &ident))?;
    Some((z, lambda))
}

/// Computes the constrained inverse `B` and the refined sources `B·X`.
pub fn refine_inverse(a_hat: &Matrix, x: &Matrix, opts: &QpOptions) -> Result<QpResult> {
    opts.validate()?;
    let m = a_hat.rows();
    if a_hat.cols() != m {
        return Err(Error::usage(format!("mixing estimate must be square, got {}x{}", m, a_hat.cols())));
    }
    if x.rows() != m {
        return Err(Error::usage(format!("data has {} rows, estimate has {m}", x.rows())));
    }

    let svd = a_hat.to_dmatrix().svd(true, true);
    let (u, vt, sigma) = (svd.u.expect("U"), svd.v_t.expect("Vᵀ"), svd.singular_values);
    let smax = sigma.max();
    if sigma.min() <= 1e-14 * smax {
        let k = if sigma.min() == 0.0 { f64::INFINITY } else { smax / sigma.min() };
        return Err(Error::Solver(format!("mixing estimate is numerically singular (condition number {k:.3e})")));
    }
    let mut vs = vt.transpose();
    for j in 0..m {
        let inv = 1.0 / sigma[j];
        vs.column_mut(j).iter_mut().for_each(|v| *v *= inv);
    }

    let norms = x.column_norms();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let floor = opts.norm_floor.unwrap_or(0.0) * max_norm;
    let cols: Vec<usize> = (0..x.cols()).filter(|&c| norms[c] > 0.0 && norms[c] >= floor).collect();
    let xs = x.select_columns(&cols)?.to_dmatrix();
    let xt = linalg::matmul2(&u.transpose(), &xs);
    let w_norm: Vec<f64> = (0..m).map(|i| vs.row(i).norm()).collect();
    let x_norm: Vec<f64> = (0..cols.len()).map(|c| xs.column(c).norm()).collect();
    let wh = Whitened { m, vs, u, xt, cols, w_norm, x_norm };
    let pc = wh.cols.len();

    // Feasible start: shift each row of the pseudo-inverse along 1ᵀ, which
    // is positive on every nonnegative column.
    let mut z = DMatrix::<f64>::identity(m, m);
    let g0 = wh.values(&z);
    let col_sums: Vec<f64> = (0..pc).map(|c| xs.column(c).sum()).collect();
    let ones_t = wh.u.transpose() * DVector::from_element(m, 1.0);
    let sigma_vt = {
        let mut s = vt.clone();
        for i in 0..m {
            s.row_mut(i).iter_mut().for_each(|v| *v *= sigma[i]);
        }
        s
    };
    let mut working: Vec<(usize, usize)> = Vec::new();
    for i in 0..m {
        let mut shift = 0.0;
        let mut arg = None;
        for c in 0..pc {
            let need = (wh.margin(i, c) - g0[(i, c)]) / col_sums[c];
            if need > shift {
                shift = need;
                arg = Some(c);
            }
        }
        if let Some(c) = arg {
            // ΔZ = Σ·Vᵀ·(shift·e_i·1ᵀ)·U
            for k in 0..m {
                for l in 0..m {
                    z[(k, l)] += shift * sigma_vt[(k, i)] * ones_t[l];
                }
            }
            working.push((i, c));
        }
    }
    let reference_objective = objective_z(&z);

    let mut trace = vec![objective_z(&z)];
    let mut iterations = 0;
    let mut lambda = DVector::<f64>::zeros(working.len());
    let mut optimal = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let normals: Vec<DVector<f64>> = working.iter().map(|&(i, c)| wh.normal(i, c)).collect();
        let Some((z_eq, lam)) = equality_step(&normals, m) else {
            break;
        };
        let z_target = unvec_z(&z_eq, m);
        let d = &z_target - &z;
        let dnorm = d.norm();

        if dnorm > 1e-14 * (1.0 + z.norm()) {
            // Ratio test against the constraints outside the working set.
            // Normals in the span of the working set have zero slope along
            // `d` up to round-off and are skipped; adding one would make the
            // working set rank deficient.
            let g = wh.values(&z);
            let gd = wh.values(&d);
            let span = (!normals.is_empty()).then(|| DMatrix::from_columns(&normals).qr().q());
            let in_span = |nv: &DVector<f64>| match &span {
                Some(q) => (nv - q * (q.transpose() * nv)).norm() <= SPAN_TOL,
                None => false,
            };
            let mut alpha = 1.0;
            let mut blocking = None;
            for i in 0..m {
                for c in 0..pc {
                    if working.contains(&(i, c)) {
                        continue;
                    }
                    let slope = gd[(i, c)];
                    if slope < 0.0 {
                        let step = (g[(i, c)] - wh.margin(i, c)).max(0.0) / -slope;
                        if step < alpha && !in_span(&wh.normal(i, c)) {
                            alpha = step;
                            blocking = Some((i, c));
                        }
                    }
                }
            }
            let next = if blocking.is_some() { &z + alpha * &d } else { z_target };
            let f_now = objective_z(&z);
            let f_next = objective_z(&next);
            if f_next > f_now * (1.0 + 1e-12) + 1e-15 {
                // The projection has lost accuracy (nearly parallel normals);
                // keep the last iterate rather than accept an ascent step.
                break;
            }
            // A round-off increase keeps the current iterate, so the
            // recorded objective never grows.
            let moved = f_next <= f_now;
            if moved {
                z = next;
                trace.push(f_next);
            }
            if let Some(bc) = blocking {
                working.push(bc);
                continue;
            }
            if moved {
                continue;
            }
        }

        lambda = lam;
        // Multipliers in objective units; drop the most negative one.
        let most_negative = (0..working.len())
            .filter(|&w| lambda[w] < -opts.stat_tol)
            .min_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
        match most_negative {
            None => {
                optimal = true;
                break;
            }
            Some(w) => {
                working.remove(w);
                trace.push(objective_z(&z));
            }
        }
    }

    // Multipliers for the final working set.
    let normals: Vec<DVector<f64>> = working.iter().map(|&(i, c)| wh.normal(i, c)).collect();
    if let Some((_, lam)) = equality_step(&normals, m) {
        lambda = lam;
    }
    let multipliers: Vec<Multiplier> = working
        .iter()
        .zip(lambda.iter())
        .map(|(&(i, c), &l)| Multiplier {
            row: i,
            col: wh.cols[c],
            value: l / (wh.w_norm[i] * wh.x_norm[c]),
        })
        .collect();

    let b = Matrix::from_dmatrix(&wh.to_b(&z))?;
    let full_xt = linalg::matmul2(&wh.u.transpose(), &x.to_dmatrix());
    let s_hat = linalg::matmul2(&linalg::matmul2(&wh.vs, &z), &full_xt);
    let s_hat = Matrix::from_dmatrix(&s_hat)?;

    let kkt = kkt_residuals(a_hat, x, &b, &multipliers);
    // Feasibility of the returned sources, which are evaluated in the
    // whitened coordinates and avoid the cancellation in an explicit B·X.
    let feasibility = {
        let min = s_hat.min_entry();
        let max = s_hat.max_abs();
        if max > 0.0 { (-min).max(0.0) / max } else { 0.0 }
    };
    let report = SolverReport {
        iterations,
        objective: objective_z(&z),
        feasibility,
        stationarity: kkt.stationarity,
        complementarity: kkt.complementarity,
        converged: false,
        objective_trace: trace,
    };
    let mut result = QpResult { b, s_hat, multipliers, report, reference_objective };
    let converged = optimal
        && result.report.feasibility <= opts.feas_tol
        && kkt.stationarity <= opts.stat_tol
        && kkt.complementarity <= opts.stat_tol
        && kkt.dual_infeasibility == 0.0;
    result.report.converged = converged;
    if converged {
        Ok(result)
    } else {
        Err(Error::QpNotConverged(Box::new(result)))
    }
}

/// The mixing matrix implied by a constrained inverse: `B⁻¹` with each
/// column rescaled so its first entry equals that of `reference`.
pub fn implied_mixing(b: &Matrix, reference: &Matrix) -> Result<MixingEstimate> {
    if b.shape() != reference.shape() || b.rows() != b.cols() {
        return Err(Error::usage("implied mixing needs square B and reference of equal size"));
    }
    let inv = linalg::pivoted_qr_inverse(&b.to_dmatrix(), 1e-14)?;
    let n = b.rows();
    let mut scales = Vec::with_capacity(n);
    for k in 0..n {
        let top = inv[(0, k)];
        let want = reference.get(0, k);
        if top == 0.0 || want == 0.0 {
            // Fall back to unit entry sum for this column.
            let sum: f64 = inv.column(k).sum();
            scales.push(if sum != 0.0 { 1.0 / sum } else { 1.0 });
        } else {
            scales.push(want / top);
        }
    }
    let a = Matrix::from_dmatrix(&inv)?.scale_columns(&scales)?;
    let a = if a.min_entry() >= 0.0 { a.into_nonneg()? } else { a };
    MixingEstimate::new(a, Provenance::Refined)
}

/// Dot product of row `i` of `b` with column `c` of `x` in compensated
/// arithmetic.
pub fn constraint_value(b: &Matrix, x: &Matrix, i: usize, c: usize) -> f64 {
    dot2(b.row(i), &x.column(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_estimate_is_optimal() {
        let x = Matrix::nonneg(2, 3, vec![1.0, 0.5, 0.0, 0.2, 1.0, 3.0]).unwrap();
        let r = refine_inverse(&Matrix::identity(2), &x, &QpOptions::default()).unwrap();
        assert!(r.report.objective < 1e-12);
        assert!(r.b.max_abs_diff(&Matrix::identity(2)) < 1e-14);
        assert!(r.report.converged);
    }

    #[test]
    fn feasible_inverse_is_returned() {
        let a = Matrix::nonneg(2, 2, vec![2.0, 1.0, 0.5, 1.5]).unwrap();
        let s = Matrix::nonneg(2, 4, vec![1.0, 0.0, 0.3, 2.0, 0.0, 1.0, 0.7, 0.1]).unwrap();
        let x = crate::model::mix(&a, &s).unwrap();
        let r = refine_inverse(&a, &x, &QpOptions::default()).unwrap();
        assert!(r.report.objective < 1e-10);
        assert!(r.s_hat.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn constraint_activates_when_inverse_is_infeasible() {
        // Â is a rotated-out estimate; its inverse produces negatives.
        let a_hat = Matrix::nonneg(2, 2, vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let x = Matrix::nonneg(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let (pinv_s, _) = crate::cone::recover_pseudo_inverse(&a_hat, &x).unwrap();
        assert!(pinv_s.min_entry() < 0.0);
        let r = refine_inverse(&a_hat, &x, &QpOptions::default()).unwrap();
        assert!(r.s_hat.min_entry() >= -1e-12);
        assert!(!r.multipliers.is_empty());
        assert!(r.report.objective <= r.reference_objective + 1e-15);
        for w in r.report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{:?}", r.report.objective_trace);
        }
        let kkt = kkt_residuals(&a_hat, &x, &r.b, &r.multipliers);
        assert!(kkt.stationarity < 1e-10 && kkt.complementarity < 1e-10);
    }

    #[test]
    fn implied_mixing_of_identity() {
        let a = implied_mixing(&Matrix::identity(3), &Matrix::identity(3)).unwrap();
        assert!(a.matrix.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        assert_eq!(a.provenance, Provenance::Refined);
    }

    #[test]
    fn rejects_non_square_and_singular() {
        let x = Matrix::nonneg(2, 2, vec![1.0; 4]).unwrap();
        let rect = Matrix::nonneg(2, 3, vec![1.0; 6]).unwrap();
        assert!(matches!(refine_inverse(&rect, &x, &QpOptions::default()), Err(Error::Usage(_))));
        let sing = Matrix::nonneg(2, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(refine_inverse(&sing, &x, &QpOptions::default()), Err(Error::Solver(_))));
        let bad = QpOptions { feas_tol: 0.0, ..QpOptions::default() };
        assert!(matches!(refine_inverse(&Matrix::identity(2), &x, &bad), Err(Error::Usage(_))));
    }
}
