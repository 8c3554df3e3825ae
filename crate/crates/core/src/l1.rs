//! Sparse nonnegative source recovery, one column at a time.
//!
//! Each column solves
//!
//! ```text
//! min_{s ≥ 0}  μ·Σ s + ½‖x − Â·s‖²
//! ```
//!
//! by accelerated proximal gradient (gradient step, shrink by `μ·step`,
//! clamp at zero) with a support polish, or the equality-constrained linear
//! program `min Σ s, Â·s = x, s ≥ 0` by simplex.
//!
//! [`recover_sources_l1`] rescales the columns of `Â` to unit Euclidean
//! norm before solving and undoes the scaling afterwards. If the columns
//! had unit entry sum, `Σ s` would equal `Σ x` for every nonnegative
//! representation and the penalty would not prefer any of them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Matrix;
use crate::report::SolverReport;
use crate::simplex;

/// Penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Mu {
    Absolute(f64),
    /// Multiple of `‖Âᵀx‖_∞` for a single column, or of `max |ÂᵀX|` when
    /// recovering a whole matrix.
    Relative(f64),
}

impl Mu {
    fn value(self) -> f64 {
        match self {
            Mu::Absolute(v) | Mu::Relative(v) => v,
        }
    }

    fn resolve(self, reference: f64) -> f64 {
        match self {
            Mu::Absolute(v) => v,
            Mu::Relative(v) => v * reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Step `1/σ_max(Â)²`.
    Fixed,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L1Mode {
    Penalized,
    EqualityLp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Options {
    pub mu: Mu,
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// First-order optimality tolerance, relative to `max(‖Âᵀx‖_∞, μ)`; in
    /// LP mode, the equality tolerance relative to `‖x‖`.
    pub tol: f64,
    pub mode: L1Mode,
    /// Columns of `X` with norm below this fraction of the largest are set
    /// to zero without solving.
    pub norm_floor: f64,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options {
            mu: Mu::Relative(1e-4),
            max_iters: 20_000,
            step_rule: StepRule::Backtracking,
            tol: 1e-9,
            mode: L1Mode::Penalized,
            norm_floor: 0.0,
        }
    }
}

impl L1Options {
    pub fn validate(&self) -> Result<()> {
        let mu = self.mu.value();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::usage(format!("mu must be positive, got {mu}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::usage("l1 tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::usage("l1 max_iters must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.norm_floor) {
            return Err(Error::usage("l1 norm floor must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSolveReport {
    pub col: usize,
    /// `μ·Σ s + ½·fit_residual²`.
    pub objective: f64,
    /// `‖x − Â·s‖₂`.
    pub fit_residual: f64,
    pub nnz: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Largest first-order violation relative to the certificate scale.
    pub optimality: f64,
}

/// Largest violation of the first-order conditions at `s`, relative to
/// `max(‖Âᵀx‖_∞, μ)`.
pub fn optimality_violation(a: &DMatrix<f64>, x: &[f64], s: &[f64], mu: f64) -> f64 {
    let xv = DVector::from_column_slice(x);
    let sv = DVector::from_column_slice(s);
    let atx = a.tr_mul(&xv);
    let scale = atx.amax().max(mu).max(f64::MIN_POSITIVE);
    let g = a.tr_mul(&(a * &sv - &xv));
    let mut worst = 0.0_f64;
    for j in 0..s.len() {
        let gj = g[j] + mu;
        let v = if s[j] > 0.0 { gj.abs() } else { (-gj).max(0.0) };
        worst = worst.max(v / scale);
    }
    worst
}

fn penalized_objective(a: &DMatrix<f64>, x: &DVector<f64>, s: &DVector<f64>, mu: f64) -> (f64, f64) {
    let fit = (x - a * s).norm();
    (mu * s.sum() + 0.5 * fit * fit, fit)
}

/// Minimizer of the penalized objective restricted to the support of `s`,
/// if it stays strictly positive there.
fn polish(a: &DMatrix<f64>, x: &DVector<f64>, s: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..s.len()).filter(|&j| s[j] > 0.0).collect();
    if support.is_empty() {
        return Some(DVector::zeros(s.len()));
    }
    let sub = a.select_columns(&support);
    // Stationarity on the support: AₛᵀAₛ·z = Aₛᵀx − μ·1.
    let gram = sub.tr_mul(&sub);
    let rhs = sub.tr_mul(x).add_scalar(-mu);
    let z = linalg::lstsq(&gram, &rhs)?;
    if z.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut out = DVector::zeros(s.len());
    for (k, &j) in support.iter().enumerate() {
        out[j] = z[k];
    }
    Some(out)
}

fn column_report(col: usize, a: &DMatrix<f64>, x: &[f64], s: &[f64], mu: f64, iterations: usize, tol: f64) -> ColumnSolveReport {
    let xv = DVector::from_column_slice(x);
    let sv = DVector::from_column_slice(s);
    let (objective, fit_residual) = penalized_objective(a, &xv, &sv, mu);
    let optimality = optimality_violation(a, x, s, mu);
    ColumnSolveReport {
        col,
        objective,
        fit_residual,
        nnz: s.iter().filter(|v| **v > 0.0).count(),
        iterations,
        converged: optimality <= tol,
        optimality,
    }
}

/// Solves the penalized problem for one column. `opts.mu` is resolved
/// against `‖Âᵀx‖_∞` when relative.
pub fn solve_column_penalized(a_hat: &Matrix, x: &[f64], opts: &L1Options) -> Result<(Vec<f64>, ColumnSolveReport)> {
    opts.validate()?;
    if x.len() != a_hat.rows() {
        return Err(Error::usage(format!("column has {} entries, estimate has {} rows", x.len(), a_hat.rows())));
    }
    let a = a_hat.to_dmatrix();
    let xv = DVector::from_column_slice(x);
    let mu = opts.mu.resolve(a.tr_mul(&xv).amax());
    solve_penalized_dense(&a, x, mu, opts, 0)
}

fn solve_penalized_dense(a: &DMatrix<f64>, x: &[f64], mu: f64, opts: &L1Options, col: usize) -> Result<(Vec<f64>, ColumnSolveReport)> {
    let n = a.ncols();
    let xv = DVector::from_column_slice(x);
    let atx = a.tr_mul(&xv);
    let gram = a.tr_mul(a);
    let grad = |s: &DVector<f64>| &gram * s - &atx;
    let finish = |s: &DVector<f64>, it: usize| {
        let sv: Vec<f64> = s.iter().copied().collect();
        let rep = column_report(col, a, x, &sv, mu, it, opts.tol);
        (sv, rep)
    };

    // Zero is optimal when no coordinate gains from entering.
    if atx.iter().all(|&g| g <= mu) {
        let (s, rep) = finish(&DVector::zeros(n), 0);
        if rep.converged {
            return Ok((s, rep));
        }
    }

    let lip_max = a.norm_squared().max(f64::MIN_POSITIVE);
    let mut lip = match opts.step_rule {
        StepRule::Fixed => {
            let sv = a.singular_values();
            (sv.max() * sv.max()).max(f64::MIN_POSITIVE)
        }
        StepRule::Backtracking => lip_max * 1e-3,
    };
    let smooth = |s: &DVector<f64>| 0.5 * (&xv - a * s).norm_squared();
    let prox = |y: &DVector<f64>, g: &DVector<f64>, l: f64| (y - g / l).map(|v| (v - mu / l).max(0.0));

    let mut s = DVector::<f64>::zeros(n);
    let mut y = s.clone();
    let mut t = 1.0_f64;
    let mut f_prev = penalized_objective(a, &xv, &s, mu).0;
    let mut best = s.clone();
    let mut best_f = f_prev;

    for it in 1..=opts.max_iters {
        let gy = grad(&y);
        let fy = smooth(&y);
        let mut next = prox(&y, &gy, lip);
        if opts.step_rule == StepRule::Backtracking {
            loop {
                let d = &next - &y;
                let bound = fy + gy.dot(&d) + 0.5 * lip * d.norm_squared();
                if smooth(&next) <= bound + 1e-15 * fy.abs() || lip >= lip_max {
                    break;
                }
                lip = (lip * 2.0).min(lip_max);
                next = prox(&y, &gy, lip);
            }
        }
        let f_next = penalized_objective(a, &xv, &next, mu).0;
        if f_next > f_prev {
            // Momentum overshoot: restart from the last iterate.
            t = 1.0;
            y = s.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &s) * ((t - 1.0) / t_next);
            t = t_next;
            s = next;
            f_prev = f_next;
            if f_next < best_f {
                best_f = f_next;
                best = s.clone();
            }
        }

        if it % 25 == 0 || it == opts.max_iters {
            if let Some(p) = polish(a, &xv, &s, mu) {
                let (sp, rep) = finish(&p, it);
                if rep.converged {
                    return Ok((sp, rep));
                }
            }
            let (sv, rep) = finish(&s, it);
            if rep.converged {
                return Ok((sv, rep));
            }
        }
    }
    let (sv, report) = finish(&best, opts.max_iters);
    Err(Error::L1NotConverged {
        col,
        best: sv,
        report: SolverReport {
            iterations: report.iterations,
            objective: report.objective,
            feasibility: 0.0,
            stationarity: report.optimality,
            complementarity: 0.0,
            converged: false,
            objective_trace: Vec::new(),
        },
    })
}

/// Minimizes `Σ s` subject to `Â·s = x` (within `tol·‖x‖`) and `s ≥ 0`.
/// Infeasible systems return [`Error::Infeasible`] with a Farkas vector.
pub fn solve_column_lp(a_hat: &Matrix, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    if x.len() != a_hat.rows() {
        return Err(Error::usage(format!("column has {} entries, estimate has {} rows", x.len(), a_hat.rows())));
    }
    if !(tol > 0.0) {
        return Err(Error::usage("LP tolerance must be positive"));
    }
    let a = a_hat.to_dmatrix();
    let sol = simplex::solve(&a, x, &vec![1.0; a.ncols()], tol * linalg::norm(x))?;
    Ok(sol.s)
}

/// Output of a whole-matrix recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Result {
    pub s_hat: Matrix,
    /// Per-column reports, in column order. Objectives refer to the
    /// column-normalized estimate used internally.
    pub reports: Vec<ColumnSolveReport>,
    pub failed: usize,
    /// Absolute penalty used.
    pub mu: f64,
}

impl L1Result {
    /// More than 1% of the columns failed.
    pub fn is_failure(&self) -> bool {
        self.failed * 100 > self.reports.len()
    }
}

/// Solves every column and returns the result even when too many columns
/// failed; failed columns carry their best iterate.
pub fn recover_sources_l1_best_effort(a_hat: &Matrix, x: &Matrix, opts: &L1Options) -> Result<L1Result> {
    opts.validate()?;
    if a_hat.rows() != x.rows() {
        return Err(Error::usage(format!("estimate has {} rows but the data has {}", a_hat.rows(), x.rows())));
    }
    let d = a_hat.column_norms();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::data("mixing estimate has a zero column"));
    }
    let inv_d: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let an = a_hat.scale_columns(&inv_d)?;
    let a = an.to_dmatrix();
    let xm = x.to_dmatrix();
    let atx_max = a.tr_mul(&xm).amax();
    let mu = opts.mu.resolve(atx_max);
    let norms = x.column_norms();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let n = a.ncols();

    let solved: Vec<(Vec<f64>, ColumnSolveReport, bool)> = (0..x.cols())
        .into_par_iter()
        .map(|c| {
            let col = x.column(c);
            if norms[c] == 0.0 || norms[c] < opts.norm_floor * max_norm {
                let s = vec![0.0; n];
                let mut rep = column_report(c, &a, &col, &s, mu, 0, opts.tol);
                rep.converged = true;
                return (s, rep, true);
            }
            match opts.mode {
                L1Mode::Penalized => match solve_penalized_dense(&a, &col, mu, opts, c) {
                    Ok((s, rep)) => (s, rep, true),
                    Err(Error::L1NotConverged { best, .. }) => {
                        let rep = column_report(c, &a, &col, &best, mu, opts.max_iters, opts.tol);
                        (best, rep, false)
                    }
                    Err(_) => (vec![0.0; n], column_report(c, &a, &col, &vec![0.0; n], mu, 0, opts.tol), false),
                },
                L1Mode::EqualityLp => match simplex::solve(&a, &col, &vec![1.0; n], opts.tol.max(1e-8) * norms[c]) {
                    Ok(sol) => {
                        let mut rep = column_report(c, &a, &col, &sol.s, 0.0, sol.iterations, opts.tol);
                        rep.converged = true;
                        (sol.s, rep, true)
                    }
                    Err(_) => {
                        // Infeasible (typically noise): fall back to the
                        // penalized solution and count the column as failed.
                        let (s, rep) = match solve_penalized_dense(&a, &col, mu, opts, c) {
                            Ok(v) => v,
                            Err(Error::L1NotConverged { best, .. }) => {
                                let rep = column_report(c, &a, &col, &best, mu, opts.max_iters, opts.tol);
                                (best, rep)
                            }
                            Err(_) => (vec![0.0; n], column_report(c, &a, &col, &vec![0.0; n], mu, 0, opts.tol)),
                        };
                        (s, ColumnSolveReport { converged: false, ..rep }, false)
                    }
                },
            }
        })
        .collect();

    let p = x.cols();
    let mut data = vec![0.0; n * p];
    let mut reports = Vec::with_capacity(p);
    let mut failed = 0;
    for (c, (s, rep, ok)) in solved.into_iter().enumerate() {
        for k in 0..n {
            data[k * p + c] = s[k] * inv_d[k];
        }
        if !ok {
            failed += 1;
        }
        reports.push(rep);
    }
    Ok(L1Result { s_hat: Matrix::nonneg(n, p, data)?, reports, failed, mu })
}

/// Solves every column of `X`; fails if more than 1% of the columns fail.
pub fn recover_sources_l1(a_hat: &Matrix, x: &Matrix, opts: &L1Options) -> Result<L1Result> {
    let r = recover_sources_l1_best_effort(a_hat, x, opts)?;
    if r.is_failure() {
        return Err(Error::L1Aggregate { failed: r.failed, total: r.reports.len() });
    }
    Ok(r)
}
