//! Convex-cone (NN) baseline.
//!
//! Each column of `X` is scored by how far it is from the cone spanned by
//! the other columns. Under a stand-alone-peak assumption the columns at
//! those peaks are exactly the extreme rays of the data cone, so the `n`
//! highest scores give the mixing matrix up to scaling and order.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{condition_number, Matrix, MixingEstimate, Provenance};
use crate::nnls;

/// Default angular separation below which two candidate columns count as the
/// same direction.
pub const DEFAULT_MIN_ANGLE: f64 = 1e-6;

/// Condition number above which the pseudo-inverse recovery warns.
pub const WARN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub col: usize,
    /// `‖Σ_{j≠k} X^j λ_j − X^k‖₂` at the optimal `λ ≥ 0`.
    pub score: f64,
    /// Optimal weights over all columns (entry `col` is zero).
    pub weights: Vec<f64>,
}

/// Solves `min ‖M·λ − b‖₂, λ ≥ 0`, returning `(λ, residual)`.
pub fn nnls(m: &Matrix, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    if b.len() != m.rows() {
        return Err(Error::usage(format!("right-hand side has {} entries, matrix has {} rows", b.len(), m.rows())));
    }
    let sol = nnls::nnls(&m.to_dmatrix(), b);
    Ok((sol.x, sol.residual))
}

/// Scores every column against the cone of the others.
///
/// Columns whose norm is below `norm_floor × (largest column norm)` are not
/// solved and get score 0; they also do not serve as generators for the
/// others. Pass `0.0` to score everything.
pub fn score_columns(x: &Matrix, norm_floor: f64) -> Result<Vec<ColumnScore>> {
    let p = x.cols();
    if p < 2 {
        return Err(Error::usage("scoring needs at least two columns"));
    }
    let dm = x.to_dmatrix();
    let norms = x.column_norms();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let usable: Vec<bool> = norms.iter().map(|&v| v > 0.0 && v >= norm_floor * max).collect();

    let scores = (0..p)
        .into_par_iter()
        .map(|k| {
            if !usable[k] {
                return ColumnScore { col: k, score: 0.0, weights: vec![0.0; p] };
            }
            let mut mask = usable.clone();
            mask[k] = false;
            let b: Vec<f64> = dm.column(k).iter().copied().collect();
            let sol = nnls::nnls_masked(&dm, &b, &mask);
            ColumnScore { col: k, score: sol.residual, weights: sol.x }
        })
        .collect();
    Ok(scores)
}

/// Picks the `n` highest-scoring columns, skipping any candidate within
/// `min_angle` radians of one already picked, and rescales them to unit
/// entry sum.
pub fn select_extreme_columns(scores: &[ColumnScore], x: &Matrix, n: usize, min_angle: f64) -> Result<MixingEstimate> {
    if n > scores.len() {
        return Err(Error::usage(format!("cannot pick {n} columns from {} scores", scores.len())));
    }
    let mut ranked: Vec<&ColumnScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.col.cmp(&b.col)));

    let mut picked: Vec<usize> = Vec::with_capacity(n);
    let mut picked_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for cand in ranked {
        if picked.len() == n {
            break;
        }
        let col = x.column(cand.col);
        let distinct = picked_cols
            .iter()
            .all(|p| linalg::angle(p, &col).is_some_and(|a| a > min_angle));
        if distinct {
            picked.push(cand.col);
            picked_cols.push(col);
        }
    }
    if picked.len() < n {
        return Err(Error::Selection(format!(
            "only {} angularly distinct nonzero candidates, need {n}",
            picked.len()
        )));
    }
    let a = x.select_columns(&picked)?.unit_sum_columns()?;
    MixingEstimate::new(a, Provenance::Cone)
}

/// Least-squares recovery `Ŝ = Â⁺·X`.
///
/// Uses a column-pivoted QR with rank tolerance `1e-12·‖Â‖_F`; a
/// rank-deficient estimate is an error naming its condition number. The
/// second value is a warning when the condition number exceeds
/// [`WARN_CONDITION`].
pub fn recover_pseudo_inverse(a_hat: &Matrix, x: &Matrix) -> Result<(Matrix, Option<String>)> {
    if a_hat.rows() != x.rows() {
        return Err(Error::usage(format!(
            "estimate has {} rows but the data has {}",
            a_hat.rows(),
            x.rows()
        )));
    }
    let pinv = pseudo_inverse(a_hat)?;
    let s = pinv * x.to_dmatrix();
    let warn = if a_hat.rows() == a_hat.cols() {
        let k = condition_number(a_hat)?;
        (k > WARN_CONDITION).then(|| format!("mixing estimate is badly conditioned ({k:.3e})"))
    } else {
        None
    };
    Ok((Matrix::from_dmatrix(&s)?, warn))
}

/// Moore–Penrose inverse of a full-column-rank matrix.
pub fn pseudo_inverse(a: &Matrix) -> Result<DMatrix<f64>> {
    linalg::pivoted_qr_inverse(&a.to_dmatrix(), 1e-12)
}

/// Scores, selects and recovers in one call.
pub fn separate_nn(x: &Matrix, n: usize, norm_floor: f64) -> Result<(MixingEstimate, Matrix, Option<String>)> {
    let scores = score_columns(x, norm_floor)?;
    let est = select_extreme_columns(&scores, x, n, DEFAULT_MIN_ANGLE)?;
    let (s, warn) = recover_pseudo_inverse(&est.matrix, x)?;
    Ok((est, s, warn))
}
