//! Recovery quality modulo permutation and positive scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Matrix;

/// Largest source count matched by exhaustive search; greedy beyond.
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Row of the estimate matched to each true source.
    pub matched_perm: Vec<usize>,
    /// Factor applied to the matched estimated row.
    pub matched_scales: Vec<f64>,
    pub per_source_correlation: Vec<f64>,
    /// `‖scale·ŝ − s‖ / ‖s‖` per true source.
    pub relative_error: Vec<f64>,
    pub negative_energy_ratio: f64,
    /// Radians; empty when no mixing matrices were given.
    pub mixing_angle_errors: Vec<f64>,
}

/// Pearson correlation; `None` if either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `|corr|` between every true row (first index) and estimated row.
fn correlation_table(s_hat: &Matrix, s_true: &Matrix) -> Result<Vec<Vec<f64>>> {
    let n = s_true.rows();
    (0..n)
        .map(|k| {
            let t = s_true.row(k);
            if t.iter().all(|v| *v == 0.0) {
                return Err(Error::data(format!("true source {k} is identically zero")));
            }
            if t.iter().all(|v| *v == t[0]) {
                return Err(Error::data(format!("true source {k} is constant; correlation undefined")));
            }
            Ok((0..n).map(|j| pearson(s_hat.row(j), t).map_or(0.0, f64::abs)).collect())
        })
        .collect()
}

/// Permutation maximizing `Σ_k score[k][perm[k]]` by enumeration.
pub fn best_assignment_exhaustive(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_total = f64::NEG_INFINITY;
    // Heap's algorithm would reorder; lexicographic order keeps ties stable.
    loop {
        let total: f64 = (0..n).map(|k| score[k][perm[k]]).sum();
        if total > best_total {
            best_total = total;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Repeatedly takes the largest remaining entry.
pub fn best_assignment_greedy(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for k in (0..n).filter(|&k| perm[k] == usize::MAX) {
            for j in (0..n).filter(|&j| !used[j]) {
                if best.is_none_or(|(bk, bj)| score[k][j] > score[bk][bj]) {
                    best = Some((k, j));
                }
            }
        }
        let (k, j) = best.expect("unassigned pair");
        perm[k] = j;
        used[j] = true;
    }
    perm
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::usage(format!(
            "{what} shapes differ: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Matches estimated rows to true rows. Returns `(perm, scales)` with
/// `scales[k]·S_hat[perm[k]] ≈ S_true[k]` in the least-squares sense; scales
/// are clamped to be positive.
pub fn match_sources(s_hat: &Matrix, s_true: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
    check_same_shape(s_hat, s_true, "source")?;
    let table = correlation_table(s_hat, s_true)?;
    let perm = if table.len() <= EXHAUSTIVE_LIMIT {
        best_assignment_exhaustive(&table)
    } else {
        best_assignment_greedy(&table)
    };
    let scales = perm
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let (h, t) = (s_hat.row(j), s_true.row(k));
            let hh = linalg::dot2(h, h);
            if hh == 0.0 {
                1.0
            } else {
                (linalg::dot2(h, t) / hh).max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    Ok((perm, scales))
}

/// Fraction of squared mass in negative entries; 0 for an all-zero matrix.
pub fn negative_energy_ratio(s: &Matrix) -> f64 {
    let (mut neg, mut all) = (0.0, 0.0);
    for &v in s.data() {
        all += v * v;
        if v < 0.0 {
            neg += v * v;
        }
    }
    if all == 0.0 {
        0.0
    } else {
        neg / all
    }
}

/// Angle between column `perm[k]` of `a_hat` and column `k` of `a_true`.
/// Without `perm`, columns are matched to minimize the total angle.
pub fn mixing_angle_errors(a_hat: &Matrix, a_true: &Matrix, perm: Option<&[usize]>) -> Result<Vec<f64>> {
    check_same_shape(a_hat, a_true, "mixing matrix")?;
    let n = a_true.cols();
    let angles: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let t = a_true.column(k);
            (0..n)
                .map(|j| {
                    linalg::angle(&a_hat.column(j), &t)
                        .ok_or_else(|| Error::data("zero column in mixing matrix; angle undefined"))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let perm: Vec<usize> = match perm {
        Some(p) => {
            if p.len() != n || p.iter().any(|&j| j >= n) {
                return Err(Error::usage("permutation does not match the mixing matrix"));
            }
            p.to_vec()
        }
        None => {
            let neg: Vec<Vec<f64>> = angles.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
            if n <= EXHAUSTIVE_LIMIT {
                best_assignment_exhaustive(&neg)
            } else {
                best_assignment_greedy(&neg)
            }
        }
    };
    Ok((0..n).map(|k| angles[k][perm[k]]).collect())
}

/// Full report. Mixing-angle errors use the source permutation, since row
/// `j` of the estimate belongs to column `j` of `a_hat`.
pub fn evaluate(s_hat: &Matrix, s_true: &Matrix, mixing: Option<(&Matrix, &Matrix)>) -> Result<EvalReport> {
    let (perm, scales) = match_sources(s_hat, s_true)?;
    let n = s_true.rows();
    let mut corr = Vec::with_capacity(n);
    let mut rel = Vec::with_capacity(n);
    for k in 0..n {
        let (h, t) = (s_hat.row(perm[k]), s_true.row(k));
        corr.push(pearson(h, t).unwrap_or(0.0));
        let diff: Vec<f64> = h.iter().zip(t).map(|(a, b)| scales[k] * a - b).collect();
        rel.push(linalg::norm(&diff) / linalg::norm(t));
    }
    let mixing_angle_errors = match mixing {
        Some((a_hat, a_true)) => mixing_angle_errors(a_hat, a_true, Some(&perm))?,
        None => Vec::new(),
    };
    Ok(EvalReport {
        matched_perm: perm,
        matched_scales: scales,
        per_source_correlation: corr,
        relative_error: rel,
        negative_energy_ratio: negative_energy_ratio(s_hat),
        mixing_angle_errors,
    })
}

/// Plot-ready rows `(sample_index, source_id, true_value, recovered_value)`
/// with the recovered row matched and scaled.
pub fn traces(s_hat: &Matrix, s_true: &Matrix, report: &EvalReport) -> Vec<(usize, usize, f64, f64)> {
    let mut out = Vec::with_capacity(s_true.rows() * s_true.cols());
    for k in 0..s_true.rows() {
        let h = s_hat.row(report.matched_perm[k]);
        for (i, &t) in s_true.row(k).iter().enumerate() {
            out.push((i, k, t, report.matched_scales[k] * h[i]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix {
        Matrix::nonneg(3, 4, vec![1.0, 0.0, 2.0, 0.5, 0.0, 3.0, 1.0, 0.2, 0.4, 0.4, 0.0, 5.0]).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let s = sample();
        let r = evaluate(&s, &s, None).unwrap();
        assert_eq!(r.matched_perm, vec![0, 1, 2]);
        assert!(r.matched_scales.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(r.per_source_correlation.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert_eq!(r.negative_energy_ratio, 0.0);
    }

    #[test]
    fn swapped_and_doubled() {
        let s = Matrix::nonneg(2, 3, vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0]).unwrap();
        let h = Matrix::nonneg(2, 3, vec![0.0, 6.0, 2.0, 2.0, 0.0, 4.0]).unwrap();
        let (perm, scales) = match_sources(&h, &s).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert!(scales.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_true_row_is_an_error() {
        let s = Matrix::nonneg(2, 2, vec![0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(match_sources(&s, &s), Err(Error::Data(_))));
        let t = Matrix::nonneg(2, 3, vec![1.0; 6]).unwrap();
        assert!(match_sources(&t, &sample()).is_err());
    }

    #[test]
    fn negative_energy_cases() {
        assert_eq!(negative_energy_ratio(&sample()), 0.0);
        let neg = Matrix::signed(3, 4, sample().data().iter().map(|v| -v).collect()).unwrap();
        assert_eq!(negative_energy_ratio(&neg), 1.0);
        assert_eq!(negative_energy_ratio(&Matrix::signed(1, 2, vec![1.0, -1.0]).unwrap()), 0.5);
        assert_eq!(negative_energy_ratio(&Matrix::signed(1, 2, vec![0.0, 0.0]).unwrap()), 0.0);
    }

    #[test]
    fn angle_errors_scale_invariant() {
        let a = Matrix::nonneg(2, 2, vec![0.9, 0.3, 0.1, 0.7]).unwrap();
        assert_eq!(mixing_angle_errors(&a, &a, None).unwrap(), vec![0.0, 0.0]);
        let scaled = a.scale_columns(&[10.0, 1.0]).unwrap();
        let e = mixing_angle_errors(&scaled, &a, None).unwrap();
        assert!(e.iter().all(|v| *v < 1e-15));
        let z = Matrix::nonneg(2, 2, vec![0.0, 0.3, 0.0, 0.7]).unwrap();
        assert!(mixing_angle_errors(&z, &a, None).is_err());
    }

    #[test]
    fn greedy_matches_exhaustive_on_dominant_table() {
        let t = vec![vec![0.2, 0.9, 0.1], vec![0.95, 0.3, 0.2], vec![0.1, 0.2, 0.8]];
        assert_eq!(best_assignment_exhaustive(&t), vec![1, 0, 2]);
        assert_eq!(best_assignment_greedy(&t), vec![1, 0, 2]);
    }
}
