//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Dot product evaluated in twice the working precision (Ogita–Rump–Oishi
/// `Dot2`). Needed where large entries cancel to a small result, as in
/// `B·X` for a nearly singular mixing matrix.
pub fn dot2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    let mut c = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (p, e) = two_prod(x, y);
        let (t, f) = two_sum(s, p);
        s = t;
        c += e + f;
    }
    s + c
}

/// `A·B` with every entry computed by [`dot2`].
pub fn matmul2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let at = a.transpose();
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| dot2(at.column(i).as_slice(), b.column(j).as_slice()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Angle between two nonzero vectors, `2·asin(‖û − v̂‖ / 2)`. Equal to the
/// arccos of the normalized inner product but accurate for angles far below
/// `sqrt(ε)`.
pub fn angle(u: &[f64], v: &[f64]) -> Option<f64> {
    let (u, v) = (unit(u)?, unit(v)?);
    let d: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Some(2.0 * (d / 2.0).min(1.0).asin())
}

/// Inverse of a square full-rank matrix through a column-pivoted QR.
///
/// The numerical rank is the number of pivots of `R` above
/// `rank_tol · ‖A‖_F`; anything short of full rank is an error carrying the
/// condition number estimate.
pub fn pivoted_qr_inverse(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Solver(format!("{m}x{n} matrix has more columns than rows")));
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let tol = rank_tol * a.norm();
    let rank = (0..n).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank < n {
        let sv = a.singular_values();
        let cond = if sv.min() == 0.0 { f64::INFINITY } else { sv.max() / sv.min() };
        return Err(Error::Solver(format!(
            "matrix is rank deficient (numerical rank {rank} of {n}, condition number {cond:.3e})"
        )));
    }
    // A·P = Q·R, so A⁺ = P·R⁻¹·Qᵀ.
    let q = qr.q();
    let rinv = r
        .clone()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Solver("triangular factor is singular".into()))?;
    let mut out = rinv * q.transpose();
    qr.p().inv_permute_rows(&mut out);
    Ok(out)
}

/// Least-squares solve `min ‖M z − b‖` for a full-column-rank `M` by
/// Householder QR.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let k = m.ncols();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    if m.nrows() < k {
        return None;
    }
    let qr = m.clone().qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    let top = qtb.rows(0, k).into_owned();
    r.solve_upper_triangular(&top)
}
