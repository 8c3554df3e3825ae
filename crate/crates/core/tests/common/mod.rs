#![allow(dead_code)]

pub mod oracle;
pub mod run;

use degensep::Matrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    let m = Matrix::from_dmatrix(m).unwrap();
    if m.min_entry() >= 0.0 {
        m.into_nonneg().unwrap()
    } else {
        m
    }
}

/// All subsets of `0..n` as index lists.
pub fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..(1 << n)).map(move |mask| (0..n).filter(|&j| mask & (1 << j) != 0).collect())
}

/// Least squares through the SVD; `None` if rank deficient.
pub fn lstsq_svd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax || m.ncols() > m.nrows() {
        return None;
    }
    svd.solve(b, 1e-14 * smax).ok()
}

pub fn angle(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: f64 = u.iter().zip(v).map(|(a, b)| (a / nu - b / nv).powi(2)).sum::<f64>().sqrt();
    2.0 * (d / 2.0).asin()
}

/// Minimum over column matchings of the largest column angle between two
/// square matrices (n ≤ 4).
pub fn matched_max_angle(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.cols();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let worst = (0..n).map(|k| angle(&a.column(p[k]), &b.column(k))).fold(0.0, f64::max);
        best = best.min(worst);
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}
