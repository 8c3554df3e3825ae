//! Brute-force reference solvers for small instances.

use degensep::l1::{self, L1Options, Mu};
use degensep::qp::{self, QpOptions};
use degensep::{nnls, Matrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{lstsq_svd, rng, subsets, to_matrix, uniform_matrix};

/// Minimum of `‖M·λ − b‖` over `λ ≥ 0` by trying every support.
pub fn nnls_by_enumeration(m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let mut best = b.norm();
    for support in subsets(m.ncols()).filter(|s| !s.is_empty()) {
        let sub = m.select_columns(&support);
        if let Some(lam) = lstsq_svd(&sub, b) {
            if lam.iter().all(|v| *v >= 0.0) {
                best = best.min((&sub * lam - b).norm());
            }
        }
    }
    best
}

/// Global minimum of `½‖I − Â·B‖²` subject to `B·X ≥ 0` by solving the
/// equality-constrained KKT system of every active set.
pub fn qp_by_enumeration(a: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let (m, n) = a.shape();
    let p = x.ncols();
    let nv = n * m;
    // Variables are `B` in row-major order: index `i·m + k` holds `B[i, k]`.
    let ata = a.transpose() * a;
    let h = DMatrix::from_fn(nv, nv, |r, c| if r % m == c % m { ata[(r / m, c / m)] } else { 0.0 });
    let lin = DVector::from_fn(nv, |r, _| a[(r % m, r / m)]);
    let normal = |i: usize, j: usize| DVector::from_fn(nv, |r, _| if r / m == i { x[(r % m, j)] } else { 0.0 });
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).collect();

    let mut best = f64::INFINITY;
    for active in subsets(all.len()) {
        let q = active.len();
        let mut kkt = DMatrix::zeros(nv + q, nv + q);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&h);
        for (t, &c) in active.iter().enumerate() {
            let nrm = normal(all[c].0, all[c].1);
            for r in 0..nv {
                kkt[(r, nv + t)] = -nrm[r];
                kkt[(nv + t, r)] = nrm[r];
            }
        }
        let mut rhs = DVector::zeros(nv + q);
        rhs.rows_mut(0, nv).copy_from(&lin);
        let svd = kkt.clone().svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-12 * svd.singular_values.max()) else { continue };
        if (&kkt * &sol - &rhs).norm() > 1e-9 * (1.0 + rhs.norm()) {
            // Inconsistent system: this active set has no stationary point.
            continue;
        }
        let bvec = sol.rows(0, nv).into_owned();
        let b = DMatrix::from_fn(n, m, |i, k| bvec[i * m + k]);
        let bx = &b * x;
        if bx.min() < -1e-9 * (1.0 + bx.amax()) {
            continue;
        }
        let mut f = 0.0;
        let ab = a * &b;
        for i in 0..m {
            for j in 0..m {
                let d = if i == j { 1.0 } else { 0.0 } - ab[(i, j)];
                f += d * d;
            }
        }
        best = best.min(0.5 * f);
    }
    best
}

/// Minimum of `Σ s` over the basic feasible solutions of `A·s = x, s ≥ 0`.
pub fn lp_by_vertex_enumeration(a: &DMatrix<f64>, x: &DVector<f64>) -> Option<f64> {
    let m = a.nrows();
    let mut best: Option<f64> = None;
    for support in subsets(a.ncols()).filter(|s| !s.is_empty() && s.len() <= m) {
        let sub = a.select_columns(&support);
        if let Some(s) = lstsq_svd(&sub, x) {
            let fits = (&sub * &s - x).norm() <= 1e-10 * (1.0 + x.norm());
            if fits && s.iter().all(|v| *v >= -1e-12) {
                let cost = s.sum();
                best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            }
        }
    }
    best
}

/// Support of the LP solution against the generating support, on columns
/// that have one dominant source and at most `⌈n/2⌉` nonzeros in total.
pub fn support_agreement(a: &Matrix, trials: usize, seed: u64) -> (usize, Vec<Vec<usize>>) {
    let n = a.cols();
    let inv: Vec<f64> = a.column_norms().iter().map(|v| 1.0 / v).collect();
    let a = &a.scale_columns(&inv).unwrap();
    let ad = a.to_dmatrix();
    let mut r = rng(seed);
    let mut agree = 0;
    let mut misses = Vec::new();
    for _ in 0..trials {
        let k = r.random_range(1..=n.div_ceil(2));
        let mut support: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let j = r.random_range(i..n);
            support.swap(i, j);
        }
        support.truncate(k);
        support.sort_unstable();
        let mut s = DVector::zeros(n);
        for (t, &j) in support.iter().enumerate() {
            s[j] = if t == 0 { r.random_range(0.5..1.0) } else { r.random_range(0.001..0.01) };
        }
        let x = &ad * &s;
        let sol = l1::solve_column_lp(a, x.as_slice(), 1e-12).unwrap();
        let top = sol.iter().copied().fold(0.0, f64::max);
        let found: Vec<usize> = (0..n).filter(|&j| sol[j] > 1e-6 * top).collect();
        if found == support {
            agree += 1;
        } else {
            misses.push(support);
        }
    }
    (agree, misses)
}

/// NNLS against support enumeration on `trials` random signed instances
/// with `m ≤ 4` and at most 6 columns.
pub fn check_nnls(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let rows = r.random_range(1..=4);
        let cols = r.random_range(1..=6);
        let m = uniform_matrix(&mut r, rows, cols, -1.0, 1.0);
        let b = DVector::from_fn(rows, |_, _| r.random_range(-1.0..1.0));
        let sol = nnls::nnls(&m, b.as_slice());
        if sol.x.iter().any(|v| *v < 0.0) {
            return Err(format!("trial {trial}: negative entry"));
        }
        let oracle = nnls_by_enumeration(&m, &b);
        let gap = (sol.residual - oracle).abs() / (1.0 + b.norm());
        if gap > 1e-8 {
            return Err(format!("trial {trial}: residual {} vs enumeration {oracle}", sol.residual));
        }
        worst = worst.max(gap);
    }
    Ok(format!("{trials} instances, largest gap {worst:.1e}"))
}

/// QP objective against active-set enumeration on `trials` random
/// `2 × 2` instances with at most 3 data columns.
pub fn check_qp(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let (mut done, mut binding) = (0, 0);
    let mut worst: f64 = 0.0;
    while done < trials {
        let p = r.random_range(1..=3);
        let a_true = uniform_matrix(&mut r, 2, 2, 0.2, 1.0);
        let a_hat = (&a_true + uniform_matrix(&mut r, 2, 2, -0.3, 0.3)).map(|v: f64| v.max(0.01));
        if a_hat.clone().svd(false, false).singular_values.min() < 0.05 {
            continue;
        }
        let x = &a_true * uniform_matrix(&mut r, 2, p, 0.0, 1.0);
        let (ah, xm) = (to_matrix(&a_hat), to_matrix(&x));
        let res = qp::refine_inverse(&ah, &xm, &QpOptions::default()).map_err(|e| format!("instance {done}: {e}"))?;
        let got = qp::objective(&ah, &res.b);
        let oracle = qp_by_enumeration(&a_hat, &x);
        let gap = (got - oracle).abs() / (1.0 + oracle);
        if gap > 1e-6 {
            return Err(format!("instance {done}: objective {got:e} vs enumeration {oracle:e}"));
        }
        if res.s_hat.min_entry() < -1e-9 * res.s_hat.max_abs() {
            return Err(format!("instance {done}: infeasible"));
        }
        if oracle > 1e-12 {
            binding += 1;
        }
        worst = worst.max(gap);
        done += 1;
    }
    if binding * 5 < trials {
        return Err(format!("only {binding} of {trials} instances had binding constraints"));
    }
    Ok(format!("{trials} instances ({binding} with binding constraints), largest gap {worst:.1e}"))
}

/// Penalized solutions at `μ ∈ {1e-2, 1e-4, 1e-6}` relative approach the
/// LP solution monotonically, ending within `1e-4` relative.
pub fn check_penalized_to_lp(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    while done < trials {
        let n = r.random_range(2..=4);
        let m = if n >= 3 && r.random_bool(0.5) { n - 1 } else { n };
        let a = uniform_matrix(&mut r, m, n, 0.1, 1.0);
        let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
        let a = DMatrix::from_fn(m, n, |i, j| a[(i, j)] / norms[j]);
        let s0 = DVector::from_fn(n, |_, _| if r.random_bool(0.6) { r.random_range(0.2..1.0) } else { 0.0 });
        let x = &a * &s0;
        if x.norm() == 0.0 || a.clone().svd(false, false).singular_values.min() < 0.1 {
            continue;
        }
        if m < n {
            // Skip near ties: the cost must change along the null direction.
            let v = a.clone().insert_row(m, 0.0).svd(false, true).v_t.unwrap();
            let d = v.row(n - 1);
            if d.sum().abs() < 0.1 * d.abs().sum() {
                continue;
            }
        }
        let am = to_matrix(&a);
        let lp = l1::solve_column_lp(&am, x.as_slice(), 1e-12).map_err(|e| e.to_string())?;
        let lp = DVector::from_column_slice(&lp);
        let mut dists = Vec::new();
        for mu in [1e-2, 1e-4, 1e-6] {
            let opts = L1Options { mu: Mu::Relative(mu), ..L1Options::default() };
            let (s, _) = l1::solve_column_penalized(&am, x.as_slice(), &opts).map_err(|e| e.to_string())?;
            dists.push((DVector::from_column_slice(&s) - &lp).norm() / lp.norm());
        }
        if !(dists[0] > dists[1] && dists[1] > dists[2]) {
            return Err(format!("instance {done}: distances not decreasing: {dists:?}"));
        }
        if dists[2] >= 1e-4 {
            return Err(format!("instance {done}: final distance {:e}", dists[2]));
        }
        worst = worst.max(dists[2]);
        done += 1;
    }
    Ok(format!("{trials} instances, largest final distance {worst:.1e}"))
}
