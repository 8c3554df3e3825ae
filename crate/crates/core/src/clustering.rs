//! Mixing-matrix estimation from the cluster geometry of the data columns.
//!
//! On a dominant interval of source `i`, a column of `X` is `s_i·A^i` plus
//! small contributions from the other columns of `A`, so its direction sits
//! next to `A^i`. Columns are reduced to unit directions and grouped with
//! k-means; the cluster centers estimate the columns of `A`.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, MixingEstimate, Provenance};
use crate::synth::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    /// Number of clusters, equal to the number of sources.
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Columns with norm below `norm_floor × (largest column norm)` are
    /// dropped before clustering.
    pub norm_floor: f64,
    pub seed: u64,
}

impl ClusterOptions {
    pub fn new(k: usize) -> Self {
        ClusterOptions { k, restarts: 16, max_iters: 300, norm_floor: 0.02, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::usage("cluster count must be positive"));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::usage("restarts and max_iters must be at least 1"));
        }
        if !(self.norm_floor > 0.0 && self.norm_floor < 1.0) {
            return Err(Error::usage(format!("norm floor {} must lie in (0, 1)", self.norm_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Unit-norm cluster centers, sorted lexicographically.
    pub centers: Vec<Vec<f64>>,
    /// Center index of each retained column, aligned with `retained`.
    pub assignments: Vec<usize>,
    /// Indices of the columns of `X` that survived the norm floor.
    pub retained: Vec<usize>,
    /// Sum of squared distances of retained directions to their centers.
    pub inertia: f64,
    /// Restart that produced the result.
    pub best_restart: usize,
    pub estimate: MixingEstimate,
}

/// Drops columns below the norm floor and scales the rest to unit norm.
pub fn normalize_columns(x: &Matrix, norm_floor: f64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let norms = x.column_norms();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::data("every column of the data is zero"));
    }
    let cut = norm_floor * max;
    let mut dirs = Vec::new();
    let mut kept = Vec::new();
    for (c, &nrm) in norms.iter().enumerate() {
        if nrm >= cut && nrm > 0.0 {
            dirs.push((0..x.rows()).map(|r| x.get(r, c) / nrm).collect());
            kept.push(c);
        }
    }
    if kept.is_empty() {
        return Err(Error::data("no column survives the norm floor"));
    }
    Ok((dirs, kept))
}

/// Squared distance below which two unit directions count as equal
/// (an angle of about 1e-14 rad).
const DUPLICATE_DIST2: f64 = 1e-28;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

struct Run {
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
}

/// k-means++ seeding followed by Lloyd iterations on unit directions.
fn run_once(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64, restart: usize) -> Result<Run> {
    let mut rng = rng_for(seed, 1_000 + restart as u64);
    let n = points.len();
    let dim = points[0].len();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..1.0) * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, _) = nearest(p, &centers);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut repaired = false;
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed at the retained point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[assignments[a]])
                            .total_cmp(&dist2(&points[b], &centers[assignments[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centers[j] = points[far].clone();
                assignments[far] = j;
                repaired = true;
                continue;
            }
            let nrm = sums[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                centers[j] = sums[j].iter().map(|v| v / nrm).collect();
            }
        }
        if !changed && !repaired {
            break;
        }
    }

    // Final assignment against the final centers.
    let mut inertia = 0.0;
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, &centers);
        assignments[i] = j;
        counts[j] += 1;
        inertia += d;
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Clustering(format!(
            "cluster {j} is empty ({n} retained directions, {k} clusters)"
        )));
    }
    Ok(Run { centers, assignments, inertia })
}

/// Estimates the mixing matrix as the best-of-restarts k-means centers of
/// the retained column directions, each rescaled to unit entry sum.
pub fn estimate_mixing_by_clustering(x: &Matrix, opts: &ClusterOptions) -> Result<ClusterResult> {
    opts.validate()?;
    if x.cols() < opts.k {
        return Err(Error::data(format!("{} columns cannot form {} clusters", x.cols(), opts.k)));
    }
    let (dirs, kept) = normalize_columns(x, opts.norm_floor)?;
    if dirs.len() < opts.k {
        return Err(Error::data(format!(
            "only {} columns above the norm floor, need at least {}",
            dirs.len(),
            opts.k
        )));
    }

    // Sorting the candidates first makes the result independent of column
    // order.
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&dirs[a], &dirs[b]).then(kept[a].cmp(&kept[b])));
    let points: Vec<Vec<f64>> = order.iter().map(|&i| dirs[i].clone()).collect();

    // k clusters need k directions that differ by more than round-off.
    let mut distinct: Vec<&[f64]> = Vec::with_capacity(opts.k);
    for p in &points {
        if distinct.len() == opts.k {
            break;
        }
        if distinct.iter().all(|d| dist2(d, p) > DUPLICATE_DIST2) {
            distinct.push(p);
        }
    }
    if distinct.len() < opts.k {
        return Err(Error::Clustering(format!(
            "only {} distinct column directions, need {}",
            distinct.len(),
            opts.k
        )));
    }

    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_once(&points, opts.k, opts.max_iters, opts.seed, r))
        .collect();

    let mut best: Option<(usize, Run)> = None;
    let mut last_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                if best.as_ref().is_none_or(|(_, b)| run.inertia < b.inertia) {
                    best = Some((r, run));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((best_restart, run)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Clustering("no restart succeeded".into())));
    };

    // Canonical center order.
    let mut center_order: Vec<usize> = (0..opts.k).collect();
    center_order.sort_by(|&a, &b| lex_cmp(&run.centers[a], &run.centers[b]).then(a.cmp(&b)));
    let mut relabel = vec![0; opts.k];
    for (new, &old) in center_order.iter().enumerate() {
        relabel[old] = new;
    }
    let centers: Vec<Vec<f64>> = center_order.iter().map(|&j| run.centers[j].clone()).collect();

    let mut assignments = vec![0; kept.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = relabel[run.assignments[pos]];
    }

    let m = x.rows();
    let data: Vec<f64> = (0..m).flat_map(|i| centers.iter().map(move |c| c[i])).collect();
    let matrix = Matrix::signed(m, opts.k, data)?.unit_sum_columns()?;
    let matrix = matrix.into_nonneg().unwrap_or_else(|e| panic!("centers of nonnegative data: {e}"));
    let estimate = MixingEstimate::new(matrix, Provenance::Clustering)?;

    Ok(ClusterResult { centers, assignments, retained: kept, inertia: run.inertia, best_restart, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Matrix {
        // Columns along e1 and e2 with varying magnitudes.
        let row0 = vec![1.0, 3.0, 0.0, 0.0, 2.0, 0.0, 5.0, 0.0];
        let row1 = vec![0.0, 0.0, 2.0, 4.0, 0.0, 1.0, 0.0, 0.5];
        Matrix::nonneg(2, 8, [row0, row1].concat()).unwrap()
    }

    #[test]
    fn separable_columns_give_axis_centers() {
        let res = estimate_mixing_by_clustering(&separable(), &ClusterOptions::new(2)).unwrap();
        assert_eq!(res.inertia, 0.0);
        assert_eq!(res.centers, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(res.assignments, vec![1, 1, 0, 0, 1, 0, 1, 0]);
        for c in &res.centers {
            let n: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let a = &res.estimate.matrix;
        for j in 0..2 {
            assert!(((0..2).map(|i| a.get(i, j)).sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(res.estimate.provenance, Provenance::Clustering);
    }

    #[test]
    fn norm_floor_drops_small_and_zero_columns() {
        let x = Matrix::nonneg(2, 4, vec![1.0, 0.0, 0.01, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let (dirs, kept) = normalize_columns(&x, 0.05).unwrap();
        assert_eq!(kept, vec![0, 3]);
        assert_eq!(dirs.len(), 2);
        let same = Matrix::nonneg(1, 3, vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(normalize_columns(&same, 0.05).unwrap().1, vec![0, 1, 2]);
        let zero = Matrix::nonneg(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(normalize_columns(&zero, 0.05), Err(Error::Data(_))));
    }

    #[test]
    fn too_few_retained_columns_is_a_data_error() {
        let x = Matrix::nonneg(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(estimate_mixing_by_clustering(&x, &ClusterOptions::new(2)), Err(Error::Data(_))));
    }

    #[test]
    fn identical_directions_cannot_fill_clusters() {
        let x = Matrix::nonneg(2, 4, vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = estimate_mixing_by_clustering(&x, &ClusterOptions::new(2)).unwrap_err();
        assert!(matches!(err, Error::Clustering(_)), "{err}");
    }

    #[test]
    fn options_are_validated() {
        let x = separable();
        let mut o = ClusterOptions::new(2);
        o.norm_floor = 1.0;
        assert!(matches!(estimate_mixing_by_clustering(&x, &o), Err(Error::Usage(_))));
        o.norm_floor = 0.02;
        o.restarts = 0;
        assert!(matches!(estimate_mixing_by_clustering(&x, &o), Err(Error::Usage(_))));
    }

    #[test]
    fn inertia_is_recomputable() {
        let x = Matrix::nonneg(2, 6, vec![1.0, 0.9, 0.2, 0.1, 0.5, 0.45, 0.1, 0.2, 1.0, 0.8, 0.5, 0.55]).unwrap();
        let res = estimate_mixing_by_clustering(&x, &ClusterOptions::new(2)).unwrap();
        let (dirs, _) = normalize_columns(&x, 0.02).unwrap();
        let again: f64 = dirs.iter().zip(&res.assignments).map(|(d, &j)| dist2(d, &res.centers[j])).sum();
        assert!((again - res.inertia).abs() < 1e-15);
    }
}
