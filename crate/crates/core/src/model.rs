//! The linear mixing model `X = A·S`, its matrix container and the
//! permutation/scaling equivalence between factorizations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a matrix was validated nonnegative at construction.
///
/// Sources and mixtures are `StrictlyNonneg`; recovered estimates may carry
/// negative entries and are `Signed`. The tag is fixed when the matrix is
/// built, so reading it costs nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signedness {
    StrictlyNonneg,
    Signed,
}

/// Dense row-major real matrix.
///
/// For `X` and `S`, rows are signals and columns are acquisition samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    sign: Signedness,
}

impl Matrix {
    fn build(rows: usize, cols: usize, data: Vec<f64>, sign: Signedness) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::usage(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite entry {v}")));
        }
        if sign == Signedness::StrictlyNonneg {
            if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::data(format!(
                    "negative entry {v} at ({}, {}) in a nonnegative matrix",
                    i / cols,
                    i % cols
                )));
            }
        }
        Ok(Matrix { rows, cols, data, sign })
    }

    /// Builds a matrix that must be entrywise nonnegative.
    pub fn nonneg(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(rows, cols, data, Signedness::StrictlyNonneg)
    }

    pub fn signed(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(rows, cols, data, Signedness::Signed)
    }

    /// Row-major construction from nested rows, tagged `Signed`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::usage("ragged rows"));
        }
        Self::signed(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data, sign: Signedness::StrictlyNonneg }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn signedness(&self) -> Signedness {
        self.sign
    }

    pub fn is_nonneg(&self) -> bool {
        self.sign == Signedness::StrictlyNonneg
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Retags as `Signed`; the data are untouched.
    pub fn into_signed(mut self) -> Self {
        self.sign = Signedness::Signed;
        self
    }

    /// Retags as nonnegative, failing if any entry is negative.
    pub fn into_nonneg(self) -> Result<Self> {
        Self::nonneg(self.rows, self.cols, self.data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Converts back from nalgebra, tagging the result `Signed`.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self::signed(r, c, data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data, sign: self.sign }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                out[c] += v * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        out
    }

    /// Plain product, tagged nonnegative only when both factors are.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::usage(format!(
                "inner dimensions disagree: {}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut data = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let out = &mut data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        let sign = if self.is_nonneg() && rhs.is_nonneg() {
            Signedness::StrictlyNonneg
        } else {
            Signedness::Signed
        };
        Ok(Matrix { rows: self.rows, cols: rhs.cols, data, sign })
    }

    /// Keeps the listed columns in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Self::build(self.rows, idx.len(), data, self.sign)
    }

    /// Scales each column by the matching factor.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Matrix> {
        assert_eq!(factors.len(), self.cols);
        let nonneg = self.is_nonneg() && factors.iter().all(|f| *f >= 0.0);
        let mut data = self.data.clone();
        for r in 0..self.rows {
            for (c, f) in factors.iter().enumerate() {
                data[r * self.cols + c] *= f;
            }
        }
        let sign = if nonneg { Signedness::StrictlyNonneg } else { Signedness::Signed };
        Self::build(self.rows, self.cols, data, sign)
    }

    /// Rescales every column to unit entry sum. Columns summing to zero are
    /// rejected.
    pub fn unit_sum_columns(&self) -> Result<Matrix> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                sums[c] += v;
            }
        }
        if let Some(c) = sums.iter().position(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::data(format!("column {c} sums to zero")));
        }
        self.scale_columns(&sums.iter().map(|s| 1.0 / s).collect::<Vec<_>>())
    }
}

/// Problem dimensions: `m` mixtures, `n` sources, `p` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

impl ModelDims {
    /// Dimensions of a determined problem (`m = n`, `p ≥ n`).
    pub fn new(m: usize, n: usize, p: usize) -> Result<Self> {
        if m != n {
            return Err(Error::usage(format!("only the determined case is supported (m = {m}, n = {n})")));
        }
        if p < n {
            return Err(Error::usage(format!("need at least {n} samples, got {p}")));
        }
        Ok(ModelDims { m, n, p })
    }

    pub fn of(a: &Matrix, s: &Matrix) -> Result<Self> {
        if a.cols() != s.rows() {
            return Err(Error::usage("mixing matrix columns must equal source rows"));
        }
        Self::new(a.rows(), a.cols(), s.cols())
    }
}

/// A permutation together with positive per-source scales.
///
/// Applied to a factorization it maps `(A, S)` to `(A·P·Λ, Λ⁻¹·P⁻¹·S)`,
/// where column `k` of `A·P` is column `perm[k]` of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceTransform {
    perm: Vec<usize>,
    scales: Vec<f64>,
}

impl EquivalenceTransform {
    pub fn new(perm: Vec<usize>, scales: Vec<f64>) -> Result<Self> {
        if perm.len() != scales.len() {
            return Err(Error::usage("permutation and scales differ in length"));
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::usage(format!("{perm:?} is not a permutation")));
            }
        }
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::usage(format!("scale {s} is not strictly positive")));
        }
        Ok(EquivalenceTransform { perm, scales })
    }

    pub fn identity(n: usize) -> Self {
        EquivalenceTransform { perm: (0..n).collect(), scales: vec![1.0; n] }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Forms the mixtures `X = A·S`.
pub fn mix(a: &Matrix, s: &Matrix) -> Result<Matrix> {
    if !a.is_nonneg() || !s.is_nonneg() {
        return Err(Error::usage("mix expects nonnegative mixing matrix and sources"));
    }
    a.matmul(s)
}

/// Maps `(A, S)` to the equivalent pair `(A·P·Λ, Λ⁻¹·P⁻¹·S)`.
pub fn apply_equivalence(a: &Matrix, s: &Matrix, t: &EquivalenceTransform) -> Result<(Matrix, Matrix)> {
    let n = a.cols();
    if s.rows() != n || t.len() != n {
        return Err(Error::usage(format!(
            "transform of size {} does not fit {}x{} and {}x{}",
            t.len(),
            a.rows(),
            a.cols(),
            s.rows(),
            s.cols()
        )));
    }
    let a_perm = a.select_columns(&t.perm)?.scale_columns(&t.scales)?;
    let p = s.cols();
    let mut data = Vec::with_capacity(n * p);
    for (k, &src) in t.perm.iter().enumerate() {
        let inv = 1.0 / t.scales[k];
        data.extend(s.row(src).iter().map(|v| v * inv));
    }
    let s_perm = Matrix::build(n, p, data, s.signedness())?;
    Ok((a_perm, s_perm))
}

/// Ratio of the largest to the smallest singular value; `+∞` when the
/// smallest is exactly zero.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::usage(format!("condition number needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let sv = a.to_dmatrix().singular_values();
    let max = sv.max();
    let min = sv.min();
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Where a mixing-matrix estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clustering,
    Cone,
    Refined,
}

/// A candidate mixing matrix with its origin and conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingEstimate {
    pub matrix: Matrix,
    pub provenance: Provenance,
    pub condition_number: f64,
}

impl MixingEstimate {
    pub fn new(matrix: Matrix, provenance: Provenance) -> Result<Self> {
        let condition_number = if matrix.rows() == matrix.cols() {
            condition_number(&matrix)?
        } else {
            f64::NAN
        };
        Ok(MixingEstimate { matrix, provenance, condition_number })
    }
}
