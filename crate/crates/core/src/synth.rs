//! Ground-truth scenario generation.
//!
//! Sources are sums of Lorentzian (or Gaussian) peaks arranged so that each
//! source dominates the others on a declared index set; mixing matrices are
//! nearly degenerate by construction (parallel columns, or one column a
//! nonnegative combination of the rest). Noise is calibrated so the measured
//! signal-to-noise ratio matches the request after clamping at zero.
//!
//! Randomness comes from ChaCha8 keyed by the scenario seed
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`), with a separate stream id per
//! purpose: see [`stream`]. Stored CSV fixtures, not the generator, are the
//! canonical cross-language artifacts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Matrix};

/// Stream ids used to derive independent generators from one seed.
pub mod stream {
    pub const MIXING: u64 = 1;
    pub const NOISE: u64 = 2;
    /// Source attempt `k` uses stream `SOURCES + k`.
    pub const SOURCES: u64 = 100;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const MAX_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakShape {
    Lorentzian,
    Gaussian,
}

/// One spectral line. Samples are indexed `0..p`; `width` is the half width
/// at half maximum for Lorentzians and the standard deviation for Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    pub center: f64,
    pub width: f64,
    pub height: f64,
    pub shape: PeakShape,
}

impl PeakSpec {
    pub fn lorentzian(center: f64, width: f64, height: f64) -> Self {
        PeakSpec { center, width, height, shape: PeakShape::Lorentzian }
    }

    pub fn eval(&self, at: f64) -> f64 {
        let z = (at - self.center) / self.width;
        match self.shape {
            PeakShape::Lorentzian => self.height / (1.0 + z * z),
            PeakShape::Gaussian => self.height * (-0.5 * z * z).exp(),
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if !(self.center >= 0.0 && self.center <= (p - 1) as f64) {
            return Err(Error::usage(format!("peak center {} outside 0..{p}", self.center)));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::usage("peak width and height must be positive"));
        }
        Ok(())
    }
}

/// Sources with dominant intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DISourceSpec {
    pub n: usize,
    pub p: usize,
    /// Peaks of each source.
    pub peaks: Vec<Vec<PeakSpec>>,
    /// For each source `k`, the samples where it must dominate every other
    /// source by `dominance_ratio`.
    pub dominant_intervals: Vec<Vec<usize>>,
    pub dominance_ratio: f64,
    /// Relative size of the seeded perturbation of centers, widths and
    /// heights. Zero reproduces the declared peaks exactly on the first try.
    pub jitter: f64,
    /// Zero every other source at the top of each source's dominant
    /// interval, giving each source one stand-alone column.
    pub stand_alone: bool,
}

impl DISourceSpec {
    /// Each source owns an equal band of the sample axis holding three
    /// Lorentzian lines; the dominant interval is two widths either side of
    /// each line.
    pub fn banded(n: usize, p: usize) -> Self {
        let band = p as f64 / n as f64;
        let width = (p as f64 / 400.0).max(1.0);
        let layout = [(0.3, 1.0), (0.5, 0.6), (0.7, 0.8)];
        let mut peaks = Vec::with_capacity(n);
        let mut intervals = Vec::with_capacity(n);
        for k in 0..n {
            let start = k as f64 * band;
            let mut lines = Vec::new();
            let mut idx = Vec::new();
            for &(frac, height) in &layout {
                let center = (start + frac * band).round();
                lines.push(PeakSpec::lorentzian(center, width, height));
                let lo = (center - 2.0 * width).ceil().max(0.0) as usize;
                let hi = ((center + 2.0 * width).floor() as usize).min(p - 1);
                idx.extend(lo..=hi);
            }
            idx.sort_unstable();
            idx.dedup();
            peaks.push(lines);
            intervals.push(idx);
        }
        DISourceSpec {
            n,
            p,
            peaks,
            dominant_intervals: intervals,
            dominance_ratio: 100.0,
            jitter: 1.0,
            stand_alone: false,
        }
    }

    pub fn with_stand_alone(mut self, on: bool) -> Self {
        self.stand_alone = on;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::usage("source count and sample count must be positive"));
        }
        if self.peaks.len() != self.n || self.dominant_intervals.len() != self.n {
            return Err(Error::usage("need peaks and a dominant interval for every source"));
        }
        if !(self.dominance_ratio > 1.0) {
            return Err(Error::usage("dominance ratio must exceed 1"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::usage("jitter must be nonnegative"));
        }
        let mut owner = vec![usize::MAX; self.p];
        for (k, idx) in self.dominant_intervals.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::usage(format!("dominant interval of source {k} is empty")));
            }
            for &l in idx {
                if l >= self.p {
                    return Err(Error::usage(format!("dominant index {l} outside 0..{}", self.p)));
                }
                if owner[l] != usize::MAX && owner[l] != k {
                    return Err(Error::usage(format!(
                        "dominant intervals of sources {} and {k} overlap at {l}",
                        owner[l]
                    )));
                }
                owner[l] = k;
            }
        }
        for lines in &self.peaks {
            if lines.is_empty() {
                return Err(Error::usage("every source needs at least one peak"));
            }
            for peak in lines {
                peak.validate(self.p)?;
            }
        }
        Ok(())
    }
}

/// Outcome of the dominance scan on a source matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceCheck {
    /// Smallest `s_kl / max_{j≠k} s_jl` over all declared intervals.
    pub worst_ratio: f64,
    pub passed: bool,
}

/// Scans `s` on the declared intervals. A ratio with a zero denominator
/// counts as infinite.
pub fn check_dominance(s: &Matrix, intervals: &[Vec<usize>], ratio: f64) -> DominanceCheck {
    let mut worst = f64::INFINITY;
    for (k, idx) in intervals.iter().enumerate() {
        for &l in idx {
            let own = s.get(k, l);
            let other = (0..s.rows()).filter(|&j| j != k).map(|j| s.get(j, l)).fold(0.0, f64::max);
            let r = if other == 0.0 { f64::INFINITY } else { own / other };
            worst = worst.min(r);
        }
    }
    DominanceCheck { worst_ratio: worst, passed: worst >= ratio }
}

/// Generates an `n × p` nonnegative source matrix satisfying the dominance
/// condition on the declared intervals. Deterministic in `seed`.
pub fn gen_sources(spec: &DISourceSpec, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    let mut worst = 0.0_f64;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, stream::SOURCES + attempt as u64);
        let jitter = if attempt == 0 { spec.jitter } else { spec.jitter.max(1.0) };
        let mut data = vec![0.0; spec.n * spec.p];
        for (k, lines) in spec.peaks.iter().enumerate() {
            let row = &mut data[k * spec.p..(k + 1) * spec.p];
            for peak in lines {
                let mut peak = *peak;
                if jitter > 0.0 {
                    let dc: f64 = rng.random_range(-0.5..0.5);
                    let dw: f64 = rng.random_range(-0.15..0.15);
                    let dh: f64 = rng.random_range(-0.25..0.25);
                    peak.center = (peak.center + jitter * dc * peak.width).clamp(0.0, (spec.p - 1) as f64);
                    peak.width *= 1.0 + jitter * dw;
                    peak.height *= 1.0 + jitter * dh;
                }
                for (l, v) in row.iter_mut().enumerate() {
                    *v += peak.eval(l as f64);
                }
            }
        }
        if spec.stand_alone {
            for (k, idx) in spec.dominant_intervals.iter().enumerate() {
                let top = *idx
                    .iter()
                    .max_by(|&&a, &&b| data[k * spec.p + a].total_cmp(&data[k * spec.p + b]).then(b.cmp(&a)))
                    .expect("validated non-empty");
                for j in (0..spec.n).filter(|&j| j != k) {
                    data[j * spec.p + top] = 0.0;
                }
            }
        }
        let s = Matrix::nonneg(spec.n, spec.p, data)?;
        let check = check_dominance(&s, &spec.dominant_intervals, spec.dominance_ratio);
        if check.passed {
            return Ok(s);
        }
        worst = worst.max(check.worst_ratio);
    }
    Err(Error::Generation(format!(
        "dominance ratio {} not reached after {MAX_ATTEMPTS} attempts (best worst-case ratio {worst:.4})",
        spec.dominance_ratio
    )))
}

/// Degeneracy pattern of a generated mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MixingKind {
    /// Nearly parallel columns hitting a target condition number.
    Pcc { target_condition_number: f64 },
    /// The last column is `Σ weights[k]·column_k` plus a perturbation of the
    /// given relative size orthogonal to the other columns.
    Ocdc { weights: Vec<f64>, perturbation: f64 },
    /// Well-conditioned, diagonally dominant.
    Generic,
    /// A fixed matrix given row by row.
    Fixed { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub n: usize,
    #[serde(flatten)]
    pub kind: MixingKind,
}

impl MixingSpec {
    pub fn pcc(n: usize, target_condition_number: f64) -> Self {
        MixingSpec { n, kind: MixingKind::Pcc { target_condition_number } }
    }

    pub fn ocdc(weights: Vec<f64>, perturbation: f64) -> Self {
        MixingSpec { n: weights.len() + 1, kind: MixingKind::Ocdc { weights, perturbation } }
    }

    pub fn generic(n: usize) -> Self {
        MixingSpec { n, kind: MixingKind::Generic }
    }

    pub fn fixed(a: &Matrix) -> Self {
        MixingSpec { n: a.cols(), kind: MixingKind::Fixed { rows: a.to_rows() } }
    }
}

/// Generates an `n × n` nonnegative mixing matrix of the requested kind.
pub fn gen_mixing(spec: &MixingSpec, seed: u64) -> Result<Matrix> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::usage("mixing matrix needs at least two sources"));
    }
    let mut rng = rng_for(seed, stream::MIXING);
    match &spec.kind {
        MixingKind::Pcc { target_condition_number } => pcc_matrix(n, *target_condition_number, &mut rng),
        MixingKind::Ocdc { weights, perturbation } => ocdc_matrix(n, weights, *perturbation, &mut rng),
        MixingKind::Generic => {
            let c = 0.9 / n as f64;
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = rng.random_range(0.0..1.0);
                    data[i * n + j] = if i == j { 1.0 } else { 0.0 } + c * r;
                }
            }
            unit_norm_columns(Matrix::nonneg(n, n, data)?)
        }
        MixingKind::Fixed { rows } => {
            let a = Matrix::from_rows(rows)?.into_nonneg()?;
            if a.shape() != (n, n) {
                return Err(Error::usage(format!("fixed mixing matrix must be {n}x{n}")));
            }
            Ok(a)
        }
    }
}

fn unit_norm_columns(a: Matrix) -> Result<Matrix> {
    let norms = a.column_norms();
    a.scale_columns(&norms.iter().map(|v| 1.0 / v).collect::<Vec<_>>())
}

fn pcc_matrix(n: usize, target: f64, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if !(target >= 1.0 && target.is_finite()) {
        return Err(Error::usage(format!("condition number target {target} must be a finite value ≥ 1")));
    }
    // Base direction with entries bounded away from zero.
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
    let nrm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = raw.iter().map(|v| v / nrm).collect();

    // Regular simplex around 1/√n, reflected into the complement of u.
    let c = 1.0 / (n as f64).sqrt();
    let mut w: Vec<f64> = u.iter().map(|ui| c - ui).collect();
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let reflect = wn > 1e-14;
    if reflect {
        w.iter_mut().for_each(|v| *v /= wn);
    }
    let simplex: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut v: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect();
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= vn);
            if reflect {
                let d: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(&w).for_each(|(x, wi)| *x -= 2.0 * d * wi);
            }
            v
        })
        .collect();

    let build = |delta: f64| -> Result<Matrix> {
        let mut data = vec![0.0; n * n];
        for (j, v) in simplex.iter().enumerate() {
            for i in 0..n {
                data[i * n + j] = u[i] + delta * v[i];
            }
        }
        unit_norm_columns(Matrix::signed(n, n, data)?)
    };

    // Condition number falls monotonically as delta grows; bisect in log space.
    let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = ((1e-17_f64).ln(), (0.99 * min_u).ln());
    let cond_at = |ld: f64| build(ld.exp()).and_then(|a| model::condition_number(&a));
    if cond_at(hi)? > target {
        return Err(Error::usage(format!(
            "condition number {target:e} is below what a nonnegative parallel-column matrix of size {n} reaches"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cond_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let a = build(hi.exp())?;
    let achieved = model::condition_number(&a)?;
    if !(achieved <= 4.0 * target && achieved >= target / 4.0) {
        return Err(Error::usage(format!(
            "condition number {target:e} unreachable (achieved {achieved:e})"
        )));
    }
    a.into_nonneg()
}

fn ocdc_matrix(n: usize, weights: &[f64], perturbation: f64, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if weights.len() != n - 1 {
        return Err(Error::usage(format!("OCDC needs {} weights, got {}", n - 1, weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::usage("OCDC weights must be nonnegative and not all zero"));
    }
    if !(0.0..=1e-6).contains(&perturbation) {
        return Err(Error::usage("OCDC perturbation must lie in [0, 1e-6]"));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n - 1 {
        let v: Vec<f64> = (0..n)
            .map(|i| if i == k { 1.0 } else { 0.0 } + rng.random_range(0.05..0.3))
            .collect();
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.iter().map(|x| x / nrm).collect());
    }
    let mut last = vec![0.0; n];
    for (w, c) in weights.iter().zip(&cols) {
        for i in 0..n {
            last[i] += w * c[i];
        }
    }
    if perturbation > 0.0 {
        // Unit normal to the span of the base columns.
        let base = nalgebra::DMatrix::from_fn(n, n - 1, |i, j| cols[j][i]);
        let svd = base.svd(true, false);
        let u = svd.u.expect("requested U");
        let full = nalgebra::DMatrix::from_fn(n, n, |i, j| if j < n - 1 { u[(i, j)] } else { 0.0 });
        let mut normal: Vec<f64> = (0..n).map(|i| if i == n - 1 { 1.0 } else { 0.0 }).collect();
        for _ in 0..2 {
            for j in 0..n - 1 {
                let d: f64 = (0..n).map(|i| full[(i, j)] * normal[i]).sum();
                for i in 0..n {
                    normal[i] -= d * full[(i, j)];
                }
            }
        }
        let nn = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = if normal.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let scale = perturbation * last.iter().map(|x| x * x).sum::<f64>().sqrt() * sign / nn;
        for i in 0..n {
            last[i] += scale * normal[i];
        }
    }
    cols.push(last);
    let data: Vec<f64> = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    Matrix::nonneg(n, n, data)
}

/// Ground truth for one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub a: Matrix,
    pub s: Matrix,
    pub x_clean: Matrix,
    pub x: Matrix,
    pub snr_db: Option<f64>,
    /// `10·log10(‖X_clean‖² / ‖X − X_clean‖²)` after clamping.
    pub measured_snr_db: Option<f64>,
    pub seed: u64,
}

/// Frobenius signal-to-noise ratio of `noisy` against `clean`, in dB.
pub fn measured_snr_db(clean: &Matrix, noisy: &Matrix) -> f64 {
    let signal: f64 = clean.data().iter().map(|v| v * v).sum();
    let noise: f64 = clean.data().iter().zip(noisy.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (signal / noise).log10()
}

/// Builds sources, mixing matrix and (optionally noisy) mixtures.
///
/// Gaussian noise is added and the result clamped at zero; the noise
/// amplitude is calibrated so that the SNR measured after clamping matches
/// `snr_db` to within 0.01 dB.
pub fn make_scenario(src: &DISourceSpec, mix: &MixingSpec, snr_db: Option<f64>, seed: u64) -> Result<Scenario> {
    if src.n != mix.n {
        return Err(Error::usage(format!("{} sources but a {}-column mixing spec", src.n, mix.n)));
    }
    let s = gen_sources(src, seed)?;
    let a = gen_mixing(mix, seed)?;
    let x_clean = model::mix(&a, &s)?;
    let (x, measured) = match snr_db {
        None => (x_clean.clone(), None),
        Some(db) => {
            if !db.is_finite() {
                return Err(Error::usage("SNR must be finite"));
            }
            let x = add_calibrated_noise(&x_clean, db, seed)?;
            let m = measured_snr_db(&x_clean, &x);
            (x, Some(m))
        }
    };
    Ok(Scenario { a, s, x_clean, x, snr_db, measured_snr_db: measured, seed })
}

fn add_calibrated_noise(clean: &Matrix, snr_db: f64, seed: u64) -> Result<Matrix> {
    let mut rng = rng_for(seed, stream::NOISE);
    let noise: Vec<f64> = (0..clean.data().len()).map(|_| rng.sample(StandardNormal)).collect();
    let signal: f64 = clean.data().iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::data("cannot add noise at a given SNR to an all-zero signal"));
    }
    let apply = |scale: f64| -> Vec<f64> {
        clean.data().iter().zip(&noise).map(|(c, e)| (c + scale * e).max(0.0)).collect()
    };
    let snr_at = |scale: f64| -> f64 {
        let noisy = apply(scale);
        let err: f64 = clean.data().iter().zip(&noisy).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (signal / err).log10()
    };
    // Unclamped starting guess, then bisection on log-scale (SNR decreases
    // monotonically in the noise amplitude).
    let raw: f64 = noise.iter().map(|v| v * v).sum();
    let guess = (signal / raw / 10f64.powf(snr_db / 10.0)).sqrt();
    let (mut lo, mut hi) = (guess.ln() - 3.0, guess.ln() + 3.0);
    while snr_at(lo.exp()) < snr_db {
        lo -= 3.0;
    }
    while snr_at(hi.exp()) > snr_db {
        hi += 3.0;
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..100 {
        let at = snr_at(mid.exp());
        if (at - snr_db).abs() < 1e-3 {
            break;
        }
        if at > snr_db {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
    }
    Matrix::nonneg(clean.rows(), clean.cols(), apply(mid.exp()))
}

/// The printed 2×2 mixing matrix of the parallel-column experiment.
pub fn reference_pcc_matrix() -> Matrix {
    Matrix::nonneg(
        2,
        2,
        vec![0.894427190999916, 0.894427182055644, 0.447213595499958, 0.447213613388501],
    )
    .expect("constant matrix is nonnegative")
}

/// Named scenario layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Two sources, the printed nearly parallel 2×2 matrix, 2000 samples.
    Pcc2,
    /// Three sources, the third mixing column the average of the other two.
    Ocdc3,
    /// Two well-conditioned sources with one stand-alone column each.
    Nna2,
}

impl Preset {
    pub fn specs(self) -> (DISourceSpec, MixingSpec) {
        match self {
            Preset::Pcc2 => (DISourceSpec::banded(2, 2000), MixingSpec::fixed(&reference_pcc_matrix())),
            Preset::Ocdc3 => (DISourceSpec::banded(3, 2000), MixingSpec::ocdc(vec![0.5, 0.5], 0.0)),
            Preset::Nna2 => (DISourceSpec::banded(2, 2000).with_stand_alone(true), MixingSpec::generic(2)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Pcc2 => "pcc2",
            Preset::Ocdc3 => "ocdc3",
            Preset::Nna2 => "nna2",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcc2" => Ok(Preset::Pcc2),
            "ocdc3" => Ok(Preset::Ocdc3),
            "nna2" => Ok(Preset::Nna2),
            other => Err(Error::usage(format!("unknown preset `{other}` (expected pcc2, ocdc3 or nna2)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_source_matches_analytic_peak() {
        let peak = PeakSpec::lorentzian(40.0, 3.0, 2.0);
        let spec = DISourceSpec {
            n: 1,
            p: 100,
            peaks: vec![vec![peak]],
            dominant_intervals: vec![vec![40]],
            dominance_ratio: 10.0,
            jitter: 0.0,
            stand_alone: false,
        };
        let s = gen_sources(&spec, 3).unwrap();
        for l in 0..100 {
            let z = (l as f64 - 40.0) / 3.0;
            assert_eq!(s.get(0, l), 2.0 / (1.0 + z * z));
        }
    }

    #[test]
    fn banded_sources_dominate_and_overlap_elsewhere() {
        let spec = DISourceSpec::banded(3, 900);
        let s = gen_sources(&spec, 11).unwrap();
        // Direct scan on the declared intervals.
        for (k, idx) in spec.dominant_intervals.iter().enumerate() {
            for &l in idx {
                let other = (0..3).filter(|&j| j != k).map(|j| s.get(j, l)).fold(0.0, f64::max);
                assert!(s.get(k, l) >= 100.0 * other);
            }
        }
        // Somewhere off the intervals no source dominates by 100.
        let fails = (0..900).any(|l| {
            let mut v: Vec<f64> = (0..3).map(|k| s.get(k, l)).collect();
            v.sort_by(f64::total_cmp);
            v[2] < 100.0 * v[1]
        });
        assert!(fails);
    }

    #[test]
    fn impossible_dominance_reports_worst_ratio() {
        let mut spec = DISourceSpec::banded(2, 200);
        spec.dominance_ratio = 1e12;
        let err = gen_sources(&spec, 1).unwrap_err();
        assert!(matches!(err, Error::Generation(ref m) if m.contains("worst-case ratio")), "{err}");
    }

    #[test]
    fn overlapping_intervals_rejected() {
        let mut spec = DISourceSpec::banded(2, 200);
        let first = spec.dominant_intervals[0][0];
        spec.dominant_intervals[1].push(first);
        assert!(matches!(gen_sources(&spec, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn stand_alone_columns_are_pure() {
        let spec = DISourceSpec::banded(2, 400).with_stand_alone(true);
        let s = gen_sources(&spec, 5).unwrap();
        for k in 0..2 {
            let pure = (0..400).filter(|&l| s.get(k, l) > 0.0 && s.get(1 - k, l) == 0.0).count();
            assert_eq!(pure, 1);
        }
    }

    #[test]
    fn pcc_hits_reference_condition_number() {
        let a = gen_mixing(&MixingSpec::pcc(2, 1.25e8), 7).unwrap();
        let k = model::condition_number(&a).unwrap();
        assert!((3e7..=5e8).contains(&k), "cond {k:e}");
        assert!(a.is_nonneg());
    }

    #[test]
    fn pcc_three_sources() {
        for target in [1e2, 1e6] {
            let a = gen_mixing(&MixingSpec::pcc(3, target), 2).unwrap();
            let k = model::condition_number(&a).unwrap();
            assert!(k >= target / 4.0 && k <= target * 4.0, "cond {k:e} for {target:e}");
        }
    }

    #[test]
    fn pcc_rejects_sub_unit_target() {
        assert!(matches!(gen_mixing(&MixingSpec::pcc(2, 0.5), 0), Err(Error::Usage(_))));
    }

    #[test]
    fn ocdc_exact_combination() {
        let a = gen_mixing(&MixingSpec::ocdc(vec![0.5, 0.5], 0.0), 9).unwrap();
        for i in 0..3 {
            assert_eq!(a.get(i, 2), 0.5 * a.get(i, 0) + 0.5 * a.get(i, 1));
        }
        let sv = a.to_dmatrix().singular_values();
        assert!(sv.min() < 1e-15 * sv.max());
    }

    #[test]
    fn ocdc_perturbation_is_small_and_out_of_plane() {
        let a = gen_mixing(&MixingSpec::ocdc(vec![0.5, 0.5], 1e-6), 9).unwrap();
        let comb: Vec<f64> = (0..3).map(|i| 0.5 * a.get(i, 0) + 0.5 * a.get(i, 1)).collect();
        let diff: f64 = (0..3).map(|i| (a.get(i, 2) - comb[i]).powi(2)).sum::<f64>().sqrt();
        let cn = comb.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1.0000001e-6 * cn && diff > 0.5e-6 * cn);
        assert!(model::condition_number(&a).unwrap().is_finite());
    }

    #[test]
    fn generic_is_well_conditioned() {
        for seed in 0..10 {
            let a = gen_mixing(&MixingSpec::generic(3), seed).unwrap();
            assert!(model::condition_number(&a).unwrap() < 100.0);
        }
    }

    #[test]
    fn noiseless_scenario_is_exact() {
        let (src, mix) = Preset::Pcc2.specs();
        let sc = make_scenario(&src, &mix, None, 7).unwrap();
        assert_eq!(sc.x, sc.x_clean);
        assert_eq!(sc.x_clean, model::mix(&sc.a, &sc.s).unwrap());
        assert!(sc.measured_snr_db.is_none());
    }

    #[test]
    fn snr_is_calibrated_after_clamping() {
        let (src, mix) = Preset::Ocdc3.specs();
        let sc = make_scenario(&src, &mix, Some(60.0), 7).unwrap();
        let m = sc.measured_snr_db.unwrap();
        assert!((m - 60.0).abs() < 0.5, "measured {m}");
        assert!((measured_snr_db(&sc.x_clean, &sc.x) - m).abs() < 1e-12);
        assert!(sc.x.is_nonneg());
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let (src, mix) = Preset::Ocdc3.specs();
        let a = make_scenario(&src, &mix, Some(60.0), 1).unwrap();
        let b = make_scenario(&src, &mix, Some(60.0), 2).unwrap();
        let c = make_scenario(&src, &mix, Some(60.0), 1).unwrap();
        assert_ne!(a.x, b.x);
        assert_eq!(a, c);
    }
}
