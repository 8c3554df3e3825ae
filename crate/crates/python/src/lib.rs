//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use degensep::clustering::{estimate_mixing_by_clustering, ClusterOptions};
use degensep::l1::{L1Mode, L1Options, Mu};
use degensep::qp::QpOptions;
use degensep::synth::{self, Preset};
use degensep::{cone, l1, metrics, model, qp, Error, Matrix, SolverReport};

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Usage(_) | Error::Data(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<Matrix> {
    let m = Matrix::from_rows(rows).map_err(to_py)?;
    Ok(if m.min_entry() >= 0.0 { m.into_nonneg().map_err(to_py)? } else { m })
}

fn report_dict<'py>(py: Python<'py>, r: &SolverReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iterations", r.iterations)?;
    d.set_item("objective", r.objective)?;
    d.set_item("feasibility", r.feasibility)?;
    d.set_item("stationarity", r.stationarity)?;
    d.set_item("complementarity", r.complementarity)?;
    d.set_item("converged", r.converged)?;
    d.set_item("objective_trace", r.objective_trace.clone())?;
    Ok(d)
}

/// `A·S` for nonnegative factors.
#[pyfunction]
fn mix(a: Rows, s: Rows) -> PyResult<Rows> {
    Ok(model::mix(&matrix(&a)?, &matrix(&s)?).map_err(to_py)?.to_rows())
}

/// 2-norm condition number of a square matrix.
#[pyfunction]
fn condition_number(a: Rows) -> PyResult<f64> {
    model::condition_number(&matrix(&a)?).map_err(to_py)
}

/// Generates a named scenario (`pcc2`, `ocdc3`, `nna2`).
#[pyfunction]
#[pyo3(signature = (preset, seed=0, snr_db=None))]
fn synth_preset<'py>(py: Python<'py>, preset: &str, seed: u64, snr_db: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let p: Preset = preset.parse().map_err(to_py)?;
    let (src, mix) = p.specs();
    let sc = synth::make_scenario(&src, &mix, snr_db, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("a", sc.a.to_rows())?;
    d.set_item("s", sc.s.to_rows())?;
    d.set_item("x", sc.x.to_rows())?;
    d.set_item("measured_snr_db", sc.measured_snr_db)?;
    Ok(d)
}

/// Mixing-matrix estimate from k-means on column directions.
#[pyfunction]
#[pyo3(signature = (x, n, seed=0, restarts=16, norm_floor=0.02))]
fn estimate_mixing(x: Rows, n: usize, seed: u64, restarts: usize, norm_floor: f64) -> PyResult<Rows> {
    let opts = ClusterOptions { restarts, norm_floor, ..ClusterOptions::new(n) }.with_seed(seed);
    let r = estimate_mixing_by_clustering(&matrix(&x)?, &opts).map_err(to_py)?;
    Ok(r.estimate.matrix.to_rows())
}

/// Convex-cone baseline; returns `(a_hat, s_hat)`.
#[pyfunction]
#[pyo3(signature = (x, n, norm_floor=0.02))]
fn separate_nn(x: Rows, n: usize, norm_floor: f64) -> PyResult<(Rows, Rows)> {
    let (est, s, _) = cone::separate_nn(&matrix(&x)?, n, norm_floor).map_err(to_py)?;
    Ok((est.matrix.to_rows(), s.to_rows()))
}

/// `Â⁺·X`.
#[pyfunction]
fn pseudo_inverse_sources(a_hat: Rows, x: Rows) -> PyResult<Rows> {
    let (s, _) = cone::recover_pseudo_inverse(&matrix(&a_hat)?, &matrix(&x)?).map_err(to_py)?;
    Ok(s.to_rows())
}

/// Constrained inverse with `B·X ≥ 0`. Returns a dict with `b`, `s_hat`
/// and `report`; a non-converged solve is returned with
/// `report["converged"] == False` instead of raising.
#[pyfunction]
#[pyo3(signature = (a_hat, x, feas_tol=1e-9, stat_tol=1e-7, max_iters=200))]
fn refine_inverse<'py>(
    py: Python<'py>,
    a_hat: Rows,
    x: Rows,
    feas_tol: f64,
    stat_tol: f64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = QpOptions { feas_tol, stat_tol, max_iters, ..QpOptions::default() };
    let res = match qp::refine_inverse(&matrix(&a_hat)?, &matrix(&x)?, &opts) {
        Ok(r) => r,
        Err(Error::QpNotConverged(r)) => *r,
        Err(e) => return Err(to_py(e)),
    };
    let d = PyDict::new(py);
    d.set_item("b", res.b.to_rows())?;
    d.set_item("s_hat", res.s_hat.to_rows())?;
    d.set_item("report", report_dict(py, &res.report)?)?;
    d.set_item("reference_objective", res.reference_objective)?;
    Ok(d)
}

/// Sparse nonnegative recovery, column by column. `mu` is relative to
/// `max |ÂᵀX|`; `mode` is `"penalized"` or `"lp"`.
#[pyfunction]
#[pyo3(signature = (a_hat, x, mu=1e-4, mode="penalized"))]
fn recover_sources_l1(a_hat: Rows, x: Rows, mu: f64, mode: &str) -> PyResult<Rows> {
    let mode = match mode {
        "penalized" => L1Mode::Penalized,
        "lp" => L1Mode::EqualityLp,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let opts = L1Options { mu: Mu::Relative(mu), mode, ..L1Options::default() };
    let r = l1::recover_sources_l1(&matrix(&a_hat)?, &matrix(&x)?, &opts).map_err(to_py)?;
    Ok(r.s_hat.to_rows())
}

#[pyfunction]
fn negative_energy_ratio(s: Rows) -> PyResult<f64> {
    Ok(metrics::negative_energy_ratio(&matrix(&s)?))
}

/// Permutation- and scale-matched comparison against ground truth.
#[pyfunction]
#[pyo3(signature = (s_hat, s_true, a_hat=None, a_true=None))]
fn evaluate<'py>(
    py: Python<'py>,
    s_hat: Rows,
    s_true: Rows,
    a_hat: Option<Rows>,
    a_true: Option<Rows>,
) -> PyResult<Bound<'py, PyDict>> {
    let (sh, st) = (matrix(&s_hat)?, matrix(&s_true)?);
    let mats = match (a_hat, a_true) {
        (Some(h), Some(t)) => Some((matrix(&h)?, matrix(&t)?)),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("a_hat and a_true must be given together")),
    };
    let r = metrics::evaluate(&sh, &st, mats.as_ref().map(|(h, t)| (h, t))).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("matched_perm", r.matched_perm)?;
    d.set_item("matched_scales", r.matched_scales)?;
    d.set_item("per_source_correlation", r.per_source_correlation)?;
    d.set_item("relative_error", r.relative_error)?;
    d.set_item("negative_energy_ratio", r.negative_energy_ratio)?;
    d.set_item("mixing_angle_errors", r.mixing_angle_errors)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "degensep")]
fn degensep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(condition_number, m)?)?;
    m.add_function(wrap_pyfunction!(synth_preset, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mixing, m)?)?;
    m.add_function(wrap_pyfunction!(separate_nn, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_inverse_sources, m)?)?;
    m.add_function(wrap_pyfunction!(refine_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(recover_sources_l1, m)?)?;
    m.add_function(wrap_pyfunction!(negative_energy_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
