//! Python module `speclab`: sampling, spectra, transfer-matrix exponents and
//! batch experiments backed by `speclab-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use speclab_core::ensemble::sample_matrix;
use speclab_core::experiments::{run, ExperimentConfig, ExperimentKind, OutputFormat};
use speclab_core::spectra::{hole_radius, radial_density, smooth, UNIT_DISK_MEAN_LOG_B};
use speclab_core::transfer::{duality_det, lyapunov_exponents, winding_number};
use speclab_core::{
    build_balanced, determinant, eigenvalues, Complex64, Deformation, EnsembleSpec,
    LyapunovCurve, MatrixSample,
};

fn py_err(e: speclab_core::Error) -> PyErr {
    match e {
        speclab_core::Error::NoConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// One tridiagonal matrix with corners: diagonal `a`, upper `b`, lower `c`.
#[pyclass(name = "Sample", frozen)]
struct PySample {
    inner: MatrixSample,
}

#[pymethods]
impl PySample {
    #[new]
    fn new(a: Vec<Complex64>, b: Vec<Complex64>, c: Vec<Complex64>) -> PyResult<Self> {
        MatrixSample::new(a, b, c).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Draws sample `index` of a seeded ensemble: `"unit-disk"` or `"hermitian-hn"`.
    #[staticmethod]
    #[pyo3(signature = (n, seed, index=0, kind="unit-disk", width=3.5))]
    fn draw(n: usize, seed: u64, index: usize, kind: &str, width: f64) -> PyResult<Self> {
        let spec = match kind {
            "unit-disk" => EnsembleSpec::unit_disk(n, index + 1, seed),
            "hermitian-hn" => EnsembleSpec::hermitian_hn(n, width, index + 1, seed),
            _ => return Err(PyValueError::new_err(format!("unknown ensemble '{kind}'"))),
        };
        sample_matrix(&spec, index).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn a(&self) -> Vec<Complex64> {
        self.inner.a.clone()
    }

    #[getter]
    fn b(&self) -> Vec<Complex64> {
        self.inner.b.clone()
    }

    #[getter]
    fn c(&self) -> Vec<Complex64> {
        self.inner.c.clone()
    }

    /// Eigenvalues of the balanced matrix at `z = exp(xi + i phi)`.
    #[pyo3(signature = (xi=0.0, phi=0.0))]
    fn eigenvalues(&self, py: Python<'_>, xi: f64, phi: f64) -> PyResult<Vec<Complex64>> {
        let d = Deformation::new(xi, phi).map_err(py_err)?;
        let m = build_balanced(&self.inner, &d);
        py.detach(|| eigenvalues(&m)).map_err(py_err)
    }

    /// `(xi_plus, xi_minus)` from the transfer-matrix product at `energy`.
    fn lyapunov(&self, energy: Complex64) -> PyResult<(f64, f64)> {
        lyapunov_exponents(&self.inner, energy).map_err(py_err)
    }

    /// `(log|det|, phase)` of `E - M_b` through the transfer-matrix identity.
    #[pyo3(signature = (energy, xi=0.0, phi=0.0))]
    fn duality_det(&self, energy: Complex64, xi: f64, phi: f64) -> PyResult<(f64, Option<f64>)> {
        let d = Deformation::new(xi, phi).map_err(py_err)?;
        let v = duality_det(&self.inner, energy, &d).map_err(py_err)?;
        Ok((v.log_magnitude(), v.phase()))
    }

    /// `(log|det|, phase)` of `E - M_b` from a dense LU factorization.
    #[pyo3(signature = (energy, xi=0.0, phi=0.0))]
    fn dense_det(&self, energy: Complex64, xi: f64, phi: f64) -> PyResult<(f64, Option<f64>)> {
        let d = Deformation::new(xi, phi).map_err(py_err)?;
        let v = determinant(&build_balanced(&self.inner, &d), energy).map_err(py_err)?;
        Ok((v.log_magnitude, v.phase))
    }

    /// Number of zeros of `det[E - M_b]` inside `|E| = radius`.
    #[pyo3(signature = (radius, xi=0.0, phi=0.0, points=None))]
    fn winding(&self, radius: f64, xi: f64, phi: f64, points: Option<usize>) -> PyResult<i64> {
        let d = Deformation::new(xi, phi).map_err(py_err)?;
        let points = points.unwrap_or(8 * self.inner.n());
        winding_number(&self.inner, &d, radius, points)
            .map(|r| r.winding)
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={})", self.inner.n())
    }
}

/// Smoothed radial density of a pooled spectrum and its Lyapunov curve.
#[pyclass(name = "RadialProfile", frozen)]
struct PyRadialProfile {
    plateau: f64,
    midpoints: Vec<f64>,
    density: Vec<f64>,
    curve: LyapunovCurve,
}

#[pymethods]
impl PyRadialProfile {
    #[new]
    #[pyo3(signature = (eigenvalues, bins=300, r_max=3.0, window=10, mean_log_b=UNIT_DISK_MEAN_LOG_B))]
    fn new(
        eigenvalues: Vec<Complex64>,
        bins: usize,
        r_max: f64,
        window: usize,
        mean_log_b: f64,
    ) -> PyResult<Self> {
        let raw = radial_density(&eigenvalues, bins, r_max).map_err(py_err)?;
        let p = smooth(&raw, window).map_err(py_err)?;
        let curve = LyapunovCurve::on_midpoints(&p, mean_log_b).map_err(py_err)?;
        Ok(Self {
            plateau: p.plateau(0.0, 0.5),
            midpoints: p.midpoints(),
            density: p.density.clone(),
            curve,
        })
    }

    #[getter]
    fn plateau(&self) -> f64 {
        self.plateau
    }

    #[getter]
    fn midpoints(&self) -> Vec<f64> {
        self.midpoints.clone()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.density.clone()
    }

    /// Lyapunov exponent at radius `r` from the radial Thouless formula.
    fn gamma(&self, r: f64) -> f64 {
        self.curve.gamma_at(r)
    }

    /// Predicted inner hole radius at deformation `xi`; `None` without a hole.
    fn hole_radius(&self, xi: f64) -> PyResult<Option<f64>> {
        hole_radius(&self.curve, xi).map(|h| h.radius).map_err(py_err)
    }
}

/// Runs a batch experiment and returns the written table paths.
#[pyfunction]
#[pyo3(signature = (experiment, out_dir, n=None, samples=None, xi=None, seed=None, format="csv", workers=1))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    experiment: &str,
    out_dir: PathBuf,
    n: Option<usize>,
    samples: Option<usize>,
    xi: Option<Vec<f64>>,
    seed: Option<u64>,
    format: &str,
    workers: usize,
) -> PyResult<Vec<PathBuf>> {
    let kind: ExperimentKind = experiment.parse().map_err(py_err)?;
    let mut config = ExperimentConfig::defaults(kind, out_dir);
    config.format = format.parse::<OutputFormat>().map_err(py_err)?;
    if let Some(n) = n {
        config.n = n;
    }
    if let Some(s) = samples {
        config.samples = s;
    }
    if let Some(xi) = xi {
        config.xi = xi;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let report = py.detach(|| run(&config, workers)).map_err(py_err)?;
    Ok(report.tables)
}

#[pymodule]
fn speclab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyRadialProfile>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
