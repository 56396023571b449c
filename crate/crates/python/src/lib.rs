//! Python bindings: a `System` class plus simulation, sweep, bound and probe
//! functions. Structured results cross the boundary as JSON-decoded dicts.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use riemavg::closeness::distance_series;
use riemavg::flow::default_step;
use riemavg::{
    average_field, epsilon_sweep, stability_probe, verify_theorem3, ChartPoint, Error, GeodesicSolverConfig,
    ProbeConfig, SampleConfig, SweepConfig, SystemBundle,
};
use serde::Serialize;

create_exception!(riemavg_py, RiemavgError, PyException);

fn to_py(e: Error) -> PyErr {
    RiemavgError::new_err(e.to_string())
}

fn json_value<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| RiemavgError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// A manifold with a periodic nominal field.
#[pyclass(frozen)]
struct System {
    inner: SystemBundle,
}

impl System {
    fn point(&self, coords: &[f64]) -> PyResult<ChartPoint> {
        self.inner.manifold.point(coords).map_err(to_py)
    }
}

#[pymethods]
impl System {
    /// One of `so3`, `torus`, `scalar`, `linear2`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        SystemBundle::builtin(name).map(|inner| System { inner }).map_err(to_py)
    }

    /// Parses the text definition format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        SystemBundle::parse(text).map(|inner| System { inner }).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.manifold.dim
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.manifold.principal_coords(&self.inner.x0)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// Nominal field (before the epsilon factor) at principal coordinates `x`.
    fn nominal(&self, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.nominal.components(&self.point(&x)?, t))
    }

    /// Time average of the nominal field at `x`.
    #[pyo3(signature = (x, nodes = riemavg::DEFAULT_NODES))]
    fn averaged(&self, x: Vec<f64>, nodes: usize) -> PyResult<Vec<f64>> {
        let avg = average_field(&self.inner.nominal, self.inner.period, nodes).map_err(to_py)?;
        Ok(avg.eval(&self.point(&x)?))
    }

    /// Riemannian distance between two points.
    fn distance(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        let (p, q) = (self.point(&x)?, self.point(&y)?);
        riemavg::distance(&self.inner.manifold, &p, &q, &GeodesicSolverConfig::default()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("System(name={:?}, dim={})", self.inner.name, self.inner.manifold.dim)
    }
}

/// Distance between the nominal and averaged flows at `samples` uniform
/// times on `[t0, t0 + horizon]`, as a list of `(t, d)`.
#[pyfunction]
#[pyo3(signature = (system, epsilon, horizon, samples = 400, step = None))]
fn simulate(py: Python<'_>, system: &System, epsilon: f64, horizon: f64, samples: usize, step: Option<f64>) -> PyResult<Vec<(f64, f64)>> {
    let b = &system.inner;
    if samples < 2 || !(horizon > 0.0) {
        return Err(RiemavgError::new_err("need a positive horizon and at least two samples"));
    }
    let step = step.unwrap_or_else(|| default_step(Some(b.period)));
    let times: Vec<f64> = (0..samples)
        .map(|k| b.t0 + horizon * k as f64 / (samples - 1) as f64)
        .collect();
    py.detach(|| {
        let fhat = average_field(&b.nominal, b.period, riemavg::DEFAULT_NODES)?.as_field().scaled(epsilon);
        let cfg = SampleConfig {
            step,
            n_samples: samples,
            ..SampleConfig::default()
        };
        distance_series(&b.manifold, &b.nominal.scaled(epsilon), &fhat, &b.x0, &times, &cfg)
    })
    .map_err(to_py)
}

/// Sup-distance sweep over `epsilons` with horizon `c / eps`.
#[pyfunction]
#[pyo3(signature = (system, epsilons, horizon_constant = 10.0, samples = 400))]
fn sweep<'py>(py: Python<'py>, system: &System, mut epsilons: Vec<f64>, horizon_constant: f64, samples: usize) -> PyResult<Bound<'py, PyAny>> {
    let b = &system.inner;
    epsilons.sort_by(|x, y| y.total_cmp(x));
    let mut cfg = SweepConfig::new(epsilons, horizon_constant, b.x0.clone());
    cfg.t0 = b.t0;
    cfg.sampling.n_samples = samples;
    let report = py
        .detach(|| epsilon_sweep(&b.manifold, &b.name, &b.nominal, b.period, &cfg))
        .map_err(to_py)?;
    json_value(py, &report)
}

/// Gronwall-type bound check at `epsilon` over `[t0, t0 + horizon]`.
#[pyfunction]
#[pyo3(signature = (system, epsilon, horizon, samples = 200))]
fn bound<'py>(py: Python<'py>, system: &System, epsilon: f64, horizon: f64, samples: usize) -> PyResult<Bound<'py, PyAny>> {
    let b = &system.inner;
    let cfg = SampleConfig {
        n_samples: samples,
        ..SampleConfig::default()
    };
    let report = py
        .detach(|| {
            let fhat = average_field(&b.nominal, b.period, riemavg::DEFAULT_NODES)?.as_field().scaled(epsilon);
            verify_theorem3(&b.manifold, &b.nominal.scaled(epsilon), &fhat, &b.x0, b.t0, b.t0 + horizon, &cfg)
        })
        .map_err(to_py)?;
    json_value(py, &report)
}

/// Stability class of the averaged field around `center` (default: the
/// system's equilibrium).
#[pyfunction]
#[pyo3(signature = (system, center = None))]
fn probe<'py>(py: Python<'py>, system: &System, center: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let b = &system.inner;
    let center = match (center, &b.equilibrium) {
        (Some(c), _) => system.point(&c)?,
        (None, Some(e)) => e.clone(),
        (None, None) => return Err(RiemavgError::new_err("system has no equilibrium; pass center")),
    };
    let class = py
        .detach(|| {
            let fhat = average_field(&b.nominal, b.period, riemavg::DEFAULT_NODES)?.as_field();
            stability_probe(&b.manifold, &fhat, &center, &ProbeConfig::default())
        })
        .map_err(to_py)?;
    json_value(py, &class)
}

#[pymodule]
fn riemavg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<System>()?;
    m.add("RiemavgError", m.py().get_type::<RiemavgError>())?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add("BUILTINS", riemavg::systems::BUILTIN_NAMES.to_vec())?;
    Ok(())
}
