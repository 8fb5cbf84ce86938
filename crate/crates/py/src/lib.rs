//! Python bindings. Matrices cross the boundary as lists of row lists;
//! `None` or NaN marks a missing cell.

use std::path::PathBuf;

use dncb::bessel::sample_bessel;
use dncb::eval::{make_mask, prior_predictive_mse, rescaled_ppd, HeldoutCell};
use dncb::io::{load_checkpoint, load_samples, save_checkpoint, save_samples, SamplesFile};
use dncb::model::{simulate_mf, simulate_td, Schedule};
use dncb::rng::seeded;
use dncb::{
    BesselParams, BoundedMatrix, DncbError, DncbParams, Factors, Hyperparams, InitStrategy, Model, ModelKind,
    SamplerMethod,
};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn err(e: DncbError) -> PyErr {
    match e {
        DncbError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(a: &Array2<f64>) -> Rows {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn to_matrix(rows: Vec<Vec<Option<f64>>>) -> PyResult<BoundedMatrix> {
    let ni = rows.len();
    let nj = rows.first().map_or(0, Vec::len);
    if ni == 0 || nj == 0 || rows.iter().any(|r| r.len() != nj) {
        return Err(PyValueError::new_err("data must be a non-empty rectangular list of rows"));
    }
    let flat: Vec<Option<f64>> = rows.into_iter().flatten().collect();
    let observed = flat.iter().map(|v| v.is_some_and(|x| !x.is_nan())).collect();
    let values = flat.iter().map(|v| v.filter(|x| !x.is_nan()).unwrap_or(0.5)).collect();
    let shape = (ni, nj);
    let observed = Array2::from_shape_vec(shape, observed).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let values = Array2::from_shape_vec(shape, values).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(BoundedMatrix::new(values, observed).map_err(err)?.0)
}

fn factors_dict<'py>(py: Python<'py>, f: &Factors) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match f {
        Factors::Mf(m) => {
            d.set_item("kind", "mf")?;
            d.set_item("theta1", to_rows(&m.theta1))?;
            d.set_item("theta2", to_rows(&m.theta2))?;
            d.set_item("phi", to_rows(&m.phi))?;
        }
        Factors::Td(t) => {
            d.set_item("kind", "td")?;
            d.set_item("theta", to_rows(&t.theta))?;
            d.set_item("phi", to_rows(&t.phi))?;
            d.set_item("pi1", to_rows(&t.pi1))?;
            d.set_item("pi2", to_rows(&t.pi2))?;
        }
    }
    Ok(d)
}

/// Model description. `C` is required for `kind="td"` and ignored for `"mf"`.
/// Gamma prior (shape, rate) pairs: `eta1, eta2` for sample factors,
/// `nu1, nu2` for feature factors, `zeta1, zeta2` for the cores; all default
/// to 1.
#[pyclass(name = "Model", module = "pydncb", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (
        kind, K, eps1, eps2, ncols, C=None,
        eta1=1.0, eta2=1.0, nu1=1.0, nu2=1.0, zeta1=1.0, zeta2=1.0, sampler="auto"
    ))]
    #[allow(non_snake_case, clippy::too_many_arguments)]
    fn new(
        kind: &str,
        K: usize,
        eps1: f64,
        eps2: f64,
        ncols: usize,
        C: Option<usize>,
        eta1: f64,
        eta2: f64,
        nu1: f64,
        nu2: f64,
        zeta1: f64,
        zeta2: f64,
        sampler: &str,
    ) -> PyResult<Self> {
        let h = Hyperparams {
            eta1,
            eta2,
            nu1,
            nu2,
            zeta1,
            zeta2,
        };
        let p = DncbParams::new(eps1, eps2, ncols).map_err(err)?;
        let model = match kind.parse::<ModelKind>().map_err(err)? {
            ModelKind::Mf => Model::mf(K, h, p),
            ModelKind::Td => {
                let c = C.ok_or_else(|| PyValueError::new_err("C is required for td"))?;
                Model::td(c, K, h, p)
            }
        }
        .map_err(err)?;
        let sampler: SamplerMethod = sampler.parse().map_err(err)?;
        Ok(PyModel {
            inner: model.with_sampler(sampler),
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters
    }

    #[getter]
    fn n_factors(&self) -> usize {
        self.inner.n_factors
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!(
            "Model(kind={:?}, C={}, K={}, eps1={}, eps2={})",
            m.kind.to_string(),
            m.n_clusters,
            m.n_factors,
            m.params.eps1,
            m.params.eps2
        )
    }
}

/// Retained posterior draws.
#[pyclass(name = "Samples", module = "pydncb")]
struct PySamples {
    inner: SamplesFile,
}

#[pymethods]
impl PySamples {
    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Iterations at which the draws were taken.
    #[getter]
    fn iterations(&self) -> Vec<u64> {
        self.inner.samples.iterations.clone()
    }

    fn draw<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let f = self
            .inner
            .samples
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err("sample index out of range"))?;
        factors_dict(py, f)
    }

    /// Elementwise posterior mean of the factors.
    fn mean<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let f = self.inner.samples.mean().ok_or_else(|| PyValueError::new_err("no samples"))?;
        factors_dict(py, &f)
    }

    /// Rescaled posterior predictive density of `cells` (a list of `(i, j)`)
    /// under their values in `data`.
    fn rescaled_ppd(&self, py: Python<'_>, data: Vec<Vec<Option<f64>>>, cells: Vec<(usize, usize)>) -> PyResult<f64> {
        let data = to_matrix(data)?;
        let (ni, nj) = data.dim();
        let cells = cells
            .into_iter()
            .map(|(i, j)| {
                if i >= ni || j >= nj || !data.is_observed(i, j) {
                    return Err(PyValueError::new_err(format!("cell ({i}, {j}) is not observed in data")));
                }
                Ok(HeldoutCell {
                    i,
                    j,
                    beta: data.value(i, j),
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let s = &self.inner;
        py.detach(|| rescaled_ppd(&cells, &s.samples, &s.model.params)).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_samples(&path, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySamples {
            inner: load_samples(&path).map_err(err)?,
        })
    }
}

/// One Gibbs chain on a data matrix.
#[pyclass(name = "Chain", module = "pydncb")]
struct PyChain {
    inner: dncb::Chain,
}

#[pymethods]
impl PyChain {
    #[new]
    #[pyo3(signature = (model, data, seed=0, init="prior"))]
    fn new(model: PyModel, data: Vec<Vec<Option<f64>>>, seed: u64, init: &str) -> PyResult<Self> {
        let data = to_matrix(data)?;
        let init: InitStrategy = init.parse().map_err(err)?;
        Ok(PyChain {
            inner: dncb::Chain::new(model.inner, data, init, seed).map_err(err)?,
        })
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }

    #[pyo3(signature = (n=1))]
    fn step(&mut self, py: Python<'_>, n: usize) -> PyResult<()> {
        let c = &mut self.inner;
        py.detach(|| (0..n).try_for_each(|_| c.step())).map_err(err)
    }

    /// Run `iterations` sweeps, keeping every `thin`-th after `burn_in`.
    #[pyo3(signature = (iterations, burn_in, thin=1))]
    fn run(&mut self, py: Python<'_>, iterations: usize, burn_in: usize, thin: usize) -> PyResult<PySamples> {
        let schedule = Schedule::new(iterations, burn_in, thin).map_err(err)?;
        let c = &mut self.inner;
        let samples = py.detach(|| c.run(&schedule)).map_err(err)?;
        Ok(PySamples {
            inner: SamplesFile {
                model: self.inner.model().clone(),
                samples,
            },
        })
    }

    fn factors<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        factors_dict(py, self.inner.factors())
    }

    /// Current draw of every entry; missing cells get their imputed value.
    fn imputed_beta(&self) -> Rows {
        to_rows(&self.inner.imputed_beta())
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner.snapshot()).map_err(err)
    }

    #[staticmethod]
    fn load_checkpoint(path: PathBuf) -> PyResult<Self> {
        let snap = load_checkpoint(&path).map_err(err)?;
        Ok(PyChain {
            inner: dncb::Chain::from_snapshot(snap).map_err(err)?,
        })
    }
}

/// Draw `(data, truth)` from the model prior; `truth` is a factor dict.
#[pyfunction]
#[pyo3(signature = (model, rows, seed=0))]
fn simulate<'py>(py: Python<'py>, model: &PyModel, rows: usize, seed: u64) -> PyResult<(Rows, Bound<'py, PyDict>)> {
    let m = &model.inner;
    let nj = m.params.col_rates.len();
    let mut rng = seeded(seed);
    let sim = match m.kind {
        ModelKind::Mf => simulate_mf(&m.hyper, &m.params, (rows, m.n_factors, nj), &mut rng),
        ModelKind::Td => simulate_td(&m.hyper, &m.params, (rows, m.n_clusters, m.n_factors, nj), &mut rng),
    }
    .map_err(err)?;
    Ok((to_rows(sim.data.values()), factors_dict(py, &sim.factors)?))
}

/// Held-out cells `(i, j)`, exactly `round(fraction * rows * cols)` of them.
#[pyfunction]
fn heldout_cells(rows: usize, cols: usize, fraction: f64, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    let m = make_mask((rows, cols), fraction, seed).map_err(err)?;
    Ok(m.mask.indexed_iter().filter(|(_, &h)| h).map(|(ij, _)| ij).collect())
}

/// Copy of `data` with `cells` set to `None`.
#[pyfunction]
fn hide(mut data: Vec<Vec<Option<f64>>>, cells: Vec<(usize, usize)>) -> PyResult<Vec<Vec<Option<f64>>>> {
    for (i, j) in cells {
        let cell = data
            .get_mut(i)
            .and_then(|r| r.get_mut(j))
            .ok_or_else(|| PyValueError::new_err(format!("cell ({i}, {j}) out of range")))?;
        *cell = None;
    }
    Ok(data)
}

/// Mean and standard deviation of the MSE between `data` and prior draws.
#[pyfunction]
#[pyo3(signature = (model, data, n_reps=1000, seed=0))]
fn prior_predictive_check(
    py: Python<'_>,
    model: &PyModel,
    data: Vec<Vec<Option<f64>>>,
    n_reps: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let data = to_matrix(data)?;
    let m = &model.inner;
    py.detach(|| prior_predictive_mse(&data, m, n_reps, &mut seeded(seed))).map_err(err)
}

#[pyfunction]
fn dncb_log_pdf(beta: f64, eps1: f64, eps2: f64, lam1: f64, lam2: f64) -> PyResult<f64> {
    dncb::special::dncb_log_pdf(beta, eps1, eps2, lam1, lam2).map_err(err)
}

#[pyfunction]
fn log_bessel_i(v: f64, a: f64) -> PyResult<f64> {
    dncb::special::log_bessel_i(v, a).map_err(err)
}

/// `n` draws from the Bessel distribution `Bes(v, a)`.
#[pyfunction]
#[pyo3(signature = (v, a, n, seed=0, method="auto"))]
fn bessel_samples(v: f64, a: f64, n: usize, seed: u64, method: &str) -> PyResult<Vec<u64>> {
    let p = BesselParams::new(v, a).map_err(err)?;
    let method: SamplerMethod = method.parse().map_err(err)?;
    let mut rng = seeded(seed);
    (0..n).map(|_| sample_bessel(&p, method, &mut rng).map_err(err)).collect()
}

#[pyfunction]
#[pyo3(signature = (d, u, s0=0.1))]
fn biseq_to_beta(d: u64, u: u64, s0: f64) -> PyResult<f64> {
    dncb::io::biseq_to_beta(dncb::io::ReadCountPair { d, u, s0 }).map_err(err)
}

#[pymodule]
fn pydncb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PySamples>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(heldout_cells, m)?)?;
    m.add_function(wrap_pyfunction!(hide, m)?)?;
    m.add_function(wrap_pyfunction!(prior_predictive_check, m)?)?;
    m.add_function(wrap_pyfunction!(dncb_log_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(log_bessel_i, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_samples, m)?)?;
    m.add_function(wrap_pyfunction!(biseq_to_beta, m)?)?;
    Ok(())
}
