//! Python bindings: rating matrices, the MMMF model and trainer, the
//! self-training loop, evaluation and the file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use stmmmf::{checkpoint, eval, ingest, kernel, selftrain, trainer, Error, FactorModel, Hyperparams, SelfTrainConfig, SparseRatingMatrix};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ Error::IndexOutOfRange { .. } => PyIndexError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Round-trips through JSON so reports arrive as plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Sparse `n_users x n_items` matrix of ratings on `1..=max_rating`.
#[pyclass(name = "RatingMatrix", module = "stmmmf", from_py_object)]
#[derive(Clone)]
pub struct PyMatrix(SparseRatingMatrix);

#[pymethods]
impl PyMatrix {
    #[new]
    #[pyo3(signature = (n_users, n_items, max_rating, ratings = Vec::new()))]
    fn new(n_users: usize, n_items: usize, max_rating: u8, ratings: Vec<(usize, usize, u8)>) -> PyResult<Self> {
        ingest::matrix_from_triples(n_users, n_items, max_rating, &ratings).map(Self).map_err(py_err)
    }

    /// Reads an STMAT file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        ingest::load_matrix(BufReader::new(f)).map(Self).map_err(py_err)
    }

    /// Parses a MovieLens file (`flavor` is `"ml100k"` or `"ml1m"`) and
    /// drops users with fewer than `min_ratings` ratings.
    #[staticmethod]
    #[pyo3(signature = (path, flavor = "ml100k", min_ratings = 20))]
    fn from_movielens(path: &str, flavor: &str, min_ratings: usize) -> PyResult<Self> {
        let f = BufReader::new(File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?);
        let raw = match flavor {
            "ml100k" => ingest::parse_ml100k(f),
            "ml1m" => ingest::parse_ml1m(f),
            other => return Err(PyValueError::new_err(format!("unknown flavor {other:?}"))),
        }
        .map_err(py_err)?;
        Ok(Self(ingest::preprocess(&raw, min_ratings).map_err(py_err)?.matrix))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let mut w = BufWriter::new(f);
        ingest::save_matrix(&mut w, &self.0).map_err(py_err)?;
        w.flush().map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.0.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.0.n_items()
    }

    #[getter]
    fn max_rating(&self) -> u8 {
        self.0.max_rating()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, cell: (usize, usize)) -> bool {
        self.0.contains(cell.0, cell.1)
    }

    fn __repr__(&self) -> String {
        format!(
            "RatingMatrix({}x{}, R={}, {} observed)",
            self.0.n_users(),
            self.0.n_items(),
            self.0.max_rating(),
            self.0.len()
        )
    }

    fn get(&self, user: usize, item: usize) -> Option<u8> {
        self.0.get(user, item)
    }

    fn insert(&mut self, user: usize, item: usize, value: u8) -> PyResult<()> {
        self.0.insert(user, item, value).map_err(py_err)
    }

    fn remove(&mut self, user: usize, item: usize) -> PyResult<u8> {
        self.0.remove(user, item).map_err(py_err)
    }

    /// Observed cells as `(user, item, rating)`, sorted by cell.
    fn triples(&self) -> Vec<(usize, usize, u8)> {
        self.0.iter().map(|r| (r.user, r.item, r.value)).collect()
    }

    /// Counts per rating level, index `r - 1`.
    fn label_counts(&self) -> Vec<usize> {
        self.0.label_counts()
    }

    fn sparsity(&self) -> f64 {
        self.0.sparsity()
    }

    fn n_unobserved(&self) -> usize {
        self.0.n_unobserved()
    }

    fn is_disjoint(&self, other: &PyMatrix) -> bool {
        self.0.is_disjoint(&other.0)
    }

    fn fingerprint(&self) -> u64 {
        self.0.fingerprint()
    }

    /// Seeded random split into `(train, test)`.
    #[pyo3(signature = (train_frac = 0.8, seed = 0))]
    fn split(&self, train_frac: f64, seed: u64) -> PyResult<(PyMatrix, PyMatrix)> {
        let (a, b) = eval::split(&self.0, train_frac, seed).map_err(py_err)?;
        Ok((Self(a), Self(b)))
    }
}

/// Factor model: user factors `U`, item factors `V` and per-user thresholds.
#[pyclass(name = "Model", module = "stmmmf", from_py_object)]
#[derive(Clone)]
pub struct PyModel(FactorModel);

#[pymethods]
impl PyModel {
    /// Builds a model from nested lists; thresholds are `n_users x (R-1)`.
    #[new]
    fn new(users: Vec<Vec<f64>>, items: Vec<Vec<f64>>, thresholds: Vec<Vec<f64>>) -> PyResult<Self> {
        fn arr(rows: Vec<Vec<f64>>, what: &str) -> PyResult<ndarray::Array2<f64>> {
            let n = rows.len();
            let m = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != m) {
                return Err(PyValueError::new_err(format!("{what}: ragged rows")));
            }
            ndarray::Array2::from_shape_vec((n, m), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
        }
        FactorModel::new(arr(users, "users")?, arr(items, "items")?, arr(thresholds, "thresholds")?)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        checkpoint::load_checkpoint(BufReader::new(f)).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let mut w = BufWriter::new(f);
        checkpoint::save_checkpoint(&mut w, &self.0).map_err(py_err)?;
        w.flush().map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.0.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.0.n_items()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn max_rating(&self) -> u8 {
        self.0.max_rating()
    }

    fn user_factors(&self) -> Vec<Vec<f64>> {
        rows(self.0.user_factors())
    }

    fn item_factors(&self) -> Vec<Vec<f64>> {
        rows(self.0.item_factors())
    }

    fn thresholds(&self) -> Vec<Vec<f64>> {
        rows(self.0.thresholds())
    }

    fn predict_score(&self, user: usize, item: usize) -> PyResult<f64> {
        self.0.predict_score(user, item).map_err(py_err)
    }

    fn predict_rating(&self, user: usize, item: usize) -> PyResult<u8> {
        self.0.predict_score(user, item).map_err(py_err)?;
        Ok(self.0.predict_rating(user, item))
    }

    /// Rating level of score `x` under `user`'s thresholds.
    fn discretize(&self, user: usize, x: f64) -> PyResult<u8> {
        if user >= self.0.n_users() {
            return Err(PyIndexError::new_err(format!("user {user} out of range")));
        }
        Ok(self.0.discretize(user, x))
    }

    /// Observed cells of `y` kept, every other cell filled with the predicted
    /// rating.
    fn complete(&self, y: &PyMatrix) -> PyResult<Vec<Vec<u8>>> {
        let full = trainer::complete_matrix(&self.0, &y.0).map_err(py_err)?;
        Ok(full.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// MAE, RMSE and confusion counts on `target`; `None` when it is empty.
    #[pyo3(signature = (target, train = None))]
    fn evaluate(&self, py: Python<'_>, target: &PyMatrix, train: Option<&PyMatrix>) -> PyResult<Option<Py<PyAny>>> {
        let train = train.map_or(&target.0, |t| &t.0);
        let Some((m, cm)) = eval::evaluate(&self.0, train, &target.0).map_err(py_err)? else {
            return Ok(None);
        };
        let r = cm.max_rating();
        let counts: Vec<Vec<u64>> = (1..=r).map(|a| cm.row(a).to_vec()).collect();
        let hr: Vec<Vec<Option<f64>>> = (1..=r).map(|a| cm.hr_row(a)).collect();
        let d = pyo3::types::PyDict::new(py);
        d.set_item("n", cm.total())?;
        d.set_item("mae", m.mae)?;
        d.set_item("rmse", m.rmse)?;
        d.set_item("confusion", counts)?;
        d.set_item("hit_rates", hr)?;
        Ok(Some(d.into_any().unbind()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}x{}, d={}, R={})",
            self.0.n_users(),
            self.0.n_items(),
            self.0.dim(),
            self.0.max_rating()
        )
    }
}

/// Fits an MMMF model; returns `(model, trace)` where `trace` is a dict.
#[pyfunction]
#[pyo3(signature = (y, dim = 10, lam = 1.0, learning_rate = 0.01, max_steps = 300, tol = 1e-6, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    y: &PyMatrix,
    dim: usize,
    lam: f64,
    learning_rate: f64,
    max_steps: usize,
    tol: f64,
    seed: u64,
) -> PyResult<(PyModel, Py<PyAny>)> {
    let hp = Hyperparams {
        lambda: lam,
        learning_rate,
        max_steps,
        tol,
        seed,
        ..Hyperparams::default()
    };
    let y = &y.0;
    let (model, trace) = py.detach(|| trainer::train(y, &hp, dim)).map_err(py_err)?;
    Ok((PyModel(model), to_py(py, &trace)?))
}

/// Regularized all-threshold objective of `model` on `y`.
#[pyfunction]
fn objective(model: &PyModel, y: &PyMatrix, lam: f64) -> PyResult<f64> {
    trainer::objective(&model.0, &y.0, lam).map_err(py_err)
}

/// Runs the self-training loop. τ values are fractions of the threshold gap.
/// Returns `{"model", "matrix", "reports", "stop"}`.
#[pyfunction]
#[pyo3(signature = (
    train, test, dim = 10, lam = None, learning_rate = 0.01, max_steps = 300, tol = 1e-6,
    tau1 = 0.4999, tau2 = 0.10, sample_pct = 100.0, cap = 5000, max_iters = 50,
    patience = Some(5), seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn selftrain_loop(
    py: Python<'_>,
    train: &PyMatrix,
    test: &PyMatrix,
    dim: usize,
    lam: Option<f64>,
    learning_rate: f64,
    max_steps: usize,
    tol: f64,
    tau1: f64,
    tau2: f64,
    sample_pct: f64,
    cap: usize,
    max_iters: usize,
    patience: Option<usize>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let defaults = SelfTrainConfig::default();
    let cfg = SelfTrainConfig {
        dim,
        lambda: lam.unwrap_or(defaults.lambda),
        learning_rate,
        max_steps,
        tol,
        seed,
        tau1,
        tau2,
        sample_pct,
        cap,
        max_iters,
        patience,
        ..defaults
    };
    let (y0, t) = (&train.0, &test.0);
    let out = py.detach(|| selftrain::selftrain_loop(y0, &cfg, t)).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("model", out.model.map(PyModel))?;
    d.set_item("matrix", PyMatrix(out.matrix))?;
    d.set_item("reports", to_py(py, &out.reports)?)?;
    d.set_item("stop", to_py(py, &out.stop)?)?;
    Ok(d.into_any().unbind())
}

/// Splits `total` across rating levels in proportion to `1 - share`.
#[pyfunction]
fn skew_allocation(shares: Vec<f64>, total: usize) -> PyResult<Vec<usize>> {
    selftrain::skew_allocation(&shares, total).map_err(py_err)
}

#[pyfunction]
fn smooth_hinge(z: f64) -> f64 {
    kernel::smooth_hinge(z)
}

#[pyfunction]
fn smooth_hinge_grad(z: f64) -> f64 {
    kernel::smooth_hinge_grad(z)
}

#[pyfunction]
fn mae(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    eval::mae(&pairs).map_err(py_err)
}

#[pyfunction]
fn rmse(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    eval::rmse(&pairs).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "stmmmf")]
fn stmmmf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(selftrain_loop, m)?)?;
    m.add_function(wrap_pyfunction!(skew_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_hinge, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_hinge_grad, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    Ok(())
}
