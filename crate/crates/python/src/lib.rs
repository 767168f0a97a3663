//! Python bindings: graphs, networks, fitting, generators and the studies.
//!
//! Point sets are sequences of rows; configurations are dicts or JSON
//! strings with the same fields as the TOML files the CLI reads.

use std::path::PathBuf;

use mfnet_core::data_io::{self, Family, FamilySpec};
use mfnet_core::experiments::{self, Records};
use mfnet_core::objective::Objective;
use mfnet_core::optimize::gradient_check;
use mfnet_core::{fit_auto, FitConfig, GraphSpec, InitScheme, MfNet, NodeData, NodeId, ParamVector};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString, PyTuple};
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(mfnets, MfnetError, PyValueError);

fn err(e: mfnet_core::Error) -> PyErr {
    MfnetError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MfnetError::new_err("rows differ in length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A dict goes through `json.dumps`; a string is taken as JSON.
fn config<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else { return Ok(T::default()) };
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| MfnetError::new_err(format!("config: {e}")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MfnetError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Graph", module = "mfnets", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGraph {
    spec: GraphSpec,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyGraph { spec: GraphSpec::from_toml(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| MfnetError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn to_toml(&self) -> String {
        self.spec.to_toml()
    }

    #[getter]
    fn target(&self) -> NodeId {
        self.spec.target
    }

    #[getter]
    fn nodes(&self) -> Vec<NodeId> {
        self.spec.nodes.iter().map(|n| n.id).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.spec.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={:?}, edges={:?}, target={})", self.nodes(), self.edges(), self.spec.target)
    }
}

#[pyclass(name = "Params", module = "mfnets", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyParams {
    inner: ParamVector,
}

#[pymethods]
impl PyParams {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyParams { inner: ParamVector::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.iter().copied().collect()
    }

    fn node(&self, id: NodeId) -> PyResult<Vec<f64>> {
        self.inner.node(id).map(<[f64]>::to_vec).ok_or_else(|| MfnetError::new_err(format!("no node {id}")))
    }

    fn edge(&self, from: NodeId, to: NodeId) -> PyResult<Vec<f64>> {
        self.inner.edge(from, to).map(<[f64]>::to_vec).ok_or_else(|| MfnetError::new_err(format!("no edge {from} -> {to}")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Dataset", module = "mfnets", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: NodeData,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (node, x, y, sigma = 1.0))]
    fn new(node: NodeId, x: Vec<Vec<f64>>, y: Vec<f64>, sigma: f64) -> PyResult<Self> {
        let inner = NodeData::new(node, matrix(&x)?, DVector::from_vec(y), sigma).map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, node, sigma = 1.0))]
    fn load(path: PathBuf, node: NodeId, sigma: f64) -> PyResult<Self> {
        Ok(PyDataset { inner: data_io::load_dataset(&path, node, sigma).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data_io::save_dataset(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn node(&self) -> NodeId {
        self.inner.node
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.x)
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.iter().copied().collect()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn datasets(data: &[PyRef<'_, PyDataset>]) -> Vec<NodeData> {
    data.iter().map(|d| d.inner.clone()).collect()
}

#[pyclass(name = "Network", module = "mfnets", frozen)]
pub struct PyNetwork {
    net: MfNet,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(graph: &PyGraph) -> PyResult<Self> {
        Ok(PyNetwork { net: MfNet::new(graph.spec.clone()).map_err(err)? })
    }

    #[getter]
    fn graph(&self) -> PyGraph {
        PyGraph { spec: self.net.spec().clone() }
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn topo_order(&self) -> Vec<NodeId> {
        self.net.index().topo_order()
    }

    /// `scheme` is `zeros`, `gaussian` or `edge_one`.
    #[pyo3(signature = (scheme = "zeros", seed = 0, scale = 1.0))]
    fn init_params(&self, scheme: &str, seed: u64, scale: f64) -> PyResult<PyParams> {
        let scheme = match scheme {
            "zeros" => InitScheme::Zeros,
            "gaussian" => InitScheme::Gaussian { scale },
            "edge_one" => InitScheme::ConstantEdgeOne,
            other => return Err(MfnetError::new_err(format!("unknown scheme {other}; expected zeros, gaussian or edge_one"))),
        };
        Ok(PyParams { inner: self.net.init_params(scheme, seed) })
    }

    fn params(&self, values: Vec<f64>) -> PyResult<PyParams> {
        Ok(PyParams { inner: self.net.params_from(DVector::from_vec(values)).map_err(err)? })
    }

    fn evaluate(&self, params: &PyParams, node: NodeId, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let y = self.net.evaluate(&params.inner, node, &matrix(&points)?).map_err(err)?;
        Ok(y.iter().copied().collect())
    }

    /// Monomial coefficients of a node's surrogate keyed by exponent tuple.
    fn expand<'py>(&self, py: Python<'py>, params: &PyParams, node: NodeId) -> PyResult<Bound<'py, PyDict>> {
        let poly = self.net.expand_to_polynomial(&params.inner, node).map_err(err)?;
        let out = PyDict::new(py);
        for (alpha, c) in poly.terms() {
            out.set_item(PyTuple::new(py, alpha)?, *c)?;
        }
        Ok(out)
    }

    /// Negative log-likelihood and its gradient.
    fn nll_and_grad(&self, params: &PyParams, data: Vec<PyRef<'_, PyDataset>>) -> PyResult<(f64, Vec<f64>)> {
        self.net.check_layout(&params.inner).map_err(err)?;
        let data = datasets(&data);
        let objective = Objective::new(&self.net, &data).map_err(err)?;
        let (f, g) = objective.value_and_grad(&params.inner.values);
        Ok((f, g.iter().copied().collect()))
    }

    /// Worst relative gap between sweep gradients and central differences,
    /// with the coordinate where it occurs.
    #[pyo3(signature = (params, data, fd_step = 1e-6))]
    fn gradient_check(&self, params: &PyParams, data: Vec<PyRef<'_, PyDataset>>, fd_step: f64) -> PyResult<(f64, usize)> {
        let c = gradient_check(&self.net, &params.inner, &datasets(&data), fd_step).map_err(err)?;
        Ok((c.max_discrepancy, c.coordinate))
    }
}

#[pyclass(name = "FitResult", module = "mfnets", frozen, get_all)]
pub struct PyFitResult {
    params: PyParams,
    objective: f64,
    converged: bool,
    reason: String,
    iterations: usize,
    grad_norm: f64,
    trace: Vec<f64>,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!("FitResult(reason={}, iterations={}, objective={:e})", self.reason, self.iterations, self.objective)
    }
}

/// Fit `network` to `data`; `config` takes the fields of a `[fit]` table.
#[pyfunction]
#[pyo3(signature = (network, data, config = None))]
fn fit(py: Python<'_>, network: &PyNetwork, data: Vec<PyRef<'_, PyDataset>>, config: Option<&Bound<'_, PyAny>>) -> PyResult<PyFitResult> {
    let cfg: FitConfig = self::config(config)?;
    let data = datasets(&data);
    let net = &network.net;
    let r = py.detach(|| fit_auto(net, &data, &cfg)).map_err(err)?;
    Ok(PyFitResult {
        objective: r.objective(),
        converged: r.converged,
        reason: format!("{:?}", r.reason),
        iterations: r.iterations,
        grad_norm: r.grad_norm_final,
        trace: r.objective_trace,
        params: PyParams { inner: r.params },
    })
}

#[pyclass(name = "Problem", module = "mfnets", frozen, get_all)]
pub struct PyProblem {
    graph: PyGraph,
    truth: Option<PyParams>,
    data: Vec<PyDataset>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<f64>,
}

/// Synthetic problem: `three_model`, `analytical_noise`, `peer_truth` or
/// `chain_truth`.
#[pyfunction]
#[pyo3(signature = (family, counts = None, seed = 0, nested = true, dim = 1, node_degree = 1, edge_degree = 1, noise = 0.0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    family: &str,
    counts: Option<Vec<usize>>,
    seed: u64,
    nested: bool,
    dim: usize,
    node_degree: usize,
    edge_degree: usize,
    noise: f64,
) -> PyResult<PyProblem> {
    let peer = |family| FamilySpec {
        family,
        dim,
        node_degree,
        edge_degree,
        counts: counts.clone().unwrap_or_else(|| vec![20, 5, 2]),
        noise,
        seed,
    };
    let p = match family {
        "three_model" => data_io::generate_three_model(&counts.clone().unwrap_or_else(|| vec![2, 3, 3]), nested, seed),
        "analytical_noise" => data_io::generate_analytical_noise(&counts.clone().unwrap_or_else(|| vec![20; 9]), None, seed),
        "peer_truth" => data_io::generate_family(&peer(Family::PeerTruth)),
        "chain_truth" => data_io::generate_family(&peer(Family::ChainTruth)),
        other => {
            return Err(MfnetError::new_err(format!(
                "unknown family {other}; expected three_model, analytical_noise, peer_truth or chain_truth"
            )))
        }
    }
    .map_err(err)?;
    Ok(PyProblem {
        graph: PyGraph { spec: p.graph },
        truth: p.truth.map(|inner| PyParams { inner }),
        data: p.datasets.into_iter().map(|inner| PyDataset { inner }).collect(),
        test_x: rows(&p.test_x),
        test_y: p.test_y.iter().copied().collect(),
    })
}

fn study<'py, C, R, S>(
    py: Python<'py>,
    name: &str,
    config: Option<&Bound<'_, PyAny>>,
    output: Option<PathBuf>,
    run: fn(&C) -> mfnet_core::Result<R>,
    summary: fn(&R) -> &S,
) -> PyResult<Bound<'py, PyAny>>
where
    C: DeserializeOwned + Default + Serialize + Sync,
    R: Records + Send,
    S: Serialize,
{
    let cfg: C = self::config(config)?;
    let report = py.detach(|| run(&cfg)).map_err(err)?;
    if let Some(dir) = output {
        std::fs::create_dir_all(&dir).map_err(|e| MfnetError::new_err(format!("{}: {e}", dir.display())))?;
        report.write_csv(&dir).map_err(err)?;
        experiments::write_manifest(&dir, name, &cfg).map_err(err)?;
    }
    to_py(py, summary(&report))
}

/// Run a study (`three_model`, `noise`, `topology` or `sparsity`) and return
/// its summary; with `output`, also write its tables there.
#[pyfunction]
#[pyo3(signature = (name, config = None, output = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    name: &str,
    config: Option<&Bound<'_, PyAny>>,
    output: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    match name {
        "three_model" => study(py, name, config, output, experiments::run_three_model, |r| &r.summary),
        "noise" => study(py, name, config, output, experiments::run_noise_orderings, |r| &r.summary),
        "topology" => study(py, name, config, output, experiments::run_topology, |r| &r.summary),
        "sparsity" => study(py, name, config, output, experiments::run_sparsity, |r| &r.rows),
        other => Err(MfnetError::new_err(format!("unknown study {other}; expected three_model, noise, topology or sparsity"))),
    }
}

#[pymodule]
#[pyo3(name = "mfnets")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MfnetError", m.py().get_type::<MfnetError>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
