//! Python bindings: model construction, forward passes, synthetic data,
//! metrics, and gradient checking, all over flat f64 buffers plus shapes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use detectornet::data::synthesize_dataset;
use detectornet::graph::DetectorGraph;
use detectornet::layers::Mode;
use detectornet::metrics::evaluate_metrics;
use detectornet::model::{expected_param_count, DetectorNet, ModelConfig as CoreConfig};
use detectornet::train::gradient_check_model;
use detectornet::Tensor;

fn err(e: detectornet::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Model hyperparameters. Every field is readable and writable; pass the
/// finished config to `Model`.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = CoreConfig::default();
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                let key: String = key.extract()?;
                match key.as_str() {
                    "n_nodes" => inner.n_nodes = value.extract()?,
                    "input_len" => inner.input_len = value.extract()?,
                    "output_len" => inner.output_len = value.extract()?,
                    "input_width" => inner.input_width = value.extract()?,
                    "hidden_width" => inner.hidden_width = value.extract()?,
                    "n_layers" => inner.n_layers = value.extract()?,
                    "diffusion_steps" => inner.diffusion_steps = value.extract()?,
                    "embed_dim" => inner.embed_dim = value.extract()?,
                    "dropout" => inner.dropout = value.extract()?,
                    "learnable_fusion" => inner.learnable_fusion = value.extract()?,
                    "without_mta" => inner.without_mta = value.extract()?,
                    "without_gta" => inner.without_gta = value.extract()?,
                    "without_da" => inner.without_da = value.extract()?,
                    "without_sa" => inner.without_sa = value.extract()?,
                    "predictor_mid_width" => inner.predictor_mid_width = value.extract()?,
                    "output_width" => inner.output_width = value.extract()?,
                    "ffn_factor" => inner.ffn_factor = value.extract()?,
                    "seed" => inner.seed = value.extract()?,
                    other => {
                        return Err(PyValueError::new_err(format!(
                            "unknown config field '{other}'"
                        )))
                    }
                }
            }
        }
        inner.validate().map_err(err)?;
        Ok(PyModelConfig { inner })
    }

    /// Total trainable scalar count implied by this config.
    fn param_count(&self) -> usize {
        expected_param_count(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.inner.input_len
    }

    #[getter]
    fn output_len(&self) -> usize {
        self.inner.output_len
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width
    }

    #[getter]
    fn hidden_width(&self) -> usize {
        self.inner.hidden_width
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// A model bound to a fixed detector graph.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    model: DetectorNet,
    graph: DetectorGraph,
}

#[pymethods]
impl PyModel {
    /// Build a freshly initialized model over an N x N adjacency given in
    /// row-major order.
    #[new]
    fn new(config: PyModelConfig, adjacency: Vec<f64>) -> PyResult<Self> {
        let n = config.inner.n_nodes;
        if adjacency.len() != n * n {
            return Err(PyValueError::new_err(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        let graph = DetectorGraph::new(n, adjacency).map_err(err)?;
        let model = DetectorNet::new(config.inner).map_err(err)?;
        Ok(PyModel { model, graph })
    }

    /// Run a forward pass. `shape` is either [N, P, D] or [B, N, P, D];
    /// returns (flat output, output shape).
    #[pyo3(signature = (data, shape, training = false))]
    fn forward(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        training: bool,
    ) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let x = Tensor::from_vec(&shape, data).map_err(err)?;
        let mode = if training { Mode::Train } else { Mode::Eval };
        let y = self.model.forward(&x, &self.graph, mode).map_err(err)?;
        Ok((y.to_vec(), y.shape()))
    }

    fn param_count(&self) -> usize {
        self.model.params().total_elements()
    }

    fn param_names(&self) -> Vec<String> {
        self.model
            .params()
            .iter()
            .map(|(name, _)| name.to_string())
            .collect()
    }

    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.model.config().clone(),
        }
    }
}

/// Generate the synthetic ring-graph dataset. Returns a dict with the flat
/// row-major value grid (`n_steps` x `n_nodes`) and the flat adjacency.
#[pyfunction]
#[pyo3(signature = (n_nodes, n_steps, seed = 42))]
fn synthesize(
    py: Python<'_>,
    n_nodes: usize,
    n_steps: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let (series, adjacency) = synthesize_dataset(n_nodes, n_steps, seed).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("n_nodes", series.n_nodes())?;
    out.set_item("n_steps", series.n_steps)?;
    out.set_item("values", series.values.clone())?;
    out.set_item("adjacency", adjacency)?;
    out.set_item("node_ids", series.node_ids.clone())?;
    Ok(out.into())
}

/// Masked MAE / RMSE / MAPE per horizon plus the aggregate, as a list of
/// dicts; `horizon` is None on the aggregate row.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    predictions: Vec<f64>,
    truth: Vec<f64>,
    mask: Vec<f64>,
    output_len: usize,
) -> PyResult<Vec<Py<PyDict>>> {
    let report = evaluate_metrics(&predictions, &truth, &mask, output_len).map_err(err)?;
    let mut rows = Vec::new();
    for slice in report.per_horizon.iter().chain([&report.aggregate]) {
        let row = PyDict::new(py);
        row.set_item("horizon", slice.horizon)?;
        row.set_item("mae", slice.mae)?;
        row.set_item("rmse", slice.rmse)?;
        row.set_item("mape", slice.mape)?;
        row.set_item("count", slice.count)?;
        rows.push(row.into());
    }
    Ok(rows)
}

/// Finite-difference gradient check on a small model; returns
/// (max relative error, parameters checked).
#[pyfunction]
#[pyo3(signature = (config = None, seed = 17))]
fn gradient_check(config: Option<PyModelConfig>, seed: u64) -> PyResult<(f64, usize)> {
    let cfg = match config {
        Some(c) => c.inner,
        None => CoreConfig {
            n_nodes: 3,
            input_len: 3,
            output_len: 3,
            hidden_width: 4,
            n_layers: 1,
            diffusion_steps: 2,
            embed_dim: 3,
            predictor_mid_width: 4,
            seed,
            ..CoreConfig::default()
        },
    };
    let report = gradient_check_model(&cfg, seed).map_err(err)?;
    Ok((report.max_rel_err, report.entries.len()))
}

#[pymodule]
fn detectornet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
