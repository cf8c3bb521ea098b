//! Python bindings for `fsosr-core`.
//!
//! Arrays cross the boundary as nested lists; structured results (reports,
//! diagnostics) are returned as plain dicts.

use ndarray::Array1;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fsosr_core::baselines::{knn_outlier_score, simpleshot_classify};
use fsosr_core::diagnostics::diagnose;
use fsosr_core::feature_store::base_mean;
use fsosr_core::metrics::{aupr, auroc, precision_at_recall, EpisodeReport};
use fsosr_core::ostim::infer;
use fsosr_core::runner::{run_on, RunConfig};
use fsosr_core::synth::{generate, SynthSpec};
use fsosr_core::{
    load_feature_store, sample_episode_from, save_feature_store, CenteringKind, CenteringPolicy, EpisodeSpec,
    FeatureSet, OstimConfig, PredictionSheet, QueryTruth, Split, Variant,
};

fn to_py(e: fsosr_core::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> PyResult<T> {
    value.parse().map_err(|_| PyValueError::new_err(format!("unknown {what} {value:?}")))
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A labeled feature store with its class-to-split assignment.
#[pyclass(name = "FeatureStore", frozen)]
struct PyFeatureStore {
    inner: FeatureSet,
}

#[pymethods]
impl PyFeatureStore {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_feature_store(path).map_err(to_py)? })
    }

    /// Generates a Gaussian-mixture store from a JSON synth spec.
    #[staticmethod]
    fn synth(spec_json: &str) -> PyResult<Self> {
        let spec: SynthSpec = parse_json(spec_json)?;
        Ok(Self { inner: generate(&spec).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_feature_store(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn classes_in(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.classes_in(parse(split, "split")?))
    }

    fn base_mean(&self) -> PyResult<Vec<f64>> {
        Ok(base_mean(&self.inner).map_err(to_py)?.to_vec())
    }

    /// MIF, variance ratio and per-class imposture factors of one split.
    #[pyo3(signature = (split = "test"))]
    fn diagnose<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let report = diagnose(&self.inner, parse(split, "split")?).map_err(to_py)?;
        json_to_py(py, &report)
    }

    /// Episode `index` of the stream defined by `spec_json` (defaults when omitted).
    #[pyo3(signature = (index, spec_json = None, split = "test"))]
    fn episode(&self, index: u64, spec_json: Option<&str>, split: &str) -> PyResult<PyEpisode> {
        let spec: EpisodeSpec = match spec_json {
            Some(text) => parse_json(text)?,
            None => EpisodeSpec::default(),
        };
        spec.validate().map_err(to_py)?;
        let split: Split = parse(split, "split")?;
        Ok(PyEpisode { inner: sample_episode_from(&self.inner, split, &spec, index).map_err(to_py)? })
    }

    /// Runs a JSON run config against this store; the `store` key is ignored.
    #[pyo3(signature = (config_json, split = "test"))]
    fn run<'py>(&self, py: Python<'py>, config_json: &str, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let mut value: serde_json::Value = parse_json(config_json)?;
        if let Some(obj) = value.as_object_mut() {
            obj.entry("store").or_insert_with(|| serde_json::Value::String(String::new()));
        }
        let cfg = RunConfig::from_json(&value.to_string()).map_err(to_py)?;
        let report = run_on(&self.inner, &cfg, parse(split, "split")?).map_err(to_py)?;
        json_to_py(py, &report)
    }
}

/// One open-set task: labeled support set and queries with ground truth.
#[pyclass(name = "Episode", frozen)]
struct PyEpisode {
    inner: fsosr_core::Episode,
}

#[pymethods]
impl PyEpisode {
    #[getter]
    fn index(&self) -> u64 {
        self.inner.index
    }

    #[getter]
    fn n_way(&self) -> usize {
        self.inner.n_way
    }

    #[getter]
    fn support_vectors(&self) -> Vec<Vec<f64>> {
        self.inner.support_vectors.outer_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn support_labels(&self) -> Vec<usize> {
        self.inner.support_labels.clone()
    }

    #[getter]
    fn query_vectors(&self) -> Vec<Vec<f64>> {
        self.inner.query_vectors.outer_iter().map(|r| r.to_vec()).collect()
    }

    /// Closed-set slot per query, `None` for outliers.
    #[getter]
    fn query_truth(&self) -> Vec<Option<usize>> {
        self.inner.query_truth.iter().map(|t| t.label()).collect()
    }

    #[getter]
    fn is_outlier(&self) -> Vec<bool> {
        self.inner.is_outlier()
    }

    #[getter]
    fn closed_classes(&self) -> Vec<usize> {
        self.inner.closed_classes.clone()
    }

    #[getter]
    fn open_classes(&self) -> Vec<usize> {
        self.inner.open_classes.clone()
    }

    fn checksum(&self) -> u32 {
        self.inner.checksum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Episode(index={}, n_way={}, n_support={}, n_query={})",
            self.inner.index,
            self.inner.n_way,
            self.inner.n_support(),
            self.inner.n_query()
        )
    }
}

fn policy(centering: &str, mu: Option<Vec<f64>>) -> PyResult<CenteringPolicy> {
    Ok(match parse::<CenteringKind>(centering, "centering")? {
        CenteringKind::None => CenteringPolicy::none(),
        CenteringKind::Task => CenteringPolicy::task(),
        CenteringKind::Base => {
            let mu = mu.ok_or_else(|| PyValueError::new_err("base centering needs mu"))?;
            CenteringPolicy::base(Array1::from(mu))
        }
    })
}

fn sheet_dict<'py>(py: Python<'py>, sheet: &PredictionSheet, truth: &[QueryTruth]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let probs: Vec<Vec<f64>> = sheet.probs.outer_iter().map(|r| r.to_vec()).collect();
    d.set_item("probs", probs)?;
    d.set_item("outlier_score", sheet.outlier_score.clone())?;
    d.set_item("closed_pred", sheet.closed_pred.clone())?;
    let report = EpisodeReport::from_sheet(sheet, truth).map_err(to_py)?;
    d.set_item("report", json_to_py(py, &report)?)?;
    Ok(d)
}

/// Transductive inference (`variant`: implicit, tim_closed, explicit_dummy).
#[pyfunction]
#[pyo3(signature = (episode, variant = "implicit", centering = "task", mu = None, alpha = 1.0, n_steps = 200, lr = 1e-3, temperature = 10.0))]
#[allow(clippy::too_many_arguments)]
fn ostim<'py>(
    py: Python<'py>,
    episode: &PyEpisode,
    variant: &str,
    centering: &str,
    mu: Option<Vec<f64>>,
    alpha: f64,
    n_steps: usize,
    lr: f64,
    temperature: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let variant: Variant = serde_json::from_value(serde_json::Value::String(variant.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown variant {variant:?}")))?;
    let cfg = OstimConfig { alpha, n_steps, learning_rate: lr, temperature };
    let policy = policy(centering, mu)?;
    let ep = &episode.inner;
    let sheet = py.detach(|| infer(ep, &policy, variant, &cfg)).map_err(to_py)?;
    sheet_dict(py, &sheet, &ep.query_truth)
}

/// Nearest-centroid classifier with negative max-probability outlier score.
#[pyfunction]
#[pyo3(signature = (episode, centering = "task", mu = None, temperature = 10.0))]
fn simpleshot<'py>(
    py: Python<'py>,
    episode: &PyEpisode,
    centering: &str,
    mu: Option<Vec<f64>>,
    temperature: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let sheet = simpleshot_classify(&episode.inner, &policy(centering, mu)?, temperature).map_err(to_py)?;
    sheet_dict(py, &sheet, &episode.inner.query_truth)
}

/// Mean distance to the `k` nearest normalized support vectors.
#[pyfunction]
#[pyo3(signature = (episode, k = 1, centering = "task", mu = None))]
fn knn_scores(episode: &PyEpisode, k: usize, centering: &str, mu: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    knn_outlier_score(&episode.inner, &policy(centering, mu)?, k).map_err(to_py)
}

#[pyfunction(name = "auroc")]
fn py_auroc(scores: Vec<f64>, is_outlier: Vec<bool>) -> PyResult<f64> {
    auroc(&scores, &is_outlier).map_err(to_py)
}

#[pyfunction(name = "aupr")]
fn py_aupr(scores: Vec<f64>, is_outlier: Vec<bool>) -> PyResult<f64> {
    aupr(&scores, &is_outlier).map_err(to_py)
}

#[pyfunction(name = "precision_at_recall")]
#[pyo3(signature = (scores, is_outlier, target = 0.9))]
fn py_precision_at_recall(scores: Vec<f64>, is_outlier: Vec<bool>, target: f64) -> PyResult<f64> {
    precision_at_recall(&scores, &is_outlier, target).map_err(to_py)
}

#[pymodule]
pub fn pyfsosr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureStore>()?;
    m.add_class::<PyEpisode>()?;
    m.add_function(wrap_pyfunction!(ostim, m)?)?;
    m.add_function(wrap_pyfunction!(simpleshot, m)?)?;
    m.add_function(wrap_pyfunction!(knn_scores, m)?)?;
    m.add_function(wrap_pyfunction!(py_auroc, m)?)?;
    m.add_function(wrap_pyfunction!(py_aupr, m)?)?;
    m.add_function(wrap_pyfunction!(py_precision_at_recall, m)?)?;
    Ok(())
}
