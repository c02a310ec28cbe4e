//! Python bindings. Structured results (scene objects, rankings,
//! diagnostics, reports) cross the boundary as plain dicts and lists.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use refground::actuation::{select_grasp, GripperSpec, ObjectExtent};
use refground::cluster::{RelevancePoint, SynonymTable};
use refground::eval::{run_benchmark, BenchmarkConfig};
use refground::models::TrainingConfig;
use refground::scene::{CorpusSplits, ProposalMode, SceneConfig, SceneFile};
use refground::{Aggregation, AttributeFeaturizer, EngineConfig, Featurizer};
use serde::Serialize;

/// Partition name to scene ids.
type Splits = BTreeMap<String, Vec<String>>;

fn py_err(e: refground::Error) -> PyErr {
    match e {
        refground::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn aggregation(name: &str) -> PyResult<Aggregation> {
    name.parse().map_err(py_err)
}

fn proposal_mode(name: &str) -> PyResult<ProposalMode> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown proposal mode {name:?}; use ground_truth or degraded")))
}

#[pyclass(name = "BoundingBox", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBox(refground::BoundingBox);

#[pymethods]
impl PyBox {
    #[new]
    fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> PyResult<Self> {
        refground::BoundingBox::new(x_min, y_min, x_max, y_max)
            .map(PyBox)
            .map_err(py_err)
    }

    #[getter]
    fn x_min(&self) -> f64 {
        self.0.x_min
    }

    #[getter]
    fn y_min(&self) -> f64 {
        self.0.y_min
    }

    #[getter]
    fn x_max(&self) -> f64 {
        self.0.x_max
    }

    #[getter]
    fn y_max(&self) -> f64 {
        self.0.y_max
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn center(&self) -> (f64, f64) {
        self.0.center()
    }

    fn iou(&self, other: &PyBox) -> f64 {
        refground::eval::iou(&self.0, &other.0)
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_list(&self) -> [f64; 4] {
        self.0.to_array()
    }

    fn __repr__(&self) -> String {
        let b = self.0;
        format!("BoundingBox({}, {}, {}, {})", b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

/// A scene with its referring expressions.
#[pyclass(name = "Scene", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene(SceneFile);

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        file.scene().validate().map_err(py_err)?;
        Ok(PyScene(file))
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height
    }

    #[getter]
    fn objects<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.objects)
    }

    #[getter]
    fn expressions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.expressions)
    }

    #[pyo3(signature = (mode = "ground_truth", seed = 0))]
    fn proposals(&self, mode: &str, seed: u64) -> PyResult<Vec<PyBox>> {
        let mode = proposal_mode(mode)?;
        Ok(refground::scene::make_proposals(&self.0.scene(), mode, seed)
            .boxes
            .into_iter()
            .map(PyBox)
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(id={:?}, objects={}, expressions={})",
            self.0.id,
            self.0.objects.len(),
            self.0.expressions.len()
        )
    }
}

fn files(scenes: &[PyRef<'_, PyScene>]) -> Vec<SceneFile> {
    scenes.iter().map(|s| s.0.clone()).collect()
}

/// Trained semantic and spatial models.
#[pyclass(name = "Models", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModels(refground::ModelSet);

#[pymethods]
impl PyModels {
    /// Trains both models on `scenes`. `config` is a training config as
    /// JSON text; omitted fields keep their defaults.
    #[staticmethod]
    #[pyo3(signature = (scenes, config = None))]
    fn train(py: Python<'_>, scenes: Vec<PyRef<'_, PyScene>>, config: Option<&str>) -> PyResult<Self> {
        let config: TrainingConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TrainingConfig::default(),
        };
        let files = files(&scenes);
        py.detach(|| {
            let refs: Vec<&SceneFile> = files.iter().collect();
            refground::train_models(&refs, &AttributeFeaturizer::default(), &config)
        })
        .map(|(m, _)| PyModels(m))
        .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        refground::ModelSet::load(&path).map(PyModels).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.feature_dim()
    }

    #[getter]
    fn vocabulary(&self) -> Vec<String> {
        self.0.semantic.vocab().tokens().to_vec()
    }

    /// Teacher-forced NLL of `query` for each proposal of `scene`, in
    /// proposal order.
    #[pyo3(signature = (scene, query, proposals = None))]
    fn semantic_losses(&self, scene: &PyScene, query: &str, proposals: Option<Vec<PyBox>>) -> PyResult<Vec<f64>> {
        let s = scene.0.scene();
        let boxes = boxes_or_truth(&s, proposals);
        let featurizer = AttributeFeaturizer::default();
        let ids = self.0.semantic.encode(&refground::vocab::tokenize(query));
        boxes
            .iter()
            .map(|b| {
                let f = featurizer.extract(&s, b).map_err(py_err)?;
                self.0.semantic.sequence_nll(f.as_slice(), &ids).map_err(py_err)
            })
            .collect()
    }
}

fn boxes_or_truth(scene: &refground::Scene, proposals: Option<Vec<PyBox>>) -> Vec<refground::BoundingBox> {
    match proposals {
        Some(p) => p.into_iter().map(|b| b.0).collect(),
        None => scene.objects.iter().map(|o| o.bbox).collect(),
    }
}

#[pyclass(name = "GroundingResult", frozen)]
struct PyResultSet(refground::GroundingResult);

#[pymethods]
impl PyResultSet {
    #[getter]
    fn aggregation(&self) -> &'static str {
        self.0.aggregation.name()
    }

    /// `[{region_index, bbox, score, loss}, ...]`, best first.
    #[getter]
    fn ranked<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.ranked)
    }

    #[getter]
    fn top(&self) -> PyBox {
        PyBox(self.0.top().bbox)
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.diagnostics)
    }

    /// Rank position of the best candidate not in `rejected`.
    fn next_candidate(&self, rejected: Vec<usize>) -> Option<usize> {
        let rejected: BTreeSet<usize> = rejected.into_iter().collect();
        self.0.next_candidate(&rejected).map(|(i, _)| i)
    }

    fn reranked(&self, aggregation: &str) -> PyResult<Self> {
        Ok(PyResultSet(self.0.reranked(self::aggregation(aggregation)?)))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("result serialization cannot fail")
    }

    fn __len__(&self) -> usize {
        self.0.ranked.len()
    }
}

#[pyclass(name = "Engine", frozen)]
struct PyEngine(refground::GroundingEngine);

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (models, k = 10, aggregation = "noisy_or"))]
    fn new(models: &PyModels, k: usize, aggregation: &str) -> PyResult<Self> {
        let config = EngineConfig {
            k,
            aggregation: self::aggregation(aggregation)?,
        };
        refground::GroundingEngine::from_models(models.0.clone(), config)
            .map(PyEngine)
            .map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, k = 10, aggregation = "noisy_or"))]
    fn load(path: PathBuf, k: usize, aggregation: &str) -> PyResult<Self> {
        let config = EngineConfig {
            k,
            aggregation: self::aggregation(aggregation)?,
        };
        refground::GroundingEngine::load(&path, config)
            .map(PyEngine)
            .map_err(py_err)
    }

    /// Grounds `query`; proposals default to the scene's own object boxes.
    #[pyo3(signature = (scene, query, proposals = None, aggregation = None))]
    fn ground(
        &self,
        py: Python<'_>,
        scene: &PyScene,
        query: &str,
        proposals: Option<Vec<PyBox>>,
        aggregation: Option<&str>,
    ) -> PyResult<PyResultSet> {
        let aggregation = aggregation.map(self::aggregation).transpose()?;
        let s = scene.0.scene();
        let boxes = boxes_or_truth(&s, proposals);
        py.detach(|| {
            let prepared = self.0.prepare(&s, &boxes)?;
            match aggregation {
                Some(a) => self.0.ground_prepared_with(&prepared, query, a),
                None => self.0.ground_prepared(&prepared, query),
            }
        })
        .map(PyResultSet)
        .map_err(py_err)
    }

    /// Runs the Prec@1 benchmark over named partitions and returns the
    /// report as a dict.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        partitions: BTreeMap<String, Vec<PyRef<'py, PyScene>>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let owned: Vec<(String, Vec<SceneFile>)> = partitions.into_iter().map(|(k, v)| (k, files(&v))).collect();
        let (report, _) = py
            .detach(|| {
                let parts: Vec<(String, Vec<&SceneFile>)> =
                    owned.iter().map(|(k, v)| (k.clone(), v.iter().collect())).collect();
                run_benchmark(&self.0, &parts, &BenchmarkConfig::default())
            })
            .map_err(py_err)?;
        to_py(py, &report)
    }
}

/// Generates a corpus; returns the scenes and the partition id lists.
#[pyfunction]
#[pyo3(signature = (scenes, seed = 0))]
fn generate_corpus(py: Python<'_>, scenes: usize, seed: u64) -> PyResult<(Vec<PyScene>, Splits)> {
    let (files, splits) = py
        .detach(|| refground::scene::generate_corpus(&SceneConfig::default(), scenes, seed))
        .map_err(py_err)?;
    Ok((files.into_iter().map(PyScene).collect(), splits.0))
}

#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<(Vec<PyScene>, Option<Splits>)> {
    let (files, splits) = refground::scene::load_corpus(&path).map_err(py_err)?;
    Ok((files.into_iter().map(PyScene).collect(), splits.map(|s| s.0)))
}

#[pyfunction]
#[pyo3(signature = (path, scenes, splits = None))]
fn save_corpus(path: PathBuf, scenes: Vec<PyRef<'_, PyScene>>, splits: Option<Splits>) -> PyResult<()> {
    let splits = splits.map(CorpusSplits);
    refground::scene::save_corpus(&path, &files(&scenes), splits.as_ref()).map_err(py_err)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    refground::vocab::tokenize(text)
}

#[pyfunction]
fn noisy_or(probabilities: Vec<f64>) -> f64 {
    refground::spatial::noisy_or(&probabilities)
}

#[pyfunction]
fn iou(a: &PyBox, b: &PyBox) -> f64 {
    refground::eval::iou(&a.0, &b.0)
}

/// METEOR-style similarity of two strings with the bundled synonym table.
#[pyfunction]
fn meteor_lite(candidate: &str, reference: &str) -> f64 {
    refground::cluster::meteor_lite(
        &refground::vocab::tokenize(candidate),
        &refground::vocab::tokenize(reference),
        SynonymTable::bundled(),
    )
}

/// Positions of the relevant group among `(m_loss, m_gen)` points.
#[pyfunction]
fn relevancy_cluster(points: Vec<(f64, f64)>) -> PyResult<Vec<usize>> {
    let points: Vec<RelevancePoint> = points
        .into_iter()
        .enumerate()
        .map(|(region_index, (m_loss, m_gen))| RelevancePoint {
            region_index,
            m_loss,
            m_gen,
        })
        .collect();
    refground::cluster::relevancy_cluster(&points).map_err(py_err)
}

/// `("pick up", "the red cup")` from "pick up the red cup".
#[pyfunction]
fn parse_command(text: &str) -> PyResult<(&'static str, String)> {
    refground::pipeline::parse_command(text)
        .map(|(a, rest)| (a.phrase(), rest))
        .map_err(py_err)
}

/// "forward" or "top_down" for an object extent `(w, h, d)` and a gripper
/// `(max_opening, finger_length)`, all in meters.
#[pyfunction]
fn grasp(extent: (f64, f64, f64), gripper: (f64, f64)) -> PyResult<&'static str> {
    let e = ObjectExtent::new(extent.0, extent.1, extent.2).map_err(py_err)?;
    let g = GripperSpec::new(gripper.0, gripper.1).map_err(py_err)?;
    Ok(match select_grasp(&e, &g) {
        refground::actuation::Grasp::Forward => "forward",
        refground::actuation::Grasp::TopDown => "top_down",
    })
}

#[pymodule]
#[pyo3(name = "refground")]
fn refground_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModels>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PyResultSet>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_or, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(meteor_lite, m)?)?;
    m.add_function(wrap_pyfunction!(relevancy_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(parse_command, m)?)?;
    m.add_function(wrap_pyfunction!(grasp, m)?)?;
    Ok(())
}
