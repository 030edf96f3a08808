//! Python bindings. Images, beliefs and features cross the boundary as
//! nested lists of floats; models stay opaque Rust objects.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sceneparse::convnet::{NetworkSpec, TrainConfig};
use sceneparse::data::{
    compute_class_frequencies, generate_synthetic_scenes, load_split, save_split, ClassCatalog, ClassId, DatasetSplit,
    LabelMap, SplitRole, SynthConfig,
};
use sceneparse::ensemble::{ensemble_fuse, train_ensemble, EnsembleModel};
use sceneparse::integration::{evaluate as evaluate_maps, infer_labels, mode_energy, ParseMode};
use sceneparse::metric::{metric_loss, train_metric, LossNorm, MetricLossConfig, MetricParams};
use sceneparse::sampler::{derive_seed, PixelPools, SamplingConfig, Strategy};
use sceneparse::transfer::{retrieve_exemplars, PyramidConfig, RetrievalConfig, TransferIndex};
use sceneparse::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for sceneparse::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_tag<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

type Grid = Vec<Vec<Vec<f64>>>;
type Sample = (Vec<(u32, u32, u32)>, Vec<ClassId>);

fn grid_to_lists(g: &sceneparse::convnet::CellGrid) -> Grid {
    (0..g.rows)
        .map(|r| (0..g.cols).map(|c| g.at(r, c).to_vec()).collect())
        .collect()
}

fn label_rows(m: &LabelMap) -> Vec<Vec<ClassId>> {
    m.labels().chunks(m.width()).map(<[ClassId]>::to_vec).collect()
}

fn rows_to_map(rows: Vec<Vec<ClassId>>) -> PyResult<LabelMap> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("label rows differ in length"));
    }
    LabelMap::new(height, width, rows.concat()).py()
}

/// A set of labeled images with its class catalog.
#[pyclass(name = "Split", module = "sceneparse_py")]
struct PySplit {
    inner: DatasetSplit,
}

#[pymethods]
impl PySplit {
    /// Generates a synthetic split from a named preset.
    #[staticmethod]
    #[pyo3(signature = (preset, seed, images=None))]
    fn synthetic(preset: &str, seed: u64, images: Option<usize>) -> PyResult<Self> {
        let mut cfg = SynthConfig::preset(preset).py()?;
        if let Some(n) = images {
            cfg.images = n;
        }
        Ok(Self {
            inner: generate_synthetic_scenes(&cfg, seed).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (manifest, classes, test=false))]
    fn load(manifest: PathBuf, classes: PathBuf, test: bool) -> PyResult<Self> {
        let catalog = ClassCatalog::load(&classes).py()?;
        let role = if test { SplitRole::Test } else { SplitRole::Train };
        Ok(Self {
            inner: load_split(&manifest, &catalog, role).py()?,
        })
    }

    fn save(&self, manifest: PathBuf, classes: PathBuf) -> PyResult<()> {
        self.inner.catalog.save(&classes).py()?;
        save_split(&self.inner, &manifest).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.catalog.names().to_vec()
    }

    /// Raw pixels as rows of `[r, g, b]`.
    fn image(&self, i: usize) -> PyResult<Vec<Vec<[u8; 3]>>> {
        let rec = self.record(i)?;
        let img = &rec.image;
        Ok((0..img.height())
            .map(|r| (0..img.width()).map(|c| img.pixel(r, c)).collect())
            .collect())
    }

    fn labels(&self, i: usize) -> PyResult<Vec<Vec<ClassId>>> {
        Ok(label_rows(&self.record(i)?.labels))
    }

    fn scene(&self, i: usize) -> PyResult<Option<u32>> {
        Ok(self.record(i)?.scene)
    }

    fn class_frequencies(&self) -> PyResult<Vec<f64>> {
        Ok(compute_class_frequencies(&self.inner).py()?.frequencies)
    }

    /// One epoch of training pixels: `(image, row, col)` triples and labels.
    #[pyo3(signature = (strategy, size, seed, eta=0.05))]
    fn sample_epoch(&self, strategy: &str, size: usize, seed: u64, eta: f64) -> PyResult<Sample> {
        let cfg = SamplingConfig::new(parse_tag(strategy)?, size, eta, seed).py()?;
        let list = PixelPools::new(&self.inner).py()?.sample_epoch(&cfg).py()?;
        Ok((list.refs.iter().map(|r| (r.image, r.row, r.col)).collect(), list.labels))
    }
}

impl PySplit {
    fn record(&self, i: usize) -> PyResult<&sceneparse::data::SceneRecord> {
        self.inner
            .records
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("record {i} out of range for {} records", self.inner.len())))
    }
}

/// Averaged patch classifiers, one per sampling strategy.
#[pyclass(name = "Ensemble", module = "sceneparse_py")]
struct PyEnsemble {
    inner: EnsembleModel,
}

#[pymethods]
impl PyEnsemble {
    #[staticmethod]
    #[pyo3(signature = (split, strategies, seed=0, epochs=10, epoch_size=10000, eta=0.05, learning_rate=0.01, preset="desk"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        split: PyRef<'_, PySplit>,
        strategies: Vec<String>,
        seed: u64,
        epochs: usize,
        epoch_size: usize,
        eta: f64,
        learning_rate: f64,
        preset: &str,
    ) -> PyResult<Self> {
        let strategies: Vec<Strategy> = strategies.iter().map(|s| parse_tag(s)).collect::<PyResult<_>>()?;
        let spec = NetworkSpec::preset(preset, split.inner.class_count()).py()?;
        let sampling = SamplingConfig::new(Strategy::Global, epoch_size, eta, seed).py()?;
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        Ok(Self {
            inner: train_ensemble(&split.inner, &strategies, &spec, &sampling, &cfg).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: EnsembleModel::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn strategies(&self) -> Vec<String> {
        self.inner.strategies().iter().map(ToString::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Fused class distribution per cell, as `rows × cols × classes`.
    fn local_belief(&self, split: PyRef<'_, PySplit>, i: usize) -> PyResult<Grid> {
        let (_, belief) = self.inner.analyze(&split.record(i)?.image.preprocess()).py()?;
        Ok(grid_to_lists(&belief))
    }

    /// Cell features from the feature-extractor member.
    fn features(&self, split: PyRef<'_, PySplit>, i: usize) -> PyResult<Grid> {
        let (features, _) = self.inner.analyze(&split.record(i)?.image.preprocess()).py()?;
        Ok(grid_to_lists(&features))
    }
}

/// Linear map applied to features before distances are taken.
#[pyclass(name = "Metric", module = "sceneparse_py")]
struct PyMetric {
    inner: MetricParams,
}

#[pymethods]
impl PyMetric {
    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self {
            inner: MetricParams::identity(dim),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (features, labels, seed=0, epochs=20, tau=3.0, reg=0.01, learning_rate=1e-3, per_class=200, batch_size=200, loss_norm="pairs"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features: Vec<Vec<f64>>,
        labels: Vec<ClassId>,
        seed: u64,
        epochs: usize,
        tau: f64,
        reg: f64,
        learning_rate: f64,
        per_class: usize,
        batch_size: usize,
        loss_norm: &str,
    ) -> PyResult<Self> {
        let cfg = MetricLossConfig {
            tau,
            lambda: reg,
            batch_size,
            per_class,
            learning_rate,
            epochs,
            seed,
            norm: parse_tag::<LossNorm>(loss_norm)?,
            ..MetricLossConfig::default()
        };
        Ok(Self {
            inner: train_metric(&features, &labels, &cfg).py()?.0,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: MetricParams::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    /// Row-major matrix entries.
    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.w.chunks(self.inner.cols).map(<[f64]>::to_vec).collect()
    }

    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.transform(&x).py()
    }

    fn distance_sq(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        self.inner.mahalanobis_sq(&a, &b).py()
    }

    #[pyo3(signature = (features, labels, tau=3.0, reg=0.01, loss_norm="pairs"))]
    fn loss(
        &self,
        features: Vec<Vec<f64>>,
        labels: Vec<ClassId>,
        tau: f64,
        reg: f64,
        loss_norm: &str,
    ) -> PyResult<f64> {
        let cfg = MetricLossConfig {
            tau,
            lambda: reg,
            norm: parse_tag::<LossNorm>(loss_norm)?,
            ..MetricLossConfig::default()
        };
        metric_loss(&self.inner, &features, &labels, &cfg).py()
    }
}

/// Retrieval gallery of training images with their cell features.
#[pyclass(name = "TransferIndex", module = "sceneparse_py")]
struct PyIndex {
    inner: TransferIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (split, ensemble, eta=0.05, pyramid_levels=2, uniform_prior=false))]
    fn build(
        split: PyRef<'_, PySplit>,
        ensemble: PyRef<'_, PyEnsemble>,
        eta: f64,
        pyramid_levels: usize,
        uniform_prior: bool,
    ) -> PyResult<Self> {
        let pyramid = PyramidConfig::new(pyramid_levels).py()?;
        let inner = TransferIndex::build(
            &split.inner,
            ensemble.inner.feature_extractor(),
            None,
            pyramid,
            eta,
            uniform_prior,
        )
        .py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TransferIndex::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.images.len()
    }

    /// Pooled scene descriptors of the gallery images.
    fn descriptors(&self) -> Vec<Vec<f64>> {
        self.inner.images.iter().map(|i| i.descriptor.clone()).collect()
    }

    fn describe(&self, split: PyRef<'_, PySplit>, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.describe(&split.record(i)?.image.preprocess()).py()?.0)
    }

    /// Transferred class distribution per cell.
    #[pyo3(signature = (split, i, exemplars=5, k=200, metric=None, seed=0))]
    fn global_belief(
        &self,
        split: PyRef<'_, PySplit>,
        i: usize,
        exemplars: usize,
        k: usize,
        metric: Option<PyRef<'_, PyMetric>>,
        seed: u64,
    ) -> PyResult<Grid> {
        let cfg = RetrievalConfig {
            exemplars,
            k,
            ..RetrievalConfig::default()
        };
        let (descriptor, features) = self.inner.describe(&split.record(i)?.image.preprocess()).py()?;
        let metric = metric.as_ref().map(|m| &m.inner);
        let (map, _) = self
            .inner
            .global_belief(&descriptor, &features, &cfg, metric, seed)
            .py()?;
        Ok(grid_to_lists(&map))
    }
}

/// Labels every image of `split`: one row-major label grid per image.
#[pyfunction]
#[pyo3(signature = (split, mode="integrated", ensemble=None, index=None, metric=None, seed=0))]
fn parse(
    split: PyRef<'_, PySplit>,
    mode: &str,
    ensemble: Option<PyRef<'_, PyEnsemble>>,
    index: Option<PyRef<'_, PyIndex>>,
    metric: Option<PyRef<'_, PyMetric>>,
    seed: u64,
) -> PyResult<Vec<Vec<Vec<ClassId>>>> {
    let mode: ParseMode = parse_tag(mode)?;
    let need = |what: &str| PyValueError::new_err(format!("mode {mode} needs {what}"));
    if mode != ParseMode::Global && ensemble.is_none() {
        return Err(need("an ensemble"));
    }
    if mode != ParseMode::Local && index.is_none() {
        return Err(need("an index"));
    }
    let cfg = RetrievalConfig::default();
    let metric = metric.as_ref().map(|m| &m.inner);
    let mut out = Vec::with_capacity(split.inner.len());
    for (i, rec) in split.inner.records.iter().enumerate() {
        let image = rec.image.preprocess();
        let local = match &ensemble {
            Some(e) if mode != ParseMode::Global => Some(e.inner.analyze(&image).py()?.1),
            _ => None,
        };
        let global = match &index {
            Some(ix) if mode != ParseMode::Local => {
                let (d, f) = ix.inner.describe(&image).py()?;
                Some(
                    ix.inner
                        .global_belief(&d, &f, &cfg, metric, derive_seed(seed, i as u64))
                        .py()?
                        .0,
                )
            }
            _ => None,
        };
        let first = local.as_ref().or(global.as_ref()).expect("checked above");
        let energy = mode_energy(mode, first, global.as_ref()).py()?;
        out.push(label_rows(&infer_labels(&energy)));
    }
    Ok(out)
}

/// Scores predicted label grids against the split's ground truth.
/// Returns `{"gpa", "aca", "recalls"}`; absent classes have recall `None`.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<Vec<Vec<ClassId>>>,
    split: PyRef<'_, PySplit>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let preds: Vec<LabelMap> = predictions.into_iter().map(rows_to_map).collect::<PyResult<_>>()?;
    let truth: Vec<LabelMap> = split.inner.records.iter().map(|r| r.labels.clone()).collect();
    let report = evaluate_maps(&preds, &truth, split.inner.class_count()).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("gpa", report.gpa)?;
    d.set_item("aca", report.aca)?;
    d.set_item("recalls", report.recalls)?;
    Ok(d)
}

/// Mean of per-member class distributions.
#[pyfunction]
fn fuse(members: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    ensemble_fuse(&members).py()
}

/// Indices and distances of the `size` gallery entries nearest to `query`.
#[pyfunction]
fn retrieve(query: Vec<f64>, gallery: Vec<Vec<f64>>, size: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let s = retrieve_exemplars(&query, &gallery, size).py()?;
    Ok((s.indices, s.distances))
}

#[pymodule]
fn sceneparse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySplit>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyMetric>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add("UNLABELED", sceneparse::data::UNLABELED)?;
    Ok(())
}
