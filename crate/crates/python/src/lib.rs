//! Python bindings: sequences, synthetic data, the classifier, the detector
//! and the interval metrics. Core errors surface as `ValueError`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use skelconv::checkpoint::ModelCheckpoint;
use skelconv::classifier::{train_classifier, ClassifierConfig, ClassifierNet, TrainConfig};
use skelconv::detector::{iou_1d, nms, train_detector, DetectorConfig, DetectorNet, DetectorTrainConfig, Window};
use skelconv::evaluation::{mean_average_precision_tagged, Tagged};
use skelconv::skeleton_data::{
    parse_ntu_skeleton, read_sequence, synthesize_dataset, write_sequence, SkeletonSequence, SynthConfig, SynthMode,
};

fn py_err(e: skelconv::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `(class_id, start, end, score)`; background / unlabelled windows use class 0.
type WindowTuple = (usize, f64, f64, f64);

fn to_tuple(w: &Window) -> WindowTuple {
    (w.class_id.unwrap_or(0), w.start, w.end, w.score)
}

fn from_tuple(t: WindowTuple) -> Window {
    Window::scored(t.1, t.2, t.3, Some(t.0))
}

#[pyclass(name = "Sequence", module = "skelconv_py", from_py_object)]
#[derive(Clone)]
pub struct PySequence {
    inner: SkeletonSequence,
}

#[pymethods]
impl PySequence {
    /// Parses the internal text format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        read_sequence(text).map(|inner| PySequence { inner }).map_err(py_err)
    }

    /// Parses an NTU RGB+D `.skeleton` file body.
    #[staticmethod]
    fn from_ntu(text: &str) -> PyResult<Self> {
        parse_ntu_skeleton(text)
            .map(|inner| PySequence { inner })
            .map_err(py_err)
    }

    fn to_text(&self) -> String {
        write_sequence(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn joints(&self) -> Option<usize> {
        self.inner.joint_count()
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.inner.label
    }

    #[getter]
    fn segments(&self) -> Option<Vec<WindowTuple>> {
        self.inner.segments.as_ref().map(|s| s.iter().map(to_tuple).collect())
    }

    /// Per frame, per person: `(person_id, [[x, y, z], ...])`.
    fn frames(&self) -> Vec<Vec<(usize, Vec<[f64; 3]>)>> {
        self.inner
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|s| (s.person_id, s.joints.iter().map(|j| [j.x, j.y, j.z]).collect()))
                    .collect()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(frames={}, joints={:?}, label={:?}, segments={})",
            self.inner.len(),
            self.inner.joint_count(),
            self.inner.label,
            self.inner.segments.as_ref().map_or(0, Vec::len)
        )
    }
}

fn unwrap_seqs(seqs: &[PySequence]) -> Vec<SkeletonSequence> {
    seqs.iter().map(|s| s.inner.clone()).collect()
}

/// Deterministic synthetic dataset. `mode` is "trimmed" or "untrimmed".
#[pyfunction]
#[pyo3(signature = (seed, mode="trimmed", class_count=4, per_class=10, sequences=20, joints=10))]
fn synthesize(
    seed: u64,
    mode: &str,
    class_count: usize,
    per_class: usize,
    sequences: usize,
    joints: usize,
) -> PyResult<Vec<PySequence>> {
    let mode = match mode {
        "trimmed" => SynthMode::Trimmed,
        "untrimmed" => SynthMode::Untrimmed,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let cfg = SynthConfig {
        mode,
        class_count,
        per_class,
        sequences,
        joints,
        ..SynthConfig::default()
    };
    let data = synthesize_dataset(&cfg, seed).map_err(py_err)?;
    Ok(data.into_iter().map(|inner| PySequence { inner }).collect())
}

#[pyclass(name = "Classifier", module = "skelconv_py")]
pub struct PyClassifier {
    net: ClassifierNet,
}

#[pymethods]
impl PyClassifier {
    /// Untrained network; `tiny` selects the desk-scale widths.
    #[new]
    #[pyo3(signature = (joints, classes, seed=0, tiny=true))]
    fn new(joints: usize, classes: usize, seed: u64, tiny: bool) -> PyResult<Self> {
        let cfg = if tiny {
            ClassifierConfig::tiny(joints, classes)
        } else {
            ClassifierConfig {
                n_joints: joints,
                m_joints: joints,
                class_count: classes,
                fc_widths: [1024, 512, classes],
                ..ClassifierConfig::default()
            }
        };
        ClassifierNet::new(cfg, seed)
            .map(|net| PyClassifier { net })
            .map_err(py_err)
    }

    /// Trains a tiny classifier from scratch; returns the model and the
    /// per-epoch training accuracy.
    #[staticmethod]
    #[pyo3(signature = (sequences, classes, epochs=300, seed=0))]
    fn train(
        py: Python<'_>,
        sequences: Vec<PySequence>,
        classes: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let data = unwrap_seqs(&sequences);
        let joints = data
            .first()
            .and_then(SkeletonSequence::joint_count)
            .ok_or_else(|| PyValueError::new_err("empty training set"))?;
        let tc = TrainConfig {
            epochs,
            ..TrainConfig::default()
        };
        let out = py
            .detach(|| train_classifier(&data, None, &ClassifierConfig::tiny(joints, classes), &tc, seed))
            .map_err(py_err)?;
        let curve = out.history.iter().map(|m| m.train_accuracy).collect();
        Ok((PyClassifier { net: out.model }, curve))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load(&path).map_err(py_err)?;
        ClassifierNet::from_checkpoint(&ck)
            .map(|net| PyClassifier { net })
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.net.to_checkpoint().and_then(|ck| ck.save(&path)).map_err(py_err)
    }

    /// `(class_id, softmax scores)`.
    fn predict(&self, sequence: &PySequence) -> PyResult<(usize, Vec<f64>)> {
        let p = self.net.predict(&sequence.inner).map_err(py_err)?;
        Ok((p.class_id, p.scores))
    }

    fn count_parameters(&self) -> usize {
        self.net.count_parameters()
    }
}

#[pyclass(name = "Detector", module = "skelconv_py")]
pub struct PyDetector {
    net: DetectorNet,
}

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (joints, classes, seed=0))]
    fn new(joints: usize, classes: usize, seed: u64) -> PyResult<Self> {
        DetectorNet::new(DetectorConfig::tiny(joints, classes), seed)
            .map(|net| PyDetector { net })
            .map_err(py_err)
    }

    /// Trains a tiny detector; returns the model and the per-iteration loss.
    #[staticmethod]
    #[pyo3(signature = (sequences, classes, epochs=80, seed=0))]
    fn train(
        py: Python<'_>,
        sequences: Vec<PySequence>,
        classes: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let data = unwrap_seqs(&sequences);
        let joints = data
            .first()
            .and_then(SkeletonSequence::joint_count)
            .ok_or_else(|| PyValueError::new_err("empty training set"))?;
        let tc = DetectorTrainConfig {
            epochs,
            ..DetectorTrainConfig::default()
        };
        let out = py
            .detach(|| train_detector(&data, &DetectorConfig::tiny(joints, classes), &tc, seed))
            .map_err(py_err)?;
        let curve = out.losses.iter().map(|l| l.total).collect();
        Ok((PyDetector { net: out.model }, curve))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load(&path).map_err(py_err)?;
        DetectorNet::from_checkpoint(&ck)
            .map(|net| PyDetector { net })
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.net.to_checkpoint().and_then(|ck| ck.save(&path)).map_err(py_err)
    }

    /// Detections as `(class_id, start, end, score)`, best first.
    fn detect(&self, sequence: &PySequence) -> PyResult<Vec<WindowTuple>> {
        let dets = self.net.forward_detect(&sequence.inner).map_err(py_err)?;
        Ok(dets.iter().map(to_tuple).collect())
    }
}

#[pyfunction]
fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    iou_1d(&Window::new(a.0, a.1), &Window::new(b.0, b.1))
}

/// Greedy suppression over `(class_id, start, end, score)` windows.
#[pyfunction]
fn suppress(windows: Vec<WindowTuple>, threshold: f64) -> Vec<WindowTuple> {
    let ws: Vec<Window> = windows.into_iter().map(from_tuple).collect();
    nms(&ws, threshold).iter().map(to_tuple).collect()
}

/// mAP per θ. Detections and ground truth are `(sequence_index, class_id,
/// start, end, score)`.
#[pyfunction]
fn mean_average_precision(
    detections: Vec<(usize, usize, f64, f64, f64)>,
    ground_truth: Vec<(usize, usize, f64, f64, f64)>,
    thetas: Vec<f64>,
) -> PyResult<Vec<(f64, f64)>> {
    let tag = |v: Vec<(usize, usize, f64, f64, f64)>| -> Vec<Tagged> {
        v.into_iter()
            .map(|(s, c, a, b, sc)| (s, from_tuple((c, a, b, sc))))
            .collect()
    };
    let report = mean_average_precision_tagged(&tag(detections), &tag(ground_truth), &thetas).map_err(py_err)?;
    Ok(thetas.iter().map(|&t| (t, report.map_at(t).unwrap_or(0.0))).collect())
}

#[pymodule]
pub fn skelconv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(suppress, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    Ok(())
}
