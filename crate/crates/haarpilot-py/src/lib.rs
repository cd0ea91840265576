//! Python bindings for the haarpilot core: grayscale images, cascade
//! models, detection and gesture classification, the mission simulator,
//! and the AT wire encoding.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use haarpilot::boost::{load_cascade, save_cascade, train_cascade, Cascade, TrainConfig};
use haarpilot::dataset::{read_pgm, write_pgm, Background, Distance, Illumination, SceneTag};
use haarpilot::detect::{
    classify_gesture, estimate_distance, group_rects, scan, Calibration, ScanConfig,
};
use haarpilot::haar::{enumerate_features, WindowSpec};
use haarpilot::imaging::{integral, GrayImage, Rect};
use haarpilot::pilot::{fly_labels, GestureMap, World};
use haarpilot::synth::{scene, training_positives, SynthPool};
use haarpilot::{wire, Error, GestureLabel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::ParseLine { .. } | Error::ParseByte { .. } | Error::Version(_) | Error::Input(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_label(s: &str) -> PyResult<GestureLabel> {
    s.parse().map_err(to_py)
}

/// An 8-bit grayscale image.
#[pyclass(name = "Image")]
#[derive(Clone)]
struct PyImage {
    inner: GrayImage,
}

#[pymethods]
impl PyImage {
    /// Build from row-major pixel bytes.
    #[new]
    fn new(width: u32, height: u32, data: Vec<u8>) -> PyResult<Self> {
        Ok(PyImage { inner: GrayImage::new(width, height, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_pgm(path: &str) -> PyResult<Self> {
        Ok(PyImage { inner: read_pgm(path.as_ref()).map_err(to_py)? })
    }

    fn save_pgm(&self, path: &str) -> PyResult<()> {
        write_pgm(&self.inner, path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    fn get(&self, x: u32, y: u32) -> PyResult<u8> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!(
                "pixel ({x}, {y}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.get(x, y))
    }

    /// Row-major pixel bytes.
    fn to_bytes(&self) -> Vec<u8> {
        self.inner.data().to_vec()
    }

    /// Pixel sum over a rectangle, via the summed-area table.
    fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> PyResult<u64> {
        integral(&self.inner).rect_sum(Rect::new(x, y, w, h)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// A trained attentional cascade for one gesture.
#[pyclass(name = "Cascade", frozen)]
struct PyCascade {
    inner: Cascade,
}

#[pymethods]
impl PyCascade {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyCascade { inner: load_cascade(path.as_ref()).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_cascade(&self.inner, path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.to_string()
    }

    #[getter]
    fn window_base(&self) -> u32 {
        self.inner.window.base
    }

    #[getter]
    fn stage_count(&self) -> usize {
        self.inner.stages.len()
    }

    #[getter]
    fn stump_count(&self) -> usize {
        self.inner.stages.iter().map(|s| s.stumps.len()).sum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cascade(label={}, stages={}, stumps={})",
            self.inner.label,
            self.inner.stages.len(),
            self.stump_count()
        )
    }
}

/// Number of Haar features enumerated for a square window.
#[pyfunction]
fn feature_count(base: u32) -> usize {
    enumerate_features(WindowSpec { base }).len()
}

/// Train a cascade on the synthetic glyph corpus. Small budgets keep this
/// in smoke-test territory; real corpora go through the CLI.
#[pyfunction]
#[pyo3(signature = (gesture, count=80, seed=7, max_stages=3, max_stumps=8))]
fn train_synthetic(
    gesture: &str,
    count: usize,
    seed: u64,
    max_stages: usize,
    max_stumps: usize,
) -> PyResult<PyCascade> {
    let label = parse_label(gesture)?;
    if label == GestureLabel::None {
        return Err(PyValueError::new_err("cannot train a cascade for none"));
    }
    let config = TrainConfig { max_stages, max_stumps, seed, ..TrainConfig::default() };
    let base = config.window.base;
    let positives = training_positives(label, count, base, seed);
    let mut pool = SynthPool::new(label, base, seed ^ 0x9e3779b9);
    let cascade = train_cascade(&positives, &mut pool, label, &config).map_err(to_py)?;
    Ok(PyCascade { inner: cascade })
}

/// A synthetic evaluation scene; returns the frame and the glyph box.
#[pyfunction]
#[pyo3(signature = (gesture, seed=0, distance="LT3", illumination="WL", background="CLB"))]
fn synth_scene(
    gesture: &str,
    seed: u64,
    distance: &str,
    illumination: &str,
    background: &str,
) -> PyResult<(PyImage, (u32, u32, u32, u32))> {
    use rand::SeedableRng;
    let label = parse_label(gesture)?;
    if label == GestureLabel::None {
        return Err(PyValueError::new_err("scenes need a real gesture"));
    }
    let tag = SceneTag::new(
        illumination.to_uppercase().parse::<Illumination>().map_err(to_py)?,
        background.to_uppercase().parse::<Background>().map_err(to_py)?,
        distance.to_uppercase().parse::<Distance>().map_err(to_py)?,
    );
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (frame, bbox) = scene(&mut rng, label, tag);
    Ok((PyImage { inner: frame }, (bbox.x, bbox.y, bbox.w, bbox.h)))
}

fn scan_config(scale_factor: f64, min_neighbors: usize) -> ScanConfig {
    ScanConfig { scale_factor, min_neighbors, ..ScanConfig::default() }
}

/// Multi-scale scan with one cascade. Returns grouped detections as
/// (x, y, w, h, score, scale) tuples.
#[pyfunction]
#[pyo3(signature = (image, cascade, scale_factor=1.25, min_neighbors=3))]
fn scan_image(
    image: &PyImage,
    cascade: &PyCascade,
    scale_factor: f64,
    min_neighbors: usize,
) -> PyResult<Vec<(u32, u32, u32, u32, f64, f64)>> {
    let cfg = scan_config(scale_factor, min_neighbors);
    let raw = scan(&image.inner, &cascade.inner, &cfg).map_err(to_py)?;
    let grouped = group_rects(&raw, cfg.min_neighbors, cfg.group_eps);
    Ok(grouped
        .iter()
        .map(|d| (d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.score, d.scale))
        .collect())
}

/// Run every cascade and arbitrate. Returns the winning label ("none"
/// when nothing fires) and the winning box as (x, y, w, h, score).
#[pyfunction]
#[pyo3(signature = (image, cascades, scale_factor=1.25, min_neighbors=3))]
fn classify(
    py: Python<'_>,
    image: &PyImage,
    cascades: Vec<Py<PyCascade>>,
    scale_factor: f64,
    min_neighbors: usize,
) -> PyResult<(String, Option<(u32, u32, u32, u32, f64)>)> {
    let models: Vec<Cascade> =
        cascades.iter().map(|c| c.borrow(py).inner.clone()).collect();
    let cfg = scan_config(scale_factor, min_neighbors);
    let (label, det) = classify_gesture(&image.inner, &models, &cfg).map_err(to_py)?;
    Ok((
        label.to_string(),
        det.map(|d| (d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.score)),
    ))
}

/// Monocular range estimate from the detected box width.
#[pyfunction]
#[pyo3(signature = (bbox_width_px, reference_distance_ft=3.0, reference_width_px=80.0))]
fn distance_ft(
    bbox_width_px: f64,
    reference_distance_ft: f64,
    reference_width_px: f64,
) -> PyResult<f64> {
    estimate_distance(bbox_width_px, Calibration { reference_distance_ft, reference_width_px })
        .map_err(to_py)
}

/// Simulate a mission from per-frame gesture labels. `world` and `map`
/// take the text of a world/mapping file, not a path. Returns one
/// (t, mode, x, y, z, command, refusal) row per frame.
#[pyfunction]
#[pyo3(signature = (labels, world=None, map=None))]
fn fly_script(
    labels: Vec<String>,
    world: Option<&str>,
    map: Option<&str>,
) -> PyResult<Vec<(f64, String, f64, f64, f64, String, String)>> {
    let frames: Vec<(GestureLabel, Option<f64>)> = labels
        .iter()
        .map(|s| parse_label(s).map(|l| (l, None)))
        .collect::<PyResult<_>>()?;
    let world = match world {
        Some(text) => World::parse(text).map_err(to_py)?,
        None => World::default(),
    };
    let map = match map {
        Some(text) => GestureMap::parse(text).map_err(to_py)?,
        None => GestureMap::default(),
    };
    let outcome = fly_labels(&frames, &map, &world, None).map_err(to_py)?;
    Ok(outcome
        .trace
        .iter()
        .map(|r| {
            (
                r.t,
                r.mode.as_str().to_string(),
                r.position[0],
                r.position[1],
                r.position[2],
                r.command.map(|c| c.as_str()).unwrap_or("").to_string(),
                r.refusal.as_ref().map(|f| f.reason.as_str()).unwrap_or("").to_string(),
            )
        })
        .collect())
}

/// The 32-bit REF argument word (takeoff or land).
#[pyfunction]
fn ref_word(takeoff: bool) -> u32 {
    wire::ref_word(takeoff)
}

/// IEEE-754 bit pattern of a PCMD axis value, as the signed integer the
/// wire format prints.
#[pyfunction]
fn float_arg(v: f32) -> i32 {
    wire::float_arg(v)
}

/// A serialized AT*REF datagram.
#[pyfunction]
fn encode_ref(seq: u32, takeoff: bool) -> Vec<u8> {
    wire::encode_ref(seq, takeoff)
}

/// A serialized AT*PCMD datagram; axes clamp to [-1, 1].
#[pyfunction]
fn encode_pcmd(seq: u32, flag: u8, roll: f32, pitch: f32, gaz: f32, yaw: f32) -> PyResult<Vec<u8>> {
    wire::encode_pcmd(seq, flag, roll, pitch, gaz, yaw).map_err(to_py)
}

#[pymodule]
fn haarpilot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyCascade>()?;
    m.add_function(wrap_pyfunction!(feature_count, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(scan_image, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(distance_ft, m)?)?;
    m.add_function(wrap_pyfunction!(fly_script, m)?)?;
    m.add_function(wrap_pyfunction!(ref_word, m)?)?;
    m.add_function(wrap_pyfunction!(float_arg, m)?)?;
    m.add_function(wrap_pyfunction!(encode_ref, m)?)?;
    m.add_function(wrap_pyfunction!(encode_pcmd, m)?)?;
    m.add("GESTURES", haarpilot::GESTURES.map(|g| g.to_string()))?;
    Ok(())
}
