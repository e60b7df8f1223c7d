//! Python bindings: classification, plan validation, camera math and the
//! offline evaluation pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use arguide_core::compiler::uses_particles as core_uses_particles;
use arguide_core::eval::{aggregate as core_aggregate, render_text, to_csv, to_json, FixtureBundle, Replayer, StepOutcome};
use arguide_core::geometry::{self, CameraIntrinsics, CameraPose, Mat3, Point2, Vec3, WorldPoint};
use arguide_core::plan::{classify_visual_type, parse_plan, ClassifierLexicons};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Classifies an instruction's wording.
///
/// Returns `(code, label, rule, token)`; `token` is None when no word
/// list matched and the default applied.
#[pyfunction]
fn classify(instruction: &str) -> (u8, &'static str, String, Option<String>) {
    let t = classify_visual_type(instruction, ClassifierLexicons::builtin());
    (t.visual_type.code(), t.visual_type.label(), format!("{:?}", t.rule), t.token)
}

/// Parses and validates a plan document, returning its step count.
/// Raises ValueError naming every violation.
#[pyfunction]
fn validate_plan(document: &str) -> PyResult<usize> {
    parse_plan(document).map(|p| p.len()).map_err(value_err)
}

/// True when a target whose shortest world-space edge is `min_edge_m`
/// metres gets a particle highlight instead of a box.
#[pyfunction]
fn uses_particles(min_edge_m: f64) -> bool {
    core_uses_particles(min_edge_m)
}

/// Pinhole camera with an optional camera-to-world pose.
#[pyclass(frozen)]
struct Camera {
    k: CameraIntrinsics,
    pose: CameraPose,
}

#[pymethods]
impl Camera {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height, rotation=None, translation=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Option<[[f64; 3]; 3]>,
        translation: Option<[f64; 3]>,
    ) -> PyResult<Self> {
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(value_err)?;
        let r = rotation.map(|r| Mat3::from_fn(|i, j| r[i][j])).unwrap_or_else(Mat3::identity);
        let t = translation.map(Vec3::from).unwrap_or_else(Vec3::zeros);
        let pose = CameraPose::new(r, t).map_err(value_err)?;
        Ok(Camera { k, pose })
    }

    /// World point seen at pixel `(u, v)` at metric depth `depth`.
    fn unproject(&self, u: f64, v: f64, depth: f64) -> PyResult<(f64, f64, f64)> {
        let q = geometry::unproject(Point2::new(u, v), depth, &self.k, &self.pose).map_err(value_err)?;
        Ok((q.x, q.y, q.z))
    }

    /// Pixel where a world point lands. Raises ValueError behind the camera.
    fn project(&self, x: f64, y: f64, z: f64) -> PyResult<(f64, f64)> {
        let p = geometry::project(&WorldPoint::new(x, y, z), &self.k, &self.pose).map_err(value_err)?;
        Ok((p.u, p.v))
    }
}

fn load_bundles(path: &str) -> PyResult<Vec<FixtureBundle>> {
    let dir = PathBuf::from(path);
    let loaded = if dir.join("bundle.json").is_file() { FixtureBundle::load(&dir).map(|b| vec![b]) } else { FixtureBundle::load_all(&dir) };
    loaded.map_err(value_err)
}

/// Replays a bundle directory (or a directory of bundles) against the
/// canned provider replies and returns the per-step outcomes as JSON.
#[pyfunction]
fn replay(py: Python<'_>, bundles: &str) -> PyResult<String> {
    let bundles = load_bundles(bundles)?;
    let outcomes = py
        .detach(|| {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(Replayer::mock().replay_all(&bundles)).map_err(|e| std::io::Error::other(e.to_string()))
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string(&outcomes).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Folds outcome JSON into a report rendered as `text`, `csv` or `json`.
#[pyfunction]
#[pyo3(signature = (outcomes, format="text"))]
fn aggregate(outcomes: &str, format: &str) -> PyResult<String> {
    let outcomes: Vec<StepOutcome> = serde_json::from_str(outcomes).map_err(value_err)?;
    let report = core_aggregate(&outcomes);
    match format {
        "text" => Ok(render_text(&report)),
        "csv" => Ok(to_csv(&report)),
        "json" => Ok(to_json(&report).to_string()),
        other => Err(PyValueError::new_err(format!("unknown format {other:?}; expected text, csv or json"))),
    }
}

#[pymodule]
fn arguide(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(validate_plan, m)?)?;
    m.add_function(wrap_pyfunction!(uses_particles, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_class::<Camera>()?;
    Ok(())
}
