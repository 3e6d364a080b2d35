//! Python bindings for meshfit.

use std::path::PathBuf;

use meshfit_core::fit::toycube::{run_toy_cube, toy_cube_scene, ToyCubeConfig, ToyCubeMode};
use meshfit_core::fit::{fit as run_fit, grad_check as run_grad_check, ColorMode, FitConfig, FramePose, GradCheckOptions};
use meshfit_core::fit::{LogRow, RecordingMonitor};
use meshfit_core::geometry::rotation::log_map;
use meshfit_core::geometry::{BodyModel, Mesh};
use meshfit_core::sceneio::metrics::{iou, psnr, ssim};
use meshfit_core::sceneio::synth::{toy_body_scene, SynthConfig};
use meshfit_core::sceneio::{
    chamfer_p2s, export_obj, load_checkpoint, load_scene, read_body_model, save_checkpoint, write_scene, Checkpoint,
};
use meshfit_core::{Error, ErrorKind};
use nalgebra::Vector3;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pymeshfit, MeshfitError, PyException, "Base class of meshfit errors.");
create_exception!(pymeshfit, ConfigError, MeshfitError, "Invalid configuration or arguments.");
create_exception!(pymeshfit, DataError, MeshfitError, "Missing or malformed input data.");
create_exception!(pymeshfit, NumericError, MeshfitError, "Divergence or non-finite values.");

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Usage => ConfigError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Numeric => NumericError::new_err(msg),
    }
}

fn mesh_from_lists(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Mesh> {
    Mesh::new(vertices.into_iter().map(Vector3::from).collect(), faces).map_err(to_py)
}

fn mesh_to_lists(m: &Mesh) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    (m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(), m.faces.to_vec())
}

fn row_dict<'py>(py: Python<'py>, r: &LogRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iter)?;
    d.set_item("stage", &r.stage)?;
    d.set_item("frame", r.frame)?;
    for (k, v) in [
        ("rgb", r.rgb),
        ("sil", r.sil),
        ("kps", r.kps),
        ("nc", r.nc),
        ("fa", r.fa),
        ("total", r.total),
        ("psnr", r.psnr),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

fn parse_config(config: Option<&str>) -> PyResult<FitConfig> {
    match config {
        None => Ok(FitConfig::default()),
        Some(text) => serde_json::from_str(text).map_err(|e| ConfigError::new_err(format!("invalid config: {e}"))),
    }
}

/// A fitted avatar: checkpoint parameters together with their body model.
#[pyclass(module = "pymeshfit")]
struct Avatar {
    ckpt: Checkpoint,
    model: BodyModel,
}

impl Avatar {
    fn pose(&self, scene: &meshfit_core::fit::Scene, frame: usize, poses: &str) -> PyResult<FramePose> {
        let f = scene
            .frames
            .get(frame)
            .ok_or_else(|| PyValueError::new_err(format!("frame {frame} out of range")))?;
        match poses {
            "fitted" => self
                .ckpt
                .params
                .poses
                .get(frame)
                .cloned()
                .ok_or_else(|| PyValueError::new_err(format!("no fitted pose for frame {frame}"))),
            "manifest" => Ok(FramePose {
                theta: f.init_pose.theta.clone(),
                rot: log_map(&f.init_pose.rot),
                trans: f.init_pose.trans,
            }),
            other => Err(PyValueError::new_err(format!("poses must be `fitted` or `manifest`, got `{other}`"))),
        }
    }

    fn mode(&self) -> ColorMode {
        if self.ckpt.stage == "stage1" {
            ColorMode::FaceColors
        } else {
            ColorMode::Texture
        }
    }
}

#[pymethods]
impl Avatar {
    /// Loads a checkpoint and the body model it was fitted with.
    #[staticmethod]
    fn load(checkpoint: PathBuf, body_model: PathBuf) -> PyResult<Self> {
        let model = read_body_model(&body_model).map_err(to_py)?;
        let ckpt = load_checkpoint(&checkpoint).map_err(to_py)?;
        ckpt.check_model(&model).map_err(to_py)?;
        Ok(Avatar { ckpt, model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.ckpt).map_err(to_py)
    }

    #[getter]
    fn stage(&self) -> String {
        self.ckpt.stage.clone()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.ckpt.iteration
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.ckpt.params.beta.clone()
    }

    /// `(vertices, faces)` of the canonical mesh.
    fn canonical_mesh(&self) -> PyResult<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
        let m = self.ckpt.params.canonical_mesh(&self.model).map_err(to_py)?;
        Ok(mesh_to_lists(&m))
    }

    fn export_obj(&self, path: PathBuf) -> PyResult<()> {
        let m = self.ckpt.params.canonical_mesh(&self.model).map_err(to_py)?;
        export_obj(&m, &path).map_err(to_py)
    }

    /// Hard render of one frame of a scene: `(width, height, rgb)` with `rgb`
    /// flat and row-major.
    #[pyo3(signature = (scene, frame, poses = "fitted"))]
    fn render(&self, py: Python<'_>, scene: PathBuf, frame: usize, poses: &str) -> PyResult<(usize, usize, Vec<f64>)> {
        let (scene, _) = load_scene(&scene).map_err(to_py)?;
        let pose = self.pose(&scene, frame, poses)?;
        let cam = scene.frames[frame].camera;
        let bg = self.ckpt.config.soft.background_color;
        let (img, _) = py
            .detach(|| self.ckpt.params.render_view(&self.model, &pose, &cam, self.mode(), bg))
            .map_err(to_py)?;
        Ok((img.width, img.height, img.data.iter().flatten().copied().collect()))
    }

    /// PSNR, SSIM and IoU of every frame of a scene.
    #[pyo3(signature = (scene, poses = "manifest"))]
    fn evaluate<'py>(&self, py: Python<'py>, scene: PathBuf, poses: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let (scene, _) = load_scene(&scene).map_err(to_py)?;
        let bg = self.ckpt.config.soft.background_color;
        let mut out = Vec::with_capacity(scene.frames.len());
        for (i, f) in scene.frames.iter().enumerate() {
            let pose = self.pose(&scene, i, poses)?;
            let (img, mask) = self
                .ckpt
                .params
                .render_view(&self.model, &pose, &f.camera, self.mode(), bg)
                .map_err(to_py)?;
            let d = PyDict::new(py);
            d.set_item("frame", i)?;
            d.set_item("psnr", psnr(&img, &f.image).map_err(to_py)?)?;
            d.set_item("ssim", ssim(&img, &f.image).map_err(to_py)?)?;
            d.set_item("iou", iou(&mask, &f.mask).map_err(to_py)?)?;
            out.push(d);
        }
        Ok(out)
    }
}

/// Writes a synthetic toy-body scene and returns the paths it created.
#[pyfunction]
#[pyo3(signature = (out_dir, resolution = 64, cameras = 2, poses = 2, held_out = 2, seed = 0))]
fn synth_scene<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    resolution: usize,
    cameras: usize,
    poses: usize,
    held_out: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = toy_body_scene(&SynthConfig {
        resolution,
        cameras,
        poses,
        held_out,
        seed,
        ..SynthConfig::default()
    })
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("train", write_scene(&out_dir, "train", &s.scene).map_err(to_py)?)?;
    if !s.held_out.frames.is_empty() {
        d.set_item("heldout", write_scene(&out_dir, "heldout", &s.held_out).map_err(to_py)?)?;
    }
    let gt = out_dir.join("gt_canonical.obj");
    export_obj(&s.gt.canonical, &gt).map_err(to_py)?;
    d.set_item("gt_mesh", gt)?;
    d.set_item("body_model", out_dir.join("body_model.json"))?;
    Ok(d)
}

/// Fits a scene. `config` is a JSON document; missing fields take their
/// defaults. Returns the avatar and the loss log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (scene, config = None, stage1_iters = None, stage2_iters = None, seed = None))]
fn fit<'py>(
    py: Python<'py>,
    scene: PathBuf,
    config: Option<&str>,
    stage1_iters: Option<usize>,
    stage2_iters: Option<usize>,
    seed: Option<u64>,
) -> PyResult<(Avatar, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = parse_config(config)?;
    cfg.stage1_iters = stage1_iters.or(cfg.stage1_iters);
    cfg.stage2_iters = stage2_iters.or(cfg.stage2_iters);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (scene, _) = load_scene(&scene).map_err(to_py)?;
    let (params, rows) = py
        .detach(|| {
            let mut rec = RecordingMonitor::default();
            run_fit(&scene, &cfg, &mut rec).map(|p| (p, rec.rows))
        })
        .map_err(to_py)?;
    let stage = if cfg.one_stage { "joint" } else { "stage2" };
    let ckpt = Checkpoint::new(&scene.model, stage, rows.len(), &cfg, &params);
    let rows = rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    Ok((
        Avatar {
            ckpt,
            model: scene.model,
        },
        rows,
    ))
}

/// Runs the dented-cube experiment in one loss mode (`sil-only` or
/// `rgb-sil`).
#[pyfunction]
#[pyo3(signature = (mode = "rgb-sil", views = 12, resolution = 128, iters = 600, subdivisions = 8, seed = 0))]
fn toy_cube<'py>(
    py: Python<'py>,
    mode: &str,
    views: usize,
    resolution: usize,
    iters: usize,
    subdivisions: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "sil-only" => ToyCubeMode::SilOnly,
        "rgb-sil" => ToyCubeMode::RgbSil,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let cfg = ToyCubeConfig {
        views,
        resolution,
        iters,
        subdivisions,
        seed,
        ..ToyCubeConfig::default()
    };
    let r = py
        .detach(|| {
            let data = toy_cube_scene(&cfg)?;
            run_toy_cube(&data, &cfg, mode, &mut ())
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mode", r.mode.name())?;
    d.set_item("chamfer", r.chamfer)?;
    d.set_item("p2s", r.p2s)?;
    d.set_item("iou_min", r.iou_min)?;
    d.set_item("iou_mean", r.iou_mean)?;
    d.set_item("chamfer_undeformed", r.chamfer_plain)?;
    Ok(d)
}

/// Central-difference gradient check; one dict per parameter group.
#[pyfunction]
#[pyo3(signature = (groups = None, step = 1e-5, seed = 0))]
fn grad_check<'py>(
    py: Python<'py>,
    groups: Option<Vec<String>>,
    step: f64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = GradCheckOptions {
        groups: groups.unwrap_or_default(),
        step,
        seed,
        corrupt: None,
    };
    let report = py.detach(|| run_grad_check(&opts)).map_err(to_py)?;
    report
        .groups
        .iter()
        .map(|g| {
            let d = PyDict::new(py);
            d.set_item("group", &g.group)?;
            d.set_item("entries", g.entries)?;
            d.set_item("max_abs_grad", g.max_abs_grad)?;
            d.set_item("max_abs_err", g.max_abs_err)?;
            d.set_item("rel_err", g.rel_err)?;
            Ok(d)
        })
        .collect()
}

/// `(chamfer, p2s)` between two triangle meshes given as vertex and face
/// lists.
#[pyfunction]
#[pyo3(signature = (vertices_a, faces_a, vertices_b, faces_b, samples = 10_000, seed = 0))]
fn chamfer(
    py: Python<'_>,
    vertices_a: Vec<[f64; 3]>,
    faces_a: Vec<[usize; 3]>,
    vertices_b: Vec<[f64; 3]>,
    faces_b: Vec<[usize; 3]>,
    samples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let a = mesh_from_lists(vertices_a, faces_a)?;
    let b = mesh_from_lists(vertices_b, faces_b)?;
    let r = py.detach(|| chamfer_p2s(&a, &b, samples, seed)).map_err(to_py)?;
    Ok((r.chamfer, r.p2s))
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn pymeshfit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("MeshfitError", py.get_type::<MeshfitError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_class::<Avatar>()?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(toy_cube, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use meshfit_core::geometry::primitives::unit_cube;

    #[test]
    fn mesh_lists_round_trip() {
        let m = unit_cube(2);
        let (v, f) = mesh_to_lists(&m);
        let back = mesh_from_lists(v, f).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(&*back.faces, &*m.faces);
    }

    #[test]
    fn config_json_fills_defaults() {
        let c = parse_config(Some("{\"stage1_iters\": 7}")).unwrap();
        assert_eq!(c.stage1_iters, Some(7));
        assert_eq!(c.lr, FitConfig::default().lr);
    }
}
