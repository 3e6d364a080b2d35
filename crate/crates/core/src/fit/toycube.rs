//! Dented-cube experiment: a cube whose faces are pushed in at their
//! centers has the same silhouettes as the plain cube from every ring
//! view, so only the color term can recover the dents.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{run_stage1, AvatarParams, FitConfig, FramePose, Monitor, Scene};
use crate::error::{Error, Result};
use crate::geometry::primitives::{rigid_body, unit_cube};
use crate::geometry::{lbs_pose, project, BodyModel, Mesh};
use crate::losses::{FrameObservation, InitPose};
use crate::raster::rasterize_hard;
use crate::sceneio::chamfer::{chamfer_p2s, ChamferReport};
use crate::sceneio::metrics::iou;
use crate::sceneio::synth::{shade_procedural, synth_camera, CAMERA_DISTANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyCubeMode {
    SilOnly,
    RgbSil,
}

impl ToyCubeMode {
    pub fn name(self) -> &'static str {
        match self {
            ToyCubeMode::SilOnly => "sil-only",
            ToyCubeMode::RgbSil => "rgb-sil",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCubeConfig {
    pub resolution: usize,
    pub views: usize,
    /// Grid cells per cube face edge.
    pub subdivisions: usize,
    /// Inward displacement of each face center, as a fraction of the edge.
    pub dent: f64,
    /// Camera elevation in degrees; views alternate above and below.
    pub elevation_deg: f64,
    pub iters: usize,
    pub lr_offsets: f64,
    pub chamfer_samples: usize,
    pub seed: u64,
}

impl Default for ToyCubeConfig {
    fn default() -> Self {
        ToyCubeConfig {
            resolution: 128,
            views: 12,
            subdivisions: 8,
            dent: 0.25,
            elevation_deg: 25.0,
            iters: 600,
            lr_offsets: 5e-3,
            chamfer_samples: 10_000,
            seed: 0,
        }
    }
}

impl ToyCubeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views < 4 {
            return Err(Error::config(format!("toy cube needs at least 4 views, got {}", self.views)));
        }
        if self.resolution < 16 || self.subdivisions == 0 || self.chamfer_samples == 0 {
            return Err(Error::config("toy cube needs resolution >= 16, subdivisions >= 1 and samples >= 1"));
        }
        if !(0.0..0.5).contains(&self.dent) {
            return Err(Error::config("dent must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Unit cube with every face center pushed inward by `dent` (in edge
/// lengths), following `(1 - u^2)(1 - v^2)` over the face so edges stay put.
pub fn dented_cube(subdivisions: usize, dent: f64) -> Mesh {
    let mut m = unit_cube(subdivisions);
    for p in &mut m.vertices {
        let mut d = Vector3::zeros();
        for axis in 0..3 {
            if (p[axis].abs() - 0.5).abs() > 1e-12 {
                continue;
            }
            let (u, v) = (2.0 * p[(axis + 1) % 3], 2.0 * p[(axis + 2) % 3]);
            d[axis] = -p[axis].signum() * dent * (1.0 - u * u) * (1.0 - v * v);
        }
        *p += d;
    }
    m
}

const PALETTE: [[f64; 3]; 6] = [
    [0.95, 0.1, 0.1],
    [0.1, 0.85, 0.1],
    [0.1, 0.2, 0.95],
    [0.95, 0.9, 0.1],
    [0.05, 0.9, 0.9],
    [0.9, 0.1, 0.85],
];

/// High-contrast 3D cell pattern on plain-cube coordinates; neighboring
/// cells always differ.
pub fn cube_texture(p: &Vector3<f64>, subdivisions: usize) -> [f64; 3] {
    let n = subdivisions as f64;
    let cell = |x: f64| ((x + 0.5) * n).floor() as i64;
    let k = cell(p.x) + 2 * cell(p.y) + 3 * cell(p.z);
    PALETTE[k.rem_euclid(6) as usize]
}

fn look_at_origin(azimuth: f64, elevation: f64, distance: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let c = distance * Vector3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos());
    let z = -c.normalize();
    let x = z.cross(&Vector3::y()).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    (r, -r * c)
}

#[derive(Debug, Clone)]
pub struct ToyCubeScene {
    /// Plain-cube body model with the ground-truth renders.
    pub scene: Scene,
    pub gt: Mesh,
    /// Per-face colors of the texture, known to the fit.
    pub face_colors: Vec<[f64; 3]>,
}

pub fn toy_cube_scene(cfg: &ToyCubeConfig) -> Result<ToyCubeScene> {
    cfg.validate()?;
    let plain = unit_cube(cfg.subdivisions);
    let model: BodyModel = rigid_body(&plain);
    let gt = dented_cube(cfg.subdivisions, cfg.dent);
    let camera = synth_camera(cfg.resolution);
    let tex = |p: &Vector3<f64>| cube_texture(p, cfg.subdivisions);
    let frames = (0..cfg.views)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / cfg.views as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let (rot, trans) = look_at_origin(az, sign * cfg.elevation_deg.to_radians(), CAMERA_DISTANCE);
            let theta = vec![Vector3::zeros()];
            let posed = lbs_pose(&gt, &model, &theta, &rot, &trans)?;
            let frags = rasterize_hard(&project(&camera, &posed.mesh)?, &camera);
            let image = shade_procedural(&frags, &model, &tex);
            FrameObservation::new(image, frags.coverage(), Vec::new(), camera, InitPose { theta, rot, trans })
        })
        .collect::<Result<Vec<_>>>()?;
    let face_colors = (0..plain.num_faces())
        .map(|f| {
            let [a, b, c] = plain.corners(f);
            tex(&((a + b + c) / 3.0))
        })
        .collect();
    Ok(ToyCubeScene {
        scene: Scene { model, frames },
        gt,
        face_colors,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyCubeResult {
    pub mode: ToyCubeMode,
    pub chamfer: f64,
    pub p2s: f64,
    /// Silhouette IoU of the fitted cube over the training views.
    pub iou_min: f64,
    pub iou_mean: f64,
    /// Chamfer of the undeformed cube, for reference.
    pub chamfer_plain: f64,
    #[serde(skip)]
    pub fitted: Mesh,
}

/// Fit configuration of the experiment: offsets only, known colors and
/// fixed cameras; the silhouette-only mode drops the RGB term.
pub fn toy_cube_fit_config(cfg: &ToyCubeConfig, mode: ToyCubeMode) -> FitConfig {
    let mut fc = FitConfig {
        stage1_iters: Some(cfg.iters),
        stage2_iters: Some(0),
        seed: cfg.seed,
        stage1_shape: false,
        stage1_pose: false,
        stage1_face_colors: false,
        stage1_offsets: true,
        ..FitConfig::default()
    };
    fc.lr.offsets = cfg.lr_offsets;
    if mode == ToyCubeMode::SilOnly {
        fc.weights.lambda_rgb = 0.0;
    }
    fc
}

pub fn run_toy_cube(data: &ToyCubeScene, cfg: &ToyCubeConfig, mode: ToyCubeMode, monitor: &mut dyn Monitor) -> Result<ToyCubeResult> {
    let fc = toy_cube_fit_config(cfg, mode);
    let mut params = AvatarParams::init(&data.scene, &fc)?;
    params.face_colors = data.face_colors.clone();
    run_stage1(&data.scene, &mut params, &fc, monitor)?;

    let fitted = params.canonical_mesh(&data.scene.model)?;
    let mut ious = Vec::with_capacity(data.scene.frames.len());
    for (i, f) in data.scene.frames.iter().enumerate() {
        let posed = params.posed(&data.scene.model, i)?;
        let frags = rasterize_hard(&project(&f.camera, &posed.mesh)?, &f.camera);
        ious.push(iou(&frags.coverage(), &f.mask)?);
    }
    let ChamferReport { chamfer, p2s } = chamfer_p2s(&fitted, &data.gt, cfg.chamfer_samples, cfg.seed)?;
    let plain = data.scene.model.rest_mesh();
    let chamfer_plain = chamfer_p2s(&plain, &data.gt, cfg.chamfer_samples, cfg.seed)?.chamfer;
    Ok(ToyCubeResult {
        mode,
        chamfer,
        p2s,
        iou_min: ious.iter().copied().fold(f64::INFINITY, f64::min),
        iou_mean: ious.iter().sum::<f64>() / ious.len() as f64,
        chamfer_plain,
        fitted,
    })
}

/// Initial pose record of a toy-cube frame, for writing manifests.
pub fn frame_pose(f: &FrameObservation) -> FramePose {
    FramePose {
        theta: f.init_pose.theta.clone(),
        rot: crate::geometry::rotation::log_map(&f.init_pose.rot),
        trans: f.init_pose.trans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::signed_volume;

    #[test]
    fn dent_profile() {
        let m = dented_cube(4, 0.25);
        let plain = unit_cube(4);
        for (p, q) in m.vertices.iter().zip(&plain.vertices) {
            let on_edge = q.iter().filter(|c| (c.abs() - 0.5).abs() < 1e-12).count() >= 2;
            if on_edge {
                assert_eq!(p, q);
            }
        }
        // +x face center moves to x = 0.25
        let c = plain.vertices.iter().position(|q| (q - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12).unwrap();
        assert!((m.vertices[c] - Vector3::new(0.25, 0.0, 0.0)).norm() < 1e-12);
        assert!(signed_volume(&m) < signed_volume(&plain));
    }

    #[test]
    fn texture_differs_across_cells() {
        for (a, b) in [
            (Vector3::new(0.01, 0.01, 0.5), Vector3::new(0.3, 0.01, 0.5)),
            (Vector3::new(0.01, 0.01, 0.5), Vector3::new(0.01, 0.3, 0.5)),
        ] {
            assert_ne!(cube_texture(&a, 4), cube_texture(&b, 4));
        }
    }

    #[test]
    fn views_share_the_plain_silhouette() {
        let cfg = ToyCubeConfig {
            resolution: 64,
            views: 4,
            ..Default::default()
        };
        let data = toy_cube_scene(&cfg).unwrap();
        let plain = data.scene.model.rest_mesh();
        for f in &data.scene.frames {
            let posed = lbs_pose(&plain, &data.scene.model, &f.init_pose.theta, &f.init_pose.rot, &f.init_pose.trans).unwrap();
            let cov = rasterize_hard(&project(&f.camera, &posed.mesh).unwrap(), &f.camera).coverage();
            assert!(iou(&cov, &f.mask).unwrap() > 0.995);
            assert!(f.mask.data.iter().sum::<f64>() > 0.15 * 64.0 * 64.0);
        }
    }

    #[test]
    fn too_few_views_are_rejected() {
        let cfg = ToyCubeConfig {
            views: 3,
            ..Default::default()
        };
        assert!(toy_cube_scene(&cfg).is_err());
    }
}
