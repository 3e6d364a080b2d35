//! Objective terms and their gradients.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{face_areas, face_areas_vjp, face_normals, face_normals_vjp, Camera, Mesh};
use crate::raster::{GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_rgb: f64,
    pub lambda_sil: f64,
    pub lambda_kps: f64,
    pub lambda_nc: f64,
    pub lambda_fa: f64,
    /// Keypoints below this confidence are ignored.
    pub keypoint_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rgb: 4.0,
            lambda_sil: 4.0,
            lambda_kps: 0.01,
            lambda_nc: 0.5,
            lambda_fa: 2.5,
            keypoint_threshold: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_sil", self.lambda_sil),
            ("lambda_kps", self.lambda_kps),
            ("lambda_nc", self.lambda_nc),
            ("lambda_fa", self.lambda_fa),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Initial articulated pose and extrinsics of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InitPose {
    pub theta: Vec<Vector3<f64>>,
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub keypoints: Vec<Keypoint>,
    pub camera: Camera,
    pub init_pose: InitPose,
}

impl FrameObservation {
    /// Binarizes the mask, blacks out the image outside it and zeroes the
    /// confidence of keypoints that fall outside the frame.
    pub fn new(
        mut image: RgbImage,
        mut mask: GrayImage,
        mut keypoints: Vec<Keypoint>,
        camera: Camera,
        init_pose: InitPose,
    ) -> Result<Self> {
        camera.validate()?;
        if (image.width, image.height) != (camera.width, camera.height)
            || (mask.width, mask.height) != (camera.width, camera.height)
        {
            return Err(Error::config(format!(
                "image {}x{} / mask {}x{} do not match camera {}x{}",
                image.width, image.height, mask.width, mask.height, camera.width, camera.height
            )));
        }
        for (px, m) in image.data.iter_mut().zip(mask.data.iter_mut()) {
            *m = if *m >= 0.5 { 1.0 } else { 0.0 };
            if *m == 0.0 {
                *px = [0.0; 3];
            }
        }
        for k in &mut keypoints {
            let inside = k.x >= 0.0 && k.y >= 0.0 && k.x <= camera.width as f64 && k.y <= camera.height as f64;
            if !inside || !k.x.is_finite() || !k.y.is_finite() {
                log::warn!("keypoint `{}` at ({}, {}) lies outside the image; ignored", k.name, k.x, k.y);
                k.confidence = 0.0;
            }
        }
        Ok(FrameObservation {
            image,
            mask,
            keypoints,
            camera,
            init_pose,
        })
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::config(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

fn l1_mean(gt: &RgbImage, img: &RgbImage) -> f64 {
    let n = 3.0 * gt.data.len() as f64;
    gt.data
        .iter()
        .zip(&img.data)
        .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs())
        .sum::<f64>()
        / n
}

fn l1_mean_grad(gt: &RgbImage, img: &RgbImage) -> Vec<[f64; 3]> {
    let n = 3.0 * gt.data.len() as f64;
    let sign = |d: f64| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    };
    gt.data
        .iter()
        .zip(&img.data)
        .map(|(a, b)| [sign(b[0] - a[0]), sign(b[1] - a[1]), sign(b[2] - a[2])])
        .collect()
}

/// Sum of the per-pixel-channel mean absolute errors of both renders.
pub fn loss_rgb(gt: &RgbImage, hard: &RgbImage, soft: &RgbImage) -> Result<f64> {
    check_dims((gt.width, gt.height), (hard.width, hard.height))?;
    check_dims((gt.width, gt.height), (soft.width, soft.height))?;
    Ok(l1_mean(gt, hard) + l1_mean(gt, soft))
}

/// Gradients of [`loss_rgb`] on the hard and soft renders.
pub fn loss_rgb_grad(gt: &RgbImage, hard: &RgbImage, soft: &RgbImage) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    check_dims((gt.width, gt.height), (hard.width, hard.height))?;
    check_dims((gt.width, gt.height), (soft.width, soft.height))?;
    Ok((l1_mean_grad(gt, hard), l1_mean_grad(gt, soft)))
}

fn iou_parts(s_hat: &GrayImage, s: &GrayImage) -> (f64, f64) {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (a, b) in s_hat.data.iter().zip(&s.data) {
        inter += a * b;
        union += a + b - a * b;
    }
    (inter, union)
}

/// Soft IoU loss `1 - sum(S^ S) / sum(S^ + S - S^ S)`; 0 when both masks
/// are empty.
pub fn loss_silhouette(s_hat: &GrayImage, s: &GrayImage) -> Result<f64> {
    check_dims((s_hat.width, s_hat.height), (s.width, s.height))?;
    let (i, u) = iou_parts(s_hat, s);
    Ok(if u <= 0.0 { 0.0 } else { 1.0 - i / u })
}

pub fn loss_silhouette_grad(s_hat: &GrayImage, s: &GrayImage) -> Result<Vec<f64>> {
    check_dims((s_hat.width, s_hat.height), (s.width, s.height))?;
    let (i, u) = iou_parts(s_hat, s);
    if u <= 0.0 {
        return Ok(vec![0.0; s.data.len()]);
    }
    let u2 = u * u;
    Ok(s.data.iter().map(|b| -(b * u - i * (1.0 - b)) / u2).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointLoss {
    pub value: f64,
    /// Gradient on each predicted keypoint, in input order.
    pub grads: Vec<Vector2<f64>>,
    pub matched: usize,
}

/// Confidence-weighted sum of squared pixel distances between predicted and
/// observed keypoints matched by name.
pub fn loss_keypoints(pred: &[(&str, Vector2<f64>)], obs: &[Keypoint], threshold: f64) -> KeypointLoss {
    let mut value = 0.0;
    let mut grads = vec![Vector2::zeros(); pred.len()];
    let mut matched = 0;
    for (i, (name, p)) in pred.iter().enumerate() {
        let Some(k) = obs.iter().find(|k| k.name == *name) else {
            continue;
        };
        if k.confidence < threshold {
            continue;
        }
        let d = p - Vector2::new(k.x, k.y);
        value += k.confidence * d.norm_squared();
        grads[i] = d * (2.0 * k.confidence);
        matched += 1;
    }
    if matched == 0 {
        log::warn!("no keypoints matched above confidence {threshold}");
    }
    KeypointLoss { value, grads, matched }
}

/// `sum (1 - n_j . n_k)` over adjacent face pairs; pairs touching a
/// degenerate face are skipped.
pub fn loss_normal_consistency(mesh: &Mesh, pairs: &[(usize, usize)]) -> f64 {
    let n = face_normals(mesh);
    pairs
        .iter()
        .filter(|(a, b)| !n.degenerate[*a] && !n.degenerate[*b])
        .map(|(a, b)| 1.0 - n.normals[*a].dot(&n.normals[*b]))
        .sum()
}

pub fn loss_normal_consistency_grad(mesh: &Mesh, pairs: &[(usize, usize)]) -> Vec<Vector3<f64>> {
    let n = face_normals(mesh);
    let mut gn = vec![Vector3::zeros(); mesh.num_faces()];
    for &(a, b) in pairs {
        if n.degenerate[a] || n.degenerate[b] {
            continue;
        }
        gn[a] -= n.normals[b];
        gn[b] -= n.normals[a];
    }
    face_normals_vjp(mesh, &gn)
}

const MIN_AREA: f64 = 1e-12;

/// Reference face areas of the undeformed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaReference {
    pub areas: Vec<f64>,
}

impl AreaReference {
    pub fn new(mesh0: &Mesh) -> Result<Self> {
        let areas = face_areas(mesh0);
        if let Some(f) = areas.iter().position(|a| !(*a > 0.0)) {
            return Err(Error::config(format!("reference mesh face {f} has zero area")));
        }
        Ok(AreaReference { areas })
    }
}

/// `sum_j (A_j / A'_j + A'_j / A_j)` with `A_j` clamped below at 1e-12.
pub fn loss_face_area(mesh: &Mesh, reference: &AreaReference) -> Result<f64> {
    if mesh.num_faces() != reference.areas.len() {
        return Err(Error::config("face-area loss needs meshes with identical topology"));
    }
    Ok(face_areas(mesh)
        .iter()
        .zip(&reference.areas)
        .map(|(a, r)| {
            let a = a.max(MIN_AREA);
            a / r + r / a
        })
        .sum())
}

pub fn loss_face_area_grad(mesh: &Mesh, reference: &AreaReference) -> Result<Vec<Vector3<f64>>> {
    if mesh.num_faces() != reference.areas.len() {
        return Err(Error::config("face-area loss needs meshes with identical topology"));
    }
    let ga: Vec<f64> = face_areas(mesh)
        .iter()
        .zip(&reference.areas)
        .map(|(a, r)| if *a < MIN_AREA { 0.0 } else { (a - r) * (a + r) / (a * a * r) })
        .collect();
    Ok(face_areas_vjp(mesh, &ga))
}

/// Gradient of [`loss_face_area`] with respect to the vertices of the
/// reference mesh the areas were taken from.
pub fn loss_face_area_reference_grad(mesh: &Mesh, mesh0: &Mesh) -> Result<Vec<Vector3<f64>>> {
    if mesh.num_faces() != mesh0.num_faces() {
        return Err(Error::config("face-area loss needs meshes with identical topology"));
    }
    let ga: Vec<f64> = face_areas(mesh)
        .iter()
        .zip(face_areas(mesh0))
        .map(|(a, r)| {
            let a = a.max(MIN_AREA);
            (r - a) * (r + a) / (a * r * r)
        })
        .collect();
    Ok(face_areas_vjp(mesh0, &ga))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameTerms {
    pub rgb: f64,
    pub sil: f64,
    pub kps: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegTerms {
    pub nc: f64,
    pub fa: f64,
}

/// Weighted objective: per-frame terms summed over frames, regularizers
/// added once.
pub fn loss_total(frames: &[FrameTerms], reg: &RegTerms, w: &LossWeights) -> f64 {
    let per_frame: f64 = frames
        .iter()
        .map(|t| w.lambda_rgb * t.rgb + w.lambda_sil * t.sil + w.lambda_kps * t.kps)
        .sum();
    per_frame + w.lambda_nc * reg.nc + w.lambda_fa * reg.fa
}
