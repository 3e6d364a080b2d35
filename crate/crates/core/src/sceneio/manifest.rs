//! `scene-v1` manifests and per-frame keypoint documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bodymodel::{read_body_model, write_body_model};
use super::images::{read_gray, read_rgb, write_gray, write_rgb};
use crate::error::{Error, Result};
use crate::fit::{FramePose, Scene};
use crate::geometry::rotation::{log_map, rodrigues};
use crate::geometry::{BodyModel, Camera};
use crate::losses::{FrameObservation, InitPose, Keypoint};

pub const SCENE_FORMAT: &str = "scene-v1";

/// Extra world-to-camera transform of a frame, composed after its initial
/// pose: `x_cam = R_e (R x + t) + t_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extrinsic {
    /// Axis-angle rotation.
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
    pub camera: String,
    pub init_pose: FramePose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsic: Option<Extrinsic>,
}

/// Scene description. Relative paths are resolved against the directory
/// holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub format: String,
    pub body_model: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub cameras: BTreeMap<String, Camera>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointDocument {
    /// Pixel coordinates, origin at the top-left image corner.
    pub keypoints: Vec<Keypoint>,
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Keypoint>> {
    let entry = path.display().to_string();
    if !path.exists() {
        return Err(Error::load(entry, "file not found"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: KeypointDocument = serde_json::from_str(&text).map_err(|e| Error::load(&entry, e.to_string()))?;
    for k in &doc.keypoints {
        if !(k.x.is_finite() && k.y.is_finite() && (0.0..=1.0).contains(&k.confidence)) {
            return Err(Error::load(
                &entry,
                format!("keypoint `{}` needs finite coordinates and a confidence in [0, 1]", k.name),
            ));
        }
    }
    Ok(doc.keypoints)
}

pub fn write_keypoints(path: &Path, keypoints: &[Keypoint]) -> Result<()> {
    let doc = KeypointDocument {
        keypoints: keypoints.to_vec(),
    };
    write_json(path, &doc)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and parses a manifest without touching the files it references.
pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let entry = path.display().to_string();
    if !path.exists() {
        return Err(Error::load(entry, "file not found"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::load(&entry, e.to_string()))?;
    if m.format != SCENE_FORMAT {
        return Err(Error::load(
            entry,
            format!("unsupported format `{}` (expected {SCENE_FORMAT})", m.format),
        ));
    }
    Ok(m)
}

fn existing(base: &Path, rel: &Path) -> Result<PathBuf> {
    let p = base.join(rel);
    if !p.is_file() {
        return Err(Error::load(p.display().to_string(), "file not found"));
    }
    Ok(p)
}

/// Initial camera-space pose of a record, with the extrinsic folded in.
pub fn compose_pose(pose: &FramePose, extrinsic: Option<&Extrinsic>) -> InitPose {
    let r = rodrigues(&pose.rot);
    match extrinsic {
        None => InitPose {
            theta: pose.theta.clone(),
            rot: r,
            trans: pose.trans,
        },
        Some(e) => {
            let re = rodrigues(&e.rot);
            InitPose {
                theta: pose.theta.clone(),
                rot: re * r,
                trans: re * pose.trans + e.trans,
            }
        }
    }
}

fn load_frame(base: &Path, m: &SceneManifest, model: &BodyModel, i: usize) -> Result<FrameObservation> {
    let rec = &m.frames[i];
    let entry = format!("frame {i}");
    let camera = *m
        .cameras
        .get(&rec.camera)
        .ok_or_else(|| Error::load(&entry, format!("unknown camera `{}`", rec.camera)))?;
    camera.validate().map_err(|e| Error::load(format!("camera `{}`", rec.camera), e.to_string()))?;
    if rec.init_pose.theta.len() != model.num_joints() {
        return Err(Error::load(
            &entry,
            format!(
                "init_pose has {} joint rotations, the body model has {}",
                rec.init_pose.theta.len(),
                model.num_joints()
            ),
        ));
    }
    let image_path = existing(base, &rec.image)?;
    let mask_path = existing(base, &rec.mask)?;
    let image = read_rgb(&image_path)?;
    let mask = read_gray(&mask_path)?;
    for (what, p, w, h) in [
        ("image", &image_path, image.width, image.height),
        ("mask", &mask_path, mask.width, mask.height),
    ] {
        if (w, h) != (camera.width, camera.height) {
            return Err(Error::load(
                p.display().to_string(),
                format!("{what} is {w}x{h} but camera `{}` is {}x{}", rec.camera, camera.width, camera.height),
            ));
        }
    }
    if mask.data.iter().all(|&v| v < 0.5) {
        return Err(Error::load(format!("{entry} ({})", mask_path.display()), "empty foreground"));
    }
    let keypoints = match &rec.keypoints {
        Some(k) => read_keypoints(&existing(base, k)?)?,
        None => Vec::new(),
    };
    let init = compose_pose(&rec.init_pose, rec.extrinsic.as_ref());
    FrameObservation::new(image, mask, keypoints, camera, init).map_err(|e| Error::load(entry, e.to_string()))
}

/// Loads the body model and every frame of a manifest. Frames are decoded
/// in parallel; the first failing frame (in manifest order) is reported.
pub fn load_scene(path: &Path) -> Result<(Scene, SceneManifest)> {
    let m = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if m.frames.is_empty() {
        return Err(Error::load(path.display().to_string(), "manifest lists no frames"));
    }
    let model = read_body_model(&base.join(&m.body_model))?;
    let frames = (0..m.frames.len())
        .into_par_iter()
        .map(|i| load_frame(base, &m, &model, i))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (frames[0].camera.width, frames[0].camera.height);
    if let Some(i) = frames.iter().position(|f| (f.camera.width, f.camera.height) != (w, h)) {
        return Err(Error::load(
            format!("frame {i}"),
            format!("resolution differs from frame 0 ({w}x{h})"),
        ));
    }
    Ok((Scene { model, frames }, m))
}

/// Writes a scene as a manifest `<name>.json` in `dir`, with the body model
/// in `body_model.json`, PNG images and masks and one keypoint document per
/// frame. Identical cameras share one table entry.
pub fn write_scene(dir: &Path, name: &str, scene: &Scene) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_body_model(&scene.model, &dir.join("body_model.json"))?;
    let mut cameras: Vec<Camera> = Vec::new();
    let mut frames = Vec::with_capacity(scene.frames.len());
    for (i, f) in scene.frames.iter().enumerate() {
        let cam = match cameras.iter().position(|c| *c == f.camera) {
            Some(k) => k,
            None => {
                cameras.push(f.camera);
                cameras.len() - 1
            }
        };
        let image = PathBuf::from(format!("{name}_image_{i:03}.png"));
        let mask = PathBuf::from(format!("{name}_mask_{i:03}.png"));
        let kps = PathBuf::from(format!("{name}_keypoints_{i:03}.json"));
        write_rgb(&dir.join(&image), &f.image)?;
        write_gray(&dir.join(&mask), &f.mask)?;
        write_keypoints(&dir.join(&kps), &f.keypoints)?;
        frames.push(FrameRecord {
            image,
            mask,
            keypoints: Some(kps),
            camera: format!("cam{cam}"),
            init_pose: FramePose {
                theta: f.init_pose.theta.clone(),
                rot: log_map(&f.init_pose.rot),
                trans: f.init_pose.trans,
            },
            extrinsic: None,
        });
    }
    let manifest = SceneManifest {
        format: SCENE_FORMAT.into(),
        body_model: "body_model.json".into(),
        output_dir: None,
        cameras: cameras
            .into_iter()
            .enumerate()
            .map(|(k, c)| (format!("cam{k}"), c))
            .collect(),
        frames,
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Reads a standalone pose document in the manifest's `init_pose` schema.
pub fn read_pose(path: &Path) -> Result<FramePose> {
    let entry = path.display().to_string();
    if !path.exists() {
        return Err(Error::load(entry, "file not found"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(entry, e.to_string()))
}
