//! Synthetic scenes of the toy humanoid with known ground truth.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{FramePose, Scene};
use crate::geometry::primitives::toy_humanoid;
use crate::geometry::rotation::{log_map, rodrigues};
use crate::geometry::{build_rest_mesh, lbs_pose, model_keypoints, project, BodyModel, Camera, Mesh};
use crate::losses::{FrameObservation, InitPose, Keypoint};
use crate::raster::{rasterize_hard, FragmentBuffer, GrayImage, RgbImage};
use crate::texfield::interpolate_texcoord;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub resolution: usize,
    /// Training cameras on a ring around the subject.
    pub cameras: usize,
    /// Distinct body poses; every camera sees every pose.
    pub poses: usize,
    /// Extra frames rendered from cameras between the training ones, with
    /// ground-truth poses as their initialization.
    pub held_out: usize,
    pub seed: u64,
    /// Standard deviation of the joint-angle noise in the initial poses.
    pub pose_noise: f64,
    pub trans_noise: f64,
    pub beta: Vec<f64>,
    /// Peak outward displacement of the free-form offsets.
    pub offset_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution: 128,
            cameras: 2,
            poses: 10,
            held_out: 4,
            seed: 0,
            pose_noise: 0.03,
            trans_noise: 0.01,
            beta: vec![0.3, 0.5, -0.3, 0.3],
            offset_scale: 0.03,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    /// Per training frame.
    pub poses: Vec<FramePose>,
    pub canonical: Mesh,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub held_out: Scene,
    pub gt: GroundTruth,
    /// Camera id of every training frame, then of every held-out frame.
    pub camera_of: Vec<usize>,
    pub held_out_camera_of: Vec<usize>,
}

pub const CAMERA_DISTANCE: f64 = 3.0;
const BODY_CENTER_Y: f64 = 0.87;

/// Procedural surface color of the toy humanoid at a template rest point.
pub fn body_color(p: &Vector3<f64>) -> [f64; 3] {
    let base = if p.y > 1.62 {
        [0.86, 0.66, 0.52]
    } else if p.x.abs() > 0.52 && p.y > 1.3 {
        [0.84, 0.64, 0.5]
    } else if p.y > 0.93 {
        [0.78, 0.26, 0.22]
    } else {
        [0.18, 0.28, 0.62]
    };
    let stripe = 0.5 + 0.5 * (14.0 * p.y + 4.0 * p.x).sin();
    let shade = 0.85 + 0.15 * (3.0 * p.z + 2.0 * p.x).cos();
    [
        (base[0] * shade * (0.8 + 0.2 * stripe)).clamp(0.0, 1.0),
        (base[1] * shade * (0.8 + 0.2 * stripe)).clamp(0.0, 1.0),
        (base[2] * shade + 0.1 * stripe).clamp(0.0, 1.0),
    ]
}

/// Camera intrinsics used by the synthetic scenes.
pub fn synth_camera(resolution: usize) -> Camera {
    let r = resolution as f64;
    let f = 0.8 * r * CAMERA_DISTANCE / 1.9;
    Camera {
        fx: f,
        fy: f,
        cx: r / 2.0,
        cy: r / 2.0,
        width: resolution,
        height: resolution,
        near: 0.1,
        far: 10.0,
    }
}

/// Extrinsic rotation of a camera at `azimuth` radians around the subject,
/// composed with a body yaw. The y flip maps the model's +y up onto image up.
pub fn view_pose(azimuth: f64, yaw: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r = flip * rodrigues(&Vector3::new(0.0, azimuth + yaw, 0.0));
    (r, Vector3::new(0.0, BODY_CENTER_Y, CAMERA_DISTANCE))
}

/// Shades fragments with a color function of the interpolated template rest
/// position.
pub fn shade_procedural(
    frags: &FragmentBuffer,
    model: &BodyModel,
    color: &(dyn Fn(&Vector3<f64>) -> [f64; 3] + Sync),
) -> RgbImage {
    let data = frags
        .face
        .par_iter()
        .zip(&frags.bary)
        .map(|(f, b)| match f {
            Some(f) => {
                let face = model.faces[*f as usize];
                color(&interpolate_texcoord(*b, face.map(|v| model.rest_vertices[v])))
            }
            None => [0.0; 3],
        })
        .collect();
    RgbImage {
        width: frags.width,
        height: frags.height,
        data,
    }
}

/// Renders the image, mask and keypoints of one ground-truth frame.
pub fn render_observation(
    model: &BodyModel,
    canonical: &Mesh,
    pose: &FramePose,
    camera: &Camera,
) -> Result<(RgbImage, GrayImage, Vec<Keypoint>)> {
    let posed = lbs_pose(canonical, model, &pose.theta, &rodrigues(&pose.rot), &pose.trans)?;
    let pm = project(camera, &posed.mesh)?;
    let frags = rasterize_hard(&pm, camera);
    let image = shade_procedural(&frags, model, &body_color);
    let mask = frags.coverage();
    let names: Vec<&str> = model.keypoints.iter().map(|(n, _)| n.as_str()).collect();
    let xy = model_keypoints(&posed, model, camera, &names)?;
    let keypoints = names
        .iter()
        .zip(xy)
        .map(|(n, p)| Keypoint {
            name: n.to_string(),
            x: p.x,
            y: p.y,
            confidence: 1.0,
        })
        .collect();
    Ok((image, mask, keypoints))
}

fn random_theta(rng: &mut ChaCha8Rng, nj: usize) -> Vec<Vector3<f64>> {
    let mut theta = vec![Vector3::zeros(); nj];
    let mut u = |s: f64| rng.random_range(-s..s);
    // shoulders swing the arms down and forward, elbows bend
    theta[4] = Vector3::new(u(0.3), u(0.3), -0.7 + u(0.5));
    theta[7] = Vector3::new(u(0.3), u(0.3), 0.7 + u(0.5));
    theta[5] = Vector3::new(0.0, u(0.8), 0.0);
    theta[8] = Vector3::new(0.0, u(0.8), 0.0);
    theta[10] = Vector3::new(u(0.4), 0.0, 0.1 + u(0.1));
    theta[13] = Vector3::new(u(0.4), 0.0, -0.1 + u(0.1));
    theta[11] = Vector3::new(0.2 + u(0.2), 0.0, 0.0);
    theta[14] = Vector3::new(0.2 + u(0.2), 0.0, 0.0);
    theta[1] = Vector3::new(u(0.1), u(0.2), u(0.1));
    theta[3] = Vector3::new(u(0.2), u(0.3), 0.0);
    theta
}

fn gaussian(rng: &mut ChaCha8Rng, s: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    s * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Ground-truth offsets: a smooth outward bulge around the hips.
pub fn bulge_offsets(model: &BodyModel, scale: f64) -> Vec<Vector3<f64>> {
    model
        .rest_vertices
        .iter()
        .map(|v| {
            let radial = Vector3::new(v.x, 0.0, v.z);
            let w = (1.0 - ((v.y - 0.95) / 0.25).powi(2)).max(0.0);
            if v.x.abs() < 0.2 && radial.norm() > 1e-6 {
                radial.normalize() * (scale * w)
            } else {
                Vector3::zeros()
            }
        })
        .collect()
}

/// Toy humanoid seen by `cameras` ring cameras in `poses` random poses, with
/// noisy initial poses and exact keypoints.
pub fn toy_body_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    if cfg.resolution < 16 || cfg.cameras == 0 || cfg.poses == 0 {
        return Err(Error::config("synthetic scene needs resolution >= 16, cameras >= 1 and poses >= 1"));
    }
    let model = toy_humanoid();
    if cfg.beta.len() != model.num_shape() {
        return Err(Error::config(format!("expected {} shape coefficients", model.num_shape())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offsets = bulge_offsets(&model, cfg.offset_scale);
    let canonical = build_rest_mesh(&model, &cfg.beta, &offsets)?;
    let camera = synth_camera(cfg.resolution);
    let nj = model.num_joints();

    let pose_list: Vec<(Vec<Vector3<f64>>, f64)> = (0..cfg.poses)
        .map(|k| {
            let yaw = 2.0 * std::f64::consts::PI * k as f64 / cfg.poses as f64 + rng.random_range(-0.2..0.2);
            (random_theta(&mut rng, nj), yaw)
        })
        .collect();
    let azimuth = |c: usize, n: usize| 2.0 * std::f64::consts::PI * c as f64 / n as f64;

    let mut gt_poses = Vec::new();
    let mut inits = Vec::new();
    let mut camera_of = Vec::new();
    for c in 0..cfg.cameras {
        for (theta, yaw) in &pose_list {
            let (r, t) = view_pose(azimuth(c, cfg.cameras), *yaw);
            let gt = FramePose {
                theta: theta.clone(),
                rot: log_map(&r),
                trans: t,
            };
            let noisy_theta: Vec<_> = theta
                .iter()
                .map(|v| v + Vector3::new(gaussian(&mut rng, cfg.pose_noise), gaussian(&mut rng, cfg.pose_noise), gaussian(&mut rng, cfg.pose_noise)))
                .collect();
            let noisy_t = t + Vector3::new(
                gaussian(&mut rng, cfg.trans_noise),
                gaussian(&mut rng, cfg.trans_noise),
                gaussian(&mut rng, cfg.trans_noise),
            );
            let noisy_r = r * rodrigues(&Vector3::new(0.0, gaussian(&mut rng, cfg.pose_noise), 0.0));
            inits.push(InitPose {
                theta: noisy_theta,
                rot: noisy_r,
                trans: noisy_t,
            });
            gt_poses.push(gt);
            camera_of.push(c);
        }
    }

    let frames = gt_poses
        .par_iter()
        .zip(inits.into_par_iter())
        .map(|(p, init)| {
            let (image, mask, kps) = render_observation(&model, &canonical, p, &camera)?;
            FrameObservation::new(image, mask, kps, camera, init)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut held_poses = Vec::new();
    let mut held_out_camera_of = Vec::new();
    for h in 0..cfg.held_out {
        let (theta, yaw) = &pose_list[h % cfg.poses];
        let az = azimuth(h % cfg.cameras, cfg.cameras) + std::f64::consts::PI / (2.0 * cfg.cameras as f64).max(2.0);
        let (r, t) = view_pose(az, *yaw);
        held_poses.push(FramePose {
            theta: theta.clone(),
            rot: log_map(&r),
            trans: t,
        });
        held_out_camera_of.push(cfg.cameras + h);
    }
    let held_frames = held_poses
        .par_iter()
        .map(|p| {
            let (image, mask, kps) = render_observation(&model, &canonical, p, &camera)?;
            let init = InitPose {
                theta: p.theta.clone(),
                rot: rodrigues(&p.rot),
                trans: p.trans,
            };
            FrameObservation::new(image, mask, kps, camera, init)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthScene {
        scene: Scene {
            model: model.clone(),
            frames,
        },
        held_out: Scene {
            model,
            frames: held_frames,
        },
        gt: GroundTruth {
            beta: cfg.beta.clone(),
            offsets,
            poses: gt_poses,
            canonical,
        },
        camera_of,
        held_out_camera_of,
    })
}
