use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::objective::{Branches, CacheUse, Objective, StopGradCache, Wanted};
use super::params::{AvatarParams, ColorMode, FramePose};
use super::Scene;
use crate::error::{Error, Result};
use crate::geometry::rotation::rodrigues;
use crate::geometry::{lbs_pose, model_keypoints, project, BodyModel, Camera, KeypointSource};
use crate::losses::{FrameObservation, InitPose, Keypoint, LossWeights};
use crate::raster::{rasterize_hard, shade_face_colors, SoftRasterConfig};
use crate::texfield::{HashGridConfig, TextureField};

/// Every group the check knows about, in report order.
pub const GROUPS: [&str; 9] = [
    "beta",
    "offsets",
    "theta",
    "rot",
    "trans",
    "face_colors",
    "texcoords",
    "tables",
    "mlp",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Groups to check; empty means all.
    pub groups: Vec<String>,
    pub step: f64,
    pub seed: u64,
    /// Scales the analytic gradient of one group. Negative control only.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            groups: Vec::new(),
            step: 1e-5,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub entries: usize,
    pub max_abs_grad: f64,
    pub max_abs_err: f64,
    /// Largest deviation relative to the group's largest gradient entry.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.rel_err <= tol)
    }
}

/// Central differences of `f` at `x` compared against `analytic`.
pub fn compare_gradient(
    name: &str,
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GroupReport> {
    if x.len() != analytic.len() {
        return Err(Error::config("gradient length mismatch"));
    }
    let mut xp = x.to_vec();
    let mut max_err = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = f(&xp)?;
        xp[i] = x[i] - step;
        let fm = f(&xp)?;
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        max_err = max_err.max((fd - analytic[i]).abs());
        scale = scale.max(fd.abs()).max(analytic[i].abs());
    }
    Ok(GroupReport {
        group: name.to_string(),
        entries: x.len(),
        max_abs_grad: scale,
        max_abs_err: max_err,
        rel_err: if scale > 0.0 { max_err / scale } else { max_err },
    })
}

fn tiny_body(rng: &mut ChaCha8Rng) -> Result<BodyModel> {
    let rest = vec![
        Vector3::new(0.0, 0.4, 0.0),
        Vector3::new(-0.3, -0.2, -0.3),
        Vector3::new(0.3, -0.2, -0.3),
        Vector3::new(0.3, -0.2, 0.3),
        Vector3::new(-0.3, -0.2, 0.3),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
    let basis = (0..2)
        .map(|_| {
            (0..5)
                .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
                .collect()
        })
        .collect();
    let regressor = [0.0, 0.25, 0.25, 0.25, 0.25, 0.5, 0.125, 0.125, 0.125, 0.125];
    let skin = [0.2, 0.8, 0.7, 0.3, 0.7, 0.3, 0.6, 0.4, 0.6, 0.4];
    BodyModel::new(
        rest,
        faces,
        basis,
        &regressor,
        vec![None, Some(0)],
        &skin,
        vec![
            ("apex".into(), KeypointSource::Vertex(0)),
            ("root".into(), KeypointSource::Joint(0)),
            ("mid".into(), KeypointSource::Joint(1)),
        ],
    )
}

fn small3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

/// A two-frame, four-triangle scene at 32x32 and parameters near (but not
/// at) the values that generated its observations.
pub fn tiny_problem(seed: u64) -> Result<(Scene, AvatarParams, SoftRasterConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = tiny_body(&mut rng)?;
    let camera = Camera {
        fx: 40.0,
        fy: 40.0,
        cx: 16.0,
        cy: 16.0,
        width: 32,
        height: 32,
        near: 0.1,
        far: 10.0,
    };
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let gt_poses: Vec<FramePose> = (0..2)
        .map(|i| FramePose {
            theta: (0..2).map(|_| small3(&mut rng, 0.3)).collect(),
            rot: crate::geometry::rotation::log_map(&(flip * rodrigues(&Vector3::new(0.2, 0.5 + 0.6 * i as f64, 0.1)))),
            trans: Vector3::new(0.05, -0.03, 3.0) + small3(&mut rng, 0.05),
        })
        .collect();
    let gt_beta = vec![0.5, -0.4];
    let gt_offsets: Vec<_> = (0..5).map(|_| small3(&mut rng, 0.03)).collect();
    let gt_colors: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)])
        .collect();
    let canonical = crate::geometry::build_rest_mesh(&model, &gt_beta, &gt_offsets)?;
    let mut frames = Vec::new();
    for p in &gt_poses {
        let posed = lbs_pose(&canonical, &model, &p.theta, &rodrigues(&p.rot), &p.trans)?;
        let pm = project(&camera, &posed.mesh)?;
        let frags = rasterize_hard(&pm, &camera);
        let image = shade_face_colors(&frags, &gt_colors, [0.0; 3]);
        let mask = frags.coverage();
        let names = ["apex", "root", "mid"];
        let kp = model_keypoints(&posed, &model, &camera, &names)?;
        let keypoints = names
            .iter()
            .zip(kp)
            .enumerate()
            .map(|(i, (n, xy))| Keypoint {
                name: n.to_string(),
                x: xy.x + 0.7,
                y: xy.y - 0.4,
                confidence: 1.0 - 0.1 * i as f64,
            })
            .collect();
        let init = InitPose {
            theta: p.theta.clone(),
            rot: rodrigues(&p.rot),
            trans: p.trans,
        };
        frames.push(FrameObservation::new(image, mask, keypoints, camera, init)?);
    }
    let scene = Scene { model, frames };

    let grid = HashGridConfig {
        levels: 2,
        table_size: 64,
        n_min: 2,
        n_max: 4,
        feat_dim: 2,
    };
    let mut texture = TextureField::new(&scene.model.rest_vertices, grid, 8, 2, seed)?;
    for t in texture.tables.iter_mut() {
        *t = rng.random_range(-0.5..0.5);
    }
    let params = AvatarParams {
        beta: vec![0.45, -0.35],
        offsets: gt_offsets.iter().map(|o| o + small3(&mut rng, 0.02)).collect(),
        poses: gt_poses
            .iter()
            .map(|p| FramePose {
                theta: p.theta.iter().map(|t| t + small3(&mut rng, 0.05)).collect(),
                rot: p.rot + small3(&mut rng, 0.03),
                trans: p.trans + small3(&mut rng, 0.03),
            })
            .collect(),
        face_colors: gt_colors
            .iter()
            .map(|c| c.map(|v| v + rng.random_range(-0.1..0.1)))
            .collect(),
        texture,
    };
    let soft = SoftRasterConfig {
        sigma: 2e-3,
        gamma: 5e-2,
        ..SoftRasterConfig::default()
    };
    Ok((scene, params, soft))
}

fn get_group(p: &AvatarParams, g: &str) -> Vec<f64> {
    let v3 = |v: &[Vector3<f64>]| v.iter().flat_map(|x| [x.x, x.y, x.z]).collect::<Vec<_>>();
    match g {
        "beta" => p.beta.clone(),
        "offsets" => v3(&p.offsets),
        "theta" => p.poses.iter().flat_map(|q| v3(&q.theta)).collect(),
        "rot" => p.poses.iter().flat_map(|q| v3(&[q.rot])).collect(),
        "trans" => p.poses.iter().flat_map(|q| v3(&[q.trans])).collect(),
        "face_colors" => p.face_colors.iter().flatten().copied().collect(),
        "texcoords" => v3(&p.texture.texcoords),
        "tables" => p.texture.tables.clone(),
        "mlp" => p.texture.mlp.params.clone(),
        _ => unreachable!(),
    }
}

fn set_group(p: &mut AvatarParams, g: &str, x: &[f64]) {
    let v = |i: usize| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    match g {
        "beta" => p.beta.copy_from_slice(x),
        "offsets" => p.offsets.iter_mut().enumerate().for_each(|(i, o)| *o = v(i)),
        "theta" => {
            let mut k = 0;
            for q in &mut p.poses {
                for t in &mut q.theta {
                    *t = v(k);
                    k += 1;
                }
            }
        }
        "rot" => p.poses.iter_mut().enumerate().for_each(|(i, q)| q.rot = v(i)),
        "trans" => p.poses.iter_mut().enumerate().for_each(|(i, q)| q.trans = v(i)),
        "face_colors" => p
            .face_colors
            .iter_mut()
            .enumerate()
            .for_each(|(i, c)| *c = [x[3 * i], x[3 * i + 1], x[3 * i + 2]]),
        "texcoords" => p.texture.texcoords.iter_mut().enumerate().for_each(|(i, t)| *t = v(i)),
        "tables" => p.texture.tables.copy_from_slice(x),
        "mlp" => p.texture.mlp.params.copy_from_slice(x),
        _ => unreachable!(),
    }
}

fn analytic_group(grad: &super::objective::Gradients, p: &AvatarParams, g: &str) -> Vec<f64> {
    let v3 = |v: &[Vector3<f64>]| v.iter().flat_map(|x| [x.x, x.y, x.z]).collect::<Vec<_>>();
    let pose = |f: &dyn Fn(&super::objective::PoseGradient) -> Vec<f64>, n: usize| -> Vec<f64> {
        grad.poses
            .iter()
            .flat_map(|q| q.as_ref().map(f).unwrap_or_else(|| vec![0.0; n]))
            .collect()
    };
    let nj = p.poses.first().map_or(0, |q| q.theta.len());
    match g {
        "beta" => grad.beta.clone(),
        "offsets" => v3(&grad.offsets),
        "theta" => pose(&|q| v3(&q.theta), 3 * nj),
        "rot" => pose(&|q| v3(&[q.rot]), 3),
        "trans" => pose(&|q| v3(&[q.trans]), 3),
        "face_colors" => grad.face_colors.iter().flatten().copied().collect(),
        "texcoords" => v3(&grad.texture.as_ref().unwrap().texcoords),
        "tables" => grad.texture.as_ref().unwrap().tables.clone(),
        "mlp" => grad.texture.as_ref().unwrap().mlp.clone(),
        _ => unreachable!(),
    }
}

/// Compares analytic gradients of the full objective against central
/// differences on a small randomized scene. Geometry, pose and face-color
/// groups are checked with face-color shading, texture groups with the
/// texture field. Stop-gradient quantities are frozen at their values at
/// the evaluation point.
pub fn grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    for g in &opts.groups {
        if !GROUPS.contains(&g.as_str()) {
            return Err(Error::config(format!(
                "unknown parameter group `{g}` (expected one of {})",
                GROUPS.join(", ")
            )));
        }
    }
    if !(opts.step > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let (scene, params, soft) = tiny_problem(opts.seed)?;
    let objective = Objective {
        scene: &scene,
        weights: LossWeights::default(),
        soft,
        normalize_regularizers: true,
    };
    let batch: Vec<usize> = (0..scene.frames.len()).collect();
    let mut report = GradCheckReport { groups: Vec::new() };

    for mode in [ColorMode::FaceColors, ColorMode::Texture] {
        let groups: Vec<&str> = GROUPS
            .iter()
            .copied()
            .filter(|g| {
                let texture_group = matches!(*g, "texcoords" | "tables" | "mlp");
                texture_group == (mode == ColorMode::Texture)
            })
            .filter(|g| opts.groups.is_empty() || opts.groups.iter().any(|s| s == g))
            .collect();
        if groups.is_empty() {
            continue;
        }
        let mut cache = StopGradCache::default();
        let ev = objective.evaluate(&params, mode, &batch, Branches::ALL, Wanted::ALL, CacheUse::Record(&mut cache))?;
        let grad = ev.grad.expect("gradients requested");
        for g in groups {
            let x = get_group(&params, g);
            let mut a = analytic_group(&grad, &params, g);
            if opts.corrupt.as_deref() == Some(g) {
                for v in &mut a {
                    *v *= 2.0;
                }
            }
            let mut work = params.clone();
            let mut f = |x: &[f64]| -> Result<f64> {
                set_group(&mut work, g, x);
                Ok(objective
                    .evaluate(&work, mode, &batch, Branches::ALL, Wanted::NONE, CacheUse::Replay(&cache))?
                    .total)
            };
            report.groups.push(compare_gradient(g, &mut f, &x, &a, opts.step)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_toy_loss_is_exact() {
        let c = [0.5, -2.0, 3.25, 1.0];
        let mut f = |x: &[f64]| -> Result<f64> { Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + 1.0) };
        let r = compare_gradient("lin", &mut f, &[0.1, 0.2, -0.3, 0.4], &c, 1e-5).unwrap();
        assert!(r.rel_err <= 1e-10, "{r:?}");
    }

    #[test]
    fn full_pipeline_matches_finite_differences() {
        let r = grad_check(&GradCheckOptions::default()).unwrap();
        assert_eq!(r.groups.len(), GROUPS.len());
        for g in &r.groups {
            assert!(g.max_abs_grad > 0.0, "{g:?}");
            assert!(g.rel_err <= 1e-3, "{g:?}");
        }
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let opts = GradCheckOptions {
            groups: vec!["offsets".into(), "mlp".into()],
            corrupt: Some("mlp".into()),
            ..Default::default()
        };
        let r = grad_check(&opts).unwrap();
        let by = |n: &str| r.groups.iter().find(|g| g.group == n).unwrap().rel_err;
        assert!(by("mlp") > 1e-1);
        assert!(by("offsets") <= 1e-3);
        assert!(!r.passes(1e-3));
    }

    #[test]
    fn unknown_group_is_rejected() {
        let opts = GradCheckOptions {
            groups: vec!["bogus".into()],
            ..Default::default()
        };
        assert!(grad_check(&opts).is_err());
    }
}
