use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::params::{AvatarParams, ColorMode};
use super::Scene;
use crate::error::Result;
use crate::geometry::rotation::{rodrigues, rodrigues_vjp};
use crate::geometry::{
    build_rest_mesh, build_rest_mesh_vjp, lbs_pose, lbs_pose_vjp, model_keypoints, model_keypoints_vjp, project,
    project_vjp, Face, Mesh, Posed, ProjectedMesh,
};
use crate::losses::{
    loss_face_area, loss_face_area_grad, loss_face_area_reference_grad, loss_keypoints, loss_normal_consistency,
    loss_normal_consistency_grad, loss_rgb, loss_rgb_grad, loss_silhouette, loss_silhouette_grad, loss_total,
    AreaReference, FrameTerms, LossWeights, RegTerms,
};
use crate::raster::{
    rasterize_hard, shade_face_colors, shade_face_colors_vjp, shade_fragments, shade_fragments_vjp, soft_render,
    soft_render_vjp, FragmentBuffer, RenderOutput, RgbImage, SoftRasterConfig,
};
use crate::sceneio::metrics::psnr;
use crate::texfield::TextureGrad;

/// Which loss paths send gradient backwards. Loss values are always
/// computed in full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branches {
    pub hard_rgb: bool,
    pub soft_rgb: bool,
    pub silhouette: bool,
    pub keypoints: bool,
    pub regularizers: bool,
}

impl Branches {
    pub const ALL: Branches = Branches {
        hard_rgb: true,
        soft_rgb: true,
        silhouette: true,
        keypoints: true,
        regularizers: true,
    };

    pub fn hard_only() -> Self {
        Branches {
            hard_rgb: true,
            soft_rgb: false,
            silhouette: false,
            keypoints: false,
            regularizers: false,
        }
    }

    pub fn without_hard() -> Self {
        Branches {
            hard_rgb: false,
            ..Self::ALL
        }
    }
}

/// Which gradients to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wanted {
    pub shape: bool,
    pub pose: bool,
    pub face_colors: bool,
    pub texture: bool,
}

impl Wanted {
    pub const ALL: Wanted = Wanted {
        shape: true,
        pose: true,
        face_colors: true,
        texture: true,
    };
    pub const NONE: Wanted = Wanted {
        shape: false,
        pose: false,
        face_colors: false,
        texture: false,
    };

    fn geometry(&self) -> bool {
        self.shape || self.pose
    }

    fn any(&self) -> bool {
        self.geometry() || self.face_colors || self.texture
    }
}

#[derive(Debug, Clone)]
struct FrameCache {
    frags: FragmentBuffer,
    soft_colors: Vec<[f64; 3]>,
}

/// Frozen values of everything behind a stop-gradient: hard-raster
/// visibility and the colors fed to the soft branch. Replaying a cache
/// turns the objective into the function the analytic gradient describes.
#[derive(Debug, Clone, Default)]
pub struct StopGradCache {
    frames: BTreeMap<usize, FrameCache>,
}

pub enum CacheUse<'c> {
    Off,
    Record(&'c mut StopGradCache),
    Replay(&'c StopGradCache),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub theta: Vec<Vector3<f64>>,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl PoseGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.theta.iter().flat_map(|t| [t.x, t.y, t.z]).collect();
        out.extend_from_slice(self.rot.as_slice());
        out.extend_from_slice(self.trans.as_slice());
        out
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub beta: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    /// Indexed by frame; `None` for frames outside the batch.
    pub poses: Vec<Option<PoseGradient>>,
    pub face_colors: Vec<[f64; 3]>,
    pub texture: Option<TextureGrad>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEval {
    pub frame: usize,
    pub terms: FrameTerms,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub frames: Vec<FrameEval>,
    pub reg: RegTerms,
    pub total: f64,
    pub grad: Option<Gradients>,
}

/// The fitting objective over one scene.
pub struct Objective<'a> {
    pub scene: &'a Scene,
    pub weights: LossWeights,
    pub soft: SoftRasterConfig,
    pub normalize_regularizers: bool,
}

/// Hard and soft renders of one frame.
pub struct FrameRender {
    pub hard: RgbImage,
    pub soft: RenderOutput,
    pub frags: FragmentBuffer,
    pub soft_colors: Vec<[f64; 3]>,
}

struct FrameState {
    posed: Posed,
    pm: ProjectedMesh,
    render: FrameRender,
}

impl<'a> Objective<'a> {
    fn reg_scales(&self, faces: usize) -> (f64, f64) {
        if self.normalize_regularizers {
            let pairs = self.scene.model.adjacency().len().max(1);
            (1.0 / pairs as f64, 1.0 / faces.max(1) as f64)
        } else {
            (1.0, 1.0)
        }
    }

    /// Renders one frame with both branches.
    pub fn render_frame(&self, params: &AvatarParams, mode: ColorMode, frame: usize) -> Result<FrameRender> {
        let canonical = params.canonical_mesh(&self.scene.model)?;
        Ok(self.forward_frame(params, mode, &canonical, frame, None)?.render)
    }

    fn forward_frame(
        &self,
        params: &AvatarParams,
        mode: ColorMode,
        canonical: &Mesh,
        frame: usize,
        cached: Option<&FrameCache>,
    ) -> Result<FrameState> {
        let model = &self.scene.model;
        let obs = &self.scene.frames[frame];
        let pose = &params.poses[frame];
        let posed = lbs_pose(canonical, model, &pose.theta, &rodrigues(&pose.rot), &pose.trans)?;
        let pm = project(&obs.camera, &posed.mesh)?;
        let frags = match cached {
            Some(c) => c.frags.clone(),
            None => rasterize_hard(&pm, &obs.camera),
        };
        let bg = self.soft.background_color;
        let hard = match mode {
            ColorMode::FaceColors => shade_face_colors(&frags, &params.face_colors, bg),
            ColorMode::Texture => shade_fragments(&frags, &params.texture, &model.faces, bg),
        };
        let soft_colors = match cached {
            Some(c) => c.soft_colors.clone(),
            None => soft_colors(params, mode, &model.faces),
        };
        let soft = soft_render(&pm, &obs.camera, &soft_colors, &self.soft)?;
        Ok(FrameState {
            posed,
            pm,
            render: FrameRender {
                hard,
                soft,
                frags,
                soft_colors,
            },
        })
    }

    /// Loss terms and, when anything is wanted, gradients for a batch of
    /// frames. Per-frame results are reduced in batch order.
    pub fn evaluate(
        &self,
        params: &AvatarParams,
        mode: ColorMode,
        batch: &[usize],
        branches: Branches,
        wanted: Wanted,
        mut cache: CacheUse<'_>,
    ) -> Result<Evaluation> {
        let model = &self.scene.model;
        let w = &self.weights;
        let canonical = build_rest_mesh(model, &params.beta, &params.offsets)?;
        let nv = model.num_vertices();
        let nf = model.num_faces();
        let mut g_canon = vec![Vector3::zeros(); nv];
        let mut grad = wanted.any().then(|| Gradients {
            beta: vec![0.0; model.num_shape()],
            offsets: Vec::new(),
            poses: vec![None; params.poses.len()],
            face_colors: vec![[0.0; 3]; nf],
            texture: (wanted.texture && mode == ColorMode::Texture).then(|| TextureGrad::zeros(&params.texture)),
        });

        let mut frames = Vec::with_capacity(batch.len());
        for &fi in batch {
            let obs = &self.scene.frames[fi];
            let cached = match &cache {
                CacheUse::Replay(c) => c.frames.get(&fi),
                _ => None,
            };
            let FrameState { posed, pm, render: r } = self.forward_frame(params, mode, &canonical, fi, cached)?;
            if let CacheUse::Record(c) = &mut cache {
                c.frames.insert(
                    fi,
                    FrameCache {
                        frags: r.frags.clone(),
                        soft_colors: r.soft_colors.clone(),
                    },
                );
            }

            let names: Vec<&str> = obs
                .keypoints
                .iter()
                .map(|k| k.name.as_str())
                .filter(|n| model.keypoint(n).is_some())
                .collect();
            let kp_xy = model_keypoints(&posed, model, &obs.camera, &names)?;
            let pred: Vec<(&str, _)> = names.iter().copied().zip(kp_xy).collect();
            let kl = loss_keypoints(&pred, &obs.keypoints, w.keypoint_threshold);
            let terms = FrameTerms {
                rgb: loss_rgb(&obs.image, &r.hard, &r.soft.rgb)?,
                sil: loss_silhouette(&r.soft.silhouette, &obs.mask)?,
                kps: kl.value,
            };
            frames.push(FrameEval {
                frame: fi,
                terms,
                psnr: psnr(&r.hard, &obs.image)?,
            });

            let Some(grad) = grad.as_mut() else {
                continue;
            };
            let (mut g_hard, mut g_soft) = loss_rgb_grad(&obs.image, &r.hard, &r.soft.rgb)?;
            for g in g_hard.iter_mut().chain(g_soft.iter_mut()) {
                for c in g.iter_mut() {
                    *c *= w.lambda_rgb;
                }
            }

            if branches.hard_rgb {
                match mode {
                    ColorMode::FaceColors if wanted.face_colors => {
                        let gc = shade_face_colors_vjp(&r.frags, nf, &g_hard);
                        for (a, b) in grad.face_colors.iter_mut().zip(&gc) {
                            for k in 0..3 {
                                a[k] += b[k];
                            }
                        }
                    }
                    ColorMode::Texture if wanted.texture => {
                        let gt = shade_fragments_vjp(&r.frags, &params.texture, &model.faces, &g_hard);
                        grad.texture.as_mut().unwrap().add_assign(&gt);
                    }
                    _ => {}
                }
            }

            if !wanted.geometry() {
                continue;
            }
            let g_rgb: Vec<[f64; 3]> = if branches.soft_rgb { g_soft } else { Vec::new() };
            let g_sil: Vec<f64> = if branches.silhouette {
                loss_silhouette_grad(&r.soft.silhouette, &obs.mask)?
                    .into_iter()
                    .map(|g| g * w.lambda_sil)
                    .collect()
            } else {
                Vec::new()
            };
            let mut g_posed = vec![Vector3::zeros(); nv];
            if !g_rgb.is_empty() || !g_sil.is_empty() {
                let sg = soft_render_vjp(&pm, &obs.camera, &r.soft_colors, &self.soft, &g_rgb, &g_sil)?;
                g_posed = project_vjp(&obs.camera, &posed.mesh, &pm.valid, &sg.xy, &sg.depth);
            }
            let mut g_joints = vec![Vector3::zeros(); model.num_joints()];
            if branches.keypoints {
                let gk: Vec<_> = kl.grads.iter().map(|g| g * w.lambda_kps).collect();
                let kg = model_keypoints_vjp(&posed, model, &obs.camera, &names, &gk)?;
                g_joints = kg.joints;
                for (v, g) in kg.vertices {
                    g_posed[v] += g;
                }
            }
            let pose = &params.poses[fi];
            let pg = lbs_pose_vjp(&posed, &canonical, model, &pose.theta, &g_posed, &g_joints);
            for (a, b) in g_canon.iter_mut().zip(&pg.vertices) {
                *a += b;
            }
            let g_rot = rodrigues_vjp(&pose.rot, &pg.rot);
            let entry = grad.poses[fi].get_or_insert_with(|| PoseGradient {
                theta: vec![Vector3::zeros(); model.num_joints()],
                rot: Vector3::zeros(),
                trans: Vector3::zeros(),
            });
            for (a, b) in entry.theta.iter_mut().zip(&pg.theta) {
                *a += b;
            }
            entry.rot += g_rot;
            entry.trans += pg.trans;
        }

        let (s_nc, s_fa) = self.reg_scales(nf);
        let pairs = model.adjacency();
        let mesh0 = build_rest_mesh(model, &params.beta, &vec![Vector3::zeros(); nv])?;
        let area_ref = AreaReference::new(&mesh0)?;
        let reg = RegTerms {
            nc: s_nc * loss_normal_consistency(&canonical, pairs),
            fa: s_fa * loss_face_area(&canonical, &area_ref)?,
        };
        let terms: Vec<FrameTerms> = frames.iter().map(|f| f.terms).collect();
        let total = loss_total(&terms, &reg, w);

        if let Some(grad) = grad.as_mut() {
            if wanted.shape {
                let mut g_beta_ref = vec![0.0; model.num_shape()];
                if branches.regularizers {
                    let gn = loss_normal_consistency_grad(&canonical, pairs);
                    let ga = loss_face_area_grad(&canonical, &area_ref)?;
                    let cn = w.lambda_nc * s_nc;
                    let ca = w.lambda_fa * s_fa;
                    for i in 0..nv {
                        g_canon[i] += gn[i] * cn + ga[i] * ca;
                    }
                    let gr: Vec<_> = loss_face_area_reference_grad(&canonical, &mesh0)?
                        .into_iter()
                        .map(|g| g * ca)
                        .collect();
                    g_beta_ref = build_rest_mesh_vjp(model, &gr);
                }
                let gb = build_rest_mesh_vjp(model, &g_canon);
                for k in 0..gb.len() {
                    grad.beta[k] = gb[k] + g_beta_ref[k];
                }
                grad.offsets = g_canon;
            } else {
                grad.offsets = vec![Vector3::zeros(); nv];
            }
        }

        Ok(Evaluation {
            frames,
            reg,
            total,
            grad,
        })
    }
}

/// Colors fed to the soft branch. They are constants of the render.
pub(crate) fn soft_colors(params: &AvatarParams, mode: ColorMode, faces: &[Face]) -> Vec<[f64; 3]> {
    match mode {
        ColorMode::FaceColors => params.face_colors.clone(),
        ColorMode::Texture => params.texture.face_centroid_colors(faces),
    }
}
