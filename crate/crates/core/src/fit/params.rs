use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FitConfig, Scene};
use crate::error::{Error, Result};
use crate::geometry::rotation::{log_map, rodrigues};
use crate::geometry::{build_rest_mesh, lbs_pose, project, BodyModel, Camera, Mesh, Posed};
use crate::raster::{rasterize_hard, shade_face_colors, shade_fragments, GrayImage, RgbImage};
use crate::texfield::TextureField;

/// Articulated pose of one frame. The extrinsic rotation is stored as an
/// axis-angle vector so plain Adam updates keep it a rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub theta: Vec<Vector3<f64>>,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl FramePose {
    pub fn num_values(&self) -> usize {
        3 * self.theta.len() + 6
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in &self.theta {
            out.extend_from_slice(t.as_slice());
        }
        out.extend_from_slice(self.rot.as_slice());
        out.extend_from_slice(self.trans.as_slice());
        out
    }

    pub fn set_flat(&mut self, x: &[f64]) {
        let nj = self.theta.len();
        for (j, t) in self.theta.iter_mut().enumerate() {
            *t = Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
        }
        self.rot = Vector3::new(x[3 * nj], x[3 * nj + 1], x[3 * nj + 2]);
        self.trans = Vector3::new(x[3 * nj + 3], x[3 * nj + 4], x[3 * nj + 5]);
    }
}

/// Which appearance model drives the hard branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    FaceColors,
    Texture,
}

/// Everything the fitter optimizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarParams {
    pub beta: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    pub poses: Vec<FramePose>,
    pub face_colors: Vec<[f64; 3]>,
    pub texture: TextureField,
}

impl AvatarParams {
    /// Zero shape and offsets, the scene's initial poses, every face set to
    /// the mean foreground color and a freshly seeded texture field whose
    /// coordinates are the template rest vertices.
    pub fn init(scene: &Scene, cfg: &FitConfig) -> Result<Self> {
        let model = &scene.model;
        let mut sum = [0.0; 3];
        let mut count = 0usize;
        for f in &scene.frames {
            for (c, m) in f.image.data.iter().zip(&f.mask.data) {
                if *m > 0.5 {
                    for k in 0..3 {
                        sum[k] += c[k];
                    }
                    count += 1;
                }
            }
        }
        let mean = if count == 0 {
            [0.5; 3]
        } else {
            sum.map(|s| s / count as f64)
        };
        let poses = scene
            .frames
            .iter()
            .map(|f| FramePose {
                theta: f.init_pose.theta.clone(),
                rot: log_map(&f.init_pose.rot),
                trans: f.init_pose.trans,
            })
            .collect();
        let texture = TextureField::new(
            &model.rest_vertices,
            cfg.hash_grid,
            cfg.mlp_hidden,
            cfg.mlp_layers,
            cfg.seed,
        )?;
        let p = AvatarParams {
            beta: vec![0.0; model.num_shape()],
            offsets: vec![Vector3::zeros(); model.num_vertices()],
            poses,
            face_colors: vec![mean; model.num_faces()],
            texture,
        };
        p.validate(model)?;
        Ok(p)
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.beta.len() != model.num_shape()
            || self.offsets.len() != model.num_vertices()
            || self.face_colors.len() != model.num_faces()
            || self.texture.texcoords.len() != model.num_vertices()
        {
            return Err(Error::config("parameters do not match the body model"));
        }
        if let Some(i) = self.poses.iter().position(|p| p.theta.len() != model.num_joints()) {
            return Err(Error::config(format!("pose {i} has the wrong number of joints")));
        }
        self.texture.validate()
    }

    /// Canonical mesh with the current shape and offsets.
    pub fn canonical_mesh(&self, model: &BodyModel) -> Result<Mesh> {
        build_rest_mesh(model, &self.beta, &self.offsets)
    }

    /// Posed mesh of one frame.
    pub fn posed(&self, model: &BodyModel, frame: usize) -> Result<Posed> {
        let canonical = self.canonical_mesh(model)?;
        let pose = self
            .poses
            .get(frame)
            .ok_or_else(|| Error::config(format!("no pose for frame {frame}")))?;
        lbs_pose(&canonical, model, &pose.theta, &rodrigues(&pose.rot), &pose.trans)
    }

    /// Hard render and coverage mask of the current avatar in an arbitrary
    /// pose and camera.
    pub fn render_view(
        &self,
        model: &BodyModel,
        pose: &FramePose,
        camera: &Camera,
        mode: ColorMode,
        background: [f64; 3],
    ) -> Result<(RgbImage, GrayImage)> {
        let canonical = self.canonical_mesh(model)?;
        let posed = lbs_pose(&canonical, model, &pose.theta, &rodrigues(&pose.rot), &pose.trans)?;
        let frags = rasterize_hard(&project(camera, &posed.mesh)?, camera);
        let image = match mode {
            ColorMode::FaceColors => shade_face_colors(&frags, &self.face_colors, background),
            ColorMode::Texture => shade_fragments(&frags, &self.texture, &model.faces, background),
        };
        Ok((image, frags.coverage()))
    }
}

/// Copies a vector-of-vectors into one flat buffer.
pub(crate) fn flatten3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub(crate) fn unflatten3(x: &[f64], out: &mut [Vector3<f64>]) {
    for (i, p) in out.iter_mut().enumerate() {
        *p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_pose_round_trip() {
        let mut p = FramePose {
            theta: vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)],
            rot: Vector3::new(7.0, 8.0, 9.0),
            trans: Vector3::new(10.0, 11.0, 12.0),
        };
        let x = p.to_flat();
        assert_eq!(x, (1..=12).map(|i| i as f64).collect::<Vec<_>>());
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        p.set_flat(&y);
        assert_eq!(p.to_flat(), y);
        let v = vec![Vector3::new(1.0, 2.0, 3.0); 2];
        let mut w = vec![Vector3::zeros(); 2];
        unflatten3(&flatten3(&v), &mut w);
        assert_eq!(v, w);
    }

    #[test]
    fn render_view_matches_the_objective_render() {
        use crate::fit::Objective;
        use crate::losses::LossWeights;
        use crate::sceneio::synth::{toy_body_scene, SynthConfig};
        let s = toy_body_scene(&SynthConfig {
            resolution: 48,
            cameras: 1,
            poses: 2,
            held_out: 0,
            ..Default::default()
        })
        .unwrap();
        let cfg = FitConfig::default();
        let p = AvatarParams::init(&s.scene, &cfg).unwrap();
        let obj = Objective {
            scene: &s.scene,
            weights: LossWeights::default(),
            soft: cfg.soft,
            normalize_regularizers: true,
        };
        for mode in [ColorMode::FaceColors, ColorMode::Texture] {
            let r = obj.render_frame(&p, mode, 1).unwrap();
            let cam = &s.scene.frames[1].camera;
            let (img, mask) = p.render_view(&s.scene.model, &p.poses[1], cam, mode, cfg.soft.background_color).unwrap();
            assert_eq!(img, r.hard);
            assert_eq!(mask, r.frags.coverage());
        }
    }
}
