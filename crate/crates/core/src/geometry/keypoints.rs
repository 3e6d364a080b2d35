use nalgebra::{Vector2, Vector3};

use super::camera::project_point_vjp;
use super::{project_point, BodyModel, Camera, KeypointSource, Posed};
use crate::error::{Error, Result};

fn source_point(posed: &Posed, src: KeypointSource) -> Vector3<f64> {
    match src {
        KeypointSource::Joint(j) => posed.joints[j],
        KeypointSource::Vertex(v) => posed.mesh.vertices[v],
    }
}

fn resolve(model: &BodyModel, name: &str) -> Result<KeypointSource> {
    model
        .keypoint(name)
        .ok_or_else(|| Error::config(format!("keypoint `{name}` is not mapped by the body model")))
}

/// Projects the named keypoints of a posed body into the image.
pub fn model_keypoints(
    posed: &Posed,
    model: &BodyModel,
    cam: &Camera,
    names: &[&str],
) -> Result<Vec<Vector2<f64>>> {
    names
        .iter()
        .map(|name| {
            let src = resolve(model, name)?;
            Ok(project_point(cam, &source_point(posed, src)))
        })
        .collect()
}

/// Gradients on posed joints and posed vertices induced by keypoint
/// gradients.
#[derive(Debug, Clone)]
pub struct KeypointGrad {
    pub joints: Vec<Vector3<f64>>,
    pub vertices: Vec<(usize, Vector3<f64>)>,
}

pub fn model_keypoints_vjp(
    posed: &Posed,
    model: &BodyModel,
    cam: &Camera,
    names: &[&str],
    grads: &[Vector2<f64>],
) -> Result<KeypointGrad> {
    let mut out = KeypointGrad {
        joints: vec![Vector3::zeros(); model.num_joints()],
        vertices: Vec::new(),
    };
    for (name, g) in names.iter().zip(grads) {
        let src = resolve(model, name)?;
        let d = project_point_vjp(cam, &source_point(posed, src), g);
        match src {
            KeypointSource::Joint(j) => out.joints[j] += d,
            KeypointSource::Vertex(v) => out.vertices.push((v, d)),
        }
    }
    Ok(out)
}
