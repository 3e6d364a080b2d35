use nalgebra::{Vector2, Vector3};

use super::{Camera, Mesh, ProjectedMesh};
use crate::error::{Error, Result};

/// Pinhole projection of a single camera-space point.
pub fn project_point(cam: &Camera, p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy)
}

/// Gradient of `project_point` pulled back to the camera-space point.
pub(crate) fn project_point_vjp(cam: &Camera, p: &Vector3<f64>, g: &Vector2<f64>) -> Vector3<f64> {
    let iz = 1.0 / p.z;
    Vector3::new(
        g.x * cam.fx * iz,
        g.y * cam.fy * iz,
        -(g.x * cam.fx * p.x + g.y * cam.fy * p.y) * iz * iz,
    )
}

/// Projects every vertex. Vertices at or in front of the near plane are kept
/// but flagged invalid.
pub fn project(cam: &Camera, mesh: &Mesh) -> Result<ProjectedMesh> {
    let mut xy = Vec::with_capacity(mesh.num_vertices());
    let mut depth = Vec::with_capacity(mesh.num_vertices());
    let mut valid = Vec::with_capacity(mesh.num_vertices());
    for p in &mesh.vertices {
        let ok = p.z > cam.near;
        xy.push(if ok { project_point(cam, p) } else { Vector2::zeros() });
        depth.push(p.z);
        valid.push(ok);
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyProjection);
    }
    Ok(ProjectedMesh {
        xy,
        depth,
        valid,
        faces: mesh.faces.clone(),
    })
}

/// Backward pass of [`project`]. Invalid vertices receive zero gradient.
pub fn project_vjp(
    cam: &Camera,
    mesh: &Mesh,
    valid: &[bool],
    grad_xy: &[Vector2<f64>],
    grad_depth: &[f64],
) -> Vec<Vector3<f64>> {
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !valid[i] {
                return Vector3::zeros();
            }
            let mut g = project_point_vjp(cam, p, &grad_xy[i]);
            g.z += grad_depth[i];
            g
        })
        .collect()
}
