//! Articulated body model, skinning, camera projection and per-face mesh
//! quantities, each with a hand-written backward pass.

mod camera;
mod keypoints;
mod mesh_ops;
pub mod primitives;
pub mod rotation;
mod skinning;

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::{project, project_point, project_vjp};
pub use keypoints::{model_keypoints, model_keypoints_vjp, KeypointGrad};
pub use mesh_ops::{
    adjacent_face_pairs, face_areas, face_areas_vjp, face_normals, face_normals_vjp, FaceNormals,
};
pub use skinning::{build_rest_mesh, build_rest_mesh_vjp, lbs_pose, lbs_pose_vjp, PoseGrad, Posed};

pub type Face = [usize; 3];

/// Triangle mesh. Faces are shared (reference counted) between meshes
/// derived from the same body model.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Arc<[Face]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: impl Into<Arc<[Face]>>) -> Result<Self> {
        let faces = faces.into();
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::config(format!(
                "face {f:?} references a vertex outside [0, {n})"
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Numeric("mesh has non-finite coordinates".into()));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Mesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Mesh {
            vertices,
            faces: Arc::clone(&self.faces),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

/// Pinhole intrinsics shared by every frame, plus depth clip planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config("camera focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::config("camera requires far > near > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera resolution must be nonzero"));
        }
        Ok(())
    }
}

/// Mesh vertices in pixel coordinates with camera-space depth.
#[derive(Debug, Clone)]
pub struct ProjectedMesh {
    pub xy: Vec<Vector2<f64>>,
    pub depth: Vec<f64>,
    /// `false` for vertices at or behind the near plane; faces touching such
    /// vertices are never rasterized.
    pub valid: Vec<bool>,
    pub faces: Arc<[Face]>,
}

impl ProjectedMesh {
    pub fn face_is_valid(&self, face: usize) -> bool {
        self.faces[face].iter().all(|&v| self.valid[v])
    }
}

/// Where a named keypoint is read from on the posed body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointSource {
    Joint(usize),
    Vertex(usize),
}

/// Reusable articulated body prior: rest mesh, skeleton, skinning weights
/// and a linear shape space.
#[derive(Debug, Clone)]
pub struct BodyModel {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub faces: Arc<[Face]>,
    /// `K` displacement fields, one per shape coefficient.
    pub shape_basis: Vec<Vec<Vector3<f64>>>,
    /// Sparse rows of the `J x V` joint regressor.
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    pub parents: Vec<Option<usize>>,
    /// Sparse rows of the `V x J` skinning weights.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    pub keypoints: Vec<(String, KeypointSource)>,
    order: Vec<usize>,
    adjacency: Arc<[(usize, usize)]>,
}

const WEIGHT_TOL: f64 = 1e-6;

impl BodyModel {
    /// Builds and validates a body model. Dense matrices are row-major:
    /// `joint_regressor` is `J x V`, `skin_weights` is `V x J`.
    pub fn new(
        rest_vertices: Vec<Vector3<f64>>,
        faces: Vec<Face>,
        shape_basis: Vec<Vec<Vector3<f64>>>,
        joint_regressor: &[f64],
        parents: Vec<Option<usize>>,
        skin_weights: &[f64],
        keypoints: Vec<(String, KeypointSource)>,
    ) -> Result<Self> {
        let v = rest_vertices.len();
        let j = parents.len();
        if v == 0 || faces.is_empty() || j == 0 {
            return Err(Error::config("body model needs vertices, faces and joints"));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= v) {
                return Err(Error::config(format!("face {f:?} out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::config(format!("degenerate face {f:?}")));
            }
        }
        for (k, basis) in shape_basis.iter().enumerate() {
            if basis.len() != v {
                return Err(Error::config(format!(
                    "shape basis {k} has {} entries, expected {v}",
                    basis.len()
                )));
            }
        }
        if joint_regressor.len() != j * v {
            return Err(Error::config("joint regressor must be J x V"));
        }
        if skin_weights.len() != v * j {
            return Err(Error::config("skin weights must be V x J"));
        }
        let order = topological_order(&parents)?;

        let sparse = |row: &[f64]| -> Vec<(usize, f64)> {
            row.iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i, *w))
                .collect()
        };
        let regressor: Vec<_> = joint_regressor.chunks(v).map(sparse).collect();
        for (jj, row) in regressor.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::config(format!(
                    "joint regressor row {jj} sums to {sum}"
                )));
            }
        }
        let weights: Vec<_> = skin_weights.chunks(j).map(sparse).collect();
        for (vi, row) in weights.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if row.iter().any(|(_, w)| *w < 0.0) || (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::config(format!(
                    "skin weights of vertex {vi} must be nonnegative and sum to 1 (sum {sum})"
                )));
            }
        }
        for (name, src) in &keypoints {
            let ok = match *src {
                KeypointSource::Joint(i) => i < j,
                KeypointSource::Vertex(i) => i < v,
            };
            if !ok {
                return Err(Error::config(format!("keypoint `{name}` is out of range")));
            }
        }
        let adjacency = adjacent_face_pairs(&faces).into();
        Ok(BodyModel {
            rest_vertices,
            faces: faces.into(),
            shape_basis,
            joint_regressor: regressor,
            parents,
            skin_weights: weights,
            keypoints,
            order,
            adjacency,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_shape(&self) -> usize {
        self.shape_basis.len()
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn joint_order(&self) -> &[usize] {
        &self.order
    }

    /// Face pairs sharing exactly one edge, computed once at construction.
    pub fn adjacency(&self) -> &[(usize, usize)] {
        &self.adjacency
    }

    pub fn keypoint(&self, name: &str) -> Option<KeypointSource> {
        self.keypoints
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }

    pub fn rest_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.rest_vertices.clone(),
            faces: Arc::clone(&self.faces),
        }
    }

    /// Dense row-major `J x V` regressor.
    pub fn dense_regressor(&self) -> Vec<f64> {
        let v = self.num_vertices();
        let mut out = vec![0.0; self.num_joints() * v];
        for (j, row) in self.joint_regressor.iter().enumerate() {
            for &(i, w) in row {
                out[j * v + i] = w;
            }
        }
        out
    }

    /// Dense row-major `V x J` skinning weights.
    pub fn dense_skin_weights(&self) -> Vec<f64> {
        let j = self.num_joints();
        let mut out = vec![0.0; self.num_vertices() * j];
        for (v, row) in self.skin_weights.iter().enumerate() {
            for &(jj, w) in row {
                out[v * j + jj] = w;
            }
        }
        out
    }
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    if parents[0].is_some() {
        return Err(Error::config("joint 0 must be the root"));
    }
    let mut children = vec![Vec::new(); n];
    for (j, p) in parents.iter().enumerate().skip(1) {
        match *p {
            Some(p) if p < n && p != j => children[p].push(j),
            _ => {
                return Err(Error::config(format!(
                    "joint {j} has an invalid parent {p:?}"
                )))
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != n {
        return Err(Error::config("joint hierarchy is not a tree rooted at joint 0"));
    }
    Ok(order)
}
