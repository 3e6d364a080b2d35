use std::collections::HashMap;

use nalgebra::Vector3;

use super::{Face, Mesh};

#[derive(Debug, Clone)]
pub struct FaceNormals {
    pub normals: Vec<Vector3<f64>>,
    pub degenerate: Vec<bool>,
}

fn cross(mesh: &Mesh, f: usize) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let [a, b, c] = mesh.corners(f);
    let e1 = b - a;
    let e2 = c - a;
    (e1.cross(&e2), e1, e2)
}

fn is_degenerate(c: &Vector3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> bool {
    let scale = e1.norm_squared().max(e2.norm_squared());
    c.norm() <= 1e-12 * scale || scale == 0.0
}

/// Unit normals by the right-hand rule; degenerate faces get a zero vector.
pub fn face_normals(mesh: &Mesh) -> FaceNormals {
    let mut normals = Vec::with_capacity(mesh.num_faces());
    let mut degenerate = Vec::with_capacity(mesh.num_faces());
    for f in 0..mesh.num_faces() {
        let (c, e1, e2) = cross(mesh, f);
        if is_degenerate(&c, &e1, &e2) {
            normals.push(Vector3::zeros());
            degenerate.push(true);
        } else {
            normals.push(c / c.norm());
            degenerate.push(false);
        }
    }
    FaceNormals {
        normals,
        degenerate,
    }
}

/// Accumulates the gradient of the cross product `(b-a) x (c-a)` of face `f`.
fn scatter_cross_grad(mesh: &Mesh, f: usize, gc: &Vector3<f64>, out: &mut [Vector3<f64>]) {
    let [ia, ib, ic] = mesh.faces[f];
    let [a, b, c] = mesh.corners(f);
    let e1 = b - a;
    let e2 = c - a;
    // d(e1 x e2) = de1 x e2 + e1 x de2  =>  grad_e1 = e2 x gc, grad_e2 = gc x e1
    let g1 = e2.cross(gc);
    let g2 = gc.cross(&e1);
    out[ib] += g1;
    out[ic] += g2;
    out[ia] -= g1 + g2;
}

/// Pulls gradients on the unit normals back to the vertices.
pub fn face_normals_vjp(mesh: &Mesh, grad_normals: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::zeros(); mesh.num_vertices()];
    for (f, g) in grad_normals.iter().enumerate() {
        if g.iter().all(|x| *x == 0.0) {
            continue;
        }
        let (c, e1, e2) = cross(mesh, f);
        if is_degenerate(&c, &e1, &e2) {
            continue;
        }
        let len = c.norm();
        let n = c / len;
        let gc = (g - n * n.dot(g)) / len;
        scatter_cross_grad(mesh, f, &gc, &mut out);
    }
    out
}

/// Unsigned triangle areas.
pub fn face_areas(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.num_faces())
        .map(|f| 0.5 * cross(mesh, f).0.norm())
        .collect()
}

/// Pulls gradients on the face areas back to the vertices. Zero-area faces
/// have no defined gradient and contribute nothing.
pub fn face_areas_vjp(mesh: &Mesh, grad_areas: &[f64]) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::zeros(); mesh.num_vertices()];
    for (f, g) in grad_areas.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let (c, _, _) = cross(mesh, f);
        let len = c.norm();
        if len == 0.0 {
            continue;
        }
        scatter_cross_grad(mesh, f, &(c * (0.5 * g / len)), &mut out);
    }
    out
}

/// Unordered pairs of faces that share exactly two vertices. Edges used by
/// more than two faces contribute every pairwise combination.
pub fn adjacent_face_pairs(faces: &[Face]) -> Vec<(usize, usize)> {
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, tri) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut pairs = Vec::new();
    for users in by_edge.values() {
        for (i, &fa) in users.iter().enumerate() {
            for &fb in &users[i + 1..] {
                if fa != fb {
                    pairs.push((fa.min(fb), fa.max(fb)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs.retain(|&(a, b)| {
        faces[a].iter().filter(|v| faces[b].contains(v)).count() == 2
    });
    pairs
}
