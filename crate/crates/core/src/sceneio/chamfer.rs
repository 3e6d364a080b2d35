//! Surface sampling and exact point-to-surface distances.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{face_areas, Mesh};

/// Closest point on triangle `abc` to `p`, by Voronoi-region case analysis.
pub fn closest_point_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn tri_dist2(mesh: &Mesh, f: usize, p: &Vector3<f64>) -> f64 {
    let [a, b, c] = mesh.corners(f);
    (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared()
}

/// Distance from `p` to the nearest triangle, checking every face.
pub fn brute_force_distance(mesh: &Mesh, p: &Vector3<f64>) -> f64 {
    (0..mesh.num_faces())
        .map(|f| tri_dist2(mesh, f, p))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.lo - p).sup(&Vector3::zeros()).sup(&(p - self.hi));
        d.norm_squared()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Bounding-volume hierarchy over the triangles of one mesh, split at the
/// median centroid along the longest axis.
#[derive(Debug, Clone)]
pub struct TriangleBvh<'a> {
    mesh: &'a Mesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl<'a> TriangleBvh<'a> {
    pub fn new(mesh: &'a Mesh) -> Result<Self> {
        if mesh.num_faces() == 0 {
            return Err(Error::config("cannot build a BVH over an empty mesh"));
        }
        let boxes: Vec<Aabb> = (0..mesh.num_faces())
            .map(|f| {
                let mut b = Aabb::empty();
                for c in mesh.corners(f) {
                    b.grow(&c);
                }
                b
            })
            .collect();
        let centroids: Vec<Vector3<f64>> = boxes.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        let mut bvh = TriangleBvh {
            mesh,
            nodes: Vec::with_capacity(2 * mesh.num_faces() / LEAF_SIZE + 1),
            order: (0..mesh.num_faces()).collect(),
        };
        bvh.build(0, mesh.num_faces(), &boxes, &centroids);
        Ok(bvh)
    }

    fn build(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Vector3<f64>]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &f in &self.order[start..end] {
            bounds.merge(&boxes[f]);
            cb.grow(&centroids[f]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let ext = cb.hi - cb.lo;
        let axis = ext.imax();
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build(start, mid, boxes, centroids);
        let right = self.build(mid, end, boxes, centroids);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Exact distance from `p` to the mesh surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().dist2(p) >= best {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        best = best.min(tri_dist2(self.mesh, f, p));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    // visit the nearer child first
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Draws `n` points uniformly by area over the surface.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
    if mesh.num_faces() == 0 {
        return Err(Error::config("cannot sample an empty mesh"));
    }
    let areas = face_areas(mesh);
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Numeric("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let f = cdf.partition_point(|&c| c <= u).min(areas.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let [a, b, c] = mesh.corners(f);
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Distances from every point to the surface through the BVH.
pub fn surface_distances(points: &[Vector3<f64>], mesh: &Mesh) -> Result<Vec<f64>> {
    let bvh = TriangleBvh::new(mesh)?;
    Ok(points.par_iter().map(|p| bvh.distance(p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferReport {
    /// Mean of the two directional mean point-to-surface distances.
    pub chamfer: f64,
    /// Mean distance from samples on `a` to the surface of `b`.
    pub p2s: f64,
}

/// Chamfer and point-to-surface distances between two meshes from
/// `samples` area-uniform points per surface.
pub fn chamfer_p2s(a: &Mesh, b: &Mesh, samples: usize, seed: u64) -> Result<ChamferReport> {
    if samples == 0 {
        return Err(Error::config("need at least one sample"));
    }
    let sa = sample_surface(a, samples, seed)?;
    let sb = sample_surface(b, samples, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let ab = mean(surface_distances(&sa, b)?);
    let ba = mean(surface_distances(&sb, a)?);
    Ok(ChamferReport {
        chamfer: 0.5 * (ab + ba),
        p2s: ab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{unit_cube, uv_ellipsoid};
    use proptest::prelude::*;

    fn square(z: f64) -> Mesh {
        Mesh::new(
            vec![
                Vector3::new(0.0, 0.0, z),
                Vector3::new(1.0, 0.0, z),
                Vector3::new(1.0, 1.0, z),
                Vector3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    /// Closest point by dense barycentric search, for the triangle oracle.
    fn closest_by_search(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n - i {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let q = a + (b - a) * u + (c - a) * v;
                best = best.min((q - p).norm());
            }
        }
        best
    }

    #[test]
    fn triangle_regions_match_a_dense_search() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.2, 0.1);
        let c = Vector3::new(0.3, 1.1, -0.2);
        let probes = [
            Vector3::new(-0.5, -0.5, 0.3),
            Vector3::new(1.6, 0.1, 0.0),
            Vector3::new(0.2, 1.7, 0.4),
            Vector3::new(0.5, -0.4, 0.0),
            Vector3::new(-0.4, 0.5, 0.2),
            Vector3::new(0.9, 0.9, -0.3),
            Vector3::new(0.4, 0.3, 0.8),
        ];
        for p in probes {
            let d = (closest_point_on_triangle(&p, &a, &b, &c) - p).norm();
            let s = closest_by_search(&p, &a, &b, &c);
            assert!(d <= s + 1e-12 && s - d < 5e-3, "{p:?}: {d} vs {s}");
        }
    }

    #[test]
    fn identical_meshes_have_zero_distance() {
        let m = uv_ellipsoid(8, 12, Vector3::new(0.5, 0.8, 0.3), Vector3::zeros());
        let r = chamfer_p2s(&m, &m, 2000, 3).unwrap();
        assert!(r.chamfer.abs() <= 1e-9 && r.p2s.abs() <= 1e-9, "{r:?}");
    }

    #[test]
    fn parallel_squares_are_d_apart() {
        let d = 0.25;
        let r = chamfer_p2s(&square(0.0), &square(d), 4000, 11).unwrap();
        assert!((r.chamfer - d).abs() <= 0.02 * d, "{r:?}");
        assert!((r.p2s - d).abs() <= 0.02 * d, "{r:?}");
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        let a = unit_cube(3);
        let b = uv_ellipsoid(10, 14, Vector3::new(0.7, 0.4, 0.6), Vector3::new(0.1, 0.2, -0.1));
        let pts = sample_surface(&a, 3000, 5).unwrap();
        let fast = surface_distances(&pts, &b).unwrap();
        for (p, d) in pts.iter().zip(&fast) {
            assert!((d - brute_force_distance(&b, p)).abs() <= 1e-12);
        }
    }

    #[test]
    fn samples_are_area_uniform() {
        // a 1x1 square and a 3x1 rectangle: three quarters of the samples
        // land on the larger one
        let m = Mesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(5.0, 0.0, 0.0),
                Vector3::new(5.0, 1.0, 0.0),
                Vector3::new(2.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
        )
        .unwrap();
        let pts = sample_surface(&m, 20000, 1).unwrap();
        let big = pts.iter().filter(|p| p.x >= 2.0).count() as f64 / 20000.0;
        assert!((big - 0.75).abs() < 0.015, "{big}");
        assert!(pts.iter().all(|p| p.z == 0.0 && (0.0..=1.0).contains(&p.y)));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let empty = Mesh {
            vertices: vec![],
            faces: Vec::<[usize; 3]>::new().into(),
        };
        let sq = square(0.0);
        assert!(chamfer_p2s(&empty, &sq, 10, 0).is_err());
        assert!(chamfer_p2s(&sq, &empty, 10, 0).is_err());
        assert!(chamfer_p2s(&sq, &sq, 0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn chamfer_is_symmetric_up_to_sampling(dx in -0.3f64..0.3, dz in -0.3f64..0.3, seed in 0u64..1000) {
            let a = uv_ellipsoid(8, 12, Vector3::new(0.5, 0.6, 0.4), Vector3::zeros());
            let b = uv_ellipsoid(8, 12, Vector3::new(0.4, 0.7, 0.5), Vector3::new(dx, 0.0, dz));
            let ab = chamfer_p2s(&a, &b, 4000, seed).unwrap();
            let ba = chamfer_p2s(&b, &a, 4000, seed).unwrap();
            prop_assert!((ab.chamfer - ba.chamfer).abs() <= 0.05 * ab.chamfer.max(1e-3));
        }
    }
}
