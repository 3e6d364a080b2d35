//! Procedurally generated meshes and body models used by the tests, the
//! toy-cube experiment and the synthetic scenes.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::{BodyModel, Face, KeypointSource, Mesh};

/// Axis-aligned cube `[-0.5, 0.5]^3` with every face split into an
/// `n x n` grid of quads (two triangles each). Faces are wound outward.
pub fn unit_cube(n: usize) -> Mesh {
    let n = n.max(1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Vector3<f64>>| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(Vector3::new(
                p[0] as f64 / n as f64 - 0.5,
                p[1] as f64 / n as f64 - 0.5,
                p[2] as f64 / n as f64 - 0.5,
            ));
            vertices.len() - 1
        })
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let mut corner = |di: usize, dj: usize| {
                        let mut p = [0; 3];
                        p[axis] = side;
                        p[u] = i + di;
                        p[v] = j + dj;
                        vid(p, &mut vertices)
                    };
                    let (a, b, c, d) = (corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1));
                    if side == n {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    Mesh {
        vertices,
        faces: faces.into(),
    }
}

/// Latitude-longitude ellipsoid with `rings * segments + 2` vertices and
/// `2 * rings * segments` faces.
pub fn uv_ellipsoid(rings: usize, segments: usize, radii: Vector3<f64>, center: Vector3<f64>) -> Mesh {
    let mut vertices = vec![center + Vector3::new(0.0, radii.y, 0.0)];
    for r in 0..rings {
        let lat = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let lon = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(
                center
                    + Vector3::new(
                        radii.x * lat.sin() * lon.cos(),
                        radii.y * lat.cos(),
                        radii.z * lat.sin() * lon.sin(),
                    ),
            );
        }
    }
    vertices.push(center - Vector3::new(0.0, radii.y, 0.0));
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut faces = Vec::with_capacity(2 * rings * segments);
    for s in 0..segments {
        faces.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s + 1), ring(r + 1, s));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    Mesh {
        vertices,
        faces: faces.into(),
    }
}

/// Single-joint body model wrapping a static mesh (no shape space, every
/// vertex rigidly attached to the root).
pub fn rigid_body(mesh: &Mesh) -> BodyModel {
    let v = mesh.num_vertices();
    BodyModel::new(
        mesh.vertices.clone(),
        mesh.faces.to_vec(),
        Vec::new(),
        &vec![1.0 / v as f64; v],
        vec![None],
        &vec![1.0; v],
        Vec::new(),
    )
    .expect("rigid body model is well formed")
}

pub const TOY_JOINTS: [&str; 16] = [
    "pelvis",
    "spine",
    "chest",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

const TOY_PARENTS: [Option<usize>; 16] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(2),
    Some(4),
    Some(5),
    Some(2),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
];

fn toy_joint_positions() -> [Vector3<f64>; 16] {
    let p = Vector3::new;
    [
        p(0.0, 0.95, 0.0),
        p(0.0, 1.15, 0.0),
        p(0.0, 1.35, 0.0),
        p(0.0, 1.55, 0.0),
        p(0.18, 1.45, 0.0),
        p(0.45, 1.45, 0.0),
        p(0.70, 1.45, 0.0),
        p(-0.18, 1.45, 0.0),
        p(-0.45, 1.45, 0.0),
        p(-0.70, 1.45, 0.0),
        p(0.10, 0.90, 0.0),
        p(0.10, 0.50, 0.0),
        p(0.10, 0.08, 0.0),
        p(-0.10, 0.90, 0.0),
        p(-0.10, 0.50, 0.0),
        p(-0.10, 0.08, 0.0),
    ]
}

const SEGMENTS: usize = 8;

struct Capsule {
    start: Vector3<f64>,
    end: Vector3<f64>,
    radius: f64,
    cylinder_rings: usize,
    /// Skinning weights as a function of the axial parameter in [0, 1].
    weights: Box<dyn Fn(f64) -> Vec<(usize, f64)>>,
}

/// Vertex layout of a generated capsule: bottom pole, cap ring, cylinder
/// rings, cap ring, top pole.
struct CapsuleMesh {
    base: usize,
    cylinder_rings: usize,
}

impl CapsuleMesh {
    fn cylinder_ring(&self, k: usize) -> Vec<usize> {
        let first = self.base + 1 + (k + 1) * SEGMENTS;
        (first..first + SEGMENTS).collect()
    }

    fn last_cylinder_ring(&self) -> Vec<usize> {
        self.cylinder_ring(self.cylinder_rings - 1)
    }
}

fn push_capsule(
    cap: &Capsule,
    vertices: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<Face>,
    weights: &mut Vec<Vec<(usize, f64)>>,
    axial: &mut Vec<(Vector3<f64>, Vector3<f64>)>,
) -> CapsuleMesh {
    let axis = cap.end - cap.start;
    let len = axis.norm();
    let d = axis / len;
    let helper = if d.y.abs() < 0.9 { Vector3::y() } else { Vector3::z() };
    let e1 = (helper - d * d.dot(&helper)).normalize();
    let e2 = d.cross(&e1);
    let base = vertices.len();

    let half = std::f64::consts::FRAC_1_SQRT_2;
    // (axial position along the segment, ring radius)
    let mut rings = vec![(-cap.radius * half, cap.radius * half)];
    for k in 0..cap.cylinder_rings {
        rings.push((len * k as f64 / (cap.cylinder_rings - 1) as f64, cap.radius));
    }
    rings.push((len + cap.radius * half, cap.radius * half));

    let mut push = |pos: Vector3<f64>, s: f64, centre: Vector3<f64>| {
        vertices.push(pos);
        weights.push((cap.weights)(s.clamp(0.0, 1.0)));
        axial.push((centre, (pos - centre).normalize()));
    };
    push(cap.start - d * cap.radius, 0.0, cap.start);
    for &(t, r) in &rings {
        let centre = cap.start + d * t;
        for i in 0..SEGMENTS {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / SEGMENTS as f64;
            push(centre + (e1 * phi.cos() + e2 * phi.sin()) * r, t / len, centre);
        }
    }
    push(cap.end + d * cap.radius, 1.0, cap.end);

    let top = vertices.len() - 1;
    let ring = |k: usize, i: usize| base + 1 + k * SEGMENTS + i % SEGMENTS;
    for i in 0..SEGMENTS {
        faces.push([base, ring(0, i + 1), ring(0, i)]);
    }
    for k in 0..rings.len() - 1 {
        for i in 0..SEGMENTS {
            let (a, b, c, dd) = (ring(k, i), ring(k, i + 1), ring(k + 1, i + 1), ring(k + 1, i));
            faces.push([a, b, c]);
            faces.push([a, c, dd]);
        }
    }
    let last = rings.len() - 1;
    for i in 0..SEGMENTS {
        faces.push([ring(last, i), ring(last, i + 1), top]);
    }
    CapsuleMesh {
        base,
        cylinder_rings: cap.cylinder_rings,
    }
}

fn limb_weights(driver: usize, parent: Option<usize>, child: Option<usize>) -> Box<dyn Fn(f64) -> Vec<(usize, f64)>> {
    Box::new(move |s| {
        let wp = parent.map_or(0.0, |_| 0.5 * (1.0 - s / 0.3).max(0.0));
        let wc = child.map_or(0.0, |_| 0.5 * ((s - 0.7) / 0.3).max(0.0));
        let mut out = vec![(driver, 1.0 - wp - wc)];
        if let Some(p) = parent {
            if wp > 0.0 {
                out.push((p, wp));
            }
        }
        if let Some(c) = child {
            if wc > 0.0 {
                out.push((c, wc));
            }
        }
        out
    })
}

/// Capsule-limbed humanoid with 16 joints and roughly 600 vertices, standing
/// in a T-pose with +y up and facing +z.
pub fn toy_humanoid() -> BodyModel {
    let joints = toy_joint_positions();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    let mut axial = Vec::new();

    let torso = Capsule {
        start: joints[0],
        end: joints[3],
        radius: 0.15,
        cylinder_rings: 4,
        weights: Box::new(|s| {
            // hat functions over pelvis, spine, chest, head at s = 0, 1/3, 2/3, 1
            let x = s * 3.0;
            let k = (x.floor() as usize).min(2);
            let f = x - k as f64;
            let mut out = vec![(k, 1.0 - f)];
            if f > 0.0 {
                out.push((k + 1, f));
            }
            out
        }),
    };
    let head = Capsule {
        start: joints[3],
        end: joints[3] + Vector3::new(0.0, 0.2, 0.0),
        radius: 0.1,
        cylinder_rings: 5,
        weights: limb_weights(3, Some(2), None),
    };
    let limb = |a: usize, b: usize, radius: f64, child: Option<usize>| Capsule {
        start: joints[a],
        end: joints[b],
        radius,
        cylinder_rings: 5,
        weights: limb_weights(a, TOY_PARENTS[a], child),
    };

    let torso_mesh = push_capsule(&torso, &mut vertices, &mut faces, &mut weights, &mut axial);
    let head_mesh = push_capsule(&head, &mut vertices, &mut faces, &mut weights, &mut axial);
    let mut ring_of = vec![Vec::new(); 16];
    ring_of[0] = torso_mesh.cylinder_ring(0);
    ring_of[1] = torso_mesh.cylinder_ring(1);
    ring_of[2] = torso_mesh.cylinder_ring(2);
    ring_of[3] = head_mesh.cylinder_ring(0);
    let limbs = [
        (4, 5, 0.05, Some(5)),
        (5, 6, 0.04, None),
        (7, 8, 0.05, Some(8)),
        (8, 9, 0.04, None),
        (10, 11, 0.07, Some(11)),
        (11, 12, 0.05, None),
        (13, 14, 0.07, Some(14)),
        (14, 15, 0.05, None),
    ];
    for (a, b, r, child) in limbs {
        let m = push_capsule(&limb(a, b, r, child), &mut vertices, &mut faces, &mut weights, &mut axial);
        ring_of[a] = m.cylinder_ring(0);
        if child.is_none() {
            ring_of[b] = m.last_cylinder_ring();
        }
    }

    let nv = vertices.len();
    let mut regressor = vec![0.0; 16 * nv];
    for (j, ring) in ring_of.iter().enumerate() {
        for &v in ring {
            regressor[j * nv + v] = 1.0 / ring.len() as f64;
        }
    }
    let mut skin = vec![0.0; nv * 16];
    for (v, row) in weights.iter().enumerate() {
        for &(j, w) in row {
            skin[v * 16 + j] += w;
        }
    }

    let height: Vec<_> = vertices
        .iter()
        .map(|v| Vector3::new(0.0, (v.y - 0.95) * 0.1, 0.0))
        .collect();
    let girth: Vec<_> = axial.iter().map(|(_, dir)| dir * 0.02).collect();
    let arm_length: Vec<_> = vertices
        .iter()
        .map(|v| {
            if v.x.abs() > 0.18 && (v.y - 1.45).abs() < 0.08 {
                Vector3::new((v.x - 0.18 * v.x.signum()) * 0.1, 0.0, 0.0)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let width: Vec<_> = vertices.iter().map(|v| Vector3::new(v.x * 0.1, 0.0, 0.0)).collect();

    // Middle ring of the head cylinder, segment 0 faces +z.
    let nose = head_mesh.cylinder_ring(2)[0];
    let mut keypoints: Vec<(String, KeypointSource)> = [
        ("l_elbow", 5),
        ("l_wrist", 6),
        ("r_elbow", 8),
        ("r_wrist", 9),
        ("l_knee", 11),
        ("l_ankle", 12),
        ("r_knee", 14),
        ("r_ankle", 15),
    ]
    .into_iter()
    .map(|(n, j)| (n.to_string(), KeypointSource::Joint(j)))
    .collect();
    keypoints.push(("nose".into(), KeypointSource::Vertex(nose)));

    BodyModel::new(
        vertices,
        faces,
        vec![height, girth, arm_length, width],
        &regressor,
        TOY_PARENTS.to_vec(),
        &skin,
        keypoints,
    )
    .expect("toy humanoid is well formed")
}

/// Signed volume of a closed mesh (positive for outward winding).
pub fn signed_volume(mesh: &Mesh) -> f64 {
    (0..mesh.num_faces())
        .map(|f| {
            let [a, b, c] = mesh.corners(f);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}
