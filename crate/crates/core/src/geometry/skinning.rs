//! Shape blending and linear blend skinning.

use nalgebra::{Matrix3, Vector3};

use super::rotation::{rodrigues, rodrigues_vjp};
use super::{BodyModel, Mesh};
use crate::error::{Error, Result};

/// Canonical mesh `rest + sum_k beta_k * basis_k + offsets`.
pub fn build_rest_mesh(model: &BodyModel, beta: &[f64], offsets: &[Vector3<f64>]) -> Result<Mesh> {
    if beta.len() != model.num_shape() {
        return Err(Error::config(format!(
            "expected {} shape coefficients, got {}",
            model.num_shape(),
            beta.len()
        )));
    }
    if offsets.len() != model.num_vertices() {
        return Err(Error::config(format!(
            "expected {} vertex offsets, got {}",
            model.num_vertices(),
            offsets.len()
        )));
    }
    let mut vertices: Vec<_> = model
        .rest_vertices
        .iter()
        .zip(offsets)
        .map(|(v, d)| v + d)
        .collect();
    for (b, basis) in beta.iter().zip(&model.shape_basis) {
        if *b != 0.0 {
            for (v, s) in vertices.iter_mut().zip(basis) {
                *v += s * *b;
            }
        }
    }
    Ok(Mesh {
        vertices,
        faces: model.faces.clone(),
    })
}

/// Gradients of [`build_rest_mesh`] with respect to `(beta, offsets)`.
/// The offset gradient is the vertex gradient itself.
pub fn build_rest_mesh_vjp(model: &BodyModel, grad_vertices: &[Vector3<f64>]) -> Vec<f64> {
    model
        .shape_basis
        .iter()
        .map(|basis| basis.iter().zip(grad_vertices).map(|(s, g)| s.dot(g)).sum())
        .collect()
}

/// A posed mesh with the intermediate quantities its backward pass needs.
#[derive(Debug, Clone)]
pub struct Posed {
    pub mesh: Mesh,
    /// Posed joint positions after the rigid extrinsic transform.
    pub joints: Vec<Vector3<f64>>,
    rest_joints: Vec<Vector3<f64>>,
    local_rot: Vec<Matrix3<f64>>,
    global_rot: Vec<Matrix3<f64>>,
    global_trans: Vec<Vector3<f64>>,
    /// Skinned vertices before the extrinsic transform.
    skinned: Vec<Vector3<f64>>,
    extrinsic_rot: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct PoseGrad {
    pub theta: Vec<Vector3<f64>>,
    /// Gradient with respect to the extrinsic rotation matrix entries.
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
    pub vertices: Vec<Vector3<f64>>,
}

/// Poses a canonical mesh: joints are regressed from the mesh, per-joint
/// rotations are chained along the skeleton, vertices are blended with the
/// skinning weights and finally moved by `rot * v + trans`.
pub fn lbs_pose(
    mesh: &Mesh,
    model: &BodyModel,
    theta: &[Vector3<f64>],
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
) -> Result<Posed> {
    let nj = model.num_joints();
    if theta.len() != nj {
        return Err(Error::config(format!(
            "expected {nj} joint rotations, got {}",
            theta.len()
        )));
    }
    if mesh.num_vertices() != model.num_vertices() {
        return Err(Error::config("mesh does not match the body model"));
    }
    if theta.iter().any(|t| !t.iter().all(|c| c.is_finite())) {
        return Err(Error::Numeric("non-finite joint rotation".into()));
    }

    let rest_joints: Vec<Vector3<f64>> = model
        .joint_regressor
        .iter()
        .map(|row| {
            row.iter()
                .fold(Vector3::zeros(), |acc, &(v, w)| acc + mesh.vertices[v] * w)
        })
        .collect();
    let local_rot: Vec<Matrix3<f64>> = theta.iter().map(rodrigues).collect();
    let mut global_rot = vec![Matrix3::identity(); nj];
    let mut global_trans = vec![Vector3::zeros(); nj];
    for &j in model.joint_order() {
        match model.parents[j] {
            None => {
                global_rot[j] = local_rot[j];
                global_trans[j] = rest_joints[j];
            }
            Some(p) => {
                global_rot[j] = global_rot[p] * local_rot[j];
                global_trans[j] =
                    global_rot[p] * (rest_joints[j] - rest_joints[p]) + global_trans[p];
            }
        }
    }
    // v' = sum_j w_j (A_j (v - J_j) + g_j) = (sum w A) v + sum w (g - A J)
    let bias: Vec<Vector3<f64>> = (0..nj)
        .map(|j| global_trans[j] - global_rot[j] * rest_joints[j])
        .collect();
    let skinned: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .zip(&model.skin_weights)
        .map(|(v, weights)| {
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for &(j, w) in weights {
                a += global_rot[j] * w;
                b += bias[j] * w;
            }
            a * v + b
        })
        .collect();
    let vertices = skinned.iter().map(|v| rot * v + trans).collect();
    let joints = global_trans.iter().map(|g| rot * g + trans).collect();
    Ok(Posed {
        mesh: mesh.with_vertices(vertices),
        joints,
        rest_joints,
        local_rot,
        global_rot,
        global_trans,
        skinned,
        extrinsic_rot: *rot,
    })
}

/// Backward pass of [`lbs_pose`] given gradients on posed vertices and
/// posed joints.
pub fn lbs_pose_vjp(
    posed: &Posed,
    canonical: &Mesh,
    model: &BodyModel,
    theta: &[Vector3<f64>],
    grad_vertices: &[Vector3<f64>],
    grad_joints: &[Vector3<f64>],
) -> PoseGrad {
    let nj = model.num_joints();
    let rt = posed.extrinsic_rot.transpose();
    let mut grad_rot = Matrix3::zeros();
    let mut grad_trans = Vector3::zeros();

    let mut d_global_rot = vec![Matrix3::zeros(); nj];
    let mut d_global_trans = vec![Vector3::zeros(); nj];
    let mut d_rest_joints = vec![Vector3::zeros(); nj];
    let mut d_vertices = vec![Vector3::zeros(); canonical.num_vertices()];

    for (j, g) in grad_joints.iter().enumerate() {
        if g.iter().all(|c| *c == 0.0) {
            continue;
        }
        grad_rot += g * posed.global_trans[j].transpose();
        grad_trans += g;
        d_global_trans[j] += rt * g;
    }

    for (vi, g) in grad_vertices.iter().enumerate() {
        if g.iter().all(|c| *c == 0.0) {
            continue;
        }
        grad_rot += g * posed.skinned[vi].transpose();
        grad_trans += g;
        let dv = rt * g;
        let v = canonical.vertices[vi];
        for &(j, w) in &model.skin_weights[vi] {
            let wdv = dv * w;
            d_global_rot[j] += wdv * (v - posed.rest_joints[j]).transpose();
            d_global_trans[j] += wdv;
            let back = posed.global_rot[j].transpose() * wdv;
            d_vertices[vi] += back;
            d_rest_joints[j] -= back;
        }
    }

    let mut d_local_rot = vec![Matrix3::zeros(); nj];
    for &j in model.joint_order().iter().rev() {
        match model.parents[j] {
            None => {
                d_local_rot[j] = d_global_rot[j];
                d_rest_joints[j] += d_global_trans[j];
            }
            Some(p) => {
                let bone = posed.rest_joints[j] - posed.rest_joints[p];
                let ap = posed.global_rot[p];
                let dgr = d_global_rot[j];
                let dgt = d_global_trans[j];
                d_global_rot[p] += dgr * posed.local_rot[j].transpose() + dgt * bone.transpose();
                d_local_rot[j] = ap.transpose() * dgr;
                let dbone = ap.transpose() * dgt;
                d_rest_joints[j] += dbone;
                d_rest_joints[p] -= dbone;
                d_global_trans[p] += dgt;
            }
        }
    }

    for (j, row) in model.joint_regressor.iter().enumerate() {
        let dj = d_rest_joints[j];
        for &(vi, w) in row {
            d_vertices[vi] += dj * w;
        }
    }

    let theta_grad = theta
        .iter()
        .zip(&d_local_rot)
        .map(|(t, dr)| rodrigues_vjp(t, dr))
        .collect();
    PoseGrad {
        theta: theta_grad,
        rot: grad_rot,
        trans: grad_trans,
        vertices: d_vertices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::toy_humanoid;
    use crate::geometry::{BodyModel, KeypointSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_joint_chain() -> BodyModel {
        // Joint 0 at the origin, joint 1 at (1,0,0); the regressor reads them
        // straight off vertices 0 and 1.
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let faces = vec![[0, 1, 3], [1, 2, 3]];
        let regressor = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let weights = [1.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0];
        BodyModel::new(
            verts,
            faces,
            vec![],
            &regressor,
            vec![None, Some(0)],
            &weights,
            vec![("tip".into(), KeypointSource::Vertex(2))],
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_reproduce_rest_vertices() {
        let model = toy_humanoid();
        let mesh = build_rest_mesh(
            &model,
            &vec![0.0; model.num_shape()],
            &vec![Vector3::zeros(); model.num_vertices()],
        )
        .unwrap();
        assert_eq!(mesh.vertices, model.rest_vertices);
    }

    #[test]
    fn single_offset_moves_single_vertex() {
        let model = toy_humanoid();
        let mut offsets = vec![Vector3::zeros(); model.num_vertices()];
        offsets[7] = Vector3::new(0.1, 0.0, 0.0);
        let mesh = build_rest_mesh(&model, &vec![0.0; model.num_shape()], &offsets).unwrap();
        for (i, (a, b)) in mesh.vertices.iter().zip(&model.rest_vertices).enumerate() {
            let expect = if i == 7 { b + Vector3::new(0.1, 0.0, 0.0) } else { *b };
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn unit_beta_adds_first_basis_elementwise() {
        let model = toy_humanoid();
        let mut beta = vec![0.0; model.num_shape()];
        beta[0] = 1.0;
        let mesh = build_rest_mesh(&model, &beta, &vec![Vector3::zeros(); model.num_vertices()])
            .unwrap();
        for i in 0..model.num_vertices() {
            for c in 0..3 {
                let oracle = model.rest_vertices[i][c] + model.shape_basis[0][i][c];
                assert_eq!(mesh.vertices[i][c], oracle);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let model = toy_humanoid();
        let err = build_rest_mesh(&model, &[0.0], &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn identity_pose_and_translation() {
        let model = toy_humanoid();
        let mesh = model.rest_mesh();
        let theta = vec![Vector3::zeros(); model.num_joints()];
        let posed = lbs_pose(&mesh, &model, &theta, &Matrix3::identity(), &Vector3::zeros())
            .unwrap();
        for (a, b) in posed.mesh.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).abs().max() <= 1e-9);
        }
        let t = Vector3::new(0.0, 0.0, 1.0);
        let posed = lbs_pose(&mesh, &model, &theta, &Matrix3::identity(), &t).unwrap();
        for (a, b) in posed.mesh.vertices.iter().zip(&mesh.vertices) {
            assert!((a - (b + t)).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn two_joint_chain_matches_hand_composed_transforms() {
        let model = two_joint_chain();
        let mesh = model.rest_mesh();
        let quarter = std::f64::consts::FRAC_PI_2;
        let theta = vec![Vector3::zeros(), Vector3::new(0.0, 0.0, quarter)];
        let posed =
            lbs_pose(&mesh, &model, &theta, &Matrix3::identity(), &Vector3::zeros()).unwrap();

        // 4x4 homogeneous oracle: G0 = T(j0), G1 = G0 * T(j1 - j0) * Rz(90),
        // skinning matrix M_j = G_j * T(-j_rest).
        type M4 = nalgebra::Matrix4<f64>;
        let translate = |x: f64, y: f64| M4::new_translation(&Vector3::new(x, y, 0.0));
        let rz = M4::from_axis_angle(&Vector3::z_axis(), quarter);
        let g0 = translate(0.0, 0.0);
        let g1 = g0 * translate(1.0, 0.0) * rz;
        let m0 = g0 * translate(0.0, 0.0);
        let m1 = g1 * translate(-1.0, 0.0);
        let v = nalgebra::Vector4::new(2.0, 0.0, 0.0, 1.0);
        let expected = (m0 * v) * 0.5 + (m1 * v) * 0.5;
        let got = posed.mesh.vertices[2];
        for c in 0..3 {
            assert!((got[c] - expected[c]).abs() < 1e-12, "{got:?} vs {expected:?}");
        }
        // Child joint stays put; its rotation does not move its own origin.
        assert!((posed.joints[1] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rigid_transform_commutes_with_posing() {
        let model = toy_humanoid();
        let mesh = model.rest_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<_> = (0..model.num_joints())
            .map(|_| Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 0.1))
            .collect();
        let r = rodrigues(&Vector3::new(0.2, -0.5, 0.9));
        let t = Vector3::new(0.3, -0.1, 2.0);
        let local = lbs_pose(&mesh, &model, &theta, &Matrix3::identity(), &Vector3::zeros())
            .unwrap();
        let world = lbs_pose(&mesh, &model, &theta, &r, &t).unwrap();
        for (a, b) in local.mesh.vertices.iter().zip(&world.mesh.vertices) {
            assert!((r * a + t - b).abs().max() <= 1e-9);
        }
    }

    #[test]
    fn lbs_gradients_match_central_differences() {
        let model = toy_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = model.rest_mesh();
        let theta: Vec<_> = (0..model.num_joints())
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect();
        let rot = rodrigues(&Vector3::new(0.3, 0.2, -0.1));
        let trans = Vector3::new(0.1, 0.2, 3.0);
        let gv: Vec<_> = (0..model.num_vertices())
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let gj: Vec<_> = (0..model.num_joints())
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let objective = |m: &Mesh, th: &[Vector3<f64>], r: &Matrix3<f64>, t: &Vector3<f64>| {
            let p = lbs_pose(m, &model, th, r, t).unwrap();
            let a: f64 = p.mesh.vertices.iter().zip(&gv).map(|(v, g)| v.dot(g)).sum();
            let b: f64 = p.joints.iter().zip(&gj).map(|(v, g)| v.dot(g)).sum();
            a + b
        };
        let posed = lbs_pose(&mesh, &model, &theta, &rot, &trans).unwrap();
        let grad = lbs_pose_vjp(&posed, &mesh, &model, &theta, &gv, &gj);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

        for j in [0, 3, 6, 12] {
            for c in 0..3 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j][c] += h;
                tm[j][c] -= h;
                let fd = (objective(&mesh, &tp, &rot, &trans) - objective(&mesh, &tm, &rot, &trans))
                    / (2.0 * h);
                assert!(rel(fd, grad.theta[j][c]) < 1e-4, "theta {j},{c}: {fd} vs {}", grad.theta[j][c]);
            }
        }
        for vi in [0, 17, 101, 333] {
            for c in 0..3 {
                let mut mp = mesh.clone();
                let mut mm = mesh.clone();
                mp.vertices[vi][c] += h;
                mm.vertices[vi][c] -= h;
                let fd = (objective(&mp, &theta, &rot, &trans) - objective(&mm, &theta, &rot, &trans))
                    / (2.0 * h);
                assert!(rel(fd, grad.vertices[vi][c]) < 1e-4, "vertex {vi},{c}");
            }
        }
        for c in 0..3 {
            let mut tp = trans;
            let mut tm = trans;
            tp[c] += h;
            tm[c] -= h;
            let fd = (objective(&mesh, &theta, &rot, &tp) - objective(&mesh, &theta, &rot, &tm))
                / (2.0 * h);
            assert!(rel(fd, grad.trans[c]) < 1e-4);
        }
        for a in 0..3 {
            for b in 0..3 {
                let mut rp = rot;
                let mut rm = rot;
                rp[(a, b)] += h;
                rm[(a, b)] -= h;
                let fd = (objective(&mesh, &theta, &rp, &trans) - objective(&mesh, &theta, &rm, &trans))
                    / (2.0 * h);
                assert!(rel(fd, grad.rot[(a, b)]) < 1e-4);
            }
        }
    }
}
