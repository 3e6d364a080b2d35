//! Axis-angle rotations and their derivatives.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-8;
/// Below this angle the derivative coefficients use series expansions; the
/// closed forms cancel catastrophically for small angles.
const SERIES_ANGLE: f64 = 1e-2;

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Coefficients of `R = I + a K + b K^2` and of their derivatives
/// `da/dw = c w`, `db/dw = d w`.
struct Coeffs {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

fn coeffs(w: &Vector3<f64>) -> Coeffs {
    let t2 = w.norm_squared();
    let t = t2.sqrt();
    let (a, b) = if t < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let s = (0.5 * t).sin();
        (t.sin() / t, 2.0 * s * s / t2)
    };
    let (c, d) = if t < SERIES_ANGLE {
        let t4 = t2 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (sin, cos) = t.sin_cos();
        (
            (t * cos - sin) / (t2 * t),
            (t * sin - 2.0 * (1.0 - cos)) / (t2 * t2),
        )
    };
    Coeffs { a, b, c, d }
}

/// Rotation matrix of the axis-angle vector `w` (Rodrigues' formula).
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let k = skew(w);
    let Coeffs { a, b, .. } = coeffs(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix together with its partial derivatives `dR/dw_i`.
pub fn rodrigues_jacobian(w: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let k = skew(w);
    let k2 = k * k;
    let Coeffs { a, b, c, d } = coeffs(w);
    let r = Matrix3::identity() + k * a + k2 * b;
    let partial = |i: usize| {
        let e = skew(&Vector3::ith(i, 1.0));
        e * a + (e * k + k * e) * b + k * (c * w[i]) + k2 * (d * w[i])
    };
    (r, [partial(0), partial(1), partial(2)])
}

/// Pulls a gradient with respect to the rotation matrix back onto `w`.
pub fn rodrigues_vjp(w: &Vector3<f64>, grad_r: &Matrix3<f64>) -> Vector3<f64> {
    let (_, dr) = rodrigues_jacobian(w);
    Vector3::new(
        dr[0].component_mul(grad_r).sum(),
        dr[1].component_mul(grad_r).sum(),
        dr[2].component_mul(grad_r).sum(),
    )
}

/// Axis-angle vector of a rotation matrix, with angle in `[0, pi]`.
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let v = vee(r);
    if angle < SMALL_ANGLE {
        return v;
    }
    if angle < std::f64::consts::PI - 1e-3 {
        return v * (angle / angle.sin());
    }
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos) n n^T instead.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Checks that `r` is a proper rotation to within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho <= tol && (r.determinant() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let x = r * Vector3::x();
        assert_close(x.x, 0.0, 1e-15);
        assert_close(x.y, 1.0, 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let h = 1e-6;
        for w in [
            Vector3::new(0.3, -0.7, 1.1),
            Vector3::new(1e-4, 2e-4, -1e-4),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(3.0, 0.1, 0.2),
        ] {
            let (_, dr) = rodrigues_jacobian(&w);
            for i in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[i] += h;
                wm[i] -= h;
                let fd = (rodrigues(&wp) - rodrigues(&wm)) / (2.0 * h);
                assert!((fd - dr[i]).abs().max() < 1e-8, "w={w:?} i={i}");
            }
        }
    }

    #[test]
    fn log_map_inverts_rodrigues() {
        for w in [
            Vector3::new(0.3, -0.7, 1.1),
            Vector3::new(1e-10, 0.0, 0.0),
            Vector3::new(0.0, std::f64::consts::PI - 1e-5, 0.0),
            Vector3::new(std::f64::consts::PI, 0.0, 0.0),
        ] {
            let r = rodrigues(&w);
            let back = rodrigues(&log_map(&r));
            assert!((back - r).abs().max() < 1e-9, "w={w:?}");
        }
    }

    #[test]
    fn rodrigues_output_is_a_rotation() {
        let r = rodrigues(&Vector3::new(2.0, -1.0, 0.5));
        assert!(is_rotation(&r, 1e-12));
    }
}
