//! Rotation parameterisations: axis-angle for joints and the hand's global
//! orientation, XYZ Euler angles for the object.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::grad::{Mat3, Real};

/// Below this squared angle the Rodrigues coefficients use their series.
const SMALL_ANGLE_SQ: f64 = 1e-8;

/// Rodrigues' formula `I + a·K + b·K²` with `K = [ω]×`, written in terms of
/// `|ω|²` so the derivative stays finite at the identity.
pub fn axis_angle_to_matrix<T: Real>(w: [T; 3]) -> Mat3<T> {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if t2.value() < SMALL_ANGLE_SQ {
        let t4 = t2 * t2;
        (
            T::one() - t2.scale(1.0 / 6.0) + t4.scale(1.0 / 120.0),
            T::cst(0.5) - t2.scale(1.0 / 24.0) + t4.scale(1.0 / 720.0),
        )
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (T::one() - t.cos()) / t2)
    };
    let z = T::zero();
    let k = [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]];
    let k2 = crate::grad::mat_mul(&k, &k);
    [0, 1, 2].map(|i| {
        [0, 1, 2].map(|j| {
            let id = if i == j { T::one() } else { T::zero() };
            id + a * k[i][j] + b * k2[i][j]
        })
    })
}

/// Inverse of [`axis_angle_to_matrix`] for f64 rotations.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

fn rx<T: Real>(a: T) -> Mat3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

fn ry<T: Real>(a: T) -> Mat3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

fn rz<T: Real>(a: T) -> Mat3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

/// `R = Rz(r.z) · Ry(r.y) · Rx(r.x)`; the X rotation is applied first.
pub fn euler_to_matrix_generic<T: Real>(r: [T; 3]) -> Mat3<T> {
    use crate::grad::mat_mul;
    mat_mul(&rz(r[2]), &mat_mul(&ry(r[1]), &rx(r[0])))
}

pub fn euler_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    to_na(&euler_to_matrix_generic([r.x, r.y, r.z]))
}

/// Partial derivatives `∂R/∂r_x, ∂R/∂r_y, ∂R/∂r_z`.
pub fn euler_derivatives(r: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sx, cx) = r.x.sin_cos();
    let (sy, cy) = r.y.sin_cos();
    let (sz, cz) = r.z.sin_cos();
    let mx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let my = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let mz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    let dx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
    let dy = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
    let dz = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
    [mz * my * dx, mz * dy * mx, dz * my * mx]
}

/// Euler angles with pitch in [−π/2, π/2]; inverse of [`euler_to_matrix`]
/// away from gimbal lock.
pub fn matrix_to_euler(m: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let (roll, yaw) = if m[(2, 0)].abs() < 1.0 - 1e-12 {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    } else {
        // Gimbal lock: only rx − rz (or rx + rz) is determined; put it all in rx.
        (( -m[(1, 2)]).atan2(m[(1, 1)]), 0.0)
    };
    Vector3::new(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw))
}

/// True within `tol` of the pitch singularity of the XYZ convention.
pub fn near_gimbal_lock(r: &Vector3<f64>, tol: f64) -> bool {
    (wrap_angle(r.y).abs() - PI / 2.0).abs() < tol
}

/// Maps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn to_na(m: &Mat3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

pub fn from_na(m: &Matrix3<f64>) -> Mat3<f64> {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}
