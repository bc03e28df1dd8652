//! Least-squares rigid registration of corresponding point sets.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::{Error, Result};

/// Relative size of the second singular value below which the points are
/// treated as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Rotation angle of `m`, accurate near the identity.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    s.atan2(m.trace() - 1.0)
}

/// Angle of `a⁻¹·b`.
pub fn rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Registration {
    /// Identity when `degenerate`.
    pub transform: RigidTransform,
    /// Fewer than three points, or all points collinear.
    pub degenerate: bool,
}

/// Rotation `R` and translation `T` minimising `Σ‖R·src_i + T − dst_i‖²`,
/// with `det R = +1`.
pub fn rigid_register(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<Registration> {
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            what: "registration targets",
            expected: src.len(),
            got: dst.len(),
        });
    }
    let degenerate = Registration {
        transform: RigidTransform::identity(),
        degenerate: true,
    };
    if src.len() < 3 {
        return Ok(degenerate);
    }
    let n = src.len() as f64;
    let cs = src.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let cd = dst.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s.coords - cs;
        h += a * (d.coords - cd).transpose();
        spread += a * a.transpose();
    }
    // Collinearity is a property of the source configuration alone.
    let sv = spread.symmetric_eigenvalues();
    let mut sv = [sv[0], sv[1], sv[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= COLLINEAR_TOL * sv[0] {
        return Ok(degenerate);
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        // nalgebra sorts singular values in decreasing order; flip the smallest.
        d[(2, 2)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    Ok(Registration {
        transform: RigidTransform {
            rotation,
            translation: cd - rotation * cs,
        },
        degenerate: false,
    })
}
