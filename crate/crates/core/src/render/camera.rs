use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Depths at or below this are clamped before division.
pub const NEAR_EPS: f64 = 1e-4;

/// Pinhole intrinsics. Extrinsics are the identity: everything is already
/// expressed in the camera frame, +z forward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Pixel coordinates and depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    /// Depth was at or behind the near plane and got clamped.
    pub clamped: bool,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let c = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be at least 1x1".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub fn project_point(&self, p: &Point3<f64>) -> Projected {
        let clamped = p.z <= NEAR_EPS;
        let z = if clamped { NEAR_EPS } else { p.z };
        Projected {
            pixel: Vector2::new(self.fx * p.x / z + self.cx, self.fy * p.y / z + self.cy),
            depth: z,
            clamped,
        }
    }

    pub fn project(&self, points: &[Point3<f64>]) -> Vec<Projected> {
        points.iter().map(|p| self.project_point(p)).collect()
    }

    /// Pulls a pixel-space adjoint back to the 3D point. Clamped points get
    /// no depth derivative.
    pub fn project_adjoint(&self, p: &Point3<f64>, grad_pixel: &Vector2<f64>) -> Vector3<f64> {
        let clamped = p.z <= NEAR_EPS;
        let z = if clamped { NEAR_EPS } else { p.z };
        let gu = grad_pixel.x;
        let gv = grad_pixel.y;
        let dz = if clamped {
            0.0
        } else {
            -(gu * self.fx * p.x + gv * self.fy * p.y) / (z * z)
        };
        Vector3::new(gu * self.fx / z, gv * self.fy / z, dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn optical_axis_and_offset() {
        let c = cam();
        let p = c.project_point(&Point3::new(0.0, 0.0, 1.0));
        assert_eq!(p.pixel, Vector2::new(50.0, 50.0));
        assert_eq!(p.depth, 1.0);
        let q = c.project_point(&Point3::new(0.1, 0.0, 1.0));
        assert!((q.pixel - Vector2::new(60.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn doubling_depth_halves_offset() {
        let c = cam();
        for &(x, y, z) in &[(0.3, -0.2, 2.0), (-1.0, 0.5, 7.0), (0.01, 0.02, 0.5)] {
            let a = c.project_point(&Point3::new(x, y, z)).pixel - Vector2::new(c.cx, c.cy);
            let b = c.project_point(&Point3::new(x, y, 2.0 * z)).pixel - Vector2::new(c.cx, c.cy);
            assert!((a * 0.5 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_is_clamped() {
        let p = cam().project_point(&Point3::new(0.0, 0.0, -1.0));
        assert!(p.clamped);
        assert_eq!(p.depth, NEAR_EPS);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let c = cam();
        let p = Point3::new(0.3, -0.4, 2.5);
        let g = Vector2::new(0.7, -1.3);
        let adj = c.project_adjoint(&p, &g);
        let h = 1e-6;
        for k in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[k] += h;
            pm[k] -= h;
            let fd = (c.project_point(&pp).pixel - c.project_point(&pm).pixel).dot(&g) / (2.0 * h);
            assert!((fd - adj[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
    }
}
