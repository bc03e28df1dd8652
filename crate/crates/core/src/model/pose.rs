use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{euler_to_matrix, wrap_angle};
use crate::geometry::TriMesh;
use crate::{Error, Result};

/// Hand pose `θ` (3J + 6), shape `β`, and the object's XYZ Euler rotation
/// and translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub obj_r: [f64; 3],
    pub obj_t: [f64; 3],
}

impl PoseState {
    /// Validates finiteness and wraps the Euler angles into (−π, π].
    pub fn new(theta: Vec<f64>, beta: Vec<f64>, obj_r: [f64; 3], obj_t: [f64; 3]) -> Result<Self> {
        let s = PoseState {
            theta,
            beta,
            obj_r,
            obj_t,
        };
        s.validate()?;
        Ok(s.canonical())
    }

    pub fn zeros(theta_len: usize, beta_len: usize) -> Self {
        PoseState {
            theta: vec![0.0; theta_len],
            beta: vec![0.0; beta_len],
            obj_r: [0.0; 3],
            obj_t: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .theta
            .iter()
            .chain(&self.beta)
            .chain(&self.obj_r)
            .chain(&self.obj_t);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pose contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn canonical(mut self) -> Self {
        self.obj_r = self.obj_r.map(wrap_angle);
        self
    }

    pub fn object_rotation(&self) -> Matrix3<f64> {
        euler_to_matrix(&Vector3::from(self.obj_r))
    }

    pub fn object_translation(&self) -> Vector3<f64> {
        Vector3::from(self.obj_t)
    }

    /// Hand global translation (last three θ entries).
    pub fn hand_translation(&self) -> Vector3<f64> {
        let n = self.theta.len();
        Vector3::new(self.theta[n - 3], self.theta[n - 2], self.theta[n - 1])
    }

    /// Object-model vertices mapped into the camera frame.
    pub fn object_vertices(&self, model_vertices: &[Point3<f64>]) -> Vec<Point3<f64>> {
        let r = self.object_rotation();
        let t = self.object_translation();
        model_vertices.iter().map(|v| Point3::from(r * v.coords + t)).collect()
    }
}

/// `v' = R(r)·v + t` with `R = Rz·Ry·Rx`.
pub fn apply_object_pose(mesh: &TriMesh, obj_r: [f64; 3], obj_t: [f64; 3]) -> TriMesh {
    mesh.transformed(&euler_to_matrix(&Vector3::from(obj_r)), &Vector3::from(obj_t))
}
