//! Hand-object state, quasistatic contact dynamics and observation models.

use nalgebra::{DMatrix, DVector, Matrix2x3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::filter::{Dynamics, Observation};
use super::register::rigid_register;
use crate::grad::DEFAULT_FD_STEP;
use crate::model::rotation::{euler_derivatives, euler_to_matrix, matrix_to_euler, wrap_angle};
use crate::model::{PoseState, SkinnedModel, VertexSelector};
use crate::render::Camera;
use crate::{Error, Result};

/// Filter state `(θ, r, t)`; `β` is held fixed.
pub fn state_from_pose(pose: &PoseState) -> DVector<f64> {
    let r = matrix_to_euler(&pose.object_rotation());
    DVector::from_iterator(
        pose.theta.len() + 6,
        pose.theta.iter().copied().chain([r.x, r.y, r.z]).chain(pose.obj_t),
    )
}

pub fn pose_from_state(x: &DVector<f64>, beta: &[f64]) -> Result<PoseState> {
    let n = x.len();
    if n < 6 {
        return Err(Error::Dimension {
            what: "filter state",
            expected: 6,
            got: n,
        });
    }
    PoseState::new(
        x.as_slice()[..n - 6].to_vec(),
        beta.to_vec(),
        [x[n - 6], x[n - 5], x[n - 4]],
        [x[n - 3], x[n - 2], x[n - 1]],
    )
}

/// Hand set from the control; object moved by the rigid registration of
/// the contact vertices before and after the hand moves. Fewer than three
/// or collinear contacts leave the object in place.
pub fn quasistatic_step(model: &SkinnedModel, state: &PoseState, control: &[f64], contact: &[usize]) -> Result<PoseState> {
    if control.len() != state.theta.len() {
        return Err(Error::Dimension {
            what: "control",
            expected: state.theta.len(),
            got: control.len(),
        });
    }
    let mut next = state.clone();
    next.theta = control.to_vec();
    if contact.is_empty() {
        return Ok(next);
    }
    let before = model.skin_subset(&state.theta, &state.beta, contact)?;
    let after = model.skin_subset(control, &state.beta, contact)?;
    let reg = rigid_register(&before, &after)?;
    if reg.degenerate {
        return Ok(next);
    }
    let rot = reg.transform.rotation * state.object_rotation();
    let t = reg.transform.rotation * state.object_translation() + reg.transform.translation;
    let r = matrix_to_euler(&rot);
    next.obj_r = [r.x, r.y, r.z];
    next.obj_t = [t.x, t.y, t.z];
    Ok(next)
}

/// [`quasistatic_step`] over filter states.
pub struct QuasistaticDynamics<'a> {
    pub model: &'a SkinnedModel,
    pub beta: Vec<f64>,
    pub contact: Vec<usize>,
}

impl Dynamics for QuasistaticDynamics<'_> {
    fn propagate(&self, x: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
        let pose = pose_from_state(x, &self.beta)?;
        Ok(state_from_pose(&quasistatic_step(self.model, &pose, u, &self.contact)?))
    }

    /// Central differences with Euler-angle outputs compared modulo 2π.
    fn jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        let h = DEFAULT_FD_STEP;
        let mut j = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for c in 0..n {
            xp[c] = x[c] + h;
            let fp = self.propagate(&xp, u)?;
            xp[c] = x[c] - h;
            let fm = self.propagate(&xp, u)?;
            xp[c] = x[c];
            for r in 0..n {
                let mut d = fp[r] - fm[r];
                if (n - 6..n - 3).contains(&r) {
                    d = wrap_angle(d);
                }
                j[(r, c)] = d / (2.0 * h);
            }
        }
        Ok(j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    #[serde(rename = "fingertips_3d")]
    Fingertips3d,
    #[serde(rename = "fingertips_2d")]
    Fingertips2d,
    ObjectCenter,
    HandPlusObject,
}

impl ObservationKind {
    pub const ALL: [ObservationKind; 4] = [
        ObservationKind::Fingertips3d,
        ObservationKind::Fingertips2d,
        ObservationKind::ObjectCenter,
        ObservationKind::HandPlusObject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObservationKind::Fingertips3d => "fingertips_3d",
            ObservationKind::Fingertips2d => "fingertips_2d",
            ObservationKind::ObjectCenter => "object_center",
            ObservationKind::HandPlusObject => "hand_plus_object",
        }
    }

    /// Output dimension for `k` selected vertices.
    pub fn output_dim(self, k: usize) -> usize {
        match self {
            ObservationKind::Fingertips3d => 3 * k,
            ObservationKind::Fingertips2d => 2 * k,
            ObservationKind::ObjectCenter => 3,
            ObservationKind::HandPlusObject => 3 * k + 3,
        }
    }
}

/// Observation of the hand-object state.
pub struct HandObjectObservation<'a> {
    pub kind: ObservationKind,
    pub model: &'a SkinnedModel,
    pub beta: Vec<f64>,
    pub selector: VertexSelector,
    pub camera: Camera,
    /// Object point whose camera-frame position is observed, in the object
    /// frame.
    pub object_center: Vector3<f64>,
}

impl HandObjectObservation<'_> {
    fn split(&self, x: &DVector<f64>) -> (usize, [f64; 3], [f64; 3]) {
        let n = x.len();
        (n - 6, [x[n - 6], x[n - 5], x[n - 4]], [x[n - 3], x[n - 2], x[n - 1]])
    }

    fn tips(&self, x: &DVector<f64>) -> Result<Vec<Point3<f64>>> {
        let (nt, _, _) = self.split(x);
        self.model.skin_subset(&x.as_slice()[..nt], &self.beta, self.selector.indices())
    }

    fn center(&self, x: &DVector<f64>) -> Vector3<f64> {
        let (_, r, t) = self.split(x);
        euler_to_matrix(&Vector3::from(r)) * self.object_center + Vector3::from(t)
    }

    fn projection_jacobian(&self, p: &Point3<f64>) -> Matrix2x3<f64> {
        let z = p.z;
        Matrix2x3::new(
            self.camera.fx / z,
            0.0,
            -self.camera.fx * p.x / (z * z),
            0.0,
            self.camera.fy / z,
            -self.camera.fy * p.y / (z * z),
        )
    }

    /// Rows `3v..3v+3` hold `∂tip_v/∂θ`.
    fn tips_jacobian(&self, x: &DVector<f64>) -> Result<(Vec<Point3<f64>>, DMatrix<f64>)> {
        let (nt, _, _) = self.split(x);
        let theta = &x.as_slice()[..nt];
        let mut active = vec![true; nt];
        active.extend(std::iter::repeat_n(false, self.beta.len()));
        let sj = self
            .model
            .skin_jacobian(theta, &self.beta, Some(self.selector.indices()), &active)?;
        let k = self.selector.len();
        let mut j = DMatrix::zeros(3 * k, x.len());
        for (p, col) in sj.columns.iter().enumerate().take(nt) {
            for (v, d) in col.iter().enumerate() {
                for a in 0..3 {
                    j[(3 * v + a, p)] = d[a];
                }
            }
        }
        Ok((sj.vertices, j))
    }

    fn center_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (nt, r, _) = self.split(x);
        let d = euler_derivatives(&Vector3::from(r));
        let mut j = DMatrix::zeros(3, x.len());
        for k in 0..3 {
            let col = d[k] * self.object_center;
            for a in 0..3 {
                j[(a, nt + k)] = col[a];
            }
            j[(k, nt + 3 + k)] = 1.0;
        }
        j
    }
}

impl Observation for HandObjectObservation<'_> {
    fn output_dim(&self) -> usize {
        self.kind.output_dim(self.selector.len())
    }

    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out: Vec<f64> = match self.kind {
            ObservationKind::Fingertips3d => self.tips(x)?.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
            ObservationKind::Fingertips2d => self
                .tips(x)?
                .iter()
                .flat_map(|p| {
                    let q = self.camera.project_point(p).pixel;
                    [q.x, q.y]
                })
                .collect(),
            ObservationKind::ObjectCenter => self.center(x).as_slice().to_vec(),
            ObservationKind::HandPlusObject => {
                let c = self.center(x);
                self.tips(x)?.iter().flat_map(|p| [p.x, p.y, p.z]).chain([c.x, c.y, c.z]).collect()
            }
        };
        Ok(DVector::from_vec(out))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.kind {
            ObservationKind::Fingertips3d => Ok(self.tips_jacobian(x)?.1),
            ObservationKind::Fingertips2d => {
                let (tips, j3) = self.tips_jacobian(x)?;
                let mut j = DMatrix::zeros(2 * tips.len(), x.len());
                for (v, p) in tips.iter().enumerate() {
                    let block = self.projection_jacobian(p) * j3.rows(3 * v, 3);
                    j.rows_mut(2 * v, 2).copy_from(&block);
                }
                Ok(j)
            }
            ObservationKind::ObjectCenter => Ok(self.center_jacobian(x)),
            ObservationKind::HandPlusObject => {
                let j3 = self.tips_jacobian(x)?.1;
                let k = j3.nrows();
                let mut j = DMatrix::zeros(k + 3, x.len());
                j.rows_mut(0, k).copy_from(&j3);
                j.rows_mut(k, 3).copy_from(&self.center_jacobian(x));
                Ok(j)
            }
        }
    }
}
