//! Sequence tracking with the hand-object EKF.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::filter::{ekf_step, ekf_update, FilterState};
use super::hand_object::{pose_from_state, state_from_pose, HandObjectObservation, ObservationKind, QuasistaticDynamics};
use crate::geometry::SdfIndex;
use crate::model::{PoseState, SkinnedModel};
use crate::optimize::{Provenance, SequenceEstimate};
use crate::priors::contact_set;
use crate::render::Camera;
use crate::{Error, Result};

/// Per-frame observation streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    /// Hand pose θ used as the filter control.
    pub control: Vec<f64>,
    pub fingertips_3d: Vec<f64>,
    pub fingertips_2d: Vec<f64>,
    pub object_center: Vec<f64>,
}

impl Observations {
    pub fn measurement(&self, kind: ObservationKind) -> DVector<f64> {
        let v = match kind {
            ObservationKind::Fingertips3d => self.fingertips_3d.clone(),
            ObservationKind::Fingertips2d => self.fingertips_2d.clone(),
            ObservationKind::ObjectCenter => self.object_center.clone(),
            ObservationKind::HandPlusObject => self.fingertips_3d.iter().chain(&self.object_center).copied().collect(),
        };
        DVector::from_vec(v)
    }
}

/// Vertices treated as contacts by the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    /// The observation selector's vertices.
    Selector,
    /// Hand vertices within the object's contact threshold in the previous
    /// estimate.
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub observation: ObservationKind,
    /// Named model selector for fingertip observations.
    pub selector: String,
    pub contact: ContactSource,
    /// Diagonal of `Q`.
    pub process_noise: f64,
    /// Diagonal of `R`.
    pub observation_noise: f64,
    /// Diagonal of the initial covariance.
    pub initial_covariance: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            observation: ObservationKind::HandPlusObject,
            selector: "fingertips".into(),
            contact: ContactSource::Selector,
            process_noise: 1e-4,
            observation_noise: 1e-2,
            initial_covariance: 1e-1,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("observation_noise", self.observation_noise),
            ("initial_covariance", self.initial_covariance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnovationRow {
    pub frame: usize,
    pub nis: f64,
    pub innovation_norm: f64,
    pub contacts: usize,
}

#[derive(Clone, Debug)]
pub struct TrackResult {
    pub estimate: SequenceEstimate,
    pub innovations: Vec<InnovationRow>,
    pub final_filter: FilterState,
}

/// Filters every frame in order. Frame 0 is an update of `init`; later
/// frames predict with the control and the previous estimate's contacts.
pub fn track_sequence(
    model: &SkinnedModel,
    object: &SdfIndex,
    camera: &Camera,
    frames: &[Observations],
    init: &PoseState,
    config: &TrackConfig,
) -> Result<TrackResult> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("sequence has no frames".into()));
    }
    let selector = model.selector(&config.selector)?.clone();
    let obs = HandObjectObservation {
        kind: config.observation,
        model,
        beta: init.beta.clone(),
        selector: selector.clone(),
        camera: *camera,
        object_center: object.mesh().centroid().coords,
    };
    let n = init.theta.len() + 6;
    let m = config.observation.output_dim(selector.len());
    let mut filter = FilterState::new(
        state_from_pose(init),
        DMatrix::identity(n, n) * config.initial_covariance,
        DMatrix::identity(n, n) * config.process_noise,
        DMatrix::identity(m, m) * config.observation_noise,
    )?;
    let mut poses: Vec<PoseState> = Vec::with_capacity(frames.len());
    let mut innovations = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let z = f.measurement(config.observation);
        let (next, report, contacts) = match poses.last() {
            None => {
                let (s, r) = ekf_update(&filter, &z, &obs)?;
                (s, r, 0)
            }
            Some(prev) => {
                let contact = match config.contact {
                    ContactSource::Selector => selector.indices().to_vec(),
                    ContactSource::Threshold => contact_set(&model.skin(&prev.theta, &prev.beta)?, object, prev),
                };
                let dynamics = QuasistaticDynamics {
                    model,
                    beta: init.beta.clone(),
                    contact,
                };
                let count = dynamics.contact.len();
                let (s, r) = ekf_step(&filter, &f.control, &z, &dynamics, &obs)?;
                (s, r, count)
            }
        };
        filter = next;
        innovations.push(InnovationRow {
            frame: t,
            nis: report.nis,
            innovation_norm: report.innovation.norm(),
            contacts,
        });
        poses.push(pose_from_state(&filter.mean, &init.beta)?);
    }
    Ok(TrackResult {
        estimate: SequenceEstimate {
            provenance: Provenance::Tracked,
            poses,
            reports: Vec::new(),
            trace: Vec::new(),
        },
        innovations,
        final_filter: filter,
    })
}

pub fn write_innovations_csv<W: Write>(rows: &[InnovationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
