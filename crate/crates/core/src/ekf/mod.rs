//! Extended Kalman filter tracking with quasistatic contact dynamics.

mod filter;
mod hand_object;
mod register;
mod track;

pub use filter::{ekf_step, ekf_update, make_psd, Dynamics, FilterState, Observation, StepReport, MAX_CONDITION, PSD_TOL, SYMMETRY_TOL};
pub use hand_object::{
    pose_from_state, quasistatic_step, state_from_pose, HandObjectObservation, ObservationKind, QuasistaticDynamics,
};
pub use register::{rigid_register, rotation_angle, rotation_error, Registration, RigidTransform};
pub use track::{track_sequence, write_innovations_csv, ContactSource, InnovationRow, Observations, TrackConfig, TrackResult};
