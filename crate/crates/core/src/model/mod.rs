//! Articulated hand model, pose state and rotation conventions.

mod io;
mod pose;
pub mod rotation;
mod skinned;
mod toy_hand;

pub use io::{model_from_json, model_to_json, read_model, write_model};
pub use pose::{apply_object_pose, PoseState};
pub use skinned::{Joint, SkinJacobian, SkinnedModel, VertexSelector};
pub use toy_hand::{finger_base, make_toy_hand, SEGMENT_LENGTH, SEGMENT_RADIUS, TOY_HAND_NUM_BETAS};
