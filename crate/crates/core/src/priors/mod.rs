//! Rendering and physics priors and their weighted combination.

mod frame;
mod terms;
mod weights;

pub use frame::{
    combine, contact_set, evaluate, trace_rows, write_trace_csv, FrameContext, FrameObjective, HandCache, History,
    LossReport, TraceRow,
};
pub use terms::{
    continuity_loss, image_loss, mask_loss, penetration_loss, sliding_loss, smoothness_loss, HandObjectGrad,
    RigidFrame,
};
pub use weights::{LossWeights, Term};
