pub mod contact;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod grad;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod priors;
pub mod render;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};

pub use contact::{ContactConfig, ContactMap};
pub use ekf::{FilterState, ObservationKind, TrackConfig};
pub use geometry::{SdfIndex, TriMesh};
pub use grad::{FreezeMask, ParamVector};
pub use metrics::MetricsReport;
pub use model::{PoseState, SkinnedModel};
pub use optimize::OptimConfig;
pub use priors::LossWeights;
pub use render::{Camera, RenderSettings};
pub use scene::SceneConfig;
