//! Parameter packing, the gradient contract, and derivative checking.
//!
//! Gradients are assembled from hand-derived adjoints (rasteriser, distance
//! queries, rigid object transform) chained with forward-mode derivatives of
//! the skinning function.

mod check;
mod dual;
mod params;

pub use check::{
    central_difference_gradient, central_difference_jacobian, compare_gradients, jacobian, max_rel_err,
    relative_errors, write_gradcheck_csv, GradCheckRow, VectorMap, DEFAULT_FD_STEP,
};
pub use dual::{lift3, mat_mul, mat_vec, vec_add, vec_sub, Dual, Mat3, Real, Vec3};
pub use params::{evaluate_with_gradient, FreezeMask, GradResult, Objective, ParamLayout, ParamVector, Span};
