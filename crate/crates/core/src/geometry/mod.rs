//! Triangle meshes, distance queries and interpenetration volume.

mod mesh;
pub mod obj;
mod sdf;
mod volume;

pub use mesh::{Aabb, TriMesh, MIN_FACE_AREA};
pub use sdf::{
    closest_face_brute_force, closest_point_on_triangle, ClosestFace, ContactQuery, Feature,
    SdfIndex, SignMode, DEFAULT_CONTACT_THRESHOLD,
};
pub use volume::{interpenetration_volume, DEFAULT_VOXEL_RESOLUTION};
