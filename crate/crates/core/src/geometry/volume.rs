use std::sync::Arc;

use nalgebra::Point3;
use rayon::prelude::*;

use super::{Aabb, SdfIndex, SignMode, TriMesh};
use crate::{Error, Result};

pub const DEFAULT_VOXEL_RESOLUTION: usize = 64;

/// Volume of the region inside both the hand and the object, estimated by
/// counting voxel centres of a regular grid over the intersection of their
/// bounding boxes. Voxels are cubic with edge `longest_extent / resolution`.
///
/// The hand may consist of several closed parts (one per finger segment);
/// a point is inside the hand when it is inside any part.
pub fn interpenetration_volume(hand: &TriMesh, object: &SdfIndex, resolution: usize) -> Result<f64> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "voxel resolution must be at least 8, got {resolution}"
        )));
    }
    if !object.is_signed() {
        return Err(Error::NotWatertight);
    }
    let parts = hand
        .components()
        .into_iter()
        .map(|part| {
            let bounds = part.bounding_box();
            SdfIndex::build(Arc::new(part), SignMode::Signed).map(|idx| (bounds, idx))
        })
        .collect::<Result<Vec<_>>>()?;
    let hand_box = hand.bounding_box();
    let object_box = object.mesh().bounding_box();
    let Some(region) = hand_box.intersection(&object_box) else {
        return Ok(0.0);
    };
    let extent = region.extent();
    let longest = extent.x.max(extent.y).max(extent.z);
    if longest <= 0.0 {
        return Ok(0.0);
    }
    let h = longest / resolution as f64;
    let counts = [0, 1, 2].map(|k| ((extent[k] / h).ceil() as usize).max(1));

    let inside_hand = |p: &Point3<f64>| parts.iter().any(|(b, idx)| b.contains(p) && idx.query(p).distance < 0.0);
    let inside = |p: &Point3<f64>| object_box.contains(p) && object.query(p).distance < 0.0 && inside_hand(p);

    let hits: usize = (0..counts[2])
        .into_par_iter()
        .map(|k| {
            let mut n = 0usize;
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let p = voxel_center(&region, h, i, j, k);
                    if inside(&p) {
                        n += 1;
                    }
                }
            }
            n
        })
        .sum();
    Ok(hits as f64 * h * h * h)
}

fn voxel_center(region: &Aabb, h: f64, i: usize, j: usize, k: usize) -> Point3<f64> {
    Point3::new(
        region.min.x + (i as f64 + 0.5) * h,
        region.min.y + (j as f64 + 0.5) * h,
        region.min.z + (k as f64 + 0.5) * h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cube(half: f64, offset: Vector3<f64>) -> TriMesh {
        TriMesh::cuboid(Vector3::new(half, half, half), 1).transformed(&Matrix3::identity(), &offset)
    }

    fn signed(m: TriMesh) -> SdfIndex {
        SdfIndex::build(m, SignMode::Signed).unwrap()
    }

    #[test]
    fn disjoint_meshes_have_zero_volume() {
        let a = cube(0.5, Vector3::zeros());
        let b = signed(cube(0.5, Vector3::new(3.0, 0.0, 0.0)));
        assert_eq!(interpenetration_volume(&a, &b, 32).unwrap(), 0.0);
    }

    #[test]
    fn nested_cube_volume() {
        let inner = cube(0.5, Vector3::new(0.1, 0.0, 0.0));
        let outer = signed(cube(1.0, Vector3::zeros()));
        let res = 32;
        let v = interpenetration_volume(&inner, &outer, res).unwrap();
        assert!((v - 1.0).abs() <= 2.0 / res as f64, "{v}");
    }

    #[test]
    fn slab_overlap_volume_and_convergence() {
        let a = cube(0.5, Vector3::zeros());
        let b = signed(cube(0.5, Vector3::new(0.5, 0.0, 0.0)));
        let mut prev: Option<(f64, f64)> = None;
        for res in [16, 32, 64] {
            let v = interpenetration_volume(&a, &b, res).unwrap();
            assert!((v - 0.5).abs() <= 2.0 / res as f64, "res {res}: {v}");
            if let Some((pv, bound)) = prev {
                assert!((v - pv).abs() < bound);
            }
            prev = Some((v, 2.0 / res as f64));
        }
    }

    #[test]
    fn multi_part_hand_counts_union() {
        let parts = TriMesh::concat(&[
            cube(0.25, Vector3::new(-0.25, 0.0, 0.0)),
            cube(0.25, Vector3::new(0.25, 0.0, 0.0)),
        ])
        .unwrap();
        let obj = signed(cube(2.0, Vector3::zeros()));
        let v = interpenetration_volume(&parts, &obj, 32).unwrap();
        assert!((v - 0.25).abs() < 2.0 / 32.0, "{v}");
    }

    #[test]
    fn rejects_open_inputs_and_low_resolution() {
        let tri = TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let obj = signed(cube(1.0, Vector3::zeros()));
        assert!(matches!(interpenetration_volume(&tri, &obj, 16), Err(Error::NotWatertight)));
        let open = SdfIndex::build(tri, SignMode::Unsigned).unwrap();
        let c = cube(0.5, Vector3::zeros());
        assert!(matches!(interpenetration_volume(&c, &open, 16), Err(Error::NotWatertight)));
        assert!(interpenetration_volume(&c, &obj, 4).is_err());
    }
}
