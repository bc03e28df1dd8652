//! A synthetic articulated hand used in place of licensed hand-model data.
//!
//! Units are centimetres. The palm is a box in the xy-plane; fingers leave
//! its top edge along +y and the thumb (when there are at least two fingers)
//! leaves the left side diagonally. Each finger segment is a closed capsule
//! rigidly bound to its own joint.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::{Joint, SkinnedModel};
use crate::geometry::TriMesh;

pub const TOY_HAND_NUM_BETAS: usize = 10;
pub const PALM_HALF_EXTENTS: [f64; 3] = [4.0, 4.5, 1.0];
pub const SEGMENT_LENGTH: f64 = 2.2;
pub const SEGMENT_RADIUS: f64 = 0.8;
const RADIAL_SEGMENTS: usize = 8;
const CAP_RINGS: usize = 2;

/// Attachment point (relative to the palm centre) and direction of finger
/// `f` out of `count`.
pub fn finger_base(f: usize, count: usize) -> (Vector3<f64>, Vector3<f64>) {
    let [hx, hy, _] = PALM_HALF_EXTENTS;
    if count >= 2 && f == 0 {
        return (
            Vector3::new(-hx + 0.5, -0.5, 0.0),
            Vector3::new(-1.0, 1.0, 0.0).normalize(),
        );
    }
    let (slot, slots) = if count >= 2 { (f - 1, count - 1) } else { (0, 1) };
    let x = if slots == 1 {
        0.0
    } else {
        -hx + SEGMENT_RADIUS + (2.0 * hx - 2.0 * SEGMENT_RADIUS) * slot as f64 / (slots - 1) as f64
    };
    (Vector3::new(x, hy - 0.5, 0.0), Vector3::y())
}

struct Capsule {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    /// Unit radial direction per vertex (zero at the poles).
    radial: Vec<Vector3<f64>>,
    /// Position along the axis in [−r, L + r].
    axial: Vec<f64>,
}

fn capsule(base: Vector3<f64>, dir: Vector3<f64>, length: f64, radius: f64) -> Capsule {
    let a = dir.normalize();
    let helper = if a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = helper.cross(&a).normalize();
    let w = a.cross(&u);
    // Profile rings as (axial offset, ring radius), bottom to top.
    let mut profile = Vec::new();
    for i in 1..=CAP_RINGS {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / CAP_RINGS as f64;
        profile.push((-radius * phi.cos(), radius * phi.sin()));
    }
    for i in (1..=CAP_RINGS).rev() {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / CAP_RINGS as f64;
        profile.push((length + radius * phi.cos(), radius * phi.sin()));
    }
    let n = RADIAL_SEGMENTS;
    let mut vertices = vec![Point3::from(base - a * radius)];
    let mut radial = vec![Vector3::zeros()];
    let mut axial = vec![-radius];
    for &(ax, rho) in &profile {
        for k in 0..n {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let rdir = u * t.cos() + w * t.sin();
            vertices.push(Point3::from(base + a * ax + rdir * rho));
            radial.push(rdir);
            axial.push(ax);
        }
    }
    vertices.push(Point3::from(base + a * (length + radius)));
    radial.push(Vector3::zeros());
    axial.push(length + radius);
    let top = vertices.len() - 1;
    let ring = |i: usize, k: usize| 1 + i * n + (k % n);
    let mut faces = Vec::new();
    for k in 0..n {
        faces.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for i in 0..profile.len() - 1 {
        for k in 0..n {
            faces.push([ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)]);
            faces.push([ring(i, k), ring(i + 1, k + 1), ring(i + 1, k)]);
        }
    }
    let last = profile.len() - 1;
    for k in 0..n {
        faces.push([ring(last, k), ring(last, k + 1), top]);
    }
    Capsule {
        vertices,
        faces,
        radial,
        axial,
    }
}

/// Builds a hand with `finger_count` fingers of `segments` capsules each.
/// Joint 0 is the palm; finger `f` segment `s` is joint `1 + f·segments + s`.
pub fn make_toy_hand(segments: usize, finger_count: usize) -> SkinnedModel {
    let segments = segments.max(1);
    let finger_count = finger_count.max(1);
    let b = TOY_HAND_NUM_BETAS;

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut weights: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut shape: Vec<[f64; 3 * TOY_HAND_NUM_BETAS]> = Vec::new();
    let mut joints = vec![Joint {
        parent: None,
        rest_translation: [0.0; 3],
    }];
    let mut fingertips = Vec::new();

    let palm = TriMesh::cuboid(Vector3::from(PALM_HALF_EXTENTS), 1);
    for p in palm.vertices() {
        vertices.push(*p);
        weights.push(vec![(0, 1.0)]);
        let mut s = [0.0; 3 * TOY_HAND_NUM_BETAS];
        for k in 0..3 {
            s[k * b] = 0.05 * p[k]; // overall scale
        }
        s[1] = 0.1 * p.x; // palm width
        s[2 * b + 2] = 0.2 * p.z; // palm thickness
        shape.push(s);
    }
    faces.extend_from_slice(palm.faces());

    for f in 0..finger_count {
        let (attach, dir) = finger_base(f, finger_count);
        for s in 0..segments {
            let joint_index = joints.len();
            let (parent, offset) = if s == 0 { (0, attach) } else { (joint_index - 1, dir * SEGMENT_LENGTH) };
            joints.push(Joint {
                parent: Some(parent),
                rest_translation: [offset.x, offset.y, offset.z],
            });
            let start = attach + dir * (SEGMENT_LENGTH * s as f64);
            let cap = capsule(start, dir, SEGMENT_LENGTH, SEGMENT_RADIUS);
            let off = vertices.len();
            for (i, p) in cap.vertices.iter().enumerate() {
                vertices.push(*p);
                weights.push(vec![(joint_index, 1.0)]);
                let mut sd = [0.0; 3 * TOY_HAND_NUM_BETAS];
                for k in 0..3 {
                    sd[k * b] = 0.05 * p[k];
                    let r = cap.radial[i][k];
                    if f < 5 {
                        sd[k * b + 3 + f] = 0.1 * r; // per-finger thickness
                    }
                    sd[k * b + 8] = 0.05 * r; // all fingers thickness
                    // Stretch along the finger, proportional to axial position.
                    sd[k * b + 9] = 0.02 * cap.axial[i] * dir[k];
                }
                shape.push(sd);
            }
            faces.extend(cap.faces.iter().map(|t| t.map(|i| i + off)));
            if s + 1 == segments {
                fingertips.push(off + cap.vertices.len() - 1);
            }
        }
    }

    let shape_dirs: Vec<f64> = shape.iter().flat_map(|s| s.iter().copied()).collect();
    let palm_ids: Vec<usize> = (0..8).collect();
    SkinnedModel::new(
        vertices,
        faces,
        joints,
        weights,
        Some((b, shape_dirs)),
        BTreeMap::from([("fingertips".to_string(), fingertips), ("palm".to_string(), palm_ids)]),
    )
    .expect("toy hand construction satisfies model invariants")
}
