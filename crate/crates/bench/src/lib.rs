//! Shared fixtures for the kernel benchmarks.

use nalgebra::Point3;

use hopose_core::geometry::{SdfIndex, SignMode};
use hopose_core::synth::{synth_sequence, SynthSequence, SynthSpec};

pub struct Fixture {
    pub seq: SynthSequence,
    pub index: SdfIndex,
}

/// Default synthetic grasp with `frames` frames.
pub fn fixture(frames: usize) -> Fixture {
    let seq = synth_sequence(&SynthSpec {
        frames,
        ..Default::default()
    })
    .expect("default spec is valid");
    let index = SdfIndex::build(seq.object.clone(), SignMode::Signed).expect("object mesh is valid");
    Fixture { seq, index }
}

/// `n³` points on a regular grid spanning the object's bounding box
/// inflated by `margin` on every side.
pub fn grid_points(index: &SdfIndex, n: usize, margin: f64) -> Vec<Point3<f64>> {
    let bb = index.mesh().bounding_box();
    let lo = bb.min.coords.add_scalar(-margin);
    let hi = bb.max.coords.add_scalar(margin);
    let at = |k: usize, a: f64, b: f64| a + (b - a) * (k as f64 + 0.5) / n as f64;
    let mut points = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                points.push(Point3::new(at(i, lo.x, hi.x), at(j, lo.y, hi.y), at(k, lo.z, hi.z)));
            }
        }
    }
    points
}
