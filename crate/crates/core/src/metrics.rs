//! Chamfer errors, interpenetration and per-frame metric reports.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Point3, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{interpenetration_volume, SdfIndex, SignMode, TriMesh, DEFAULT_VOXEL_RESOLUTION};
use crate::model::{PoseState, SkinnedModel};
use crate::render::Camera;
use crate::{Error, Result};

fn mean_nearest<const D: usize>(a: &[SVector<f64, D>], b: &[SVector<f64, D>]) -> f64 {
    let sum: f64 = a
        .iter()
        .map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    sum / a.len() as f64
}

/// Symmetric Chamfer distance: mean nearest distance from `a` to `b` plus
/// from `b` to `a`.
pub fn chamfer_nd<const D: usize>(a: &[SVector<f64, D>], b: &[SVector<f64, D>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance of an empty point set".into()));
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

pub fn chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    let a: Vec<_> = a.iter().map(|p| p.coords).collect();
    let b: Vec<_> = b.iter().map(|p| p.coords).collect();
    chamfer_nd(&a, &b)
}

/// Chamfer distance between the projections of two point sets, in pixels.
pub fn error_2d(pred: &[Point3<f64>], gt: &[Point3<f64>], camera: &Camera) -> Result<f64> {
    let project = |pts: &[Point3<f64>]| -> Result<Vec<_>> {
        pts.iter()
            .map(|p| {
                let q = camera.project_point(p);
                if q.clamped {
                    Err(Error::InvalidArgument("vertex behind the camera".into()))
                } else {
                    Ok(q.pixel)
                }
            })
            .collect()
    };
    chamfer_nd(&project(pred)?, &project(gt)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    /// Pixels.
    pub err2d: f64,
    pub err3d: f64,
    pub collision: f64,
    pub ms_per_frame: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    /// Per-frame 2D error converted to report length units.
    pub err2d_scaled: Vec<f64>,
    pub mean_err2d: f64,
    pub mean_err2d_scaled: f64,
    pub mean_err3d: f64,
    pub mean_collision: f64,
    pub mean_ms_per_frame: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Skip the voxel interpenetration estimate.
    pub collision: bool,
    pub voxel_resolution: usize,
    /// Report lengths multiplied by this factor (model units to report units).
    pub length_scale: f64,
    /// Model units per pixel for the scaled 2D error. When unset, each frame
    /// uses the ground-truth object's mean depth over the mean focal length.
    pub pixel_size: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            collision: true,
            voxel_resolution: DEFAULT_VOXEL_RESOLUTION,
            length_scale: 1.0,
            pixel_size: None,
        }
    }
}

/// Object-vertex errors of `pred` against `gt`, plus hand/object
/// interpenetration volume of the prediction.
pub fn evaluate_sequence(
    model: &SkinnedModel,
    object: &TriMesh,
    camera: &Camera,
    pred: &[PoseState],
    gt: &[PoseState],
    ms_per_frame: &[f64],
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            what: "estimated poses",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    let mut frames = Vec::with_capacity(pred.len());
    let mut err2d_scaled = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let pv = p.object_vertices(object.vertices());
        let gv = g.object_vertices(object.vertices());
        let collision = if config.collision {
            let hand = model.mesh_with(model.skin(&p.theta, &p.beta)?)?;
            let posed = object.transformed(&p.object_rotation(), &p.object_translation());
            let index = SdfIndex::build(Arc::new(posed), SignMode::Signed)?;
            interpenetration_volume(&hand, &index, config.voxel_resolution)?
        } else {
            0.0
        };
        let s = config.length_scale;
        let err2d = error_2d(&pv, &gv, camera)?;
        let pixel = config.pixel_size.unwrap_or_else(|| {
            let depth = gv.iter().map(|v| v.z).sum::<f64>() / gv.len() as f64;
            depth / (0.5 * (camera.fx + camera.fy))
        });
        err2d_scaled.push(err2d * pixel * s);
        frames.push(FrameMetrics {
            frame: i,
            err2d,
            err3d: chamfer(&pv, &gv)? * s,
            collision: collision * s * s * s,
            ms_per_frame: ms_per_frame.get(i).copied().unwrap_or(0.0),
        });
    }
    let n = frames.len() as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mean_err2d: mean(|f| f.err2d),
        mean_err2d_scaled: err2d_scaled.iter().sum::<f64>() / n,
        err2d_scaled,
        mean_err3d: mean(|f| f.err3d),
        mean_collision: mean(|f| f.collision),
        mean_ms_per_frame: mean(|f| f.ms_per_frame),
        frames,
    })
}

pub fn write_metrics_csv<W: Write>(report: &MetricsReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in &report.frames {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Sum over interior frames of the squared second difference of the object
/// vertex trajectory, averaged over vertices.
pub fn second_difference_energy(object: &TriMesh, poses: &[PoseState]) -> f64 {
    let traj: Vec<Vec<Point3<f64>>> = poses.iter().map(|p| p.object_vertices(object.vertices())).collect();
    let n = object.vertices().len() as f64;
    traj.windows(3)
        .map(|w| {
            (0..w[0].len())
                .map(|i| (w[2][i].coords - 2.0 * w[1][i].coords + w[0][i].coords).norm_squared())
                .sum::<f64>()
                / n
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn brute(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
        let mut ab = 0.0;
        for p in a {
            let mut best = f64::INFINITY;
            for q in b {
                best = best.min((p - q).norm());
            }
            ab += best;
        }
        let mut ba = 0.0;
        for q in b {
            let mut best = f64::INFINITY;
            for p in a {
                best = best.min((p - q).norm());
            }
            ba += best;
        }
        ab / a.len() as f64 + ba / b.len() as f64
    }

    #[test]
    fn chamfer_examples() {
        let a = [Point3::new(0.0, 0.0, 0.0)];
        let b = [Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn error_2d_examples() {
        let cam = Camera::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
        let gt: Vec<_> = TriMesh::icosphere(1.0, 1)
            .vertices()
            .iter()
            .map(|p| p + Vector3::new(0.5, 0.0, 10.0))
            .collect();
        assert_eq!(error_2d(&gt, &gt, &cam).unwrap(), 0.0);
        let pushed: Vec<_> = gt.iter().map(|p| p + Vector3::new(0.0, 0.0, 2.0)).collect();
        assert!(error_2d(&pushed, &gt, &cam).unwrap() > 0.1);
        let proj = |pts: &[Point3<f64>]| -> Vec<Point3<f64>> {
            pts.iter()
                .map(|p| {
                    let q = cam.project_point(p).pixel;
                    Point3::new(q.x, q.y, 0.0)
                })
                .collect()
        };
        assert_eq!(error_2d(&pushed, &gt, &cam).unwrap(), chamfer(&proj(&pushed), &proj(&gt)).unwrap());
    }

    fn cloud() -> impl Strategy<Value = Vec<Point3<f64>>> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..30)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn chamfer_matches_brute_force_and_is_symmetric(a in cloud(), b in cloud()) {
            let c = chamfer(&a, &b).unwrap();
            prop_assert!((c - brute(&a, &b)).abs() <= 1e-12 * c.max(1.0));
            prop_assert!((c - chamfer(&b, &a).unwrap()).abs() <= 1e-12 * c.max(1.0));
            prop_assert!(c >= 0.0);
        }
    }

    #[test]
    fn ground_truth_against_itself_is_zero() {
        let s = crate::synth::synth_sequence(&crate::synth::SynthSpec {
            frames: 2,
            ..Default::default()
        })
        .unwrap();
        let gt: Vec<_> = s.frames.iter().map(|f| f.gt.clone()).collect();
        let r = evaluate_sequence(&s.model, &s.object, &s.spec.camera, &gt, &gt, &[], &MetricsConfig::default()).unwrap();
        assert_eq!(r.mean_err2d, 0.0);
        assert_eq!(r.mean_err3d, 0.0);
        assert_eq!(r.mean_collision, 0.0);
        let mut buf = Vec::new();
        write_metrics_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("frame,err2d,err3d,collision,ms_per_frame\n"));
    }

    #[test]
    fn scaled_2d_error_uses_pixel_size() {
        let s = crate::synth::synth_sequence(&crate::synth::SynthSpec {
            frames: 2,
            ..Default::default()
        })
        .unwrap();
        let gt: Vec<_> = s.frames.iter().map(|f| f.gt.clone()).collect();
        let init: Vec<_> = s.frames.iter().map(|f| f.init.clone()).collect();
        let fixed = MetricsConfig {
            collision: false,
            pixel_size: Some(0.1),
            length_scale: 2.0,
            ..Default::default()
        };
        let r = evaluate_sequence(&s.model, &s.object, &s.spec.camera, &init, &gt, &[], &fixed).unwrap();
        for (f, e) in r.frames.iter().zip(&r.err2d_scaled) {
            assert!((e - 0.2 * f.err2d).abs() < 1e-12);
        }
        let depth = MetricsConfig {
            collision: false,
            ..Default::default()
        };
        let r = evaluate_sequence(&s.model, &s.object, &s.spec.camera, &init, &gt, &[], &depth).unwrap();
        let expected = r.frames[0].err2d * s.spec.depth / s.spec.camera.fx;
        assert!(r.mean_err2d > 0.0);
        assert!((r.err2d_scaled[0] - expected).abs() < 0.2 * expected);
    }
}
