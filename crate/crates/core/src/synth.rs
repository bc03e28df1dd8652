//! Synthetic grasp sequences with ground truth: the toy hand holds a box
//! with its fingertips and both move rigidly along a smooth trajectory.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, TriMesh};
use crate::grad::Mat3;
use crate::model::rotation::{axis_angle_to_matrix, euler_to_matrix, matrix_to_axis_angle, matrix_to_euler, to_na};
use crate::model::{finger_base, make_toy_hand, PoseState, SkinnedModel, SEGMENT_LENGTH, SEGMENT_RADIUS};
use crate::render::{render_hard, Camera, Layer, MaskImage, RgbImage, LABEL_HAND, LABEL_OBJECT};
use crate::{Error, Result};

pub const HAND_COLOR: [f64; 3] = [0.85, 0.7, 0.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub frames: usize,
    pub camera: Camera,
    pub segments: usize,
    pub fingers: usize,
    pub object_half_extents: [f64; 3],
    pub object_subdivisions: usize,
    /// Depth of the scene centre at the middle of the trajectory.
    pub depth: f64,
    /// Orientation of the grasp relative to the camera (XYZ Euler).
    pub view_rotation: [f64; 3],
    /// Translation per frame.
    pub velocity: [f64; 3],
    /// Axis-angle rotation per frame, about the object centre.
    pub angular_velocity: [f64; 3],
    /// Gap between fingertips and the object surface.
    pub grasp_gap: f64,
    /// Init translation noise σ as a fraction of the object diameter.
    pub init_translation_noise: f64,
    /// Init rotation noise σ in degrees (angle about a random axis).
    pub init_rotation_noise_deg: f64,
    /// Also perturb the hand's global pose in the initial estimates.
    pub perturb_hand: bool,
    /// σ of 3D observation noise (model units).
    pub observation_noise: f64,
    /// σ of 2D observation noise (pixels).
    pub observation_noise_px: f64,
    /// σ of noise on the hand-pose controls (radians / model units).
    pub control_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 30,
            camera: Camera {
                fx: 200.0,
                fy: 200.0,
                cx: 48.0,
                cy: 48.0,
                width: 96,
                height: 96,
            },
            segments: 3,
            fingers: 5,
            object_half_extents: [4.0, 3.0, 2.5],
            object_subdivisions: 3,
            depth: 40.0,
            view_rotation: [0.6, 1.1, 0.3],
            velocity: [0.06, -0.04, 0.08],
            angular_velocity: [0.004, 0.008, -0.006],
            grasp_gap: 0.05,
            init_translation_noise: 0.05,
            init_rotation_noise_deg: 10.0,
            perturb_hand: false,
            observation_noise: 0.0,
            observation_noise_px: 0.0,
            control_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frames == 0 || self.segments == 0 || self.fingers == 0 {
            return Err(Error::InvalidArgument("frames, segments and fingers must be at least 1".into()));
        }
        if self.object_half_extents.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidArgument("object half extents must be positive".into()));
        }
        let noises = [
            self.init_translation_noise,
            self.init_rotation_noise_deg,
            self.observation_noise,
            self.observation_noise_px,
            self.control_noise,
        ];
        if noises.iter().any(|&n| !(n >= 0.0 && n.is_finite())) {
            return Err(Error::InvalidArgument("noise levels must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub use crate::ekf::Observations;

#[derive(Clone, Debug)]
pub struct SynthFrame {
    pub gt: PoseState,
    pub init: PoseState,
    pub mask: MaskImage,
    pub rgb: RgbImage,
    pub observations: Observations,
}

#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub spec: SynthSpec,
    pub model: SkinnedModel,
    /// Object mesh in its local frame, centred at the origin.
    pub object: TriMesh,
    pub object_colors: Vec<[f64; 3]>,
    pub frames: Vec<SynthFrame>,
}

/// Flat per-face albedo from the local face normal.
pub fn object_face_colors(mesh: &TriMesh) -> Vec<[f64; 3]> {
    mesh.face_normals()
        .iter()
        .map(|n| [0.5 + 0.45 * n.x, 0.5 + 0.45 * n.y, 0.5 + 0.45 * n.z])
        .collect()
}

/// Hand pose with every finger bent 90° at its base so the tips point along
/// the palm's −z axis. Global rotation and translation are zero.
pub fn grasp_theta(model: &SkinnedModel, segments: usize, fingers: usize) -> Vec<f64> {
    let mut theta = vec![0.0; model.theta_len()];
    for f in 0..fingers {
        let (_, dir) = finger_base(f, fingers);
        let axis = dir.cross(&-Vector3::z()).normalize() * std::f64::consts::FRAC_PI_2;
        let j = 1 + f * segments;
        theta[3 * j..3 * j + 3].copy_from_slice(axis.as_slice());
    }
    theta
}

/// Object centre in the hand frame for the grasp pose: the box's top face
/// sits `gap` below the fingertips and covers all of them.
pub fn grasp_object_offset(fingers: usize, segments: usize, half_extents: [f64; 3], gap: f64) -> Vector3<f64> {
    let reach = SEGMENT_LENGTH * segments as f64 + SEGMENT_RADIUS;
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for f in 0..fingers {
        let tip = finger_base(f, fingers).0;
        lo = lo.inf(&tip);
        hi = hi.sup(&tip);
    }
    let mid = (lo + hi) * 0.5;
    Vector3::new(mid.x, mid.y, -reach - gap - half_extents[2])
}

fn mat3(m: &Matrix3<f64>) -> Vector3<f64> {
    matrix_to_axis_angle(m)
}

fn axis_angle(w: &Vector3<f64>) -> Matrix3<f64> {
    let m: Mat3<f64> = axis_angle_to_matrix([w.x, w.y, w.z]);
    to_na(&m)
}

/// Hand θ for a hand rigidly attached to an object at pose `(r, t)`.
pub fn attached_theta(grasp: &[f64], offset: &Vector3<f64>, obj_r: [f64; 3], obj_t: [f64; 3]) -> Vec<f64> {
    let r = euler_to_matrix(&Vector3::from(obj_r));
    let global_r = mat3(&r);
    let global_t = r * (-offset) + Vector3::from(obj_t);
    let mut theta = grasp.to_vec();
    let n = theta.len();
    theta[n - 6..n - 3].copy_from_slice(global_r.as_slice());
    theta[n - 3..].copy_from_slice(global_t.as_slice());
    theta
}

/// Random rotation of angle `N(0, σ)` about a uniformly random axis.
fn random_rotation(rng: &mut ChaCha8Rng, sigma: f64) -> Matrix3<f64> {
    if sigma == 0.0 {
        return Matrix3::identity();
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    axis_angle(&(Vector3::from(axis) * angle))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Posed object vertices for `pose`.
pub fn posed_object(object: &TriMesh, pose: &PoseState) -> Vec<Point3<f64>> {
    pose.object_vertices(object.vertices())
}

/// Generates the sequence. Identical specs give bit-identical output.
pub fn synth_sequence(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let model = make_toy_hand(spec.segments, spec.fingers);
    let object = TriMesh::cuboid(Vector3::from(spec.object_half_extents), spec.object_subdivisions);
    let object_colors = object_face_colors(&object);
    let grasp = grasp_theta(&model, spec.segments, spec.fingers);
    let offset = grasp_object_offset(spec.fingers, spec.segments, spec.object_half_extents, spec.grasp_gap);
    let beta = vec![0.0; model.num_betas()];
    let view = euler_to_matrix(&Vector3::from(spec.view_rotation));
    let tips = model.selector("fingertips")?.clone();

    // Centre the scene's bounding box at mid-trajectory.
    let probe = {
        let r = spec.view_rotation;
        let theta = attached_theta(&grasp, &offset, r, [0.0; 3]);
        let hand = model.skin(&theta, &beta)?;
        let obj = object.transformed(&view, &Vector3::zeros());
        Aabb::from_points(hand.iter().chain(obj.vertices()))
    };
    let centre = (probe.min.coords + probe.max.coords) * 0.5;
    let velocity = Vector3::from(spec.velocity);
    let half = (spec.frames as f64 - 1.0) * 0.5;
    let t0 = Vector3::new(0.0, 0.0, spec.depth) - centre - velocity * half;
    let omega = Vector3::from(spec.angular_velocity);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let diameter = object.diameter();
    let rot_sigma = spec.init_rotation_noise_deg.to_radians();
    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let rk = axis_angle(&(omega * (k as f64 - half))) * view;
        let obj_r = matrix_to_euler(&rk);
        let r = [obj_r.x, obj_r.y, obj_r.z];
        let tk = t0 + velocity * k as f64;
        let t = [tk.x, tk.y, tk.z];
        let theta = attached_theta(&grasp, &offset, r, t);
        let gt = PoseState::new(theta, beta.clone(), r, t)?;

        let hand_vertices = model.skin(&gt.theta, &gt.beta)?;
        let obj_vertices = posed_object(&object, &gt);
        let (mask, rgb) = render_hard(
            &spec.camera,
            &[
                Layer {
                    vertices: &hand_vertices,
                    faces: model.faces(),
                    label: LABEL_HAND,
                    face_colors: None,
                    color: HAND_COLOR,
                },
                Layer {
                    vertices: &obj_vertices,
                    faces: object.faces(),
                    label: LABEL_OBJECT,
                    face_colors: Some(&object_colors),
                    color: [0.0; 3],
                },
            ],
        );

        // Noisy initial estimate.
        let noise_r = random_rotation(&mut rng, rot_sigma);
        let noise_t = gaussian_vec(&mut rng, 3, spec.init_translation_noise * diameter);
        let ir = matrix_to_euler(&(noise_r * gt.object_rotation()));
        let it = tk + Vector3::from_column_slice(&noise_t);
        let mut init_theta = gt.theta.clone();
        if spec.perturb_hand {
            let hr = random_rotation(&mut rng, rot_sigma);
            let ht = gaussian_vec(&mut rng, 3, spec.init_translation_noise * diameter);
            let n = init_theta.len();
            let g = axis_angle(&Vector3::from_column_slice(&init_theta[n - 6..n - 3]));
            init_theta[n - 6..n - 3].copy_from_slice(mat3(&(hr * g)).as_slice());
            for a in 0..3 {
                init_theta[n - 3 + a] += ht[a];
            }
        }
        let init = PoseState::new(init_theta, beta.clone(), [ir.x, ir.y, ir.z], [it.x, it.y, it.z])?;

        // Observations.
        let control: Vec<f64> = gt
            .theta
            .iter()
            .zip(gaussian_vec(&mut rng, gt.theta.len(), spec.control_noise))
            .map(|(a, b)| a + b)
            .collect();
        let tip_points = tips.select(&hand_vertices)?;
        let n3 = gaussian_vec(&mut rng, 3 * tip_points.len(), spec.observation_noise);
        let fingertips_3d: Vec<f64> = tip_points
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .zip(n3)
            .map(|(a, b)| a + b)
            .collect();
        let n2 = gaussian_vec(&mut rng, 2 * tip_points.len(), spec.observation_noise_px);
        let fingertips_2d: Vec<f64> = tip_points
            .iter()
            .flat_map(|p| {
                let q = spec.camera.project_point(p).pixel;
                [q.x, q.y]
            })
            .zip(n2)
            .map(|(a, b)| a + b)
            .collect();
        let nc = gaussian_vec(&mut rng, 3, spec.observation_noise);
        let c = gt.object_rotation() * object.centroid().coords + tk;
        let object_center = vec![c.x + nc[0], c.y + nc[1], c.z + nc[2]];

        frames.push(SynthFrame {
            gt,
            init,
            mask,
            rgb,
            observations: Observations {
                control,
                fingertips_3d,
                fingertips_2d,
                object_center,
            },
        });
    }
    Ok(SynthSequence {
        spec: spec.clone(),
        model,
        object,
        object_colors,
        frames,
    })
}
