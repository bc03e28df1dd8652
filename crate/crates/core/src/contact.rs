//! Per-vertex contact values and refinement towards a target contact map.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Feature, SdfIndex};
use crate::grad::{FreezeMask, GradResult, ParamVector};
use crate::model::{PoseState, SkinnedModel};
use crate::optimize::{minimize, Evaluated, Method, OptimConfig};
use crate::priors::{penetration_loss, RigidFrame};
use crate::{Error, Result};

/// Target contact values at or above this count as "in contact".
pub const IN_CONTACT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactMap {
    pub values: Vec<f64>,
    /// Object-frame unit normals at the closest surface points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<[f64; 3]>>,
}

impl ContactMap {
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("contact values must lie in [0, 1]".into()));
        }
        if let Some(n) = &self.normals {
            if n.len() != self.values.len() {
                return Err(Error::Dimension {
                    what: "contact normals",
                    expected: self.values.len(),
                    got: n.len(),
                });
            }
            if n.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("contact normals must be finite".into()));
            }
        }
        Ok(())
    }

    /// Indices with value ≥ [`IN_CONTACT`].
    pub fn in_contact(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] >= IN_CONTACT).collect()
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let m: ContactMap = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `min(1/s, 1)` for a distance in millimetres; non-positive distances
/// count as contact.
pub fn contact_value(s_mm: f64) -> f64 {
    if s_mm <= 1.0 {
        1.0
    } else {
        1.0 / s_mm
    }
}

/// Contact map of vertices expressed in the index's frame. `unit_scale` is
/// model units per millimetre.
pub fn contact_values(vertices: &[Point3<f64>], object: &SdfIndex, unit_scale: f64) -> ContactMap {
    let (values, normals) = vertices
        .iter()
        .map(|v| {
            let q = object.query(v);
            (contact_value(q.distance / unit_scale), [q.normal.x, q.normal.y, q.normal.z])
        })
        .unzip();
    ContactMap {
        values,
        normals: Some(normals),
    }
}

/// Contact map of posed hand vertices against an object-frame index.
pub fn contact_values_posed(model: &SkinnedModel, object: &SdfIndex, pose: &PoseState, unit_scale: f64) -> Result<ContactMap> {
    let frame = RigidFrame::from_euler(pose.obj_r, pose.obj_t);
    let local: Vec<_> = model
        .skin(&pose.theta, &pose.beta)?
        .iter()
        .map(|v| Point3::from(frame.to_local(v)))
        .collect();
    Ok(contact_values(&local, object, unit_scale))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactConfig {
    pub optim: OptimConfig,
    /// Model units per millimetre.
    pub unit_scale: f64,
    /// Surrogate temperature in millimetres.
    pub tau_mm: f64,
    pub penetration_weight: f64,
    pub normal_weight: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        ContactConfig {
            optim: OptimConfig {
                method: Method::Adam,
                learning_rate: 0.004,
                iterations: 300,
                freeze: FreezeMask {
                    beta: true,
                    obj_r: true,
                    obj_t: true,
                    ..Default::default()
                },
                ..Default::default()
            },
            unit_scale: 0.1,
            tau_mm: 0.25,
            penetration_weight: 1.0,
            normal_weight: 0.1,
        }
    }
}

impl ContactConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("unit_scale", self.unit_scale), ("tau_mm", self.tau_mm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("penetration_weight", self.penetration_weight), ("normal_weight", self.normal_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        self.optim.validate()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `∂n/∂p` of the signed-distance normal at `p`, from the Hessian of the
/// distance to the closest feature.
fn normal_derivative(object: &SdfIndex, p: &Point3<f64>, n: &Vector3<f64>, s: f64) -> Matrix3<f64> {
    if s.abs() < 1e-9 {
        return Matrix3::zeros();
    }
    let hit = object.closest_face(p);
    let across = Matrix3::identity() - n * n.transpose();
    match hit.feature {
        Feature::Face => Matrix3::zeros(),
        Feature::Vertex(_) => across / s,
        Feature::Edge(k) => {
            let f = object.mesh().faces()[hit.face];
            let v = object.mesh().vertices();
            let e = (v[f[(k as usize + 1) % 3]] - v[f[k as usize]]).normalize();
            (across - e * e.transpose()) / s
        }
    }
}

/// Smooth contact value `sigmoid((1 − s)/τ)` for a distance in millimetres.
pub fn contact_surrogate(s_mm: f64, tau_mm: f64) -> f64 {
    sigmoid((1.0 - s_mm) / tau_mm)
}

/// Contact-matching objective. The gradient follows the surrogate
/// `Σ (CÕ_i − CO_target,i)²`; `exact` is the same sum over the exact contact
/// values. Both include weighted penetration and, for in-contact target
/// vertices with normals, the mean of `1 − ⟨n_i, n_target⟩`.
pub struct ContactObjective<'a> {
    pub model: &'a SkinnedModel,
    pub object: &'a SdfIndex,
    pub target: &'a ContactMap,
    pub config: &'a ContactConfig,
}

impl ContactObjective<'_> {
    pub fn evaluate(&self, params: &ParamVector) -> Result<ContactEval> {
        let pose = params.unpack();
        let frame = RigidFrame::from_euler(pose.obj_r, pose.obj_t);
        let active = params.active_mask();
        let hand_active: Vec<bool> = active[..pose.theta.len() + pose.beta.len()].to_vec();
        let sj = self.model.skin_jacobian(&pose.theta, &pose.beta, None, &hand_active)?;
        let n = sj.vertices.len();
        if self.target.values.len() != n {
            return Err(Error::Dimension {
                what: "target contact values",
                expected: n,
                got: self.target.values.len(),
            });
        }
        let (tau, scale) = (self.config.tau_mm, self.config.unit_scale);
        let normal_set: Vec<usize> = match &self.target.normals {
            Some(_) if self.config.normal_weight > 0.0 => self.target.in_contact(),
            _ => Vec::new(),
        };
        let mut wants_normal = vec![false; n];
        for &i in &normal_set {
            wants_normal[i] = true;
        }
        let wn = if normal_set.is_empty() {
            0.0
        } else {
            self.config.normal_weight / normal_set.len() as f64
        };
        let mut value = 0.0;
        let mut exact = 0.0;
        let mut gv = vec![Vector3::zeros(); n];
        let mut gr = [0.0; 3];
        let mut gt = [0.0; 3];
        for (i, v) in sj.vertices.iter().enumerate() {
            let local = Point3::from(frame.to_local(v));
            let q = self.object.query(&local);
            let c = contact_surrogate(q.distance / scale, tau);
            let res = c - self.target.values[i];
            value += res * res;
            let e = contact_value(q.distance / scale) - self.target.values[i];
            exact += e * e;
            let dc_ds = -c * (1.0 - c) / (tau * scale);
            let mut g_local = q.normal * (2.0 * res * dc_ds);
            if wants_normal[i] {
                let nt = Vector3::from(self.target.normals.as_ref().expect("checked")[i]);
                let mis = wn * (1.0 - q.normal.dot(&nt));
                value += mis;
                exact += mis;
                g_local -= normal_derivative(self.object, &local, &q.normal, q.distance).transpose() * nt * wn;
            }
            let (a, b, t) = frame.pullback_local(v, &g_local);
            gv[i] += a;
            for k in 0..3 {
                gr[k] += b[k];
                gt[k] += t[k];
            }
        }
        if self.config.penetration_weight > 0.0 {
            let pen = penetration_loss(&sj.vertices, self.object, &frame)?;
            let w = self.config.penetration_weight;
            value += w * pen.value;
            exact += w * pen.value;
            for (g, p) in gv.iter_mut().zip(&pen.hand_vertices) {
                *g += p * w;
            }
            for k in 0..3 {
                gr[k] += w * pen.obj_r[k];
                gt[k] += w * pen.obj_t[k];
            }
        }
        if !(value.is_finite() && exact.is_finite()) {
            return Err(Error::NonFinite { term: "contact".into() });
        }
        let mut gradient = sj.pullback(&gv);
        gradient.extend(gr);
        gradient.extend(gt);
        for (g, a) in gradient.iter_mut().zip(&active) {
            if !a {
                *g = 0.0;
            }
        }
        Ok(ContactEval {
            exact,
            surrogate: GradResult { value, gradient },
        })
    }
}

#[derive(Clone, Debug)]
pub struct ContactEval {
    pub exact: f64,
    pub surrogate: GradResult,
}

impl Evaluated for ContactEval {
    fn total(&self) -> f64 {
        self.surrogate.value
    }

    fn gradient(&self) -> &[f64] {
        &self.surrogate.gradient
    }
}

#[derive(Clone, Debug)]
pub struct ContactResult {
    pub pose: PoseState,
    /// Surrogate objective at `init` and at the returned pose.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    /// Exact contact values of the returned pose.
    pub contact: ContactMap,
}

/// Exact objective at or below this means the target is already matched.
pub const MATCHED: f64 = 1e-12;

/// Moves the pose towards the target contact map along the surrogate
/// gradient and returns the best iterate. An init that already matches the
/// target exactly is returned unchanged.
pub fn refine_to_contact(
    model: &SkinnedModel,
    object: &SdfIndex,
    init: &PoseState,
    target: &ContactMap,
    config: &ContactConfig,
) -> Result<ContactResult> {
    config.validate()?;
    target.validate()?;
    if !object.is_signed() {
        return Err(Error::NotWatertight);
    }
    let objective = ContactObjective {
        model,
        object,
        target,
        config,
    };
    let start = ParamVector::pack(init, config.optim.freeze);
    let first = objective.evaluate(&start)?;
    if first.exact <= MATCHED {
        return Ok(ContactResult {
            pose: init.clone(),
            initial_objective: first.surrogate.value,
            final_objective: first.surrogate.value,
            iterations: 0,
            contact: contact_values_posed(model, object, init, config.unit_scale)?,
        });
    }
    let m = minimize(start, &config.optim, |p| objective.evaluate(p), |_, _, _| {})?;
    let pose = m.params.unpack().canonical();
    let contact = contact_values_posed(model, object, &pose, config.unit_scale)?;
    Ok(ContactResult {
        pose,
        initial_objective: m.initial.surrogate.value,
        final_objective: m.best.surrogate.value,
        iterations: m.iterations,
        contact,
    })
}

/// Fraction of the target's in-contact vertices whose value in `achieved`
/// reaches [`IN_CONTACT`].
pub fn contact_recall(target: &ContactMap, achieved: &ContactMap) -> f64 {
    let idx = target.in_contact();
    if idx.is_empty() {
        return 1.0;
    }
    idx.iter().filter(|&&i| achieved.values[i] >= IN_CONTACT).count() as f64 / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SignMode, TriMesh};
    use crate::grad::{central_difference_gradient, relative_errors};
    use crate::synth::{synth_sequence, SynthSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    struct Grasp {
        model: SkinnedModel,
        index: SdfIndex,
        gt: PoseState,
    }

    fn grasp() -> Grasp {
        let s = synth_sequence(&SynthSpec {
            frames: 1,
            ..Default::default()
        })
        .unwrap();
        let index = SdfIndex::build(s.object.clone(), SignMode::Signed).unwrap();
        Grasp {
            model: s.model,
            index,
            gt: s.frames[0].gt.clone(),
        }
    }

    /// Joint angles, global rotation and translation (cm) perturbed with
    /// the given standard deviations.
    fn perturb(gt: &PoseState, seed: u64, sd: [f64; 3]) -> PoseState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = gt.clone();
        let n = p.theta.len();
        for i in 0..n {
            let s = if i >= n - 3 {
                sd[2]
            } else if i >= n - 6 {
                sd[1]
            } else {
                sd[0]
            };
            p.theta[i] += Normal::new(0.0, s).unwrap().sample(&mut rng);
        }
        p
    }

    #[test]
    fn contact_value_examples() {
        assert_eq!(contact_value(0.5), 1.0);
        assert_eq!(contact_value(2.0), 0.5);
        assert!((contact_value(100.0) - 0.01).abs() < 1e-15);
        assert_eq!(contact_value(1.0), 1.0);
        assert_eq!(contact_value(-3.0), 1.0);
    }

    #[test]
    fn map_json_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let m = ContactMap {
            values: vec![0.0, 0.25, 1.0],
            normals: Some(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        };
        m.write_json(&path).unwrap();
        assert_eq!(ContactMap::read_json(&path).unwrap(), m);
        assert_eq!(m.in_contact(), vec![2]);
        let bad = ContactMap {
            values: vec![1.5],
            normals: None,
        };
        assert!(bad.validate().is_err());
        let short = ContactMap {
            values: vec![0.5, 0.5],
            normals: Some(vec![[0.0, 0.0, 1.0]]),
        };
        assert!(short.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_beyond_one_millimetre(a in 1.0f64..1e4, b in 1.0f64..1e4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(contact_value(lo) >= contact_value(hi));
        }

        #[test]
        fn scale_consistent(
            k in 0.01f64..100.0,
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..20),
        ) {
            let base = SdfIndex::build(TriMesh::icosphere(1.0, 1), SignMode::Signed).unwrap();
            let scaled = SdfIndex::build(TriMesh::icosphere(k, 1), SignMode::Signed).unwrap();
            let p: Vec<_> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let q: Vec<_> = p.iter().map(|v| Point3::from(v.coords * k)).collect();
            let a = contact_values(&p, &base, 0.1);
            let b = contact_values(&q, &scaled, 0.1 * k);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let g = grasp();
        let config = ContactConfig {
            optim: OptimConfig {
                freeze: FreezeMask::none(),
                ..ContactConfig::default().optim
            },
            ..Default::default()
        };
        let target = contact_values_posed(&g.model, &g.index, &g.gt, config.unit_scale).unwrap();
        let objective = ContactObjective {
            model: &g.model,
            object: &g.index,
            target: &target,
            config: &config,
        };
        for seed in 0..3 {
            let pose = perturb(&g.gt, seed, [0.05, 0.05, 0.1]);
            let params = ParamVector::pack(&pose, config.optim.freeze);
            let analytic = objective.evaluate(&params).unwrap().surrogate.gradient;
            let numeric = central_difference_gradient(
                |x| Ok(objective.evaluate(&params.with_values(x.to_vec())?)?.surrogate.value),
                params.values(),
                1e-6,
            )
            .unwrap();
            let worst = relative_errors(&analytic, &numeric).into_iter().fold(0.0, f64::max);
            assert!(worst < 1e-3, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn matching_init_does_not_move() {
        let g = grasp();
        let config = ContactConfig::default();
        let target = contact_values_posed(&g.model, &g.index, &g.gt, config.unit_scale).unwrap();
        let r = refine_to_contact(&g.model, &g.index, &g.gt, &target, &config).unwrap();
        let moved = r.pose.theta.iter().zip(&g.gt.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved <= 1e-6, "{moved}");
        assert_eq!(contact_recall(&target, &r.contact), 1.0);
    }

    #[test]
    fn empty_target_removes_penetration() {
        let g = grasp();
        let config = ContactConfig::default();
        let mut init = g.gt.clone();
        let frame = RigidFrame::from_euler(init.obj_r, init.obj_t);
        let verts = g.model.skin(&init.theta, &init.beta).unwrap();
        let centroid = verts.iter().fold(Vector3::zeros(), |a, v| a + v.coords) / verts.len() as f64;
        let push = (Vector3::from(init.obj_t) - centroid).normalize() * 0.8;
        let n = init.theta.len();
        for k in 0..3 {
            init.theta[n - 3 + k] += push[k];
        }
        let pen = |p: &PoseState| {
            let v = g.model.skin(&p.theta, &p.beta).unwrap();
            penetration_loss(&v, &g.index, &frame).unwrap().value
        };
        assert!(pen(&init) > 1e-3);
        let target = ContactMap {
            values: vec![0.0; g.model.num_vertices()],
            normals: None,
        };
        let r = refine_to_contact(&g.model, &g.index, &init, &target, &config).unwrap();
        assert!(pen(&r.pose) < 1e-6, "{}", pen(&r.pose));
    }

    #[test]
    fn perturbed_grasps_regain_contact() {
        let g = grasp();
        let config = ContactConfig::default();
        let target = contact_values_posed(&g.model, &g.index, &g.gt, config.unit_scale).unwrap();
        for seed in 0..3 {
            let init = perturb(&g.gt, seed, [0.05, 0.05, 0.3]);
            let r = refine_to_contact(&g.model, &g.index, &init, &target, &config).unwrap();
            assert!(r.final_objective <= r.initial_objective);
            assert!(contact_recall(&target, &r.contact) >= 0.7, "seed {seed}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn objective_never_increases(seed in 0u64..1000, lr in 0.001f64..0.05) {
            let g = grasp();
            let mut config = ContactConfig::default();
            config.optim.learning_rate = lr;
            config.optim.iterations = 20;
            let target = contact_values_posed(&g.model, &g.index, &g.gt, config.unit_scale).unwrap();
            let init = perturb(&g.gt, seed, [0.1, 0.1, 0.5]);
            let r = refine_to_contact(&g.model, &g.index, &init, &target, &config).unwrap();
            prop_assert!(r.final_objective <= r.initial_objective);
        }
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let g = grasp();
        let target = ContactMap {
            values: vec![0.0; 3],
            normals: None,
        };
        assert!(refine_to_contact(&g.model, &g.index, &g.gt, &target, &ContactConfig::default()).is_err());
    }
}
