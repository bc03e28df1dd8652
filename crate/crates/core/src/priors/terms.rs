//! The six loss terms on explicit inputs, each returning its value and the
//! adjoint with respect to the quantities it reads.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::geometry::SdfIndex;
use crate::model::rotation::{euler_derivatives, euler_to_matrix};
use crate::{Error, Result};

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

/// Object rotation `R(r)`, translation `t` and `∂R/∂r_k`.
#[derive(Clone, Copy, Debug)]
pub struct RigidFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub d_rotation: [Matrix3<f64>; 3],
}

impl RigidFrame {
    pub fn from_euler(r: [f64; 3], t: [f64; 3]) -> Self {
        let rv = Vector3::from(r);
        RigidFrame {
            rotation: euler_to_matrix(&rv),
            translation: Vector3::from(t),
            d_rotation: euler_derivatives(&rv),
        }
    }

    pub fn to_world(&self, local: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * local.coords + self.translation)
    }

    pub fn to_local(&self, world: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world.coords - self.translation)
    }

    /// Pulls adjoints on world points `R·m + t` back to `(r, t)`.
    pub fn pullback_world(&self, local: &[Point3<f64>], grad: &[Vector3<f64>]) -> ([f64; 3], [f64; 3]) {
        let mut gr = [0.0; 3];
        let mut gt = Vector3::zeros();
        for (m, g) in local.iter().zip(grad) {
            gt += g;
            for k in 0..3 {
                gr[k] += g.dot(&(self.d_rotation[k] * m.coords));
            }
        }
        (gr, [gt.x, gt.y, gt.z])
    }

    /// Pulls an adjoint on `Rᵀ(v − t)` back to `v`, `r` and `t`; returns
    /// `(∂/∂v, ∂/∂r, ∂/∂t)`.
    pub fn pullback_local(&self, world: &Point3<f64>, g_local: &Vector3<f64>) -> (Vector3<f64>, [f64; 3], Vector3<f64>) {
        let gv = self.rotation * g_local;
        let a = world.coords - self.translation;
        let gr = [0, 1, 2].map(|k| a.dot(&(self.d_rotation[k] * g_local)));
        (gv, gr, -gv)
    }
}

/// `Σ_p ‖(1 − M_hand)·I_r − M_obj·I_in‖² / N`. `target` is `M_obj·I_in`.
/// Returns the value and `∂L/∂I_r`.
pub fn image_loss(rendered: &[[f64; 3]], hand_mask: &[f64], target: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    let n = rendered.len();
    check_len("detected hand mask", n, hand_mask.len())?;
    check_len("input image", n, target.len())?;
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; n];
    for p in 0..n {
        let keep = 1.0 - hand_mask[p];
        for k in 0..3 {
            let r = keep * rendered[p][k] - target[p][k];
            value += r * r;
            grad[p][k] = 2.0 * keep * r * inv;
        }
    }
    Ok((value * inv, grad))
}

/// Per-class mask residual, each class masked by the other class's detected
/// region: `((1 − M_obj)·O_hand − M_hand)² + ((1 − M_hand)·O_obj − M_obj)²`,
/// averaged over pixels. Returns the value and `∂L/∂O_hand`, `∂L/∂O_obj`.
pub fn mask_loss(
    occ_hand: &[f64],
    occ_obj: &[f64],
    hand_mask: &[f64],
    obj_mask: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = hand_mask.len();
    check_len("hand occupancy", n, occ_hand.len())?;
    check_len("object occupancy", n, occ_obj.len())?;
    check_len("detected object mask", n, obj_mask.len())?;
    if n == 0 {
        return Ok((0.0, Vec::new(), Vec::new()));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let mut gh = vec![0.0; n];
    let mut go = vec![0.0; n];
    for p in 0..n {
        let kh = 1.0 - obj_mask[p];
        let ko = 1.0 - hand_mask[p];
        let rh = kh * occ_hand[p] - hand_mask[p];
        let ro = ko * occ_obj[p] - obj_mask[p];
        value += rh * rh + ro * ro;
        gh[p] = 2.0 * kh * rh * inv;
        go[p] = 2.0 * ko * ro * inv;
    }
    Ok((value * inv, gh, go))
}

/// Adjoints of a term that reads hand vertices and the object pose.
#[derive(Clone, Debug)]
pub struct HandObjectGrad {
    pub value: f64,
    pub hand_vertices: Vec<Vector3<f64>>,
    pub obj_r: [f64; 3],
    pub obj_t: [f64; 3],
}

/// Mean over contact vertices of `‖Rᵀ(v − t) − c‖²`, where `c` is the
/// vertex's object-frame position in the previous frame. Zero for an
/// empty contact set.
pub fn sliding_loss(contacts: &[Point3<f64>], previous_local: &[Vector3<f64>], frame: &RigidFrame) -> Result<HandObjectGrad> {
    check_len("previous contact points", contacts.len(), previous_local.len())?;
    let k = contacts.len();
    let mut out = HandObjectGrad {
        value: 0.0,
        hand_vertices: vec![Vector3::zeros(); k],
        obj_r: [0.0; 3],
        obj_t: [0.0; 3],
    };
    if k == 0 {
        return Ok(out);
    }
    let inv = 1.0 / k as f64;
    for i in 0..k {
        let q = frame.to_local(&contacts[i]) - previous_local[i];
        out.value += q.norm_squared() * inv;
        let (gv, gr, gt) = frame.pullback_local(&contacts[i], &(q * (2.0 * inv)));
        out.hand_vertices[i] = gv;
        for a in 0..3 {
            out.obj_r[a] += gr[a];
            out.obj_t[a] += gt[a];
        }
    }
    Ok(out)
}

/// `Σ_i max(0, −s_i)` over hand vertices, with `s_i` the signed distance of
/// the vertex in the object's local frame.
pub fn penetration_loss(vertices: &[Point3<f64>], object: &SdfIndex, frame: &RigidFrame) -> Result<HandObjectGrad> {
    if !object.is_signed() {
        return Err(Error::NotWatertight);
    }
    let mut out = HandObjectGrad {
        value: 0.0,
        hand_vertices: vec![Vector3::zeros(); vertices.len()],
        obj_r: [0.0; 3],
        obj_t: [0.0; 3],
    };
    for (i, v) in vertices.iter().enumerate() {
        let local = Point3::from(frame.to_local(v));
        let q = object.query(&local);
        if q.distance >= 0.0 {
            continue;
        }
        out.value -= q.distance;
        let (gv, gr, gt) = frame.pullback_local(v, &(-q.normal));
        out.hand_vertices[i] = gv;
        for a in 0..3 {
            out.obj_r[a] += gr[a];
            out.obj_t[a] += gt[a];
        }
    }
    Ok(out)
}

/// Mean squared object-vertex displacement plus squared hand-pose change.
/// Returns the value, `∂L/∂V_t` and `∂L/∂θ_t`.
pub fn continuity_loss(
    object: &[Point3<f64>],
    object_prev: &[Point3<f64>],
    theta: &[f64],
    theta_prev: &[f64],
) -> Result<(f64, Vec<Vector3<f64>>, Vec<f64>)> {
    check_len("previous object vertices", object.len(), object_prev.len())?;
    check_len("previous theta", theta.len(), theta_prev.len())?;
    let mut value = 0.0;
    let mut gv = Vec::with_capacity(object.len());
    if !object.is_empty() {
        let inv = 1.0 / object.len() as f64;
        for (a, b) in object.iter().zip(object_prev) {
            let d = a - b;
            value += d.norm_squared() * inv;
            gv.push(d * (2.0 * inv));
        }
    }
    let mut gt = Vec::with_capacity(theta.len());
    for (a, b) in theta.iter().zip(theta_prev) {
        value += (a - b) * (a - b);
        gt.push(2.0 * (a - b));
    }
    Ok((value, gv, gt))
}

/// Mean squared second difference of object vertices. Returns the value and
/// `∂L/∂V_t`.
pub fn smoothness_loss(
    object: &[Point3<f64>],
    object_prev: &[Point3<f64>],
    object_prev2: &[Point3<f64>],
) -> Result<(f64, Vec<Vector3<f64>>)> {
    check_len("previous object vertices", object.len(), object_prev.len())?;
    check_len("second previous object vertices", object.len(), object_prev2.len())?;
    if object.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv = 1.0 / object.len() as f64;
    let mut value = 0.0;
    let mut gv = Vec::with_capacity(object.len());
    for i in 0..object.len() {
        let a = (object[i] - object_prev[i]) - (object_prev[i] - object_prev2[i]);
        value += a.norm_squared() * inv;
        gv.push(a * (2.0 * inv));
    }
    Ok((value, gv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SignMode, TriMesh};

    #[test]
    fn image_examples() {
        let (v, _) = image_loss(&[[1.0; 3]; 4], &[0.0; 4], &[[1.0; 3]; 4]).unwrap();
        assert_eq!(v, 0.0);
        let r = [[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3]];
        let t = [[0.5, 0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3]];
        let (v, _) = image_loss(&r, &[0.0; 4], &t).unwrap();
        assert!((v - 0.25 / 4.0).abs() < 1e-15);
        // Full occlusion: only the target remains.
        let (v, g) = image_loss(&[[0.3; 3]; 4], &[1.0; 4], &t).unwrap();
        assert!((v - 0.25 / 4.0).abs() < 1e-15);
        assert!(g.iter().all(|c| *c == [0.0; 3]));
        assert!(image_loss(&r, &[0.0; 3], &t).is_err());
    }

    #[test]
    fn mask_examples() {
        let mh = [1.0, 0.0, 0.0, 0.0];
        let mo = [0.0, 1.0, 1.0, 0.0];
        let (v, _, _) = mask_loss(&mh, &mo, &mh, &mo).unwrap();
        assert_eq!(v, 0.0);
        let (v, _, _) = mask_loss(&[0.0; 4], &[0.0; 4], &mh, &mo).unwrap();
        assert!((v - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn mask_matches_direct_formula() {
        let oh: [f64; 5] = [0.2, 0.9, 0.4, 0.0, 0.7];
        let oo: [f64; 5] = [0.6, 0.1, 0.8, 0.3, 0.5];
        let mh: [f64; 5] = [1.0, 0.0, 0.0, 1.0, 0.0];
        let mo: [f64; 5] = [0.0, 1.0, 0.0, 0.0, 1.0];
        let mut direct = 0.0;
        for p in 0..5 {
            direct += ((1.0 - mo[p]) * oh[p] - mh[p]).powi(2) + ((1.0 - mh[p]) * oo[p] - mo[p]).powi(2);
        }
        let (v, gh, go) = mask_loss(&oh, &oo, &mh, &mo).unwrap();
        assert!((v - direct / 5.0).abs() < 1e-15);
        let h = 1e-6;
        for p in 0..5 {
            let mut a = oh;
            a[p] += h;
            let mut b = oh;
            b[p] -= h;
            let fd = (mask_loss(&a, &oo, &mh, &mo).unwrap().0 - mask_loss(&b, &oo, &mh, &mo).unwrap().0) / (2.0 * h);
            assert!((fd - gh[p]).abs() < 1e-8);
            let mut a = oo;
            a[p] += h;
            let mut b = oo;
            b[p] -= h;
            let fd = (mask_loss(&oh, &a, &mh, &mo).unwrap().0 - mask_loss(&oh, &b, &mh, &mo).unwrap().0) / (2.0 * h);
            assert!((fd - go[p]).abs() < 1e-8);
        }
    }

    #[test]
    fn sliding_examples() {
        let frame = RigidFrame::from_euler([0.0; 3], [0.0; 3]);
        let prev = vec![Vector3::new(1.0, 2.0, 3.0)];
        let moved = [Point3::new(1.1, 2.0, 3.0)];
        assert!((sliding_loss(&moved, &prev, &frame).unwrap().value - 0.01).abs() < 1e-12);
        assert_eq!(sliding_loss(&[], &[], &frame).unwrap().value, 0.0);

        // Rigid co-motion keeps object-frame coordinates.
        let f2 = RigidFrame::from_euler([0.3, -0.2, 1.1], [4.0, -1.0, 20.0]);
        let local = [Point3::new(0.5, -0.4, 1.0), Point3::new(-1.0, 0.2, 0.3)];
        let world: Vec<_> = local.iter().map(|p| f2.to_world(p)).collect();
        let prev: Vec<_> = local.iter().map(|p| p.coords).collect();
        assert!(sliding_loss(&world, &prev, &f2).unwrap().value < 1e-24);
    }

    #[test]
    fn penetration_example_and_direction() {
        let sphere = SdfIndex::build(TriMesh::icosphere(1.0, 3), SignMode::Signed).unwrap();
        let frame = RigidFrame::from_euler([0.0; 3], [0.0; 3]);
        let outside = [Point3::new(2.0, 0.0, 0.0)];
        assert_eq!(penetration_loss(&outside, &sphere, &frame).unwrap().value, 0.0);
        let inside = [Point3::new(0.8, 0.0, 0.0)];
        let g = penetration_loss(&inside, &sphere, &frame).unwrap();
        assert!((g.value - 0.2).abs() < 5e-3);
        // Gradient points inward, i.e. descent moves the vertex out.
        assert!(g.hand_vertices[0].x < -0.99);
    }

    #[test]
    fn continuity_and_smoothness_examples() {
        let a = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)];
        let b = [Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 1.0, 1.0)];
        assert_eq!(continuity_loss(&a, &a, &[0.1], &[0.1]).unwrap().0, 0.0);
        assert_eq!(continuity_loss(&b, &a, &[0.1], &[0.1]).unwrap().0, 1.0);
        let x = |v: f64| [Point3::new(v, 0.0, 0.0)];
        assert_eq!(smoothness_loss(&x(3.0), &x(1.0), &x(0.0)).unwrap().0, 1.0);
        assert_eq!(smoothness_loss(&x(2.0), &x(1.0), &x(0.0)).unwrap().0, 0.0);
    }

    #[test]
    fn rigid_frame_pullbacks_match_finite_differences() {
        let r = [0.4, -0.3, 0.9];
        let t = [1.0, 2.0, 3.0];
        let m = [Point3::new(0.3, 0.1, -0.2), Point3::new(-0.5, 0.7, 0.4)];
        let w = [Vector3::new(0.2, -1.0, 0.5), Vector3::new(1.5, 0.3, -0.7)];
        let f = |r: [f64; 3], t: [f64; 3]| -> f64 {
            let fr = RigidFrame::from_euler(r, t);
            m.iter().zip(&w).map(|(p, g)| fr.to_world(p).coords.dot(g)).sum()
        };
        let (gr, gt) = RigidFrame::from_euler(r, t).pullback_world(&m, &w);
        let h = 1e-6;
        for k in 0..3 {
            let (mut rp, mut rm) = (r, r);
            rp[k] += h;
            rm[k] -= h;
            assert!(((f(rp, t) - f(rm, t)) / (2.0 * h) - gr[k]).abs() < 1e-7);
            let (mut tp, mut tm) = (t, t);
            tp[k] += h;
            tm[k] -= h;
            assert!(((f(r, tp) - f(r, tm)) / (2.0 * h) - gt[k]).abs() < 1e-7);
        }
    }
}
