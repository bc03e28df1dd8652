use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::axis_angle_to_matrix;
use crate::geometry::TriMesh;
use crate::grad::{lift3, mat_mul, mat_vec, vec_add, vec_sub, Dual, Mat3, Real, Vec3};
use crate::{Error, Result};

/// One skeleton joint. `rest_translation` is the joint's rest position
/// relative to its parent (absolute for the root).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub parent: Option<usize>,
    pub rest_translation: [f64; 3],
}

/// Ordered list of vertex indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexSelector {
    indices: Vec<usize>,
}

impl VertexSelector {
    /// Validates uniqueness and range against `vertex_count`.
    pub fn new(indices: Vec<usize>, vertex_count: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &i in &indices {
            if i >= vertex_count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: vertex_count,
                });
            }
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!("duplicate selector index {i}")));
            }
        }
        Ok(VertexSelector { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Rows of `vertices` in selector order.
    pub fn select(&self, vertices: &[Point3<f64>]) -> Result<Vec<Point3<f64>>> {
        self.indices
            .iter()
            .map(|&i| {
                vertices.get(i).copied().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: vertices.len(),
                })
            })
            .collect()
    }
}

/// Linear-blend-skinned articulated model.
///
/// Pose vector layout: `3·J` axis-angle joint rotations (joint 0 first),
/// then a 3-vector global axis-angle rotation and a 3-vector global
/// translation. Joints stay at their rest positions for every shape.
#[derive(Clone, Debug)]
pub struct SkinnedModel {
    rest_vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    joints: Vec<Joint>,
    /// Absolute rest positions, derived from the joint chain.
    joint_rest_positions: Vec<[f64; 3]>,
    weights: Vec<Vec<(usize, f64)>>,
    /// Flattened `V × 3 × B`, index `(v * 3 + k) * B + b`.
    shape_dirs: Vec<f64>,
    num_betas: usize,
    selectors: BTreeMap<String, VertexSelector>,
}

impl SkinnedModel {
    pub fn new(
        rest_vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        joints: Vec<Joint>,
        weights: Vec<Vec<(usize, f64)>>,
        shape_dirs: Option<(usize, Vec<f64>)>,
        selectors: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let nv = rest_vertices.len();
        if joints.is_empty() {
            return Err(Error::InvalidModel("model needs at least one joint".into()));
        }
        for (j, joint) in joints.iter().enumerate() {
            match (j, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidModel("joint 0 must be the root".into())),
                (_, Some(p)) if p < j => {}
                (_, p) => {
                    return Err(Error::InvalidModel(format!(
                        "joint {j} has parent {p:?}; parents must precede children"
                    )))
                }
            }
        }
        for f in &faces {
            for &i in f {
                if i >= nv {
                    return Err(Error::IndexOutOfRange { index: i, len: nv });
                }
            }
        }
        if weights.len() != nv {
            return Err(Error::Dimension {
                what: "skinning weight rows",
                expected: nv,
                got: weights.len(),
            });
        }
        for (v, row) in weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= joints.len() {
                    return Err(Error::InvalidModel(format!("vertex {v} weights unknown joint {j}")));
                }
                if !(w >= 0.0) {
                    return Err(Error::InvalidModel(format!("vertex {v} has negative weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("vertex {v} weights sum to {sum}")));
            }
        }
        let (num_betas, shape_dirs) = match shape_dirs {
            Some((b, dirs)) => {
                if dirs.len() != nv * 3 * b {
                    return Err(Error::Dimension {
                        what: "shape_dirs",
                        expected: nv * 3 * b,
                        got: dirs.len(),
                    });
                }
                (b, dirs)
            }
            None => (0, Vec::new()),
        };
        let selectors = selectors
            .into_iter()
            .map(|(k, v)| VertexSelector::new(v, nv).map(|s| (k, s)))
            .collect::<Result<_>>()?;
        let mut joint_rest_positions: Vec<[f64; 3]> = Vec::with_capacity(joints.len());
        for joint in &joints {
            let base = joint.parent.map(|p| joint_rest_positions[p]).unwrap_or([0.0; 3]);
            joint_rest_positions.push([0, 1, 2].map(|k| base[k] + joint.rest_translation[k]));
        }
        Ok(SkinnedModel {
            rest_vertices,
            faces,
            joints,
            joint_rest_positions,
            weights,
            shape_dirs,
            num_betas,
            selectors,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_betas(&self) -> usize {
        self.num_betas
    }

    /// Length of the pose vector: `3J + 6`.
    pub fn theta_len(&self) -> usize {
        3 * self.joints.len() + 6
    }

    pub fn rest_vertices(&self) -> &[Point3<f64>] {
        &self.rest_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_rest_position(&self, j: usize) -> Vector3<f64> {
        Vector3::from(self.joint_rest_positions[j])
    }

    pub fn weights(&self) -> &[Vec<(usize, f64)>] {
        &self.weights
    }

    pub fn shape_dirs(&self) -> &[f64] {
        &self.shape_dirs
    }

    pub fn selectors(&self) -> &BTreeMap<String, VertexSelector> {
        &self.selectors
    }

    pub fn selector(&self, name: &str) -> Result<&VertexSelector> {
        self.selectors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no selector named `{name}`")))
    }

    pub fn rest_mesh(&self) -> Result<TriMesh> {
        TriMesh::new(self.rest_vertices.clone(), self.faces.clone())
    }

    pub fn mesh_with(&self, vertices: Vec<Point3<f64>>) -> Result<TriMesh> {
        TriMesh::new(vertices, self.faces.clone())
    }

    fn check_dims(&self, theta_len: usize, beta_len: usize) -> Result<()> {
        if theta_len != self.theta_len() {
            return Err(Error::Dimension {
                what: "theta",
                expected: self.theta_len(),
                got: theta_len,
            });
        }
        if beta_len != self.num_betas {
            return Err(Error::Dimension {
                what: "beta",
                expected: self.num_betas,
                got: beta_len,
            });
        }
        Ok(())
    }

    /// Posed vertices `m(θ, β)`.
    pub fn skin(&self, theta: &[f64], beta: &[f64]) -> Result<Vec<Point3<f64>>> {
        self.check_dims(theta.len(), beta.len())?;
        Ok(self
            .skin_generic(theta, beta, None)
            .into_iter()
            .map(|v| Point3::new(v[0], v[1], v[2]))
            .collect())
    }

    /// Posed positions of `indices` only.
    pub fn skin_subset(&self, theta: &[f64], beta: &[f64], indices: &[usize]) -> Result<Vec<Point3<f64>>> {
        self.check_dims(theta.len(), beta.len())?;
        for &i in indices {
            if i >= self.num_vertices() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.num_vertices(),
                });
            }
        }
        Ok(self
            .skin_generic(theta, beta, Some(indices))
            .into_iter()
            .map(|v| Point3::new(v[0], v[1], v[2]))
            .collect())
    }

    /// Per-joint skinning transforms `(R, t)` mapping rest space to posed
    /// space, with the global transform folded in.
    pub fn joint_transforms<T: Real>(&self, theta: &[T]) -> Vec<(Mat3<T>, Vec3<T>)> {
        let nj = self.joints.len();
        let mut world: Vec<(Mat3<T>, Vec3<T>)> = Vec::with_capacity(nj);
        for (j, joint) in self.joints.iter().enumerate() {
            let r_local = axis_angle_to_matrix([theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]]);
            let t_local = lift3::<T>(&joint.rest_translation);
            let g = match joint.parent {
                None => (r_local, t_local),
                Some(p) => {
                    let (rp, tp) = &world[p];
                    (mat_mul(rp, &r_local), vec_add(&mat_vec(rp, &t_local), tp))
                }
            };
            world.push(g);
        }
        let g0 = 3 * nj;
        let r_global = axis_angle_to_matrix([theta[g0], theta[g0 + 1], theta[g0 + 2]]);
        let t_global = [theta[g0 + 3], theta[g0 + 4], theta[g0 + 5]];
        world
            .into_iter()
            .enumerate()
            .map(|(j, (r, t))| {
                // A_j = G_j · [I | −j_rest]; then the global rigid transform.
                let jr = lift3::<T>(&self.joint_rest_positions[j]);
                let t_skin = vec_sub(&t, &mat_vec(&r, &jr));
                (mat_mul(&r_global, &r), vec_add(&mat_vec(&r_global, &t_skin), &t_global))
            })
            .collect()
    }

    /// Generic LBS; dimensions must already be validated.
    pub fn skin_generic<T: Real>(&self, theta: &[T], beta: &[T], subset: Option<&[usize]>) -> Vec<Vec3<T>> {
        let transforms = self.joint_transforms(theta);
        let b = self.num_betas;
        let one_vertex = |v: usize| -> Vec3<T> {
            let rest = self.rest_vertices[v];
            let mut p = [T::cst(rest.x), T::cst(rest.y), T::cst(rest.z)];
            for (k, pk) in p.iter_mut().enumerate() {
                let base = (v * 3 + k) * b;
                for (bi, &beta_i) in beta.iter().enumerate() {
                    let d = self.shape_dirs[base + bi];
                    if d != 0.0 {
                        *pk += beta_i.scale(d);
                    }
                }
            }
            let mut out = [T::zero(); 3];
            for &(j, w) in &self.weights[v] {
                let (r, t) = &transforms[j];
                let q = vec_add(&mat_vec(r, &p), t);
                for k in 0..3 {
                    out[k] += q[k].scale(w);
                }
            }
            out
        };
        match subset {
            Some(ids) => ids.iter().map(|&v| one_vertex(v)).collect(),
            None => (0..self.num_vertices()).map(one_vertex).collect(),
        }
    }

    /// Posed vertices plus the Jacobian of every selected vertex coordinate
    /// with respect to each packed `(θ, β)` entry, computed by forward-mode
    /// differentiation. Columns whose `active` flag is false are left empty.
    pub fn skin_jacobian(
        &self,
        theta: &[f64],
        beta: &[f64],
        subset: Option<&[usize]>,
        active: &[bool],
    ) -> Result<SkinJacobian> {
        self.check_dims(theta.len(), beta.len())?;
        let np = theta.len() + beta.len();
        if active.len() != np {
            return Err(Error::Dimension {
                what: "active parameter mask",
                expected: np,
                got: active.len(),
            });
        }
        let vertices = self
            .skin_generic(theta, beta, subset)
            .into_iter()
            .map(|v| Point3::new(v[0], v[1], v[2]))
            .collect::<Vec<_>>();
        let mut columns = vec![Vec::new(); np];
        let mut theta_d: Vec<Dual> = theta.iter().map(|&x| Dual::cst(x)).collect();
        let mut beta_d: Vec<Dual> = beta.iter().map(|&x| Dual::cst(x)).collect();
        for (c, col) in columns.iter_mut().enumerate() {
            if !active[c] {
                continue;
            }
            let slot = if c < theta.len() {
                &mut theta_d[c]
            } else {
                &mut beta_d[c - theta.len()]
            };
            slot.eps = 1.0;
            let out = self.skin_generic(&theta_d, &beta_d, subset);
            let slot = if c < theta.len() {
                &mut theta_d[c]
            } else {
                &mut beta_d[c - theta.len()]
            };
            slot.eps = 0.0;
            *col = out
                .into_iter()
                .map(|v| Vector3::new(v[0].eps, v[1].eps, v[2].eps))
                .collect();
        }
        Ok(SkinJacobian { vertices, columns })
    }
}

/// Posed vertices with `∂vertex/∂param` columns over `(θ, β)`.
#[derive(Clone, Debug)]
pub struct SkinJacobian {
    pub vertices: Vec<Point3<f64>>,
    /// `columns[p][v]` is the derivative of vertex `v` with respect to
    /// parameter `p`; empty for inactive parameters.
    pub columns: Vec<Vec<Vector3<f64>>>,
}

impl SkinJacobian {
    /// Vector-Jacobian product: `Σ_v ⟨grad[v], ∂v/∂p⟩` for every parameter.
    pub fn pullback(&self, grad: &[Vector3<f64>]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|col| col.iter().zip(grad).map(|(d, g)| d.dot(g)).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bone() -> SkinnedModel {
        // Two joints along x; vertex 0 bound to the root, vertex 1 to the child.
        SkinnedModel::new(
            vec![Point3::new(0.5, 0.0, 0.0), Point3::new(1.5, 0.0, 0.0), Point3::new(1.0, 0.5, 0.0)],
            vec![[0, 1, 2]],
            vec![
                Joint {
                    parent: None,
                    rest_translation: [0.0; 3],
                },
                Joint {
                    parent: Some(0),
                    rest_translation: [1.0, 0.0, 0.0],
                },
            ],
            vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]],
            Some((1, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])),
            BTreeMap::from([("tip".to_string(), vec![1])]),
        )
        .unwrap()
    }

    #[test]
    fn zero_pose_is_rest() {
        let m = two_bone();
        let v = m.skin(&vec![0.0; m.theta_len()], &[0.0]).unwrap();
        assert_eq!(v, m.rest_vertices());
    }

    #[test]
    fn child_rotation_pivots_about_joint() {
        let m = two_bone();
        let mut theta = vec![0.0; m.theta_len()];
        theta[5] = std::f64::consts::FRAC_PI_2; // joint 1 about z
        let v = m.skin(&theta, &[0.0]).unwrap();
        assert!((v[0] - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - Point3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn shape_offsets_add_before_posing() {
        let m = two_bone();
        let v = m.skin(&vec![0.0; m.theta_len()], &[2.0]).unwrap();
        assert!((v[1] - Point3::new(3.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = two_bone();
        assert!(matches!(m.skin(&[0.0; 3], &[0.0]), Err(Error::Dimension { what: "theta", .. })));
        assert!(matches!(m.skin(&[0.0; 12], &[]), Err(Error::Dimension { what: "beta", .. })));
        let bad = SkinnedModel::new(
            vec![Point3::origin()],
            vec![],
            vec![Joint {
                parent: None,
                rest_translation: [0.0; 3],
            }],
            vec![vec![(0, 0.7)]],
            None,
            BTreeMap::new(),
        );
        assert!(bad.is_err());
        let cyclic = SkinnedModel::new(
            vec![Point3::origin()],
            vec![],
            vec![
                Joint {
                    parent: None,
                    rest_translation: [0.0; 3],
                },
                Joint {
                    parent: Some(1),
                    rest_translation: [0.0; 3],
                },
            ],
            vec![vec![(0, 1.0)]],
            None,
            BTreeMap::new(),
        );
        assert!(cyclic.is_err());
    }

    #[test]
    fn selector_validation_and_order() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        let s = VertexSelector::new(vec![2, 0], 3).unwrap();
        assert_eq!(s.select(&pts).unwrap(), vec![pts[2], pts[0]]);
        assert!(VertexSelector::new(vec![3], 3).is_err());
        assert!(VertexSelector::new(vec![1, 1], 3).is_err());
        assert!(VertexSelector::default().select(&pts).unwrap().is_empty());
        assert_eq!(VertexSelector::new(vec![0], 3).unwrap().select(&pts).unwrap(), vec![pts[0]]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = two_bone();
        let theta: Vec<f64> = (0..m.theta_len()).map(|i| 0.1 * (i as f64 + 1.0).sin()).collect();
        let beta = [0.3];
        let jac = m.skin_jacobian(&theta, &beta, None, &vec![true; m.theta_len() + 1]).unwrap();
        let h = 1e-6;
        for p in 0..m.theta_len() + 1 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            let mut bp = beta;
            let mut bm = beta;
            if p < theta.len() {
                tp[p] += h;
                tm[p] -= h;
            } else {
                bp[0] += h;
                bm[0] -= h;
            }
            let vp = m.skin(&tp, &bp).unwrap();
            let vm = m.skin(&tm, &bm).unwrap();
            for v in 0..3 {
                let fd = (vp[v] - vm[v]) / (2.0 * h);
                assert!((fd - jac.columns[p][v]).norm() < 1e-8, "param {p} vertex {v}");
            }
        }
    }
}
