//! Signed distance and closest-point queries against a triangle mesh.
//!
//! Closest faces are found through an AABB tree and ties are broken by the
//! lowest face index, so results match an exhaustive scan bit for bit. The
//! sign comes from the angle-weighted pseudonormal of the closest feature
//! (face, edge or vertex), which is exact for closed, consistently wound
//! meshes.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};

use super::{Aabb, TriMesh};
use crate::{Error, Result};

/// Default threshold below which a query point counts as "in contact".
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.1;

const LEAF_SIZE: usize = 4;

/// Which part of a triangle the closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Vertex(u8),
    /// Edge from local vertex `k` to `(k + 1) % 3`.
    Edge(u8),
    Face,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5) together with the feature it lies on.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> (Point3<f64>, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Closest face to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestFace {
    pub face: usize,
    pub point: Point3<f64>,
    pub feature: Feature,
    pub distance_squared: f64,
}

impl ClosestFace {
    fn better_than(&self, other: &ClosestFace) -> bool {
        self.distance_squared < other.distance_squared
            || (self.distance_squared == other.distance_squared && self.face < other.face)
    }
}

fn face_query(mesh: &TriMesh, face: usize, p: &Point3<f64>) -> ClosestFace {
    let [a, b, c] = mesh.triangle(face);
    let (point, feature) = closest_point_on_triangle(p, &a, &b, &c);
    ClosestFace {
        face,
        point,
        feature,
        distance_squared: (p - point).norm_squared(),
    }
}

/// Exhaustive closest-face search over every triangle.
pub fn closest_face_brute_force(mesh: &TriMesh, p: &Point3<f64>) -> Option<ClosestFace> {
    let mut best: Option<ClosestFace> = None;
    for fi in 0..mesh.faces().len() {
        let cand = face_query(mesh, fi, p);
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    best
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, faces: Vec<usize> },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Clone, Debug)]
struct Bvh {
    nodes: Vec<Node>,
}

impl Bvh {
    fn build(mesh: &TriMesh) -> Bvh {
        let boxes: Vec<Aabb> = (0..mesh.faces().len())
            .map(|fi| Aabb::from_points(&mesh.triangle(fi)))
            .collect();
        let centroids: Vec<Point3<f64>> = boxes
            .iter()
            .map(|b| Point3::from((b.min.coords + b.max.coords) * 0.5))
            .collect();
        let mut nodes = Vec::new();
        let mut ids: Vec<usize> = (0..boxes.len()).collect();
        Self::build_rec(&mut nodes, &boxes, &centroids, &mut ids);
        Bvh { nodes }
    }

    fn build_rec(nodes: &mut Vec<Node>, boxes: &[Aabb], centroids: &[Point3<f64>], ids: &mut [usize]) -> usize {
        let bounds = ids.iter().fold(Aabb::empty(), |acc, &i| acc.merge(&boxes[i]));
        if ids.len() <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                bounds,
                faces: ids.to_vec(),
            });
            return nodes.len() - 1;
        }
        let cbox = Aabb::from_points(ids.iter().map(|&i| &centroids[i]));
        let ext = cbox.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        ids.sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let mid = ids.len() / 2;
        let slot = nodes.len();
        nodes.push(Node::Leaf {
            bounds,
            faces: Vec::new(),
        });
        let (lo, hi) = ids.split_at_mut(mid);
        let left = Self::build_rec(nodes, boxes, centroids, lo);
        let right = Self::build_rec(nodes, boxes, centroids, hi);
        nodes[slot] = Node::Inner { bounds, left, right };
        slot
    }

    fn closest(&self, mesh: &TriMesh, p: &Point3<f64>) -> Option<ClosestFace> {
        let mut best: Option<ClosestFace> = None;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if let Some(b) = &best {
                // Equal distances must still be explored for the index tie-break.
                if node.bounds().distance_squared(p) > b.distance_squared {
                    continue;
                }
            }
            match node {
                Node::Leaf { faces, .. } => {
                    for &fi in faces {
                        let cand = face_query(mesh, fi, p);
                        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                            best = Some(cand);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(p);
                    let dr = self.nodes[*right].bounds().distance_squared(p);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    #[cfg(test)]
    fn leaf_face_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        for n in &self.nodes {
            if let Node::Leaf { faces, .. } = n {
                counts.extend_from_slice(faces);
            }
        }
        counts
    }
}

/// Angle-weighted pseudonormals for vertices and edges.
#[derive(Clone, Debug)]
struct Pseudonormals {
    vertex: Vec<Vector3<f64>>,
    edge: HashMap<(usize, usize), Vector3<f64>>,
}

impl Pseudonormals {
    fn build(mesh: &TriMesh) -> Pseudonormals {
        let mut vertex = vec![Vector3::zeros(); mesh.vertices().len()];
        let mut edge: HashMap<(usize, usize), Vector3<f64>> = HashMap::new();
        for (fi, f) in mesh.faces().iter().enumerate() {
            let n = mesh.face_normals()[fi];
            let tri = mesh.triangle(fi);
            for k in 0..3 {
                let e1 = (tri[(k + 1) % 3] - tri[k]).normalize();
                let e2 = (tri[(k + 2) % 3] - tri[k]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex[f[k]] += n * angle;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge.entry((a.min(b), a.max(b))).or_insert_with(Vector3::zeros) += n;
            }
        }
        Pseudonormals { vertex, edge }
    }

    fn for_feature(&self, mesh: &TriMesh, face: usize, feature: Feature) -> Vector3<f64> {
        let f = mesh.faces()[face];
        match feature {
            Feature::Face => mesh.face_normals()[face],
            Feature::Vertex(k) => self.vertex[f[k as usize]],
            Feature::Edge(k) => {
                let (a, b) = (f[k as usize], f[(k as usize + 1) % 3]);
                self.edge[&(a.min(b), a.max(b))]
            }
        }
    }
}

/// Whether an index answers signed or unsigned queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignMode {
    Signed,
    Unsigned,
}

/// Result of a distance query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactQuery {
    /// Signed distance, negative inside (unsigned indexes always report ≥ 0).
    pub distance: f64,
    /// Unit outward normal at the closest point. Away from the surface this
    /// is the gradient of `distance` with respect to the query point.
    pub normal: Vector3<f64>,
    pub closest_point: Point3<f64>,
    pub face: usize,
    pub in_contact: bool,
}

/// Immutable acceleration structure for distance queries against a mesh.
#[derive(Clone, Debug)]
pub struct SdfIndex {
    mesh: Arc<TriMesh>,
    bvh: Bvh,
    pseudonormals: Option<Pseudonormals>,
    contact_threshold: f64,
}

impl SdfIndex {
    pub fn build(mesh: impl Into<Arc<TriMesh>>, mode: SignMode) -> Result<SdfIndex> {
        let mesh = mesh.into();
        if mesh.faces().is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        let pseudonormals = match mode {
            SignMode::Signed if !mesh.is_watertight() => return Err(Error::NotWatertight),
            SignMode::Signed => Some(Pseudonormals::build(&mesh)),
            SignMode::Unsigned => None,
        };
        let bvh = Bvh::build(&mesh);
        Ok(SdfIndex {
            mesh,
            bvh,
            pseudonormals,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
        })
    }

    /// Signed index for watertight meshes, unsigned otherwise.
    pub fn build_auto(mesh: impl Into<Arc<TriMesh>>) -> Result<SdfIndex> {
        let mesh = mesh.into();
        let mode = if mesh.is_watertight() {
            SignMode::Signed
        } else {
            SignMode::Unsigned
        };
        SdfIndex::build(mesh, mode)
    }

    pub fn with_contact_threshold(mut self, threshold: f64) -> Self {
        self.contact_threshold = threshold;
        self
    }

    pub fn contact_threshold(&self) -> f64 {
        self.contact_threshold
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn is_signed(&self) -> bool {
        self.pseudonormals.is_some()
    }

    pub fn closest_face(&self, p: &Point3<f64>) -> ClosestFace {
        self.bvh
            .closest(&self.mesh, p)
            .expect("index always holds at least one face")
    }

    pub fn query(&self, p: &Point3<f64>) -> ContactQuery {
        let hit = self.closest_face(p);
        self.finish(p, &hit)
    }

    /// Same as [`SdfIndex::query`] but with an exhaustive face scan; used to
    /// validate the tree.
    pub fn query_brute_force(&self, p: &Point3<f64>) -> ContactQuery {
        let hit = closest_face_brute_force(&self.mesh, p).expect("non-empty mesh");
        self.finish(p, &hit)
    }

    fn finish(&self, p: &Point3<f64>, hit: &ClosestFace) -> ContactQuery {
        let unsigned = hit.distance_squared.sqrt();
        let offset = p - hit.point;
        let feature_normal = self
            .pseudonormals
            .as_ref()
            .map(|pn| pn.for_feature(&self.mesh, hit.face, hit.feature));
        let sign = match &feature_normal {
            Some(n) if offset.dot(n) < 0.0 => -1.0,
            _ => 1.0,
        };
        let distance = sign * unsigned;
        let normal = if unsigned > 1e-12 {
            offset * (sign / unsigned)
        } else {
            feature_normal
                .unwrap_or(self.mesh.face_normals()[hit.face])
                .normalize()
        };
        ContactQuery {
            distance,
            normal,
            closest_point: hit.point,
            face: hit.face,
            in_contact: distance < self.contact_threshold,
        }
    }

    /// True when `p` is strictly inside the mesh. Only meaningful for signed
    /// indexes; unsigned ones always answer false.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.is_signed() && self.mesh.bounding_box().contains(p) && self.query(p).distance < 0.0
    }

    #[cfg(test)]
    fn leaf_faces(&self) -> Vec<usize> {
        self.bvh.leaf_face_counts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> TriMesh {
        TriMesh::cuboid(Vector3::new(0.5, 0.5, 0.5), 1)
    }

    fn random_points(n: usize, scale: f64, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn cube_center_is_half_inside() {
        let idx = SdfIndex::build(unit_cube(), SignMode::Signed).unwrap();
        let q = idx.query(&Point3::origin());
        assert_eq!(q.distance, -0.5);
        assert!(q.in_contact);
        assert!((q.normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_rejects_signed_index() {
        let tri = TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(SdfIndex::build(tri.clone(), SignMode::Signed), Err(Error::NotWatertight)));
        let idx = SdfIndex::build(tri, SignMode::Unsigned).unwrap();
        assert!(!idx.is_signed());
        let q = idx.query(&Point3::new(0.2, 0.2, -1.0));
        assert!((q.distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn every_face_in_exactly_one_leaf() {
        let m = TriMesh::icosphere(1.0, 3);
        let idx = SdfIndex::build(m.clone(), SignMode::Signed).unwrap();
        let mut leaves = idx.leaf_faces();
        leaves.sort_unstable();
        assert_eq!(leaves, (0..m.faces().len()).collect::<Vec<_>>());
    }

    #[test]
    fn tree_matches_brute_force_exactly() {
        let idx = SdfIndex::build(TriMesh::icosphere(1.0, 2), SignMode::Signed).unwrap();
        for p in random_points(200, 2.0, 7) {
            assert_eq!(idx.query(&p), idx.query_brute_force(&p));
        }
    }

    #[test]
    fn sphere_distances_follow_analytic_sdf() {
        // Discretisation error of a level-3 icosphere is below 2e-3 of the radius.
        let idx = SdfIndex::build(TriMesh::icosphere(1.0, 3), SignMode::Signed).unwrap();
        let outside = idx.query(&Point3::new(0.0, 0.0, 3.0)).distance;
        assert!((outside - 2.0).abs() < 5e-3, "{outside}");
        let inside = idx.query(&Point3::new(0.7, 0.0, 0.0)).distance;
        assert!((inside + 0.3).abs() < 5e-3, "{inside}");
        let v = idx.mesh().vertices()[5];
        assert_eq!(idx.query(&v).distance, 0.0);
    }

    #[test]
    fn normals_are_unit_and_outward() {
        let idx = SdfIndex::build(TriMesh::icosphere(1.0, 2), SignMode::Signed).unwrap();
        for p in random_points(300, 1.5, 3) {
            let q = idx.query(&p);
            assert!((q.normal.norm() - 1.0).abs() < 1e-9);
            if p.coords.norm() > 0.2 {
                assert!(q.normal.dot(&p.coords) > 0.0);
            }
        }
    }

    #[test]
    fn distance_is_one_lipschitz() {
        let idx = SdfIndex::build(unit_cube(), SignMode::Signed).unwrap();
        let a = random_points(500, 1.2, 11);
        let b = random_points(500, 1.2, 12);
        for (p, q) in a.iter().zip(&b) {
            let ds = (idx.query(p).distance - idx.query(q).distance).abs();
            assert!(ds <= (p - q).norm() + 1e-12);
        }
    }

    #[test]
    fn contact_threshold_is_configurable() {
        let idx = SdfIndex::build(unit_cube(), SignMode::Signed)
            .unwrap()
            .with_contact_threshold(0.3);
        assert!(idx.query(&Point3::new(0.75, 0.0, 0.0)).in_contact);
        assert!(!idx.query(&Point3::new(0.85, 0.0, 0.0)).in_contact);
    }
}
