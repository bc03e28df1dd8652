use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::{Error, Result};

/// Faces with area at or below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Aabb { min, max })
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = p[k];
            if v < self.min[k] {
                d2 += (self.min[k] - v).powi(2);
            } else if v > self.max[k] {
                d2 += (v - self.max[k]).powi(2);
            }
        }
        d2
    }
}

/// Indexed triangle mesh with cached unit face normals.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    watertight: bool,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(p) = vertices.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {p:?}")));
        }
        let mut normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
            }
            let cross = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let area = 0.5 * cross.norm();
            if area <= MIN_FACE_AREA {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate (area {area:e})")));
            }
            normals.push(cross / (2.0 * area));
        }
        let watertight = !faces.is_empty() && check_watertight(&faces);
        Ok(TriMesh {
            vertices,
            faces,
            normals,
            watertight,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// True when every edge is shared by exactly two faces with opposite
    /// orientation.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.vertices.len().max(1) as f64)
    }

    /// Largest distance between any two bounding-box corners.
    pub fn diameter(&self) -> f64 {
        self.bounding_box().extent().norm()
    }

    /// Signed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }

    /// Returns a copy with vertices mapped through `v -> rotation * v + translation`.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> TriMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Point3::from(rotation * v.coords + translation))
            .collect();
        let normals = self.normals.iter().map(|n| (rotation * n).normalize()).collect();
        TriMesh {
            vertices,
            faces: self.faces.clone(),
            normals,
            watertight: self.watertight,
        }
    }

    /// Copy of this mesh with replaced vertex positions (same connectivity).
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Dimension {
                what: "mesh vertices",
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        TriMesh::new(vertices, self.faces.clone())
    }

    /// Splits the mesh into face-connected components. Vertices are
    /// re-indexed per component.
    pub fn components(&self) -> Vec<TriMesh> {
        let nv = self.vertices.len();
        let mut parent: Vec<usize> = (0..nv).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            let r0 = find(&mut parent, f[0]);
            for &v in &f[1..] {
                let r = find(&mut parent, v);
                if r != r0 {
                    let (lo, hi) = if r < r0 { (r, r0) } else { (r0, r) };
                    parent[hi] = lo;
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut group_of: HashMap<usize, usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            let root = find(&mut parent, f[0]);
            let g = *group_of.entry(root).or_insert_with(|| {
                groups.push((root, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(fi);
        }
        groups
            .into_iter()
            .map(|(_, face_ids)| {
                let mut remap: HashMap<usize, usize> = HashMap::new();
                let mut verts = Vec::new();
                let faces = face_ids
                    .iter()
                    .map(|&fi| {
                        self.faces[fi].map(|v| {
                            *remap.entry(v).or_insert_with(|| {
                                verts.push(self.vertices[v]);
                                verts.len() - 1
                            })
                        })
                    })
                    .collect();
                TriMesh::new(verts, faces).expect("sub-mesh of a valid mesh is valid")
            })
            .collect()
    }

    /// Concatenates meshes into one (no welding).
    pub fn concat(parts: &[TriMesh]) -> Result<TriMesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in parts {
            let off = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| f.map(|i| i + off)));
        }
        TriMesh::new(vertices, faces)
    }

    /// Axis-aligned box centred at the origin, each face split into
    /// `subdivisions`² quads.
    pub fn cuboid(half_extents: Vector3<f64>, subdivisions: usize) -> TriMesh {
        let n = subdivisions.max(1);
        let mut vertices: Vec<Point3<f64>> = Vec::new();
        let mut index: HashMap<[i64; 3], usize> = HashMap::new();
        let mut faces = Vec::new();
        // Lattice coordinates in 0..=n, welded through the hash map.
        let mut vid = |l: [i64; 3], vertices: &mut Vec<Point3<f64>>| -> usize {
            *index.entry(l).or_insert_with(|| {
                let p = Point3::new(
                    (2.0 * l[0] as f64 / n as f64 - 1.0) * half_extents.x,
                    (2.0 * l[1] as f64 / n as f64 - 1.0) * half_extents.y,
                    (2.0 * l[2] as f64 / n as f64 - 1.0) * half_extents.z,
                );
                vertices.push(p);
                vertices.len() - 1
            })
        };
        let ni = n as i64;
        for axis in 0..3 {
            let u_axis = (axis + 1) % 3;
            let v_axis = (axis + 2) % 3;
            for side in [0, ni] {
                for i in 0..ni {
                    for j in 0..ni {
                        let mut corner = |du: i64, dv: i64| {
                            let mut l = [0i64; 3];
                            l[axis] = side;
                            l[u_axis] = i + du;
                            l[v_axis] = j + dv;
                            vid(l, &mut vertices)
                        };
                        let a = corner(0, 0);
                        let b = corner(1, 0);
                        let c = corner(1, 1);
                        let d = corner(0, 1);
                        // (u, v, axis) is right-handed, so ccw in (u, v) faces +axis.
                        if side == ni {
                            faces.push([a, b, c]);
                            faces.push([a, c, d]);
                        } else {
                            faces.push([a, c, b]);
                            faces.push([a, d, c]);
                        }
                    }
                }
            }
        }
        TriMesh::new(vertices, faces).expect("cuboid construction is valid")
    }

    /// Icosphere centred at the origin.
    pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut m = [0usize; 3];
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    m[k] = *mid.entry(key).or_insert_with(|| {
                        verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                        verts.len() - 1
                    });
                }
                next.push([f[0], m[0], m[2]]);
                next.push([f[1], m[1], m[0]]);
                next.push([f[2], m[2], m[1]]);
                next.push([m[0], m[1], m[2]]);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| Point3::from(v * radius)).collect();
        TriMesh::new(vertices, faces).expect("icosphere construction is valid")
    }
}

fn check_watertight(faces: &[[usize; 3]]) -> bool {
    let mut directed: HashMap<(usize, usize), u32> = HashMap::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_watertight_with_unit_volume() {
        for n in 1..4 {
            let m = TriMesh::cuboid(Vector3::new(0.5, 0.5, 0.5), n);
            assert!(m.is_watertight());
            assert!((m.signed_volume() - 1.0).abs() < 1e-12);
            assert_eq!(m.faces().len(), 12 * n * n);
        }
    }

    #[test]
    fn icosphere_is_watertight_and_outward() {
        let m = TriMesh::icosphere(1.0, 2);
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        for (fi, n) in m.face_normals().iter().enumerate() {
            let c = m.triangle(fi).iter().map(|p| p.coords).sum::<Vector3<f64>>() / 3.0;
            assert!(n.dot(&c) > 0.0);
        }
    }

    #[test]
    fn single_triangle_is_open() {
        let m = TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(!m.is_watertight());
    }

    #[test]
    fn rejects_degenerate_and_out_of_range() {
        let v = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert!(matches!(TriMesh::new(v.clone(), vec![[0, 1, 2]]), Err(Error::InvalidMesh(_))));
        assert!(matches!(
            TriMesh::new(v, vec![[0, 1, 3]]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn inconsistent_winding_is_not_watertight() {
        let m = TriMesh::cuboid(Vector3::new(0.5, 0.5, 0.5), 1);
        let mut faces = m.faces().to_vec();
        faces[0].swap(1, 2);
        let flipped = TriMesh::new(m.vertices().to_vec(), faces).unwrap();
        assert!(!flipped.is_watertight());
    }

    #[test]
    fn components_split_disjoint_parts() {
        let a = TriMesh::cuboid(Vector3::new(0.5, 0.5, 0.5), 1);
        let b = a.transformed(&Matrix3::identity(), &Vector3::new(3.0, 0.0, 0.0));
        let joined = TriMesh::concat(&[a, b]).unwrap();
        let parts = joined.components();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.is_watertight() && p.vertices().len() == 8));
    }
}
