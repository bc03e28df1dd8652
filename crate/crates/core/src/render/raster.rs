//! Soft rasterisation of triangle meshes.
//!
//! Each face contributes `d_j(p) = sigmoid(δ_j(p) / σ)` at pixel centre `p`,
//! where `δ_j` is the signed 2D distance to the projected triangle (positive
//! inside). Coverage is `1 − Π_j (1 − d_j)`. Colour is a soft-z-buffer
//! blend `C = Σ w_j c_j / Σ w_j` with `w_j = d_j · exp(ζ_j / γ)`, where
//! `ζ_j = z_near / z̄_j` uses the face's mean depth; the rendered colour is
//! coverage times `C`.
//!
//! Faces are skipped at pixels farther than `cutoff · σ` outside them, where
//! their contribution is below `sigmoid(−cutoff)`. Per-pixel face iteration
//! is in face order, so parallel and serial results are bit-identical.

use nalgebra::{Point3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Sigmoid softness in pixels.
    pub sigma: f64,
    /// Depth-blend temperature.
    pub gamma: f64,
    pub z_near: f64,
    /// Culling distance in units of `sigma`.
    pub cutoff: f64,
    /// Skip faces whose outward normal points away from the camera. Only
    /// meaningful for consistently wound closed meshes.
    pub cull_back_faces: bool,
}

impl RenderSettings {
    /// `sigma = 1e-4 ×` image diagonal.
    pub fn for_camera(camera: &Camera) -> Self {
        RenderSettings {
            sigma: 1e-4 * camera.diagonal(),
            ..Default::default()
        }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        RenderSettings { sigma, ..self }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        RenderSettings { gamma, ..self }
    }

    pub fn with_back_face_culling(self, cull_back_faces: bool) -> Self {
        RenderSettings { cull_back_faces, ..self }
    }
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            sigma: 0.01,
            gamma: 1e-4,
            z_near: 1.0,
            cutoff: 20.0,
            cull_back_faces: false,
        }
    }
}

/// Soft render output, row-major `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftImage {
    pub width: usize,
    pub height: usize,
    pub occupancy: Vec<f64>,
    pub rgb: Option<Vec<[f64; 3]>>,
}

impl SoftImage {
    pub fn blank(width: usize, height: usize) -> Self {
        SoftImage {
            width,
            height,
            occupancy: vec![0.0; width * height],
            rgb: None,
        }
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    // ∂ cross(v, q)/∂q
    Vector2::new(-v.y, v.x)
}

/// Signed distance from `p` to the unsigned line through `a → b`, scaled by
/// `s`, with gradients with respect to `a` and `b`.
fn line_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>, s: f64) -> (f64, Vector2<f64>, Vector2<f64>) {
    let e = b - a;
    let q = p - a;
    let len = e.norm();
    let f = s * cross2(&e, &q) / len;
    let df_de = Vector2::new(q.y, -q.x) * (s / len) - e * (f / (len * len));
    let df_dq = perp(&e) * (s / len);
    (f, -df_de - df_dq, df_de)
}

/// Unsigned distance from `p` to segment `ab` with gradients.
fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> (f64, Vector2<f64>, Vector2<f64>) {
    let e = b - a;
    let q = p - a;
    let l2 = e.norm_squared();
    let t = if l2 > 0.0 { q.dot(&e) / l2 } else { 0.0 };
    if t <= 0.0 {
        let d = q.norm();
        let g = if d > 0.0 { -q / d } else { Vector2::zeros() };
        (d, g, Vector2::zeros())
    } else if t >= 1.0 {
        let r = p - b;
        let d = r.norm();
        let g = if d > 0.0 { -r / d } else { Vector2::zeros() };
        (d, Vector2::zeros(), g)
    } else {
        let c = cross2(&e, &q);
        if c == 0.0 {
            return (0.0, Vector2::zeros(), Vector2::zeros());
        }
        line_distance(p, a, b, c.signum())
    }
}

/// Signed distance from `p` to triangle `tri` (positive inside, either
/// winding) and its gradient with respect to the three corners.
pub fn signed_distance_2d(p: &Vector2<f64>, tri: &[Vector2<f64>; 3]) -> (f64, [Vector2<f64>; 3]) {
    let area2 = cross2(&(tri[1] - tri[0]), &(tri[2] - tri[0]));
    let s = area2.signum();
    let inside = area2.abs() > 1e-12
        && (0..3).all(|k| {
            let a = &tri[k];
            let b = &tri[(k + 1) % 3];
            s * cross2(&(b - a), &(p - a)) >= 0.0
        });
    let mut best = f64::INFINITY;
    let mut grad = [Vector2::zeros(); 3];
    for k in 0..3 {
        let (ia, ib) = (k, (k + 1) % 3);
        let (d, ga, gb) = if inside {
            line_distance(p, &tri[ia], &tri[ib], s)
        } else {
            segment_distance(p, &tri[ia], &tri[ib])
        };
        if d < best {
            best = d;
            grad = [Vector2::zeros(); 3];
            grad[ia] = ga;
            grad[ib] = gb;
        }
    }
    if inside {
        (best, grad)
    } else {
        (-best, grad.map(|g| -g))
    }
}

/// `(sigmoid(x), sigmoid(−x))` with a single exponential.
fn sigmoid_pair(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e * big;
    if x >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

struct FaceSetup {
    tri: [Vector2<f64>; 3],
    depth: f64,
    zeta: f64,
    cols: (usize, usize),
    rows: (usize, usize),
    visible: bool,
    /// Unit inward edge normals and offsets: `n_k·p − c_k` is the signed
    /// distance to edge line `k`, positive on the inner side.
    normals: [Vector2<f64>; 3],
    offsets: [f64; 3],
    inv_len2: [f64; 3],
    degenerate: bool,
}

impl FaceSetup {
    /// Signed distance to the triangle, or `None` when the pixel is more
    /// than `margin` outside it.
    fn delta(&self, p: &Vector2<f64>, margin: f64) -> Option<f64> {
        if self.degenerate {
            let d = signed_distance_2d(p, &self.tri).0;
            return (d >= -margin).then_some(d);
        }
        let l = [0, 1, 2].map(|k| self.normals[k].dot(p) - self.offsets[k]);
        let lmin = l[0].min(l[1]).min(l[2]);
        if lmin >= 0.0 {
            return Some(lmin);
        }
        if -lmin > margin {
            return None;
        }
        let mut best = f64::INFINITY;
        for k in 0..3 {
            let a = self.tri[k];
            let e = self.tri[(k + 1) % 3] - a;
            let q = p - a;
            let t = (q.dot(&e) * self.inv_len2[k]).clamp(0.0, 1.0);
            best = best.min((q - e * t).norm_squared());
        }
        let d = best.sqrt();
        (d <= margin).then_some(-d)
    }

    /// Gradient of the signed distance with respect to the three corners,
    /// evaluated only for the closest feature.
    fn delta_grad(&self, p: &Vector2<f64>) -> [Vector2<f64>; 3] {
        if self.degenerate {
            return signed_distance_2d(p, &self.tri).1;
        }
        let l = [0, 1, 2].map(|k| self.normals[k].dot(p) - self.offsets[k]);
        let mut grad = [Vector2::zeros(); 3];
        if l.iter().all(|&x| x >= 0.0) {
            let k = (0..3).fold(0, |b, k| if l[k] < l[b] { k } else { b });
            let (ia, ib) = (k, (k + 1) % 3);
            let s = if self.normals[k].dot(&perp(&(self.tri[ib] - self.tri[ia]))) >= 0.0 { 1.0 } else { -1.0 };
            let (_, ga, gb) = line_distance(p, &self.tri[ia], &self.tri[ib], s);
            grad[ia] = ga;
            grad[ib] = gb;
            return grad;
        }
        let mut best = (f64::INFINITY, 0);
        for k in 0..3 {
            let a = self.tri[k];
            let e = self.tri[(k + 1) % 3] - a;
            let q = p - a;
            let t = (q.dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
            let d2 = (q - e * t).norm_squared();
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        let (ia, ib) = (best.1, (best.1 + 1) % 3);
        let (_, ga, gb) = segment_distance(p, &self.tri[ia], &self.tri[ib]);
        grad[ia] = -ga;
        grad[ib] = -gb;
        grad
    }
}

fn setup_faces(camera: &Camera, vertices: &[Point3<f64>], faces: &[[usize; 3]], settings: &RenderSettings) -> Vec<FaceSetup> {
    let proj = camera.project(vertices);
    let margin = settings.cutoff * settings.sigma;
    faces
        .iter()
        .map(|f| {
            let tri = f.map(|i| proj[i].pixel);
            let depth = (proj[f[0]].depth + proj[f[1]].depth + proj[f[2]].depth) / 3.0;
            let minx = tri.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - margin;
            let maxx = tri.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + margin;
            let miny = tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - margin;
            let maxy = tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + margin;
            let range = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
                let a = (lo - 0.5).ceil().max(0.0);
                let b = (hi - 0.5).floor().min(n as f64 - 1.0);
                (a.is_finite() && b.is_finite() && a <= b).then(|| (a as usize, b as usize + 1))
            };
            let (cols, rows) = match (range(minx, maxx, camera.width), range(miny, maxy, camera.height)) {
                (Some(c), Some(r)) => (c, r),
                _ => ((0, 0), (0, 0)),
            };
            let facing = if settings.cull_back_faces {
                let [a, b, c] = f.map(|i| vertices[i]);
                (b - a).cross(&(c - a)).dot(&a.coords) < 0.0
            } else {
                true
            };
            let area2 = cross2(&(tri[1] - tri[0]), &(tri[2] - tri[0]));
            let degenerate = area2.abs() <= 1e-12;
            let s = area2.signum();
            let mut normals = [Vector2::zeros(); 3];
            let mut offsets = [0.0; 3];
            let mut inv_len2 = [0.0; 3];
            if !degenerate {
                for k in 0..3 {
                    let a = tri[k];
                    let e = tri[(k + 1) % 3] - a;
                    let n = perp(&e) * (s / e.norm());
                    normals[k] = n;
                    offsets[k] = n.dot(&a);
                    inv_len2[k] = 1.0 / e.norm_squared();
                }
            }
            FaceSetup {
                tri,
                depth,
                zeta: settings.z_near / depth,
                cols,
                rows,
                visible: facing && cols.0 < cols.1 && rows.0 < rows.1,
                normals,
                offsets,
                inv_len2,
                degenerate,
            }
        })
        .collect()
}

struct Contribution {
    col: usize,
    face: usize,
    d: f64,
    one_minus_d: f64,
}

/// Contributions of one row, grouped by column in increasing order and in
/// face order within each pixel.
fn row_contributions(setups: &[FaceSetup], row: usize, settings: &RenderSettings, width: usize) -> Vec<Contribution> {
    let y = row as f64 + 0.5;
    let margin = settings.cutoff * settings.sigma;
    let active: Vec<usize> = setups
        .iter()
        .enumerate()
        .filter(|(_, s)| s.visible && row >= s.rows.0 && row < s.rows.1)
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for col in 0..width {
        let p = Vector2::new(col as f64 + 0.5, y);
        for &fi in &active {
            let s = &setups[fi];
            if col < s.cols.0 || col >= s.cols.1 {
                continue;
            }
            if let Some(delta) = s.delta(&p, margin) {
                let (d, one_minus_d) = sigmoid_pair(delta / settings.sigma);
                out.push(Contribution {
                    col,
                    face: fi,
                    d,
                    one_minus_d,
                });
            }
        }
    }
    out
}

/// Per-pixel blend quantities shared by the forward and backward passes.
struct PixelBlend {
    occupancy: f64,
    color: [f64; 3],
    weights: Vec<f64>,
    weight_sum: f64,
}

fn blend(group: &[Contribution], setups: &[FaceSetup], colors: Option<&[[f64; 3]]>, gamma: f64) -> PixelBlend {
    let prod: f64 = group.iter().map(|c| c.one_minus_d).product();
    let occupancy = 1.0 - prod;
    let mut color = [0.0; 3];
    let mut weights = Vec::new();
    let mut weight_sum = 0.0;
    if let Some(colors) = colors {
        let zref = group
            .iter()
            .filter(|c| c.d > 0.0)
            .map(|c| setups[c.face].zeta)
            .fold(f64::NEG_INFINITY, f64::max);
        if zref.is_finite() {
            for c in group {
                let w = c.d * ((setups[c.face].zeta - zref) / gamma).exp();
                weights.push(w);
                weight_sum += w;
                for k in 0..3 {
                    color[k] += w * colors[c.face][k];
                }
            }
            if weight_sum > 0.0 {
                color = color.map(|v| v / weight_sum);
            }
        } else {
            weights = vec![0.0; group.len()];
        }
    }
    PixelBlend {
        occupancy,
        color,
        weights,
        weight_sum,
    }
}

fn groups(contribs: &[Contribution]) -> impl Iterator<Item = &[Contribution]> {
    contribs.chunk_by(|a, b| a.col == b.col)
}

/// Soft silhouette and optional flat-shaded colour.
pub fn rasterize_soft(
    camera: &Camera,
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
    settings: &RenderSettings,
    face_colors: Option<&[[f64; 3]]>,
) -> SoftImage {
    let (w, h) = (camera.width, camera.height);
    let setups = setup_faces(camera, vertices, faces, settings);
    let rows: Vec<(Vec<f64>, Vec<[f64; 3]>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut occ = vec![0.0; w];
            let mut rgb = vec![[0.0; 3]; if face_colors.is_some() { w } else { 0 }];
            let contribs = row_contributions(&setups, row, settings, w);
            for g in groups(&contribs) {
                let col = g[0].col;
                let b = blend(g, &setups, face_colors, settings.gamma);
                occ[col] = b.occupancy;
                if face_colors.is_some() {
                    rgb[col] = b.color.map(|c| b.occupancy * c);
                }
            }
            (occ, rgb)
        })
        .collect();
    let mut occupancy = Vec::with_capacity(w * h);
    let mut rgb = face_colors.map(|_| Vec::with_capacity(w * h));
    for (o, c) in rows {
        occupancy.extend(o);
        if let Some(r) = rgb.as_mut() {
            r.extend(c);
        }
    }
    SoftImage {
        width: w,
        height: h,
        occupancy,
        rgb,
    }
}

/// Adjoint of `Σ_p upstream_occ(p)·occupancy(p) + Σ_p ⟨upstream_rgb(p), rgb(p)⟩`
/// with respect to the 3D vertices.
pub fn rasterize_gradient(
    camera: &Camera,
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
    settings: &RenderSettings,
    face_colors: Option<&[[f64; 3]]>,
    upstream_occupancy: &[f64],
    upstream_rgb: Option<&[[f64; 3]]>,
) -> Vec<Vector3<f64>> {
    let (w, h) = (camera.width, camera.height);
    assert_eq!(upstream_occupancy.len(), w * h, "upstream occupancy size");
    let colors = match (face_colors, upstream_rgb) {
        (Some(c), Some(u)) => {
            assert_eq!(u.len(), w * h, "upstream rgb size");
            Some((c, u))
        }
        _ => None,
    };
    let setups = setup_faces(camera, vertices, faces, settings);
    let sigma = settings.sigma;
    let gamma = settings.gamma;

    // Per row: accumulated (∂/∂corner0..2 in pixels, ∂/∂ζ) per face.
    type FaceAdj = ([Vector2<f64>; 3], f64);
    let rows: Vec<Vec<(usize, FaceAdj)>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let contribs = row_contributions(&setups, row, settings, w);
            let mut acc: Vec<FaceAdj> = Vec::new();
            let mut touched: Vec<usize> = Vec::new();
            let mut slot = vec![usize::MAX; setups.len()];
            let mut suffix: Vec<f64> = Vec::new();
            let y = row as f64 + 0.5;
            for g in groups(&contribs) {
                let col = g[0].col;
                let pix = row * w + col;
                let uo = upstream_occupancy[pix];
                let ur = colors.map(|(_, u)| u[pix]);
                if uo == 0.0 && ur.is_none_or(|u| u == [0.0; 3]) {
                    continue;
                }
                let b = blend(g, &setups, colors.map(|(c, _)| c), gamma);
                // Π_{k≠j}(1 − d_k) via prefix/suffix products.
                let n = g.len();
                suffix.clear();
                suffix.resize(n + 1, 1.0);
                for j in (0..n).rev() {
                    suffix[j] = suffix[j + 1] * g[j].one_minus_d;
                }
                let mut prefix = 1.0;
                let p = Vector2::new(col as f64 + 0.5, y);
                for (j, c) in g.iter().enumerate() {
                    let do_dd = prefix * suffix[j + 1];
                    prefix *= c.one_minus_d;
                    let mut g_d = uo * do_dd;
                    let mut g_zeta = 0.0;
                    if let (Some((cols, _)), Some(ur)) = (colors, ur) {
                        for k in 0..3 {
                            g_d += ur[k] * do_dd * b.color[k];
                        }
                        if b.weight_sum > 0.0 {
                            let e = b.weights[j] / c.d.max(f64::MIN_POSITIVE);
                            for k in 0..3 {
                                let diff = cols[c.face][k] - b.color[k];
                                // ∂C/∂d_j and ∂C/∂ζ_j scaled by coverage.
                                if c.d > 0.0 {
                                    g_d += ur[k] * b.occupancy * e * diff / b.weight_sum;
                                }
                                g_zeta += ur[k] * b.occupancy * b.weights[j] * diff / (gamma * b.weight_sum);
                            }
                        }
                    }
                    let g_delta = g_d * c.d * c.one_minus_d / sigma;
                    if g_delta == 0.0 && g_zeta == 0.0 {
                        continue;
                    }
                    let dtri = setups[c.face].delta_grad(&p);
                    if slot[c.face] == usize::MAX {
                        slot[c.face] = acc.len();
                        acc.push(([Vector2::zeros(); 3], 0.0));
                        touched.push(c.face);
                    }
                    let a = &mut acc[slot[c.face]];
                    for k in 0..3 {
                        a.0[k] += dtri[k] * g_delta;
                    }
                    a.1 += g_zeta;
                }
            }
            touched.into_iter().zip(acc).collect()
        })
        .collect();

    let mut face_adj = vec![([Vector2::<f64>::zeros(); 3], 0.0f64); faces.len()];
    for row in rows {
        for (fi, (g, gz)) in row {
            for k in 0..3 {
                face_adj[fi].0[k] += g[k];
            }
            face_adj[fi].1 += gz;
        }
    }
    let mut grad = vec![Vector3::zeros(); vertices.len()];
    for (fi, f) in faces.iter().enumerate() {
        let (g2, gz) = &face_adj[fi];
        let depth = setups[fi].depth;
        let dzeta_dz = -settings.z_near / (depth * depth) / 3.0;
        for k in 0..3 {
            let v = &vertices[f[k]];
            grad[f[k]] += camera.project_adjoint(v, &g2[k]);
            if *gz != 0.0 && v.z > super::camera::NEAR_EPS {
                grad[f[k]].z += gz * dzeta_dz;
            }
        }
    }
    grad
}

/// Hard point-in-triangle coverage at pixel centres; test oracle for the
/// small-sigma limit.
pub fn hard_coverage(camera: &Camera, vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Vec<bool> {
    let proj = camera.project(vertices);
    let mut out = vec![false; camera.pixel_count()];
    for row in 0..camera.height {
        for col in 0..camera.width {
            let p = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            out[row * camera.width + col] = faces.iter().any(|f| {
                let tri = f.map(|i| proj[i].pixel);
                signed_distance_2d(&p, &tri).0 > 0.0
            });
        }
    }
    out
}
