//! Depth-tested hard rasterisation, used to synthesise ground-truth masks
//! and images.

use nalgebra::{Point3, Vector2};

use super::{Camera, MaskImage, RgbImage};

/// One mesh to draw.
pub struct Layer<'a> {
    pub vertices: &'a [Point3<f64>],
    pub faces: &'a [[usize; 3]],
    pub label: u8,
    pub face_colors: Option<&'a [[f64; 3]]>,
    /// Used when `face_colors` is absent.
    pub color: [f64; 3],
}

/// Nearest-surface labels and flat colours at pixel centres. Depth is
/// interpolated perspective-correctly.
pub fn render_hard(camera: &Camera, layers: &[Layer<'_>]) -> (MaskImage, RgbImage) {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut labels = vec![0u8; w * h];
    let mut rgb = vec![[0.0; 3]; w * h];
    for layer in layers {
        let proj = camera.project(layer.vertices);
        for (fi, f) in layer.faces.iter().enumerate() {
            if f.iter().any(|&i| proj[i].clamped) {
                continue;
            }
            let p = f.map(|i| proj[i].pixel);
            let inv_z = f.map(|i| 1.0 / proj[i].depth);
            let area = cross(&(p[1] - p[0]), &(p[2] - p[0]));
            if area.abs() < 1e-12 {
                continue;
            }
            let minx = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
            let maxx = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
            let miny = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min);
            let maxy = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max);
            let c0 = ((minx - 0.5).ceil().max(0.0)) as usize;
            let c1 = ((maxx - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
            let r0 = ((miny - 0.5).ceil().max(0.0)) as usize;
            let r1 = ((maxy - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            let color = layer.face_colors.map(|c| c[fi]).unwrap_or(layer.color);
            for row in r0..=r1 as usize {
                for col in c0..=c1 as usize {
                    let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
                    let l0 = cross(&(p[1] - q), &(p[2] - q)) / area;
                    let l1 = cross(&(p[2] - q), &(p[0] - q)) / area;
                    let l2 = 1.0 - l0 - l1;
                    if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                        continue;
                    }
                    let z = 1.0 / (l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2]);
                    let idx = row * w + col;
                    if z < depth[idx] {
                        depth[idx] = z;
                        labels[idx] = layer.label;
                        rgb[idx] = color;
                    }
                }
            }
        }
    }
    (
        MaskImage::new(w, h, labels).expect("labels come from layers"),
        RgbImage::new(w, h, rgb).expect("sized to camera"),
    )
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{LABEL_HAND, LABEL_OBJECT};

    #[test]
    fn nearer_layer_wins() {
        let cam = Camera::new(20.0, 20.0, 10.0, 10.0, 20, 20).unwrap();
        let far = [Point3::new(-1.0, -1.0, 2.0), Point3::new(1.0, -1.0, 2.0), Point3::new(0.0, 1.0, 2.0)];
        let near = [Point3::new(-0.2, -0.2, 1.0), Point3::new(0.2, -0.2, 1.0), Point3::new(0.0, 0.2, 1.0)];
        let faces = [[0, 1, 2]];
        let layers = [
            Layer {
                vertices: &near,
                faces: &faces,
                label: LABEL_HAND,
                face_colors: None,
                color: [1.0, 0.0, 0.0],
            },
            Layer {
                vertices: &far,
                faces: &faces,
                label: LABEL_OBJECT,
                face_colors: None,
                color: [0.0, 0.0, 1.0],
            },
        ];
        let (mask, rgb) = render_hard(&cam, &layers);
        assert_eq!(mask.labels()[10 * 20 + 10], LABEL_HAND);
        assert_eq!(rgb.data[10 * 20 + 10], [1.0, 0.0, 0.0]);
        assert_eq!(mask.labels()[12 * 20 + 12], LABEL_OBJECT);
        assert_eq!(mask.labels()[19 * 20], 0);
    }
}
