use crate::camera::Camera;
use crate::mesh::{Mesh, Vec3};

/// Lambertian lighting applied to interpolated vertex color and normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    /// Unit vector pointing toward the light.
    pub direction: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            direction: Vec3::new(-0.4, 0.5, 0.8).normalize(),
            ambient: 0.35,
            diffuse: 0.65,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB; background pixels hold the background color.
    pub rgb: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

const NEAR: f64 = 1e-3;

/// Perspective z-buffer rasterization sampled at pixel centers, with
/// perspective-correct interpolation. Both windings are drawn.
pub fn rasterize_perspective(
    mesh: &Mesh,
    normals: &[Vec3],
    camera: &Camera,
    lighting: &Lighting,
    background: [f64; 3],
) -> Frame {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut frame = Frame {
        width: w,
        height: h,
        rgb: vec![background; w * h],
        mask: vec![false; w * h],
    };
    let projected: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| camera.project(v)).collect();
    for tri in &mesh.triangles {
        let p = tri.map(|i| projected[i]);
        if p.iter().any(|q| q.2 <= NEAR) {
            continue;
        }
        let area = edge(p[0], p[1], p[2].0, p[2].1);
        if area == 0.0 {
            continue;
        }
        let xmin = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let i0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let j0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let i1 = ((xmax - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
        let j1 = ((ymax - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                let b = [edge(p[1], p[2], x, y) / area, edge(p[2], p[0], x, y) / area, edge(p[0], p[1], x, y) / area];
                if b.iter().any(|&v| v < 0.0) {
                    continue;
                }
                // perspective-correct weights
                let inv: [f64; 3] = [b[0] / p[0].2, b[1] / p[1].2, b[2] / p[2].2];
                let s = inv[0] + inv[1] + inv[2];
                let z = 1.0 / s;
                let k = j * w + i;
                if z >= depth[k] {
                    continue;
                }
                depth[k] = z;
                let wts = inv.map(|v| v / s);
                let mut n = Vec3::zeros();
                let mut c = Vec3::zeros();
                for (t, &vi) in tri.iter().enumerate() {
                    n += normals[vi] * wts[t];
                    c += mesh.colors[vi] * wts[t];
                }
                let n = n.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
                let shade = lighting.ambient + lighting.diffuse * n.dot(&lighting.direction).max(0.0);
                frame.rgb[k] = [0, 1, 2].map(|ch| (c[ch] * shade).clamp(0.0, 1.0));
                frame.mask[k] = true;
            }
        }
    }
    frame
}

/// Signed doubled area of (a, b, (x, y)).
fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}
