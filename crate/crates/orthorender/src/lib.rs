//! Orthographic z-buffer rasterization of the zero-posed proxy into normal,
//! texture and mask maps for three fixed views of the canonical box.
//!
//! Pixel `(i, j)` of an `R x R` view covers the canonical square
//! `[-1, 1]^2`; its center maps to `-1 + (i + 0.5) * 2 / R` along the
//! horizontal axis and `1 - (j + 0.5) * 2 / R` along `y` (row 0 is the top).

use std::path::Path;

use faceproxy::{apply_pose, deform_mesh, vertex_normals, BlendshapeModel, HeadPose, Image, Mesh, Vec3};

pub const STACK_CHANNELS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewId {
    /// Looks along -z; horizontal axis +x.
    Front,
    /// Looks along +x; horizontal axis +z.
    Left,
    /// Looks along -x; horizontal axis -z.
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrthoView {
    pub id: ViewId,
    pub resolution: usize,
}

impl OrthoView {
    pub fn new(id: ViewId, resolution: usize) -> Self {
        Self { id, resolution }
    }

    /// `(horizontal, vertical, depth toward viewer)` coordinates of a point.
    fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        match self.id {
            ViewId::Front => (p.x, p.y, p.z),
            ViewId::Left => (p.z, p.y, -p.x),
            ViewId::Right => (-p.z, p.y, p.x),
        }
    }

    /// Continuous pixel coordinates of a canonical point.
    pub fn to_pixel(&self, p: &Vec3) -> (f64, f64, f64) {
        let (h, v, d) = self.project(p);
        let r = self.resolution as f64;
        ((h + 1.0) * r / 2.0, (1.0 - v) * r / 2.0, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderPose {
    /// Render the deformed mesh in its canonical pose.
    Zero,
    /// Render the mesh with the head pose applied.
    Posed,
}

/// Planar maps of one view: normal (3 x R x R, stored as `(n + 1) / 2`),
/// texture (3 x R x R) and binary mask (R x R). Unmasked pixels are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionMaps {
    pub resolution: usize,
    pub normal: Vec<f64>,
    pub texture: Vec<f64>,
    pub mask: Vec<f64>,
}

impl ConditionMaps {
    pub fn empty(resolution: usize) -> Self {
        let n = resolution * resolution;
        Self {
            resolution,
            normal: vec![0.0; 3 * n],
            texture: vec![0.0; 3 * n],
            mask: vec![0.0; n],
        }
    }

    /// Channel stack in the fixed order normal, texture, mask.
    pub fn stack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(STACK_CHANNELS * self.mask.len());
        out.extend_from_slice(&self.normal);
        out.extend_from_slice(&self.texture);
        out.extend_from_slice(&self.mask);
        out
    }

    /// Mirror left to right.
    pub fn flipped(&self) -> Self {
        let r = self.resolution;
        let flip = |src: &[f64]| -> Vec<f64> {
            let mut out = src.to_vec();
            for row in out.chunks_mut(r) {
                row.reverse();
            }
            out
        };
        Self {
            resolution: r,
            normal: flip(&self.normal),
            texture: flip(&self.texture),
            mask: flip(&self.mask),
        }
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

/// Orthographic rasterization sampled at pixel centers; nearest fragment
/// wins, both windings are drawn, zero-area projections are skipped.
pub fn rasterize_ortho(mesh: &Mesh, view: &OrthoView) -> ConditionMaps {
    let r = view.resolution;
    let n = r * r;
    let mut maps = ConditionMaps::empty(r);
    if mesh.is_empty() {
        return maps;
    }
    let normals = vertex_normals(mesh).normals;
    let px: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| view.to_pixel(v)).collect();
    let mut depth = vec![f64::NEG_INFINITY; n];
    for tri in &mesh.triangles {
        let p = tri.map(|i| px[i]);
        let area = edge(p[0], p[1], p[2].0, p[2].1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let lo = |f: fn(&(f64, f64, f64)) -> f64| p.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = |f: fn(&(f64, f64, f64)) -> f64| p.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let i0 = (lo(|q| q.0) - 0.5).ceil().max(0.0);
        let i1 = (hi(|q| q.0) - 0.5).floor().min(r as f64 - 1.0);
        let j0 = (lo(|q| q.1) - 0.5).ceil().max(0.0);
        let j1 = (hi(|q| q.1) - 0.5).floor().min(r as f64 - 1.0);
        if i1 < i0 || j1 < j0 {
            continue;
        }
        for j in j0 as usize..=j1 as usize {
            for i in i0 as usize..=i1 as usize {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                let b = [
                    edge(p[1], p[2], x, y) / area,
                    edge(p[2], p[0], x, y) / area,
                    edge(p[0], p[1], x, y) / area,
                ];
                if b.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let d = b[0] * p[0].2 + b[1] * p[1].2 + b[2] * p[2].2;
                let k = j * r + i;
                if d <= depth[k] {
                    continue;
                }
                depth[k] = d;
                let mut nrm = Vec3::zeros();
                let mut col = Vec3::zeros();
                for (t, &vi) in tri.iter().enumerate() {
                    nrm += normals[vi] * b[t];
                    col += mesh.colors[vi] * b[t];
                }
                let nrm = nrm.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
                for c in 0..3 {
                    maps.normal[c * n + k] = (nrm[c] + 1.0) / 2.0;
                    maps.texture[c * n + k] = col[c];
                }
                maps.mask[k] = 1.0;
            }
        }
    }
    maps
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderingSet {
    pub front: ConditionMaps,
    pub left: ConditionMaps,
    pub right: ConditionMaps,
}

impl RenderingSet {
    pub fn resolution(&self) -> usize {
        self.front.resolution
    }

    /// 7 x R x R front stack.
    pub fn front_stack(&self) -> Vec<f64> {
        self.front.stack()
    }

    /// 14 x R x R side stack: left, then right mirrored so both share the
    /// side plane's `(z, y)` pixel grid.
    pub fn side_stack(&self) -> Vec<f64> {
        let mut out = self.left.stack();
        out.extend(self.right.flipped().stack());
        out
    }

    pub fn without_texture(mut self) -> Self {
        for m in [&mut self.front, &mut self.left, &mut self.right] {
            m.texture.iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    /// PNG triplets (normal, texture, mask) per view.
    pub fn write_debug(&self, dir: &Path, prefix: &str) -> faceproxy::Result<()> {
        for (name, m) in [("front", &self.front), ("left", &self.left), ("right", &self.right)] {
            let r = m.resolution;
            let img = |channels, data: &Vec<f64>| Image {
                channels,
                width: r,
                height: r,
                data: data.clone(),
            };
            img(3, &m.normal).save_png(&dir.join(format!("{prefix}_{name}_normal.png")))?;
            img(3, &m.texture).save_png(&dir.join(format!("{prefix}_{name}_texture.png")))?;
            img(1, &m.mask).save_png(&dir.join(format!("{prefix}_{name}_mask.png")))?;
        }
        Ok(())
    }
}

pub fn render_views(mesh: &Mesh, resolution: usize) -> RenderingSet {
    RenderingSet {
        front: rasterize_ortho(mesh, &OrthoView::new(ViewId::Front, resolution)),
        left: rasterize_ortho(mesh, &OrthoView::new(ViewId::Left, resolution)),
        right: rasterize_ortho(mesh, &OrthoView::new(ViewId::Right, resolution)),
    }
}

/// Condition renderings of the deformed proxy. `RenderPose::Zero` ignores
/// `pose` entirely.
pub fn render_condition_set(
    model: &BlendshapeModel,
    delta: &[f64],
    pose: &HeadPose,
    mode: RenderPose,
    texture: bool,
    resolution: usize,
) -> faceproxy::Result<RenderingSet> {
    let mut mesh = deform_mesh(model, delta)?;
    if mode == RenderPose::Posed {
        mesh = apply_pose(&mesh, pose);
    }
    let set = render_views(&mesh, resolution);
    Ok(if texture { set } else { set.without_texture() })
}
