use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{format_err, io_err, FaceError, Result};
use crate::mesh::{cuboid, icosphere, Mesh, Vec3};

const MAGIC: &[u8; 5] = b"FPXY1";
const VERSION: u32 = 1;

/// Head center and radius of the synthetic proxy, canonical units.
pub const HEAD_CENTER: [f64; 3] = [0.0, 0.15, 0.0];
pub const HEAD_RADIUS: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeModel {
    pub base: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Vec<Vec3>,
    /// `deltas[k][v]`: displacement of vertex `v` under unit coefficient `k`.
    pub deltas: Vec<Vec<Vec3>>,
}

impl BlendshapeModel {
    pub fn num_expressions(&self) -> usize {
        self.deltas.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.base.len()
    }

    pub fn base_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.base.clone(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    /// The procedural head: an icosphere with a box nose, `k` smooth radial
    /// lobes as blendshapes, and a position-dependent color pattern.
    pub fn synthetic(k: usize, seed: u64) -> Self {
        let center = Vec3::from(HEAD_CENTER);
        let mut mesh = icosphere(3, HEAD_RADIUS, center);
        let nose = cuboid(
            Vec3::new(-0.06, 0.02, HEAD_RADIUS - 0.08),
            Vec3::new(0.06, 0.16, HEAD_RADIUS + 0.1),
            Vec3::zeros(),
        );
        mesh.append(&nose);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Lobe centers are spread over the front hemisphere where the cameras look.
        let lobes: Vec<(Vec3, f64, f64)> = (0..k)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * (i as f64 + rng.random::<f64>() * 0.5) / k as f64;
                let tilt = 0.4 + 0.5 * rng.random::<f64>();
                let dir = Vec3::new(tilt * phi.cos(), tilt * phi.sin(), 1.0).normalize();
                let amp = 0.06 + 0.04 * rng.random::<f64>();
                let width = 0.35 + 0.15 * rng.random::<f64>();
                (dir, amp, width)
            })
            .collect();
        let deltas = lobes
            .iter()
            .map(|&(dir, amp, width)| {
                mesh.vertices
                    .iter()
                    .map(|v| {
                        let n = (v - center).normalize();
                        let d2 = (n - dir).norm_squared();
                        n * (amp * (-d2 / (2.0 * width * width)).exp())
                    })
                    .collect()
            })
            .collect();
        let colors = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i >= mesh.vertices.len() - 8 {
                    return Vec3::new(0.85, 0.35, 0.3);
                }
                let p = v - center;
                Vec3::new(
                    0.6 + 0.3 * (7.0 * p.y).sin(),
                    0.45 + 0.25 * (6.0 * p.x + 2.0 * p.z).cos(),
                    0.35 + 0.2 * (5.0 * p.z - 3.0 * p.y).sin(),
                )
            })
            .collect();
        Self {
            base: mesh.vertices,
            triangles: mesh.triangles,
            colors,
            deltas,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for n in [VERSION, self.base.len() as u32, self.triangles.len() as u32, self.deltas.len() as u32] {
            buf.extend_from_slice(&n.to_le_bytes());
        }
        let push_vecs = |buf: &mut Vec<u8>, vs: &[Vec3]| {
            for v in vs {
                for c in v.iter() {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
        };
        push_vecs(&mut buf, &self.base);
        for t in &self.triangles {
            for &i in t {
                buf.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        push_vecs(&mut buf, &self.colors);
        for d in &self.deltas {
            push_vecs(&mut buf, d);
        }
        std::fs::write(path, buf).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(5)? != MAGIC {
            return Err(format_err(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let (nv, nf, nk) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let base = r.vecs(nv)?;
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let t = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            if t.iter().any(|&i| i >= nv) {
                return Err(format_err(path, "triangle index out of range"));
            }
            triangles.push(t);
        }
        let colors = r.vecs(nv)?;
        let deltas = (0..nk).map(|_| r.vecs(nv)).collect::<Result<_>>()?;
        if r.pos != bytes.len() {
            return Err(format_err(path, "trailing bytes"));
        }
        Ok(Self {
            base,
            triangles,
            colors,
            deltas,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format_err(self.path, "truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vecs(&mut self, n: usize) -> Result<Vec<Vec3>> {
        (0..n).map(|_| Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))).collect()
    }
}

/// Zero-pose deformation `base + sum_k delta_k * d_k`.
pub fn deform_mesh(model: &BlendshapeModel, delta: &[f64]) -> Result<Mesh> {
    if delta.len() != model.num_expressions() {
        return Err(FaceError::Shape {
            what: "expression coefficients",
            expected: model.num_expressions(),
            got: delta.len(),
        });
    }
    let mut vertices = model.base.clone();
    for (d, basis) in delta.iter().zip(&model.deltas) {
        if *d == 0.0 {
            continue;
        }
        for (v, b) in vertices.iter_mut().zip(basis) {
            *v += b * *d;
        }
    }
    Ok(Mesh {
        vertices,
        triangles: model.triangles.clone(),
        colors: model.colors.clone(),
    })
}
