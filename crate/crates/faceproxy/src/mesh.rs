use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{io_err, Result};
use crate::pose::HeadPose;

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex RGB in [0, 1].
    pub colors: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    /// Vertices touching only zero-area triangles (or none); their normal is zero.
    pub flagged: Vec<usize>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn append(&mut self, other: &Mesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }

    /// Per-vertex axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(out.as_bytes()).map_err(io_err(path))
    }
}

pub fn apply_pose(mesh: &Mesh, pose: &HeadPose) -> Mesh {
    let r = pose.matrix();
    Mesh {
        vertices: mesh.vertices.iter().map(|v| r * v + pose.translation).collect(),
        ..mesh.clone()
    }
}

/// Area-weighted vertex normals: unnormalized face cross products summed per
/// vertex, then normalized.
pub fn vertex_normals(mesh: &Mesh) -> VertexNormals {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i] += n;
        }
    }
    let mut flagged = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 1e-300 {
                n / len
            } else {
                flagged.push(i);
                Vec3::zeros()
            }
        })
        .collect();
    VertexNormals { normals, flagged }
}

/// Icosphere built by repeated midpoint subdivision of an icosahedron,
/// outward winding.
pub fn icosphere(subdivisions: usize, radius: f64, center: Vec3) -> Mesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, p, 0.0),
        (1.0, p, 0.0),
        (-1.0, -p, 0.0),
        (1.0, -p, 0.0),
        (0.0, -1.0, p),
        (0.0, 1.0, p),
        (0.0, -1.0, -p),
        (0.0, 1.0, -p),
        (p, 0.0, -1.0),
        (p, 0.0, 1.0),
        (-p, 0.0, -1.0),
        (-p, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
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
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let n = verts.len();
    Mesh {
        vertices: verts.into_iter().map(|v| center + v * radius).collect(),
        triangles: tris,
        colors: vec![Vec3::repeat(1.0); n],
    }
}

/// Axis-aligned box with outward winding and a uniform color.
pub fn cuboid(lo: Vec3, hi: Vec3, color: Vec3) -> Mesh {
    let corner = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        )
    };
    let quads = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh {
        vertices: (0..8).map(corner).collect(),
        triangles,
        colors: vec![color; 8],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_faces_point_outward() {
        let m = cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0), Vec3::zeros());
        for t in &m.triangles {
            let [a, b, c] = t.map(|i| m.vertices[i]);
            let n = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            assert!(n.dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn icosphere_counts() {
        let m = icosphere(3, 1.0, Vec3::zeros());
        assert_eq!(m.vertices.len(), 642);
        assert_eq!(m.triangles.len(), 1280);
    }
}
