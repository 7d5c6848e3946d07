//! Marching cubes over a regular grid spanning `[-1, 1]^3`.
//!
//! Instead of a fixed case table, each cube's polygons are assembled from its
//! faces: on every face the edge crossings are paired into oriented segments
//! (entry to exit, walking the face counter-clockwise from outside), and the
//! segments chain into closed loops that are fan-triangulated. Faces with four
//! crossings are resolved by the face-center average, a decision shared by
//! both cubes touching the face, so the surface is watertight.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use diffcore::{DiffError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn write_obj(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        out.flush()
    }
}

/// Corners listed counter-clockwise as seen from outside the cube. Corner
/// `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

fn offset(c: usize) -> [usize; 3] {
    [c & 1, c >> 1 & 1, c >> 2 & 1]
}

/// Local edge id from its two corners: lower corner and axis.
fn edge_id(a: usize, b: usize) -> usize {
    let lo = a.min(b);
    let axis = (a ^ b).trailing_zeros() as usize;
    lo * 3 + axis
}

/// Sample `density` on an `n^3` grid over `[-1, 1]^3` and extract the
/// `iso` level set.
pub fn extract_mesh(density: impl Fn([f64; 3]) -> f64, n: usize, iso: f64) -> Result<TriMesh> {
    let mut grid = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                grid.push(density([coord(i, n), coord(j, n), coord(k, n)]));
            }
        }
    }
    extract_mesh_from_grid(&grid, n, iso)
}

pub fn coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

/// `grid[(i * n + j) * n + k]` holds the value at `(x_i, y_j, z_k)`. Points
/// above `iso` are inside; triangles face away from the inside.
pub fn extract_mesh_from_grid(grid: &[f64], n: usize, iso: f64) -> Result<TriMesh> {
    if n < 8 || grid.len() != n * n * n {
        return Err(DiffError::Contract(format!(
            "marching cubes needs an n^3 grid with n >= 8, got n={n} and {} values",
            grid.len()
        )));
    }
    let at = |p: [usize; 3]| grid[(p[0] * n + p[1]) * n + p[2]];
    let mut mesh = TriMesh::default();
    let mut verts: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let corner = |c: usize| {
                    let o = offset(c);
                    [i + o[0], j + o[1], k + o[2]]
                };
                let vals: [f64; 8] = std::array::from_fn(|c| at(corner(c)));
                let inside: [bool; 8] = std::array::from_fn(|c| vals[c] > iso);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                let mut next = [usize::MAX; 24];
                let mut seg_face = [0usize; 24];
                for (f, face) in FACES.iter().enumerate() {
                    let mut crossings = Vec::with_capacity(4);
                    for e in 0..4 {
                        let (a, b) = (face[e], face[(e + 1) % 4]);
                        if inside[a] != inside[b] {
                            crossings.push((edge_id(a, b), inside[b]));
                        }
                    }
                    match crossings.len() {
                        0 => {}
                        2 => {
                            let (entry, exit) = if crossings[0].1 {
                                (crossings[0].0, crossings[1].0)
                            } else {
                                (crossings[1].0, crossings[0].0)
                            };
                            next[entry] = exit;
                            seg_face[entry] = f;
                        }
                        4 => {
                            let center = face.iter().map(|&c| vals[c]).sum::<f64>() / 4.0;
                            // inside corners joined across the face: pair each
                            // entry with the exit before it, else with the one after
                            let step = if center > iso { 3 } else { 1 };
                            for s in 0..4 {
                                if crossings[s].1 {
                                    next[crossings[s].0] = crossings[(s + step) % 4].0;
                                    seg_face[crossings[s].0] = f;
                                }
                            }
                        }
                        _ => unreachable!("a face has an even number of crossings"),
                    }
                }
                let mut vertex = |e: usize, mesh: &mut TriMesh| {
                    let (lo, axis) = (e / 3, e % 3);
                    let p = corner(lo);
                    *verts.entry((p[0], p[1], p[2], axis)).or_insert_with(|| {
                        let hi = lo | 1 << axis;
                        let t = (iso - vals[lo]) / (vals[hi] - vals[lo]);
                        let mut x = [coord(p[0], n), coord(p[1], n), coord(p[2], n)];
                        x[axis] += t * 2.0 / (n - 1) as f64;
                        mesh.vertices.push(x);
                        mesh.vertices.len() - 1
                    })
                };
                let mut seen = [false; 24];
                for start in 0..24 {
                    if next[start] == usize::MAX || seen[start] {
                        continue;
                    }
                    let mut ring = Vec::new();
                    let mut faces_used = 0u8;
                    let mut repeated_face = false;
                    let mut e = start;
                    while !seen[e] {
                        seen[e] = true;
                        ring.push(vertex(e, &mut mesh));
                        repeated_face |= faces_used >> seg_face[e] & 1 == 1;
                        faces_used |= 1 << seg_face[e];
                        e = next[e];
                    }
                    if repeated_face {
                        // a loop crossing one face twice could share a fan
                        // diagonal with the neighbor cube; fan from a new
                        // center vertex instead
                        let mut c = [0.0; 3];
                        for &v in &ring {
                            for (ca, va) in c.iter_mut().zip(mesh.vertices[v]) {
                                *ca += va / ring.len() as f64;
                            }
                        }
                        mesh.vertices.push(c);
                        let center = mesh.vertices.len() - 1;
                        for w in 0..ring.len() {
                            mesh.triangles.push([center, ring[w], ring[(w + 1) % ring.len()]]);
                        }
                    } else {
                        for w in 1..ring.len() - 1 {
                            mesh.triangles.push([ring[0], ring[w], ring[w + 1]]);
                        }
                    }
                }
            }
        }
    }
    Ok(mesh)
}
