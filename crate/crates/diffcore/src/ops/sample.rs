//! Bilinear and trilinear interpolation on pixel-center grids.
//!
//! Grid node `i` of an axis with `n` nodes sits at normalized coordinate
//! `(i + 0.5) / n`. Queries inside `[0, 1]` but beyond the outermost node
//! centers clamp to the edge; queries outside `[0, 1]` read as zero.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Continuous node coordinate for normalized `u` on an axis with `n` nodes.
///
/// Returns `(lower node, fraction, d(coord)/du)`; the derivative is zero in
/// the clamped border band.
fn axis_tap(u: f64, n: usize) -> (usize, f64, f64) {
    let p = u * n as f64 - 0.5;
    let hi = (n - 1) as f64;
    let (p, dp) = if p < 0.0 {
        (0.0, 0.0)
    } else if p > hi {
        (hi, 0.0)
    } else {
        (p, n as f64)
    };
    if n == 1 {
        return (0, 0.0, 0.0);
    }
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, p - i0 as f64, dp)
}

fn inside_unit(u: f64) -> bool {
    (0.0..=1.0).contains(&u)
}

/// Sample a `C x H x W` plane at `uv` (u along width, v along height).
pub fn bilinear_sample(plane: &Tensor, uv: [f64; 2]) -> Vec<f64> {
    let s = plane.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; c];
    if !(inside_unit(uv[0]) && inside_unit(uv[1])) {
        return out;
    }
    let (x0, fx, _) = axis_tap(uv[0], w);
    let (y0, fy, _) = axis_tap(uv[1], h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let d = plane.data();
    for (ch, o) in out.iter_mut().enumerate() {
        let base = ch * h * w;
        let p00 = d[base + y0 * w + x0];
        let p01 = d[base + y0 * w + x1];
        let p10 = d[base + y1 * w + x0];
        let p11 = d[base + y1 * w + x1];
        *o = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11);
    }
    out
}

/// One interpolation stencil into a flattened volume; empty when outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrilinearTap {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    pub active: bool,
}

impl TrilinearTap {
    pub fn new(dims: [usize; 3], xyz: [f64; 3], lo: f64, hi: f64) -> Self {
        let u = xyz.map(|p| (p - lo) / (hi - lo));
        if !u.iter().all(|&v| inside_unit(v)) {
            return Self::default();
        }
        let t: Vec<(usize, f64)> = (0..3)
            .map(|a| {
                let (i0, f, _) = axis_tap(u[a], dims[a]);
                (i0, f)
            })
            .collect();
        let mut tap = Self {
            active: true,
            ..Self::default()
        };
        for corner in 0..8 {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            for a in 0..3 {
                let bit = (corner >> (2 - a)) & 1;
                let (i0, f) = t[a];
                idx[a] = (i0 + bit).min(dims[a] - 1);
                w *= if bit == 1 { f } else { 1.0 - f };
            }
            tap.index[corner] = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
            tap.weight[corner] = w;
        }
        tap
    }

    pub fn eval(&self, data: &[f64]) -> f64 {
        if !self.active {
            return 0.0;
        }
        self.index
            .iter()
            .zip(&self.weight)
            .map(|(&i, &w)| w * data[i])
            .sum()
    }
}

/// Sample an `A x B x C` volume spanning `[lo, hi]^3` at `xyz`;
/// axis 0 follows x, axis 1 y, axis 2 z. Zero outside the bounds.
pub fn trilinear_sample(volume: &Tensor, xyz: [f64; 3], lo: f64, hi: f64) -> f64 {
    let s = volume.shape();
    TrilinearTap::new([s[0], s[1], s[2]], xyz, lo, hi).eval(volume.data())
}

impl Graph {
    /// Bilinear lookup of `N` points: `plane: [C, H, W]`, `uv: [N, 2]` -> `[N, C]`.
    ///
    /// Differentiable in both the plane values and the coordinates.
    pub fn bilinear(&mut self, plane: Var, uv: Var) -> Result<Var> {
        let (sp, su) = (self.shape(plane).to_vec(), self.shape(uv).to_vec());
        if sp.len() != 3 || sp[1] == 0 || sp[2] == 0 {
            return Err(shape_err("bilinear", "plane [C, H, W]", &sp));
        }
        if su.len() != 2 || su[1] != 2 {
            return Err(shape_err("bilinear", "uv [N, 2]", &su));
        }
        let c = sp[0];
        let n = su[0];
        let mut out = Vec::with_capacity(n * c);
        let p = self.value(plane);
        for row in self.value(uv).data().chunks(2) {
            out.extend(bilinear_sample(p, [row[0], row[1]]));
        }
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push(value, Op::Bilinear { plane, uv }, &[plane, uv]))
    }

    /// Trilinear lookup of constant points in a single-channel volume over
    /// `[lo, hi]^3`: `volume: [A, B, C]` -> `[N]`.
    pub fn trilinear(&mut self, volume: Var, points: &[[f64; 3]], lo: f64, hi: f64) -> Result<Var> {
        let s = self.shape(volume).to_vec();
        if s.len() != 3 || s.iter().any(|&d| d == 0) {
            return Err(shape_err("trilinear", "volume [A, B, C]", &s));
        }
        let dims = [s[0], s[1], s[2]];
        let cells: Vec<TrilinearTap> = points.iter().map(|&p| TrilinearTap::new(dims, p, lo, hi)).collect();
        let data = self.value(volume).data();
        let out: Vec<f64> = cells.iter().map(|t| t.eval(data)).collect();
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::Trilinear { volume, cells }, &[volume]))
    }
}

pub(crate) fn bilinear_backward(
    plane: &Tensor,
    uv: &Tensor,
    g: &Tensor,
    need_plane: bool,
    need_uv: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let s = plane.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = plane.data();
    let mut gp = need_plane.then(|| vec![0.0; plane.len()]);
    let mut guv = need_uv.then(|| vec![0.0; uv.len()]);
    for (i, row) in uv.data().chunks(2).enumerate() {
        let (u, v) = (row[0], row[1]);
        if !(inside_unit(u) && inside_unit(v)) {
            continue;
        }
        let (x0, fx, dxdu) = axis_tap(u, w);
        let (y0, fy, dydv) = axis_tap(v, h);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let go = &g.data()[i * c..(i + 1) * c];
        let (mut du, mut dv) = (0.0, 0.0);
        for ch in 0..c {
            let base = ch * h * w;
            let (i00, i01, i10, i11) = (
                base + y0 * w + x0,
                base + y0 * w + x1,
                base + y1 * w + x0,
                base + y1 * w + x1,
            );
            if let Some(gp) = gp.as_mut() {
                gp[i00] += go[ch] * (1.0 - fy) * (1.0 - fx);
                gp[i01] += go[ch] * (1.0 - fy) * fx;
                gp[i10] += go[ch] * fy * (1.0 - fx);
                gp[i11] += go[ch] * fy * fx;
            }
            if guv.is_some() {
                let (p00, p01, p10, p11) = (d[i00], d[i01], d[i10], d[i11]);
                du += go[ch] * ((1.0 - fy) * (p01 - p00) + fy * (p11 - p10));
                dv += go[ch] * ((1.0 - fx) * (p10 - p00) + fx * (p11 - p01));
            }
        }
        if let Some(guv) = guv.as_mut() {
            guv[2 * i] += du * dxdu;
            guv[2 * i + 1] += dv * dydv;
        }
    }
    (
        gp.map(|v| Tensor::new(s, v).expect("shape")),
        guv.map(|v| Tensor::new(uv.shape(), v).expect("shape")),
    )
}

pub(crate) fn trilinear_backward(shape: &[usize], cells: &[TrilinearTap], g: &Tensor) -> Tensor {
    let mut out = vec![0.0; shape.iter().product()];
    for (tap, &gv) in cells.iter().zip(g.data()) {
        if !tap.active {
            continue;
        }
        for (&i, &w) in tap.index.iter().zip(&tap.weight) {
            out[i] += gv * w;
        }
    }
    Tensor::new(shape, out).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> Tensor {
        Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn node_and_center_values() {
        let p = plane();
        assert_eq!(bilinear_sample(&p, [0.25, 0.25]), vec![1.0]);
        assert_eq!(bilinear_sample(&p, [0.75, 0.75]), vec![4.0]);
        assert_eq!(bilinear_sample(&p, [0.5, 0.5]), vec![2.5]);
        assert_eq!(bilinear_sample(&p, [-0.5, 0.5]), vec![0.0]);
        // border band clamps to the edge node
        assert_eq!(bilinear_sample(&p, [0.1, 0.1]), vec![1.0]);
    }

    #[test]
    fn trilinear_center_is_corner_mean() {
        let data: Vec<f64> = (0..8).map(|i| f64::from(i) * 1.5 - 2.0).collect();
        let v = Tensor::new(&[2, 2, 2], data.clone()).unwrap();
        let mean = data.iter().sum::<f64>() / 8.0;
        assert!((trilinear_sample(&v, [0.0, 0.0, 0.0], -1.0, 1.0) - mean).abs() < 1e-12);
        assert_eq!(trilinear_sample(&v, [0.0, 1.5, 0.0], -1.0, 1.0), 0.0);
        // node (1,0,1) sits at (0.5, -0.5, 0.5)
        assert!((trilinear_sample(&v, [0.5, -0.5, 0.5], -1.0, 1.0) - data[5]).abs() < 1e-12);
    }
}
