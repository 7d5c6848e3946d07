//! Orthonormal single-level 2D Haar transform. Each 2x2 block `[x00 x01; x10 x11]`
//! maps to `LL = (x00 + x01 + x10 + x11) / 2`, `LH = (x00 - x01 + x10 - x11) / 2`,
//! `HL = (x00 + x01 - x10 - x11) / 2`, `HH = (x00 - x01 - x10 + x11) / 2`. The
//! matrix is symmetric and orthogonal, so synthesis uses the same pattern.

use diffcore::{shape_err, CustomOp, Graph, Result, Tensor, Var};

/// Sub-bands, each `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl WaveletCoeffs {
    /// Stack into `[4C, H, W]` ordered LL, LH, HL, HH.
    pub fn stacked(&self) -> Tensor {
        let s = self.ll.shape();
        let mut data = Vec::with_capacity(4 * self.ll.len());
        for b in [&self.ll, &self.lh, &self.hl, &self.hh] {
            data.extend_from_slice(b.data());
        }
        Tensor::new(&[4 * s[0], s[1], s[2]], data).expect("four equal bands")
    }

    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] % 4 != 0 {
            return Err(shape_err("haar", "[4C, H, W]", s));
        }
        let c = s[0] / 4;
        let n = c * s[1] * s[2];
        let band = |k: usize| Tensor::new(&[c, s[1], s[2]], t.data()[k * n..(k + 1) * n].to_vec());
        Ok(Self {
            ll: band(0)?,
            lh: band(1)?,
            hl: band(2)?,
            hh: band(3)?,
        })
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|b| b.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn butterfly(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        (a + b + c + d) / 2.0,
        (a - b + c - d) / 2.0,
        (a + b - c - d) / 2.0,
        (a - b - c + d) / 2.0,
    ]
}

/// Analysis of an image `[C, 2H, 2W]` into `[4C, H, W]`.
fn fwt_stacked(img: &Tensor) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1] / 2, s[2] / 2);
    let n = c * h * w;
    let mut out = vec![0.0; 4 * n];
    let x = img.data();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let at = |di: usize, dj: usize| x[(ch * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj];
                let bands = butterfly(at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                for (k, v) in bands.into_iter().enumerate() {
                    out[k * n + (ch * h + i) * w + j] = v;
                }
            }
        }
    }
    Tensor::new(&[4 * c, h, w], out).expect("band shape")
}

/// Synthesis of `[4C, H, W]` into `[C, 2H, 2W]`.
fn iwt_stacked(coeffs: &Tensor) -> Tensor {
    let s = coeffs.shape();
    let (c, h, w) = (s[0] / 4, s[1], s[2]);
    let n = c * h * w;
    let d = coeffs.data();
    let mut out = vec![0.0; 4 * n];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let k = (ch * h + i) * w + j;
                let px = butterfly(d[k], d[n + k], d[2 * n + k], d[3 * n + k]);
                for (q, v) in px.into_iter().enumerate() {
                    out[(ch * 2 * h + 2 * i + q / 2) * 2 * w + 2 * j + q % 2] = v;
                }
            }
        }
    }
    Tensor::new(&[c, 2 * h, 2 * w], out).expect("image shape")
}

pub fn haar_fwt(img: &Tensor) -> Result<WaveletCoeffs> {
    let s = img.shape();
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 || s[1] == 0 || s[2] == 0 {
        return Err(shape_err("haar_fwt", "[C, 2H, 2W]", s));
    }
    WaveletCoeffs::from_stacked(&fwt_stacked(img))
}

pub fn haar_iwt(coeffs: &WaveletCoeffs) -> Result<Tensor> {
    let s = coeffs.ll.shape();
    for b in [&coeffs.lh, &coeffs.hl, &coeffs.hh] {
        if b.shape() != s {
            return Err(shape_err("haar_iwt", format!("sub-bands of shape {s:?}"), b.shape()));
        }
    }
    if s.len() != 3 {
        return Err(shape_err("haar_iwt", "[C, H, W] sub-bands", s));
    }
    Ok(iwt_stacked(&coeffs.stacked()))
}

struct Iwt;

impl CustomOp for Iwt {
    fn name(&self) -> &'static str {
        "haar_iwt"
    }

    // orthogonal synthesis: the adjoint is the analysis transform
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(fwt_stacked(grad))]
    }
}

/// Differentiable synthesis of stacked `[4C, H, W]` sub-bands.
pub fn iwt_op(g: &mut Graph, coeffs: Var) -> Result<Var> {
    let s = g.shape(coeffs);
    if s.len() != 3 || s[0] % 4 != 0 || s[0] == 0 {
        return Err(shape_err("iwt_op", "[4C, H, W]", s));
    }
    let value = iwt_stacked(g.value(coeffs));
    Ok(g.custom(&[coeffs], value, Box::new(Iwt)))
}
