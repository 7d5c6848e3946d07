use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::kernels::{col2im, col2vol, gemm, im2col, vol2col, Conv2dGeom, Conv3dGeom};
use crate::tensor::Tensor;

/// Demodulation guard inside the square root.
pub const DEMOD_EPS: f64 = 1e-8;

pub(crate) fn conv2d_geom(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Conv2dGeom {
    Conv2dGeom {
        channels: input[0],
        height: input[1],
        width: input[2],
        kernel: weight[2],
        stride,
        pad,
    }
}

/// Cross-correlation of one `C x H x W` image with `O x C x k x k` weights.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Tensor {
    let geom = conv2d_geom(input.shape(), weight.shape(), stride, pad);
    let o = weight.shape()[0];
    let cols = im2col(input.data(), &geom);
    let mut out = vec![0.0; o * geom.col_cols()];
    gemm(o, geom.col_rows(), geom.col_cols(), weight.data(), false, &cols, false, &mut out, 0.0);
    Tensor::new(&[o, geom.out_h(), geom.out_w()], out).expect("shape")
}

/// Adjoint of [`conv2d_forward`] with respect to its input.
fn conv_transpose2d_forward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Tensor {
    let c = weight.shape()[1];
    let geom = Conv2dGeom {
        channels: c,
        height: out_hw.0,
        width: out_hw.1,
        kernel: weight.shape()[2],
        stride,
        pad,
    };
    let o = weight.shape()[0];
    let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
    gemm(geom.col_rows(), o, geom.col_cols(), weight.data(), true, input.data(), false, &mut cols, 0.0);
    Tensor::new(&[c, out_hw.0, out_hw.1], col2im(&cols, &geom)).expect("shape")
}

fn check_conv_weight(op: &'static str, input: &[usize], weight: &[usize], spatial: usize) -> Result<()> {
    let rank_ok = input.len() == spatial + 1 && weight.len() == spatial + 2;
    if !rank_ok {
        return Err(shape_err(op, format!("input rank {} and weight rank {}", spatial + 1, spatial + 2), weight));
    }
    if weight[1] != input[0] {
        return Err(shape_err(op, format!("weight with {} input channels", input[0]), weight));
    }
    let k = weight[2];
    if weight[2..].iter().any(|&w| w != k) {
        return Err(shape_err(op, "square kernel", weight));
    }
    Ok(())
}

impl Graph {
    /// 2D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        check_conv_weight("conv2d", &si, &sw, 2)?;
        if stride == 0 || si[1] + 2 * pad < sw[2] || si[2] + 2 * pad < sw[2] {
            return Err(shape_err("conv2d", "kernel fits in padded input", &si));
        }
        let value = conv2d_forward(self.value(input), self.value(weight), stride, pad);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            },
            &[input, weight],
        ))
    }

    /// Transposed convolution: the input-gradient map of [`Graph::conv2d`].
    ///
    /// `input` is `O x H' x W'`, `weight` is `O x C x k x k`, output is
    /// `C x out_hw.0 x out_hw.1`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 3 || sw.len() != 4 || sw[0] != si[0] {
            return Err(shape_err("conv_transpose2d", format!("weight with {} output channels", si[0]), &sw));
        }
        let geom = Conv2dGeom {
            channels: sw[1],
            height: out_hw.0,
            width: out_hw.1,
            kernel: sw[2],
            stride,
            pad,
        };
        if geom.out_h() != si[1] || geom.out_w() != si[2] {
            return Err(shape_err("conv_transpose2d", format!("input {}x{}", geom.out_h(), geom.out_w()), &si));
        }
        let value = conv_transpose2d_forward(self.value(input), self.value(weight), stride, pad, out_hw);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                stride,
                pad,
            },
            &[input, weight],
        ))
    }

    /// Stride-1 3D cross-correlation over one `C x D x H x W` volume.
    pub fn conv3d(&mut self, input: Var, weight: Var, pad: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        check_conv_weight("conv3d", &si, &sw, 3)?;
        let geom = Conv3dGeom {
            channels: si[0],
            dims: [si[1], si[2], si[3]],
            kernel: sw[2],
            pad,
        };
        if geom.dims.iter().any(|&d| d + 2 * pad < sw[2]) {
            return Err(shape_err("conv3d", "kernel fits in padded input", &si));
        }
        let o = sw[0];
        let cols = vol2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; o * geom.col_cols()];
        gemm(o, geom.col_rows(), geom.col_cols(), self.value(weight).data(), false, &cols, false, &mut out, 0.0);
        let [d, h, w] = geom.out_dims();
        let value = Tensor::new(&[o, d, h, w], out)?;
        Ok(self.push(value, Op::Conv3d { input, weight, pad }, &[input, weight]))
    }

    /// Scale `O x C x k x k` weights per input channel by `style`, then
    /// optionally renormalize each output filter to unit L2 norm.
    pub fn modulate(&mut self, weight: Var, style: Var, demodulate: bool) -> Result<Var> {
        let (sw, ss) = (self.shape(weight).to_vec(), self.shape(style).to_vec());
        if sw.len() != 4 || ss != [sw[1]] {
            return Err(shape_err("modulate", format!("style of length {}", sw.get(1).unwrap_or(&0)), &ss));
        }
        let value = modulate_forward(self.value(weight), self.value(style), demodulate);
        Ok(self.push(
            value,
            Op::Modulate {
                weight,
                style,
                demodulate,
            },
            &[weight, style],
        ))
    }

    /// Style-modulated convolution, shape-preserving (`pad = k / 2`).
    pub fn modulated_conv2d(&mut self, input: Var, weight: Var, style: Var, demodulate: bool) -> Result<Var> {
        let sw = self.shape(weight).to_vec();
        if sw.len() == 4 && self.shape(style) != [sw[1]] {
            return Err(shape_err("modulated_conv2d", format!("style of length {}", sw[1]), self.shape(style)));
        }
        let w = self.modulate(weight, style, demodulate)?;
        self.conv2d(input, w, 1, sw[2] / 2)
    }

    /// Nearest-neighbour upsampling of the trailing 2 or 3 axes.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if !(s.len() == 3 || s.len() == 4) || factor == 0 {
            return Err(shape_err("upsample", "rank 3 or 4", &s));
        }
        let value = upsample_forward(self.value(x), factor);
        Ok(self.push(value, Op::Upsample { x, factor }, &[x]))
    }
}

fn modulate_forward(weight: &Tensor, style: &Tensor, demodulate: bool) -> Tensor {
    let s = weight.shape();
    let (o, c) = (s[0], s[1]);
    let kk = s[2] * s[3];
    let mut out = weight.data().to_vec();
    for oi in 0..o {
        let filt = &mut out[oi * c * kk..(oi + 1) * c * kk];
        for (ci, block) in filt.chunks_mut(kk).enumerate() {
            for v in block.iter_mut() {
                *v *= style.data()[ci];
            }
        }
        if demodulate {
            let d = 1.0 / (filt.iter().map(|v| v * v).sum::<f64>() + DEMOD_EPS).sqrt();
            for v in filt.iter_mut() {
                *v *= d;
            }
        }
    }
    Tensor::new(s, out).expect("shape")
}

pub(crate) fn modulate_backward(
    weight: &Tensor,
    style: &Tensor,
    demodulate: bool,
    g: &Tensor,
) -> (Tensor, Tensor) {
    let s = weight.shape();
    let (o, c) = (s[0], s[1]);
    let kk = s[2] * s[3];
    let n = c * kk;
    let st = style.data();
    let mut gw = vec![0.0; weight.len()];
    let mut gs = vec![0.0; c];
    let mut scaled = vec![0.0; n];
    let mut gscaled = vec![0.0; n];
    for oi in 0..o {
        let w = &weight.data()[oi * n..(oi + 1) * n];
        let go = &g.data()[oi * n..(oi + 1) * n];
        for i in 0..n {
            scaled[i] = w[i] * st[i / kk];
        }
        if demodulate {
            let d = 1.0 / (scaled.iter().map(|v| v * v).sum::<f64>() + DEMOD_EPS).sqrt();
            let dot: f64 = go.iter().zip(&scaled).map(|(a, b)| a * b).sum();
            let d3 = d * d * d;
            for i in 0..n {
                gscaled[i] = d * go[i] - d3 * dot * scaled[i];
            }
        } else {
            gscaled.copy_from_slice(go);
        }
        for i in 0..n {
            gw[oi * n + i] = gscaled[i] * st[i / kk];
            gs[i / kk] += gscaled[i] * w[i];
        }
    }
    (
        Tensor::new(s, gw).expect("shape"),
        Tensor::vector(gs),
    )
}

fn upsample_forward(x: &Tensor, f: usize) -> Tensor {
    let s = x.shape();
    let c = s[0];
    let spatial = &s[1..];
    let out_spatial: Vec<usize> = spatial.iter().map(|d| d * f).collect();
    let mut shape = vec![c];
    shape.extend_from_slice(&out_spatial);
    let n_in: usize = spatial.iter().product();
    let n_out: usize = out_spatial.iter().product();
    let mut out = vec![0.0; c * n_out];
    for ch in 0..c {
        let src = &x.data()[ch * n_in..(ch + 1) * n_in];
        let dst = &mut out[ch * n_out..(ch + 1) * n_out];
        for (j, v) in dst.iter_mut().enumerate() {
            *v = src[upsample_source(j, spatial, &out_spatial, f)];
        }
    }
    Tensor::new(&shape, out).expect("shape")
}

/// Flat source index for flat destination index `j` under nearest upsampling.
fn upsample_source(j: usize, spatial: &[usize], out_spatial: &[usize], f: usize) -> usize {
    let mut rem = j;
    let mut src = 0;
    let mut stride = 1;
    let mut coords = [0usize; 3];
    for (axis, &n) in out_spatial.iter().enumerate().rev() {
        coords[axis] = rem % n;
        rem /= n;
    }
    for axis in (0..spatial.len()).rev() {
        src += (coords[axis] / f) * stride;
        stride *= spatial[axis];
    }
    src
}

pub(crate) fn upsample_backward(src_shape: &[usize], f: usize, g: &Tensor) -> Tensor {
    let c = src_shape[0];
    let spatial = &src_shape[1..];
    let out_spatial: Vec<usize> = spatial.iter().map(|d| d * f).collect();
    let n_in: usize = spatial.iter().product();
    let n_out: usize = out_spatial.iter().product();
    let mut out = vec![0.0; c * n_in];
    for ch in 0..c {
        let src = &g.data()[ch * n_out..(ch + 1) * n_out];
        let dst = &mut out[ch * n_in..(ch + 1) * n_in];
        for (j, v) in src.iter().enumerate() {
            dst[upsample_source(j, spatial, &out_spatial, f)] += v;
        }
    }
    Tensor::new(src_shape, out).expect("shape")
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    g: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let geom = conv2d_geom(input.shape(), weight.shape(), stride, pad);
    let o = weight.shape()[0];
    let (rows, ncol) = (geom.col_rows(), geom.col_cols());
    let gi = need_input.then(|| {
        let mut gcols = vec![0.0; rows * ncol];
        gemm(rows, o, ncol, weight.data(), true, g.data(), false, &mut gcols, 0.0);
        Tensor::new(input.shape(), col2im(&gcols, &geom)).expect("shape")
    });
    let gw = need_weight.then(|| {
        let cols = im2col(input.data(), &geom);
        let mut gw = vec![0.0; o * rows];
        gemm(o, ncol, rows, g.data(), false, &cols, true, &mut gw, 0.0);
        Tensor::new(weight.shape(), gw).expect("shape")
    });
    (gi, gw)
}

pub(crate) fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
    g: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    // out = col2im(W^T x): dx = W im2col(g), dW = x im2col(g)^T.
    let geom = conv2d_geom(out_shape, weight.shape(), stride, pad);
    let o = weight.shape()[0];
    let (rows, ncol) = (geom.col_rows(), geom.col_cols());
    let gcols = im2col(g.data(), &geom);
    let gi = need_input.then(|| {
        let mut gi = vec![0.0; o * ncol];
        gemm(o, rows, ncol, weight.data(), false, &gcols, false, &mut gi, 0.0);
        Tensor::new(input.shape(), gi).expect("shape")
    });
    let gw = need_weight.then(|| {
        let mut gw = vec![0.0; o * rows];
        gemm(o, ncol, rows, input.data(), false, &gcols, true, &mut gw, 0.0);
        Tensor::new(weight.shape(), gw).expect("shape")
    });
    (gi, gw)
}

pub(crate) fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    pad: usize,
    g: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let si = input.shape();
    let geom = Conv3dGeom {
        channels: si[0],
        dims: [si[1], si[2], si[3]],
        kernel: weight.shape()[2],
        pad,
    };
    let o = weight.shape()[0];
    let (rows, ncol) = (geom.col_rows(), geom.col_cols());
    let gi = need_input.then(|| {
        let mut gcols = vec![0.0; rows * ncol];
        gemm(rows, o, ncol, weight.data(), true, g.data(), false, &mut gcols, 0.0);
        Tensor::new(si, col2vol(&gcols, &geom)).expect("shape")
    });
    let gw = need_weight.then(|| {
        let cols = vol2col(input.data(), &geom);
        let mut gw = vec![0.0; o * rows];
        gemm(o, ncol, rows, g.data(), false, &cols, true, &mut gw, 0.0);
        Tensor::new(weight.shape(), gw).expect("shape")
    });
    (gi, gw)
}
