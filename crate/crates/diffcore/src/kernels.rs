//! Raw numeric kernels shared by forward and backward passes.

/// `c = alpha * op(a) * op(b) + beta * c` with row-major storage.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the logical extents and
    // strides, so every index the kernel touches lies inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2D convolution over one `C x H x W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

pub(crate) fn im2col(input: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut cols = vec![0.0; g.col_rows() * oh * ow];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
pub(crate) fn col2im(cols: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut out = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Geometry of a stride-1 3D convolution over one `C x D x H x W` volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv3dGeom {
    pub channels: usize,
    pub dims: [usize; 3],
    pub kernel: usize,
    pub pad: usize,
}

impl Conv3dGeom {
    pub fn out_dims(&self) -> [usize; 3] {
        self.dims.map(|d| d + 2 * self.pad + 1 - self.kernel)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel.pow(3)
    }

    pub fn col_cols(&self) -> usize {
        self.out_dims().iter().product()
    }
}

pub(crate) fn vol2col(input: &[f64], g: &Conv3dGeom) -> Vec<f64> {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out_dims();
    let k = g.kernel;
    let ncol = od * oh * ow;
    let mut cols = vec![0.0; g.col_rows() * ncol];
    for c in 0..g.channels {
        let vol = &input[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + kz) * k + ky) * k + kx;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oz in 0..od {
                        let iz = (oz + kz) as isize - g.pad as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[(oz * oh + oy) * ow + ox] =
                                        vol[(iz as usize * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2vol(cols: &[f64], g: &Conv3dGeom) -> Vec<f64> {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out_dims();
    let k = g.kernel;
    let ncol = od * oh * ow;
    let mut out = vec![0.0; g.channels * d * h * w];
    for c in 0..g.channels {
        let vol = &mut out[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + kz) * k + ky) * k + kx;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oz in 0..od {
                        let iz = (oz + kz) as isize - g.pad as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    vol[(iz as usize * h + iy as usize) * w + ix as usize] +=
                                        src[(oz * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Conv2dGeom {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn col2vol_is_adjoint_of_vol2col() {
        let g = Conv3dGeom {
            channels: 2,
            dims: [3, 4, 2],
            kernel: 3,
            pad: 1,
        };
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = vol2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2vol(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
