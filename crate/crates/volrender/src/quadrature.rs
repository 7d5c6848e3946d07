//! Emission-absorption quadrature, on plain values and as graph ops.

use diffcore::{shape_err, CustomOp, Graph, Result, Tensor, Var};

/// Per-sample weights `T_i alpha_i` with `alpha_i = 1 - exp(-sigma_i delta_i)`.
pub fn sample_weights(sigma: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut acc = 0.0f64;
    sigma
        .iter()
        .zip(delta)
        .map(|(&s, &d)| {
            let before = (-acc).exp();
            acc += s * d;
            before - (-acc).exp()
        })
        .collect()
}

/// `(sum_i T_i alpha_i c_i, sum_i T_i alpha_i)` for per-sample features `c_i`.
pub fn integrate(sigma: &[f64], color: &[Vec<f64>], delta: &[f64]) -> (Vec<f64>, f64) {
    let w = sample_weights(sigma, delta);
    let dim = color.first().map_or(0, Vec::len);
    let mut feat = vec![0.0; dim];
    for (wi, c) in w.iter().zip(color) {
        for (f, v) in feat.iter_mut().zip(c) {
            *f += wi * v;
        }
    }
    (feat, w.iter().sum())
}

struct RenderWeights {
    delta: Tensor,
}

impl CustomOp for RenderWeights {
    fn name(&self) -> &'static str {
        "render_weights"
    }

    // w_i = e^{-S_i} - e^{-S_{i+1}} with S_i = sum_{j<i} sigma_j delta_j, so
    // dL/dsigma_k = delta_k (g_k e^{-S_{k+1}} - sum_{i>k} g_i w_i).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape()[1];
        let mut out = vec![0.0; inputs[0].len()];
        for (r, ((sig, d), (w, g))) in inputs[0]
            .data()
            .chunks(s)
            .zip(self.delta.data().chunks(s))
            .zip(output.data().chunks(s).zip(grad.data().chunks(s)))
            .enumerate()
        {
            let mut acc = 0.0f64;
            let after: Vec<f64> = sig
                .iter()
                .zip(d)
                .map(|(&si, &di)| {
                    acc += si * di;
                    (-acc).exp()
                })
                .collect();
            let mut tail = 0.0;
            for k in (0..s).rev() {
                out[r * s + k] = d[k] * (g[k] * after[k] - tail);
                tail += g[k] * w[k];
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), out).expect("same shape"))]
    }
}

/// `sigma: [B, S]` to quadrature weights `[B, S]`; `delta` is constant.
pub fn render_weights(g: &mut Graph, sigma: Var, delta: Tensor) -> Result<Var> {
    let s = g.shape(sigma).to_vec();
    if s.len() != 2 || delta.shape() != s.as_slice() {
        return Err(shape_err("render_weights", format!("sigma and delta [B, S], delta {:?}", delta.shape()), &s));
    }
    let mut out = Vec::with_capacity(delta.len());
    for (sig, d) in g.value(sigma).data().chunks(s[1]).zip(delta.data().chunks(s[1])) {
        out.extend(sample_weights(sig, d));
    }
    let value = Tensor::new(&s, out)?;
    Ok(g.custom(&[sigma], value, Box::new(RenderWeights { delta })))
}

struct WeightedSum;

impl CustomOp for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (w, x) = (inputs[0], inputs[1]);
        let s = w.shape()[1];
        let c = x.shape()[1];
        let mut gw = vec![0.0; w.len()];
        let mut gx = vec![0.0; x.len()];
        for (bs, &wv) in w.data().iter().enumerate() {
            let b = bs / s;
            let go = &grad.data()[b * c..(b + 1) * c];
            let row = &x.data()[bs * c..(bs + 1) * c];
            gw[bs] = go.iter().zip(row).map(|(a, b)| a * b).sum();
            for (o, &gv) in gx[bs * c..(bs + 1) * c].iter_mut().zip(go) {
                *o = wv * gv;
            }
        }
        vec![
            Some(Tensor::new(w.shape(), gw).expect("same shape")),
            Some(Tensor::new(x.shape(), gx).expect("same shape")),
        ]
    }
}

/// `out[b, c] = sum_s w[b, s] x[b * S + s, c]` for `w: [B, S]`, `x: [B * S, C]`.
pub fn weighted_sum(g: &mut Graph, w: Var, x: Var) -> Result<Var> {
    let (sw, sx) = (g.shape(w).to_vec(), g.shape(x).to_vec());
    if sw.len() != 2 || sx.len() != 2 || sx[0] != sw[0] * sw[1] {
        return Err(shape_err("weighted_sum", format!("x [{} * {}, C]", sw[0], sw.get(1).unwrap_or(&0)), &sx));
    }
    let (b, s, c) = (sw[0], sw[1], sx[1]);
    let mut out = vec![0.0; b * c];
    let (wd, xd) = (g.value(w).data(), g.value(x).data());
    for (bs, &wv) in wd.iter().enumerate() {
        let o = &mut out[(bs / s) * c..(bs / s + 1) * c];
        for (ov, xv) in o.iter_mut().zip(&xd[bs * c..(bs + 1) * c]) {
            *ov += wv * xv;
        }
    }
    let value = Tensor::new(&[b, c], out)?;
    Ok(g.custom(&[w, x], value, Box::new(WeightedSum)))
}

struct Transpose;

fn transpose_data(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(&[c, r], out).expect("transposed shape")
}

impl CustomOp for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(transpose_data(grad))]
    }
}

/// Matrix transpose `[R, C] -> [C, R]`.
pub fn transpose(g: &mut Graph, x: Var) -> Result<Var> {
    if g.shape(x).len() != 2 {
        return Err(shape_err("transpose", "rank 2", g.shape(x)));
    }
    let value = transpose_data(g.value(x));
    Ok(g.custom(&[x], value, Box::new(Transpose)))
}
