use diffcore::{CustomOp, Graph, Tensor, Var};

/// Frequency encoding `sin(2^i pi x), cos(2^i pi x)` for `i < bands`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PosEncConfig {
    pub bands: usize,
    pub include_raw: bool,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        Self {
            bands: 6,
            include_raw: true,
        }
    }
}

impl PosEncConfig {
    pub fn dim(&self) -> usize {
        3 * 2 * self.bands + if self.include_raw { 3 } else { 0 }
    }
}

/// Layout: raw `x, y, z` (if enabled), then per band the three sines
/// followed by the three cosines.
pub fn posenc(x: [f64; 3], cfg: &PosEncConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.dim());
    if cfg.include_raw {
        out.extend_from_slice(&x);
    }
    for i in 0..cfg.bands {
        let f = std::f64::consts::PI * (1u64 << i) as f64;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
    out
}

struct PosEncOp {
    cfg: PosEncConfig,
}

impl CustomOp for PosEncOp {
    fn name(&self) -> &'static str {
        "posenc"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let d = self.cfg.dim();
        let mut gx = vec![0.0; x.len()];
        for (p, (xs, gs)) in x.data().chunks(3).zip(grad.data().chunks(d)).enumerate() {
            let mut k = 0;
            if self.cfg.include_raw {
                for a in 0..3 {
                    gx[3 * p + a] += gs[a];
                }
                k = 3;
            }
            for i in 0..self.cfg.bands {
                let f = std::f64::consts::PI * (1u64 << i) as f64;
                for a in 0..3 {
                    let (s, c) = (f * xs[a]).sin_cos();
                    gx[3 * p + a] += f * (c * gs[k + a] - s * gs[k + 3 + a]);
                }
                k += 6;
            }
        }
        vec![Some(Tensor::new(x.shape(), gx).expect("same shape"))]
    }
}

/// `x: [n, 3]` to `[n, dim]`, differentiable in `x`.
pub fn posenc_op(g: &mut Graph, x: Var, cfg: &PosEncConfig) -> Var {
    let xs = g.value(x);
    let n = xs.shape()[0];
    let mut data = Vec::with_capacity(n * cfg.dim());
    for p in xs.data().chunks(3) {
        data.extend(posenc([p[0], p[1], p[2]], cfg));
    }
    let value = Tensor::new(&[n, cfg.dim()], data).expect("sizes match");
    g.custom(&[x], value, Box::new(PosEncOp { cfg: *cfg }))
}
