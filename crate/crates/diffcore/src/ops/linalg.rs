use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::kernels::gemm;
use crate::tensor::Tensor;

impl Graph {
    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(
                "matmul",
                format!("[n, k] x [k, m] with lhs {sa:?}"),
                sb,
            ));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `[n, m] + [m]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(shape_err("add_row_bias", format!("[{}]", sx.get(1).unwrap_or(&0)), sb));
        }
        let m = sx[1];
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// `[c, ...] + [c]` broadcast over the trailing axes.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.is_empty() || sb != [sx[0]] {
            return Err(shape_err("add_channel_bias", format!("[{}]", sx.first().unwrap_or(&0)), sb));
        }
        let c = sx[0];
        let inner = self.value(x).len() / c.max(1);
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for (ch, block) in value.data_mut().chunks_mut(inner.max(1)).enumerate() {
            for v in block.iter_mut() {
                *v += b[ch];
            }
        }
        Ok(self.push(value, Op::AddChannelBias(x, bias), &[x, bias]))
    }

    /// Affine layer `x W + b` for `x: [n, k]`, `W: [k, m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row_bias(y, bias)
    }
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = vec![0.0; n * k];
    gemm(n, m, k, g.data(), false, b.data(), true, &mut ga, 0.0);
    let mut gb = vec![0.0; k * m];
    gemm(k, n, m, a.data(), true, g.data(), false, &mut gb, 0.0);
    (
        Tensor::new(a.shape(), ga).expect("shape"),
        Tensor::new(b.shape(), gb).expect("shape"),
    )
}

pub(crate) fn row_bias_backward(g: &Tensor) -> Tensor {
    let m = g.shape()[1];
    let mut gb = vec![0.0; m];
    for row in g.data().chunks(m.max(1)) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Tensor::vector(gb)
}

pub(crate) fn channel_bias_backward(g: &Tensor) -> Tensor {
    let c = g.shape()[0];
    let inner = g.len() / c.max(1);
    Tensor::vector(
        g.data()
            .chunks(inner.max(1))
            .map(|b| b.iter().sum())
            .collect(),
    )
}
