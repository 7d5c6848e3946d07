use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "at least one part", &[]));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis < rank {}", base.len()), &base));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("compatible with {base:?}"), s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", format!("axis {axis} range {start}..{}", start + len), &shape));
        }
        let (outer, n, inner) = split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Tile a vector `[d]` into `[n, d]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(shape_err("repeat_rows", "rank 1", s));
        }
        let d = s[0];
        let row = self.value(x).data().to_vec();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let value = Tensor::new(&[n, d], data)?;
        Ok(self.push(value, Op::RepeatRows(x), &[x]))
    }
}

pub(crate) fn concat_backward(
    graph: &Graph,
    parts: &[Var],
    axis: usize,
    g: &Tensor,
) -> Vec<Tensor> {
    let (outer, _, inner) = split(g.shape(), axis);
    let total = g.shape()[axis];
    let mut offset = 0;
    let mut out = Vec::with_capacity(parts.len());
    for &p in parts {
        let shape = graph.shape(p);
        let len = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + offset) * inner;
            data.extend_from_slice(&g.data()[base..base + len * inner]);
        }
        out.push(Tensor::new(shape, data).expect("shape"));
        offset += len;
    }
    out
}

pub(crate) fn slice_backward(src_shape: &[usize], axis: usize, start: usize, g: &Tensor) -> Tensor {
    let (outer, n, inner) = split(src_shape, axis);
    let len = g.shape()[axis];
    let mut data = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    Tensor::new(src_shape, data).expect("shape")
}

pub(crate) fn repeat_rows_backward(g: &Tensor) -> Tensor {
    let d = g.shape()[1];
    let mut acc = vec![0.0; d];
    for row in g.data().chunks(d.max(1)) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::vector(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_slice_invert() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.input(Tensor::new(&[2, 1], vec![5.0, 6.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(s).data(), g.value(b).data());
    }

    #[test]
    fn concat_rejects_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 2]));
        let b = g.input(Tensor::zeros(&[3, 1]));
        assert!(g.concat(&[a, b], 1).is_err());
    }
}
