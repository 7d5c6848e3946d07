pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod loss;
pub mod sample;
pub mod shape;

use crate::graph::{Graph, Node, Op};
use crate::tensor::Tensor;

/// Push the gradient `g` of `node` onto its inputs.
pub(crate) fn backward_node(graph: &Graph, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: crate::Var| graph.value(v);
    let needs = |v: crate::Var| graph.requires_grad(v);
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            graph.accumulate(grads, *a, g.clone());
            graph.accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            graph.accumulate(grads, *a, g.clone());
            graph.accumulate(grads, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                graph.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
            }
            if needs(*b) {
                graph.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
        }
        Op::Div(a, b) => {
            if needs(*a) {
                graph.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x / y));
            }
            if needs(*b) {
                // d(a/b)/db = -(a/b)/b
                let q = node.value.zip_map(val(*b), |o, y| -o / y);
                graph.accumulate(grads, *b, g.zip_map(&q, |x, y| x * y));
            }
        }
        Op::Scale(x, s) => graph.accumulate(grads, *x, g.scale(*s)),
        Op::Offset(x) => graph.accumulate(grads, *x, g.clone()),
        Op::MulConst(x, c) => graph.accumulate(grads, *x, g.zip_map(c, |a, b| a * b)),
        Op::AddRowBias(x, b) => {
            graph.accumulate(grads, *x, g.clone());
            if needs(*b) {
                graph.accumulate(grads, *b, linalg::row_bias_backward(g));
            }
        }
        Op::AddChannelBias(x, b) => {
            graph.accumulate(grads, *x, g.clone());
            if needs(*b) {
                graph.accumulate(grads, *b, linalg::channel_bias_backward(g));
            }
        }
        Op::MatMul(a, b) => {
            let (ga, gb) = linalg::matmul_backward(val(*a), val(*b), g);
            graph.accumulate(grads, *a, ga);
            graph.accumulate(grads, *b, gb);
        }
        Op::Unary(x, f) => {
            graph.accumulate(grads, *x, elementwise::unary_backward(val(*x), &node.value, *f, g));
        }
        Op::Sum(x) => graph.accumulate(grads, *x, Tensor::full(graph.shape(*x), g.item())),
        Op::Mean(x) => {
            let n = val(*x).len().max(1) as f64;
            graph.accumulate(grads, *x, Tensor::full(graph.shape(*x), g.item() / n));
        }
        Op::SumLastAxis(x) => {
            let shape = graph.shape(*x);
            let n = *shape.last().unwrap_or(&1);
            let mut out = Vec::with_capacity(val(*x).len());
            for &gv in g.data() {
                out.extend(std::iter::repeat_n(gv, n));
            }
            graph.accumulate(grads, *x, Tensor::new(shape, out).expect("shape"));
        }
        Op::Reshape(x) => {
            let r = g.clone().reshape(graph.shape(*x)).expect("shape");
            graph.accumulate(grads, *x, r);
        }
        Op::Concat { parts, axis } => {
            for (p, gp) in parts.iter().zip(shape::concat_backward(graph, parts, *axis, g)) {
                graph.accumulate(grads, *p, gp);
            }
        }
        Op::Slice { x, axis, start } => {
            graph.accumulate(grads, *x, shape::slice_backward(graph.shape(*x), *axis, *start, g));
        }
        Op::RepeatRows(x) => graph.accumulate(grads, *x, shape::repeat_rows_backward(g)),
        Op::Conv2d {
            input,
            weight,
            stride,
            pad,
        } => {
            let (gi, gw) =
                conv::conv2d_backward(val(*input), val(*weight), *stride, *pad, g, needs(*input), needs(*weight));
            if let Some(gi) = gi {
                graph.accumulate(grads, *input, gi);
            }
            if let Some(gw) = gw {
                graph.accumulate(grads, *weight, gw);
            }
        }
        Op::ConvTranspose2d {
            input,
            weight,
            stride,
            pad,
        } => {
            let (gi, gw) = conv::conv_transpose2d_backward(
                val(*input),
                val(*weight),
                *stride,
                *pad,
                node.value.shape(),
                g,
                needs(*input),
                needs(*weight),
            );
            if let Some(gi) = gi {
                graph.accumulate(grads, *input, gi);
            }
            if let Some(gw) = gw {
                graph.accumulate(grads, *weight, gw);
            }
        }
        Op::Conv3d { input, weight, pad } => {
            let (gi, gw) = conv::conv3d_backward(val(*input), val(*weight), *pad, g, needs(*input), needs(*weight));
            if let Some(gi) = gi {
                graph.accumulate(grads, *input, gi);
            }
            if let Some(gw) = gw {
                graph.accumulate(grads, *weight, gw);
            }
        }
        Op::Modulate {
            weight,
            style,
            demodulate,
        } => {
            let (gw, gs) = conv::modulate_backward(val(*weight), val(*style), *demodulate, g);
            graph.accumulate(grads, *weight, gw);
            graph.accumulate(grads, *style, gs);
        }
        Op::Upsample { x, factor } => {
            graph.accumulate(grads, *x, conv::upsample_backward(graph.shape(*x), *factor, g));
        }
        Op::Bilinear { plane, uv } => {
            let (gp, guv) = sample::bilinear_backward(val(*plane), val(*uv), g, needs(*plane), needs(*uv));
            if let Some(gp) = gp {
                graph.accumulate(grads, *plane, gp);
            }
            if let Some(guv) = guv {
                graph.accumulate(grads, *uv, guv);
            }
        }
        Op::Trilinear { volume, cells } => {
            graph.accumulate(grads, *volume, sample::trilinear_backward(graph.shape(*volume), cells, g));
        }
        Op::Bce { pred, target } => {
            graph.accumulate(grads, *pred, loss::bce_backward(val(*pred), target, g.item()));
        }
        Op::Custom { inputs, op } => {
            let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
            let out = op.backward(&values, &node.value, g);
            for (&v, gv) in inputs.iter().zip(out) {
                if let Some(gv) = gv {
                    graph.accumulate(grads, v, gv);
                }
            }
        }
    }
}
