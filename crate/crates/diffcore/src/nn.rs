//! Parameterized layers registered in a [`ParamStore`].

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Uniform bound for leaky-ReLU networks with the given fan-in.
pub fn he_bound(fan_in: usize, slope: f64) -> f64 {
    (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::uniform(&[inputs, outputs], he_bound(inputs, 0.2), rng);
        Self::with_values(store, name, w, Tensor::zeros(&[outputs]))
    }

    pub fn with_values(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (inputs, outputs) = match weight.shape() {
            &[i, o] if bias.shape() == [o] => (i, o),
            s => return Err(shape_err("linear", "[in, out] weight with [out] bias", s)),
        };
        Ok(Self {
            weight: store.add(format!("{name}.weight"), weight)?,
            bias: store.add(format!("{name}.bias"), bias)?,
            inputs,
            outputs,
        })
    }

    /// `x` is `[n, inputs]` or a single `[inputs]` vector (returns `[outputs]`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        if g.shape(x).len() == 1 {
            let row = g.reshape(x, &[1, self.inputs])?;
            let y = g.linear(row, w, b)?;
            return g.reshape(y, &[self.outputs]);
        }
        g.linear(x, w, b)
    }
}

/// Stack of linear layers with leaky-ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &[usize], slope: f64, rng: &mut R) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, slope })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, store, x)?;
            if i + 1 < self.layers.len() {
                x = g.leaky_relu(x, self.slope);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::uniform(&[cout, cin, kernel, kernel], he_bound(cin * kernel * kernel, 0.2), rng);
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.conv2d(x, w, self.stride, self.pad)?;
        g.add_channel_bias(y, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel * kernel;
        let w = Tensor::uniform(&[cout, cin, kernel, kernel, kernel], he_bound(fan_in, 0.2), rng);
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.conv3d(x, w, self.pad)?;
        g.add_channel_bias(y, b)
    }
}
