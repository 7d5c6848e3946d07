//! Image discriminator, non-saturating GAN losses and the R1 penalty.
//!
//! The R1 term needs the discriminator's input gradient as a differentiable
//! function of its weights. [`Discriminator::input_gradient`] builds that
//! gradient explicitly on the graph: the transposed linear head, the
//! leaky-ReLU slopes of the forward pass as constant masks, and transposed
//! convolutions. Leaky-ReLU has zero curvature away from the kink, so this
//! is the exact second-order path.

use diffcore::nn::{Conv2d, Linear};
use diffcore::{shape_err, Graph, ParamStore, Result, Tensor, Var};
use rand::Rng;

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
    pub head: Linear,
    pub image_size: usize,
}

impl Discriminator {
    /// Strided 3x3 conv blocks with the given channel widths, then a linear
    /// head. `image_size` must be divisible by `2^widths.len()`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, image_size: usize, widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in widths.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("disc.conv{i}"), (cin, c), 3, 2, rng)?);
            cin = c;
        }
        let side = image_size >> widths.len();
        if side == 0 || side << widths.len() != image_size {
            return Err(diffcore::DiffError::Contract(format!(
                "discriminator input {image_size} not divisible by 2^{}",
                widths.len()
            )));
        }
        let head = Linear::new(store, "disc.head", cin * side * side, 1, rng)?;
        Ok(Self {
            convs,
            head,
            image_size,
        })
    }

    /// Default desk-scale stack: 16, 32, 64, 64 channels.
    pub fn standard<R: Rng + ?Sized>(store: &mut ParamStore, image_size: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, image_size, &[16, 32, 64, 64], rng)
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape != [3, self.image_size, self.image_size] {
            return Err(shape_err("discriminator", format!("[3, {0}, {0}]", self.image_size), shape));
        }
        Ok(())
    }

    /// Scalar logit for one `[3, S, S]` image.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.check(g.shape(x))?;
        let mut h = x;
        for c in &self.convs {
            let z = c.forward(g, store, h)?;
            h = g.leaky_relu(z, SLOPE);
        }
        let n = g.shape(h).iter().product();
        let flat = g.reshape(h, &[n])?;
        let y = self.head.forward(g, store, flat)?;
        g.reshape(y, &[])
    }

    /// `(logit, dlogit/dx)` for a constant image, both differentiable in the
    /// discriminator weights.
    pub fn input_gradient(&self, g: &mut Graph, store: &ParamStore, x: &Tensor) -> Result<(Var, Var)> {
        self.check(x.shape())?;
        let xv = g.constant(x.clone());
        let mut h = xv;
        let mut masks = Vec::new();
        let mut sizes = Vec::new();
        for c in &self.convs {
            let s = g.shape(h);
            sizes.push((s[1], s[2]));
            let z = c.forward(g, store, h)?;
            masks.push(g.value(z).map(|v| if v > 0.0 { 1.0 } else { SLOPE }));
            h = g.leaky_relu(z, SLOPE);
        }
        let hs = g.shape(h).to_vec();
        let flat = g.reshape(h, &[hs.iter().product()])?;
        let y = self.head.forward(g, store, flat)?;
        let logit = g.reshape(y, &[])?;

        let w = g.param(store, self.head.weight);
        let mut grad = g.reshape(w, &hs)?;
        for ((c, mask), &hw) in self.convs.iter().zip(masks).zip(&sizes).rev() {
            let gz = g.mul_const(grad, mask)?;
            let k = g.param(store, c.weight);
            grad = g.conv_transpose2d(gz, k, c.stride, c.pad, hw)?;
        }
        Ok((logit, grad))
    }
}

fn mean_of(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len() as f64;
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / n))
}

/// `mean softplus(-D(fake))`, differentiable in the fake images.
pub fn generator_loss(g: &mut Graph, store: &ParamStore, disc: &Discriminator, fake: &[Var]) -> Result<Var> {
    if fake.is_empty() {
        return Err(diffcore::DiffError::Contract("empty fake batch".into()));
    }
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        let d = disc.forward(g, store, f)?;
        let nd = g.scale(d, -1.0);
        terms.push(g.softplus(nd));
    }
    mean_of(g, terms)
}

/// Discriminator objective split into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscLoss {
    pub fake: Var,
    pub real: Var,
    pub r1: Var,
    pub total: Var,
}

/// `mean softplus(D(fake)) + mean softplus(-D(real)) + (lambda_r1 / 2) mean |grad D(real)|^2`.
pub fn discriminator_loss(
    g: &mut Graph,
    store: &ParamStore,
    disc: &Discriminator,
    real: &[Tensor],
    fake: &[Tensor],
    lambda_r1: f64,
) -> Result<DiscLoss> {
    if real.is_empty() || fake.is_empty() {
        return Err(diffcore::DiffError::Contract("empty discriminator batch".into()));
    }
    let mut fake_terms = Vec::new();
    for f in fake {
        let x = g.constant(f.clone());
        let d = disc.forward(g, store, x)?;
        fake_terms.push(g.softplus(d));
    }
    let mut real_terms = Vec::new();
    let mut r1_terms = Vec::new();
    for r in real {
        let (d, grad) = disc.input_gradient(g, store, r)?;
        let nd = g.scale(d, -1.0);
        real_terms.push(g.softplus(nd));
        let sq = g.square(grad);
        r1_terms.push(g.sum(sq));
    }
    let fake_l = mean_of(g, fake_terms)?;
    let real_l = mean_of(g, real_terms)?;
    let r1_mean = mean_of(g, r1_terms)?;
    let r1 = g.scale(r1_mean, lambda_r1 / 2.0);
    let fr = g.add(fake_l, real_l)?;
    let total = g.add(fr, r1)?;
    Ok(DiscLoss {
        fake: fake_l,
        real: real_l,
        r1,
        total,
    })
}

/// `(L_G, L_D)` on one graph; `L_G` flows into `fake`, while `L_D` sees
/// detached copies of the fakes.
pub fn adv_losses(
    g: &mut Graph,
    store: &ParamStore,
    disc: &Discriminator,
    real: &[Tensor],
    fake: &[Var],
    lambda_r1: f64,
) -> Result<(Var, DiscLoss)> {
    let lg = generator_loss(g, store, disc, fake)?;
    let detached: Vec<Tensor> = fake.iter().map(|&f| g.value(f).clone()).collect();
    let ld = discriminator_loss(g, store, disc, real, &detached, lambda_r1)?;
    Ok((lg, ld))
}
