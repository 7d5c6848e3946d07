use diffcore::nn::he_bound;
use diffcore::{shape_err, DiffError, Graph, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stand-in perceptual distance: L1 between the activations of a frozen,
/// seeded random conv stack at three scales, averaged over scales. Not a
/// learned perceptual metric.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualLite {
    layers: Vec<(Tensor, usize)>,
}

impl PerceptualLite {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = [(3, 8, 1), (8, 16, 2), (16, 16, 2)];
        let layers = spec
            .iter()
            .map(|&(cin, cout, stride)| {
                let w = Tensor::uniform(&[cout, cin, 3, 3], he_bound(cin * 9, 0.2), &mut rng);
                (w, stride)
            })
            .collect();
        Self { layers }
    }

    fn features(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::new();
        let mut h = x;
        for (w, stride) in &self.layers {
            let wv = g.constant(w.clone());
            let z = g.conv2d(h, wv, *stride, 1)?;
            h = g.leaky_relu(z, 0.2);
            out.push(h);
        }
        Ok(out)
    }

    /// Differentiable distance between two `[3, H, W]` images.
    pub fn distance(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
        if sa != sb || sa.len() != 3 || sa[0] != 3 {
            return Err(shape_err("perceptual_lite", format!("matching [3, H, W], other is {sb:?}"), &sa));
        }
        if sa[1] < 4 || sa[2] < 4 {
            return Err(DiffError::Contract("perceptual_lite needs images of at least 4x4".into()));
        }
        let fa = self.features(g, a)?;
        let fb = self.features(g, b)?;
        let mut terms = Vec::new();
        for (x, y) in fa.into_iter().zip(fb) {
            terms.push(g.l1(x, y)?);
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t)?;
        }
        Ok(g.scale(acc, 1.0 / terms.len() as f64))
    }

    pub fn distance_values(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let d = self.distance(&mut g, av, bv)?;
        Ok(g.value(d).item())
    }
}
