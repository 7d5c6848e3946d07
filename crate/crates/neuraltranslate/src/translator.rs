use diffcore::nn::Conv2d;
use diffcore::{DiffError, Graph, ParamStore, Result, Tensor, Var};
use rand::Rng;

use crate::wavelet::iwt_op;

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorConfig {
    pub in_channels: usize,
    /// Channels of the full-resolution encoder stage; deeper stages double it.
    pub width: usize,
    /// Output resolution over input resolution; a power of two, at least 2.
    pub upscale: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 8,
            width: 16,
            upscale: 2,
        }
    }
}

/// U-shaped feature-to-image network. The decoder emits an RGB image at
/// every scale (accumulated upward), and the last stage predicts Haar
/// sub-bands whose synthesis is added to the accumulated RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorNet {
    pub cfg: TranslatorConfig,
    pub enc: Vec<Conv2d>,
    pub dec: Vec<Conv2d>,
    pub up: Vec<Conv2d>,
    pub rgb_heads: Vec<Conv2d>,
    pub wavelet_head: Conv2d,
}

impl TranslatorNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &TranslatorConfig, rng: &mut R) -> Result<Self> {
        if cfg.upscale < 2 || !cfg.upscale.is_power_of_two() {
            return Err(DiffError::Contract(format!("translator upscale {} is not a power of two >= 2", cfg.upscale)));
        }
        let w = cfg.width;
        let enc_ch = [w, 2 * w, 2 * w];
        let mut enc = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &c) in enc_ch.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            enc.push(Conv2d::new(store, &format!("translator.enc{i}"), (cin, c), 3, stride, rng)?);
            cin = c;
        }
        // decoder at 1/2 then full input resolution, with skips
        let dec = vec![
            Conv2d::new(store, "translator.dec1", (enc_ch[2] + enc_ch[1], 2 * w), 3, 1, rng)?,
            Conv2d::new(store, "translator.dec0", (2 * w + enc_ch[0], w), 3, 1, rng)?,
        ];
        let mut up = Vec::new();
        let mut scale = 1;
        while 2 * scale < cfg.upscale {
            up.push(Conv2d::new(store, &format!("translator.up{}", up.len()), (w, w), 3, 1, rng)?);
            scale *= 2;
        }
        let mut rgb_heads = vec![
            Conv2d::new(store, "translator.rgb1", (2 * w, 3), 1, 1, rng)?,
            Conv2d::new(store, "translator.rgb0", (w, 3), 1, 1, rng)?,
        ];
        for i in 0..up.len() {
            rgb_heads.push(Conv2d::new(store, &format!("translator.rgb_up{i}"), (w, 3), 1, 1, rng)?);
        }
        let wavelet_head = Conv2d::new(store, "translator.wavelet", (w, 12), 1, 1, rng)?;
        // start close to the accumulated RGB path
        let wt = store.get(wavelet_head.weight).scale(0.1);
        store.set(wavelet_head.weight, wt)?;
        Ok(Self {
            cfg: cfg.clone(),
            enc,
            dec,
            up,
            rgb_heads,
            wavelet_head,
        })
    }

    /// `features: [C, R, R]` with `R` divisible by 4, to RGB `[3, kR, kR]` in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let s = g.shape(features).to_vec();
        if s.len() != 3 || s[0] != self.cfg.in_channels || s[1] % 4 != 0 || s[2] % 4 != 0 {
            return Err(diffcore::shape_err("translator", format!("[{}, 4m, 4n]", self.cfg.in_channels), &s));
        }
        let mut skips = Vec::new();
        let mut x = features;
        for conv in &self.enc {
            let y = conv.forward(g, store, x)?;
            x = g.leaky_relu(y, SLOPE);
            skips.push(x);
        }
        let mut rgb: Option<Var> = None;
        let accumulate = |g: &mut Graph, rgb: &mut Option<Var>, head: &Conv2d, x: Var| -> Result<()> {
            let r = head.forward(g, store, x)?;
            *rgb = Some(match *rgb {
                None => r,
                Some(prev) => {
                    let up = g.upsample(prev, 2)?;
                    g.add(up, r)?
                }
            });
            Ok(())
        };
        for (k, conv) in self.dec.iter().enumerate() {
            let up = g.upsample(x, 2)?;
            let cat = g.concat(&[up, skips[1 - k]], 0)?;
            let y = conv.forward(g, store, cat)?;
            x = g.leaky_relu(y, SLOPE);
            accumulate(g, &mut rgb, &self.rgb_heads[k], x)?;
        }
        for (k, conv) in self.up.iter().enumerate() {
            let up = g.upsample(x, 2)?;
            let y = conv.forward(g, store, up)?;
            x = g.leaky_relu(y, SLOPE);
            accumulate(g, &mut rgb, &self.rgb_heads[2 + k], x)?;
        }
        let bands = self.wavelet_head.forward(g, store, x)?;
        let detail = iwt_op(g, bands)?;
        let base = g.upsample(rgb.expect("decoder has stages"), 2)?;
        let out = g.add(base, detail)?;
        Ok(g.sigmoid(out))
    }
}

/// The "upsample only" baseline: nearest upsampling of the feature map and a
/// per-pixel linear map to RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleHead {
    pub head: Conv2d,
    pub upscale: usize,
}

impl UpsampleHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, in_channels: usize, upscale: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            head: Conv2d::new(store, "translator.upsample_head", (in_channels, 3), 1, 1, rng)?,
            upscale,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let up = g.upsample(features, self.upscale)?;
        let y = self.head.forward(g, store, up)?;
        Ok(g.sigmoid(y))
    }
}

/// Nearest upsampling of an image tensor `[C, H, W]` by `k`.
pub fn upsample_image(img: &Tensor, k: usize) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(img.clone());
    let y = g.upsample(x, k).expect("rank-3 image");
    g.value(y).clone()
}
