//! Front and side feature planes generated from condition renderings,
//! modulated by a style vector mapped from the per-frame embedding and the
//! head pose.

use diffcore::nn::{he_bound, Conv2d, Linear, Mlp};
use diffcore::{DiffError, Graph, ParamId, ParamStore, Result, Tensor, Var};
use rand::Rng;

/// What drives the plane generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Orthographic renderings of the deformed proxy.
    Renderings,
    /// Expression coefficients tiled into constant input channels.
    VectorPlane,
    /// Expression coefficients fed to the mapping network; coordinate-only input.
    VectorPlaneExprMod,
    /// No planes; coefficients go straight into the decoder MLP.
    ExprMlp,
}

impl ConditionMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "renderings" => Self::Renderings,
            "vector_plane" => Self::VectorPlane,
            "vector_plane_exprmod" => Self::VectorPlaneExprMod,
            "expr_mlp" => Self::ExprMlp,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Renderings => "renderings",
            Self::VectorPlane => "vector_plane",
            Self::VectorPlaneExprMod => "vector_plane_exprmod",
            Self::ExprMlp => "expr_mlp",
        }
    }
}

/// Where the per-frame embedding enters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingCondition {
    /// Through the mapping network into the modulation styles.
    Modulate,
    /// Appended to the point decoder's input; the mapping network sees zeros.
    DecoderInput,
}

impl EmbeddingCondition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "modulate" => Some(Self::Modulate),
            "decoder_input" => Some(Self::DecoderInput),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Modulate => "modulate",
            Self::DecoderInput => "decoder_input",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneConfig {
    pub resolution: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub style_dim: usize,
    pub expressions: usize,
    pub mode: ConditionMode,
    pub embedding: EmbeddingCondition,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            channels: 16,
            embed_dim: 16,
            style_dim: 32,
            expressions: 8,
            mode: ConditionMode::Renderings,
            embedding: EmbeddingCondition::Modulate,
        }
    }
}

pub const ENCODER_CHANNELS: [usize; 3] = [16, 32, 64];
const SLOPE: f64 = 0.2;

/// Learnable per-training-frame codes, `[frames, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub frames: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, frames: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let id = store.add("embedding.table", Tensor::randn(&[frames, dim], 0.1, rng))?;
        Ok(Self { id, frames, dim })
    }

    pub fn row(&self, g: &mut Graph, store: &ParamStore, frame: usize) -> Result<Var> {
        if frame >= self.frames {
            return Err(DiffError::Contract(format!("embedding row {frame} of {}", self.frames)));
        }
        let t = g.param(store, self.id);
        let r = g.slice(t, 0, frame, 1)?;
        g.reshape(r, &[self.dim])
    }

    /// Frozen test-time code: the average row.
    pub fn mean_row(&self, store: &ParamStore) -> Tensor {
        let t = store.get(self.id);
        let mut out = vec![0.0; self.dim];
        for row in t.data().chunks(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::vector(out.into_iter().map(|v| v / self.frames.max(1) as f64).collect())
    }

    /// Mean square of all entries.
    pub fn penalty(&self, g: &mut Graph, store: &ParamStore) -> Var {
        let t = g.param(store, self.id);
        embedding_penalty(g, t)
    }
}

pub fn embedding_penalty(g: &mut Graph, table: Var) -> Var {
    let sq = g.square(table);
    g.mean(sq)
}

/// MLP from `(embedding, pose[, expression])` to the style vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingNetwork {
    pub mlp: Mlp,
    pub embed_dim: usize,
    pub extra_dim: usize,
}

impl MappingNetwork {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        embed_dim: usize,
        extra_dim: usize,
        style_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::new(store, "mapping", &[embed_dim + 6 + extra_dim, 64, 64, style_dim], SLOPE, rng)?;
        Ok(Self {
            mlp,
            embed_dim,
            extra_dim,
        })
    }

    /// `pose` is axis-angle then translation; `extra` carries the expression
    /// coefficients when they modulate.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, gamma: Var, pose: &[f64; 6], extra: &[f64]) -> Result<Var> {
        if g.shape(gamma) != [self.embed_dim] || extra.len() != self.extra_dim {
            return Err(diffcore::DiffError::Shape {
                op: "map_latent",
                expected: format!("[{}] embedding and {} extra values", self.embed_dim, self.extra_dim),
                got: g.shape(gamma).to_vec(),
            });
        }
        let mut rest = pose.to_vec();
        rest.extend_from_slice(extra);
        let rest = g.constant(Tensor::vector(rest));
        let x = g.concat(&[gamma, rest], 0)?;
        self.mlp.forward(g, store, x)
    }
}

/// 3x3 convolution whose kernel is modulated per input channel by an affine
/// map of the style vector, then demodulated.
#[derive(Clone, Debug, PartialEq)]
pub struct ModConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub affine: Linear,
}

impl ModConv {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        (cin, cout): (usize, usize),
        style_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), Tensor::randn(&[cout, cin, 3, 3], 1.0, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        // styles start near 1 so the first steps see an unmodulated kernel
        let aw = Tensor::uniform(&[style_dim, cin], 0.25 * he_bound(style_dim, SLOPE), rng);
        let affine = Linear::with_values(store, &format!("{name}.affine"), aw, Tensor::ones(&[cin]))?;
        Ok(Self { weight, bias, affine })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, w_s: Var) -> Result<Var> {
        let style = self.affine.forward(g, store, w_s)?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.modulated_conv2d(x, w, style, true)?;
        let y = g.add_channel_bias(y, b)?;
        Ok(g.leaky_relu(y, SLOPE))
    }
}

/// Encoder at R, R/2, R/4 whose features are concatenated into a modulated
/// decoder at matching resolutions, ending in a 1x1 head.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGenerator {
    pub in_channels: usize,
    pub resolution: usize,
    pub encoder: [Conv2d; 3],
    pub decoder: [ModConv; 3],
    pub head: Conv2d,
}

impl PlaneGenerator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        cfg: &PlaneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.resolution % 4 != 0 || cfg.resolution == 0 {
            return Err(DiffError::Contract(format!("plane resolution {} must be a multiple of 4", cfg.resolution)));
        }
        let [c1, c2, c3] = ENCODER_CHANNELS;
        let encoder = [
            Conv2d::new(store, &format!("{name}.enc0"), (in_channels, c1), 3, 1, rng)?,
            Conv2d::new(store, &format!("{name}.enc1"), (c1, c2), 3, 2, rng)?,
            Conv2d::new(store, &format!("{name}.enc2"), (c2, c3), 3, 2, rng)?,
        ];
        let decoder = [
            ModConv::new(store, &format!("{name}.dec0"), (c3, c3), cfg.style_dim, rng)?,
            ModConv::new(store, &format!("{name}.dec1"), (c3 + c2, c2), cfg.style_dim, rng)?,
            ModConv::new(store, &format!("{name}.dec2"), (c2 + c1, c1), cfg.style_dim, rng)?,
        ];
        let head = Conv2d::new(store, &format!("{name}.head"), (c1, cfg.channels), 1, 1, rng)?;
        Ok(Self {
            in_channels,
            resolution: cfg.resolution,
            encoder,
            decoder,
            head,
        })
    }

    /// `input` is `[in_channels, R, R]`, `w_s` the style vector.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var, w_s: Var) -> Result<Var> {
        let r = self.resolution;
        if g.shape(input) != [self.in_channels, r, r] {
            return Err(DiffError::Shape {
                op: "plane generator",
                expected: format!("[{}, {r}, {r}]", self.in_channels),
                got: g.shape(input).to_vec(),
            });
        }
        let mut skips = Vec::with_capacity(3);
        let mut h = input;
        for conv in &self.encoder {
            let y = conv.forward(g, store, h)?;
            h = g.leaky_relu(y, SLOPE);
            skips.push(h);
        }
        h = self.decoder[0].forward(g, store, skips[2], w_s)?;
        for (layer, skip) in self.decoder[1..].iter().zip([skips[1], skips[0]]) {
            let up = g.upsample(h, 2)?;
            let cat = g.concat(&[up, skip], 0)?;
            h = layer.forward(g, store, cat, w_s)?;
        }
        self.head.forward(g, store, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeaturePlanes {
    pub front: Var,
    pub side: Var,
}

/// Per-frame inputs to plane generation.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCondition {
    /// `(front 7xRxR, side 14xRxR)` stacks; required in rendering mode.
    pub renderings: Option<(Tensor, Tensor)>,
    pub delta: Vec<f64>,
    pub pose: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneModel {
    pub cfg: PlaneConfig,
    pub mapping: MappingNetwork,
    pub front: PlaneGenerator,
    pub side: PlaneGenerator,
}

impl PlaneModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &PlaneConfig, rng: &mut R) -> Result<Self> {
        let (front_in, side_in, extra) = match cfg.mode {
            ConditionMode::Renderings => (7, 14, 0),
            ConditionMode::VectorPlane => (cfg.expressions + 2, cfg.expressions + 2, 0),
            ConditionMode::VectorPlaneExprMod => (2, 2, cfg.expressions),
            ConditionMode::ExprMlp => {
                return Err(DiffError::Contract("expr_mlp mode has no plane generators".into()))
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            mapping: MappingNetwork::new(store, cfg.embed_dim, extra, cfg.style_dim, rng)?,
            front: PlaneGenerator::new(store, "front", front_in, cfg, rng)?,
            side: PlaneGenerator::new(store, "side", side_in, cfg, rng)?,
        })
    }

    /// Style vector for one frame. In decoder-input mode the embedding is
    /// replaced by zeros here.
    pub fn map_latent(&self, g: &mut Graph, store: &ParamStore, gamma: Var, cond: &FrameCondition) -> Result<Var> {
        let gamma = match self.cfg.embedding {
            EmbeddingCondition::Modulate => gamma,
            EmbeddingCondition::DecoderInput => g.constant(Tensor::zeros(&[self.cfg.embed_dim])),
        };
        let extra: &[f64] = if self.cfg.mode == ConditionMode::VectorPlaneExprMod {
            &cond.delta
        } else {
            &[]
        };
        self.mapping.forward(g, store, gamma, &cond.pose, extra)
    }

    pub fn planes(&self, g: &mut Graph, store: &ParamStore, gamma: Var, cond: &FrameCondition) -> Result<FeaturePlanes> {
        let w_s = self.map_latent(g, store, gamma, cond)?;
        let r = self.cfg.resolution;
        let (front_in, side_in) = match self.cfg.mode {
            ConditionMode::Renderings => {
                let (f, s) = cond
                    .renderings
                    .clone()
                    .ok_or_else(|| DiffError::Contract("rendering condition missing".into()))?;
                let f = f.reshape(&[7, r, r])?;
                let s = s.reshape(&[14, r, r])?;
                (g.constant(f), g.constant(s))
            }
            mode => {
                let t = vector_input(&cond.delta, r, mode == ConditionMode::VectorPlane);
                let v = g.constant(t);
                (v, v)
            }
        };
        Ok(FeaturePlanes {
            front: self.front.forward(g, store, front_in, w_s)?,
            side: self.side.forward(g, store, side_in, w_s)?,
        })
    }
}

/// Latent-only generator input: optional tiled coefficients followed by the
/// horizontal and vertical pixel-center coordinates in [-1, 1].
pub fn vector_input(delta: &[f64], resolution: usize, tile_delta: bool) -> Tensor {
    let n = resolution * resolution;
    let mut data = Vec::new();
    if tile_delta {
        for &d in delta {
            data.extend(std::iter::repeat_n(d, n));
        }
    }
    let coord = |i: usize| -1.0 + (i as f64 + 0.5) * 2.0 / resolution as f64;
    data.extend((0..n).map(|k| coord(k % resolution)));
    data.extend((0..n).map(|k| -coord(k / resolution)));
    let c = data.len() / n;
    Tensor::new(&[c, resolution, resolution], data).expect("sizes match")
}
