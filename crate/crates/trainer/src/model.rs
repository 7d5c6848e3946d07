//! The full avatar: plane generators, field decoder, weight volume, per-frame
//! embeddings, translator and discriminator, all in one parameter store.

use diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use faceproxy::{Camera, HeadPose};
use motionwarp::{Rigid, Warp, WeightField, WeightVolumeGenerator};
use nalgebra::{Matrix3, Vector3};
use neuraltranslate::{Discriminator, TranslatorConfig, TranslatorNet, UpsampleHead};
use planegen::{ConditionMode, EmbeddingCondition, EmbeddingTable, FrameCondition, PlaneConfig, PlaneModel};
use radiancefield::{FieldConfig, PosEncConfig, RadianceField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volrender::{gen_rays, render_rays, NeuralField, RayBounds, RenderConfig, SamplerConfig, Scene};

use crate::config::{Config, TranslatorMode};
use crate::error::Result;

pub const DISC_PREFIX: &str = "disc.";
pub const TRANSLATOR_PREFIX: &str = "translator.";
const INIT_SALT: u64 = 0x696e_6974;
/// Rays per graph when rendering whole frames without gradients.
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub enum Translator {
    None,
    Unet(TranslatorNet),
    Upsample(UpsampleHead),
}

/// Which embedding a frame uses.
#[derive(Clone, Debug, PartialEq)]
pub enum Gamma {
    /// Learned row of a training frame.
    Row(usize),
    /// A fixed code, normally the mean row.
    Fixed(Tensor),
}

#[derive(Clone, Debug)]
pub struct Avatar {
    pub cfg: Config,
    pub expressions: usize,
    pub store: ParamStore,
    pub planes: Option<PlaneModel>,
    pub field: RadianceField,
    pub weights: WeightVolumeGenerator,
    pub embeddings: EmbeddingTable,
    pub translator: Translator,
    pub disc: Option<Discriminator>,
}

/// Per-frame inputs on a graph.
#[derive(Clone, Copy, Debug)]
pub struct FrameInputs {
    pub planes: Option<(Var, Var)>,
    pub extra: Option<Var>,
    pub scene: Scene,
}

/// The same inputs as plain values, for gradient-free rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameValues {
    pub planes: Option<(Tensor, Tensor)>,
    pub extra: Option<Tensor>,
    pub volume: Tensor,
    pub warp: Warp,
}

/// Values of a gradient-free render: `rgb [3, H, W]`, `mask [1, H, W]`,
/// `feature [C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub rgb: Tensor,
    pub mask: Tensor,
    pub feature: Tensor,
}

impl Avatar {
    pub fn new(cfg: &Config, expressions: usize, train_frames: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SALT);
        let mut store = ParamStore::new();
        let expr_mlp = cfg.condition_mode == ConditionMode::ExprMlp;
        let planes = if expr_mlp {
            None
        } else {
            let pc = PlaneConfig {
                resolution: cfg.plane_resolution,
                channels: cfg.plane_channels,
                embed_dim: cfg.embed_dim,
                style_dim: cfg.style_dim,
                expressions,
                mode: cfg.condition_mode,
                embedding: cfg.embedding_condition,
            };
            Some(PlaneModel::new(&mut store, &pc, &mut rng)?)
        };
        let extra_dim = if expr_mlp {
            expressions + cfg.embed_dim
        } else if cfg.embedding_condition == EmbeddingCondition::DecoderInput {
            cfg.embed_dim
        } else {
            0
        };
        let fc = FieldConfig {
            plane_channels: if expr_mlp { 0 } else { cfg.plane_channels },
            extra_dim,
            hidden: if expr_mlp { cfg.expr_mlp_hidden.clone() } else { cfg.field_hidden.clone() },
            color_channels: cfg.color_channels,
            posenc: PosEncConfig {
                bands: cfg.posenc_bands,
                include_raw: true,
            },
            density_scale: cfg.density_scale,
            ..FieldConfig::default()
        };
        let field = RadianceField::new(&mut store, &fc, &mut rng)?;
        let weights = WeightVolumeGenerator::new(&mut store, &mut rng)?;
        let embeddings = EmbeddingTable::new(&mut store, train_frames, cfg.embed_dim, &mut rng)?;
        let translator = match cfg.translator {
            TranslatorMode::Off => Translator::None,
            TranslatorMode::Upsample => Translator::Upsample(UpsampleHead::new(
                &mut store,
                cfg.color_channels,
                cfg.translator_upscale,
                &mut rng,
            )?),
            TranslatorMode::Unet | TranslatorMode::Separate => {
                let tc = TranslatorConfig {
                    in_channels: cfg.color_channels,
                    width: cfg.translator_width,
                    upscale: cfg.translator_upscale,
                };
                Translator::Unet(TranslatorNet::new(&mut store, &tc, &mut rng)?)
            }
        };
        let disc = match cfg.translator {
            TranslatorMode::Off => None,
            _ => Some(Discriminator::standard(&mut store, cfg.image_size, &mut rng)?),
        };
        Ok(Self {
            cfg: cfg.clone(),
            expressions,
            store,
            planes,
            field,
            weights,
            embeddings,
            translator,
            disc,
        })
    }

    pub fn torso(&self) -> Rigid {
        Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::from(self.cfg.torso_translation),
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            sampler: SamplerConfig {
                n_coarse: self.cfg.n_coarse,
                n_fine: self.cfg.n_fine,
                jitter: self.cfg.jitter,
                seed: self.cfg.seed,
            },
            bounds: RayBounds::default(),
            background: self.cfg.background,
        }
    }

    pub fn is_disc(&self, id: ParamId) -> bool {
        self.store.name(id).starts_with(DISC_PREFIX)
    }

    pub fn is_translator(&self, id: ParamId) -> bool {
        self.store.name(id).starts_with(TRANSLATOR_PREFIX)
    }

    pub fn mean_gamma(&self) -> Gamma {
        Gamma::Fixed(self.embeddings.mean_row(&self.store))
    }

    pub fn gamma(&self, g: &mut Graph, gamma: &Gamma) -> Result<Var> {
        Ok(match gamma {
            Gamma::Row(r) => self.embeddings.row(g, &self.store, *r)?,
            Gamma::Fixed(t) => g.constant(t.clone()),
        })
    }

    /// Planes, decoder extras and warp for one frame, tracked `pose`.
    pub fn frame_inputs(&self, g: &mut Graph, gamma: &Gamma, cond: &FrameCondition, pose: &HeadPose) -> Result<FrameInputs> {
        let gv = self.gamma(g, gamma)?;
        let planes = match &self.planes {
            Some(p) => {
                let fp = p.planes(g, &self.store, gv, cond)?;
                Some((fp.front, fp.side))
            }
            None => None,
        };
        let extra = if self.planes.is_none() {
            let d = g.constant(Tensor::vector(cond.delta.clone()));
            Some(g.concat(&[d, gv], 0)?)
        } else if self.cfg.embedding_condition == EmbeddingCondition::DecoderInput {
            Some(gv)
        } else {
            None
        };
        let volume = self.weights.generate(g, &self.store)?;
        Ok(FrameInputs {
            planes,
            extra,
            scene: Scene {
                weights: WeightField::Volume(volume),
                warp: Warp::new(pose, self.torso()),
            },
        })
    }

    pub fn neural_field<'a>(&'a self, inputs: &FrameInputs) -> NeuralField<'a> {
        NeuralField {
            field: &self.field,
            store: &self.store,
            planes: inputs.planes,
            extra: inputs.extra,
        }
    }

    pub fn frame_values(&self, gamma: &Gamma, cond: &FrameCondition, pose: &HeadPose) -> Result<FrameValues> {
        let mut g = Graph::new();
        let inp = self.frame_inputs(&mut g, gamma, cond, pose)?;
        let WeightField::Volume(vol) = inp.scene.weights else {
            unreachable!("frame inputs always carry a volume")
        };
        Ok(FrameValues {
            planes: inp.planes.map(|(f, s)| (g.value(f).clone(), g.value(s).clone())),
            extra: inp.extra.map(|e| g.value(e).clone()),
            volume: g.value(vol).clone(),
            warp: inp.scene.warp,
        })
    }

    /// Render every pixel of `camera` without gradients, in ray chunks.
    /// Pixels use the same ray ids as a single-graph frame render.
    pub fn render(&self, fv: &FrameValues, camera: &Camera) -> Result<Rendered> {
        let rays = gen_rays(camera, RayBounds::default());
        let rcfg = self.render_config();
        let n = rays.len();
        let c = self.cfg.color_channels;
        let mut rgb = vec![0.0; 3 * n];
        let mut feature = vec![0.0; c * n];
        let mut mask = vec![0.0; n];
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut g = Graph::new();
            let planes = fv
                .planes
                .as_ref()
                .map(|(f, s)| (g.constant(f.clone()), g.constant(s.clone())));
            let extra = fv.extra.as_ref().map(|e| g.constant(e.clone()));
            let vol = g.constant(fv.volume.clone());
            let field = NeuralField {
                field: &self.field,
                store: &self.store,
                planes,
                extra,
            };
            let scene = Scene {
                weights: WeightField::Volume(vol),
                warp: fv.warp,
            };
            let ids: Vec<u64> = (start as u64..end as u64).collect();
            let batch = render_rays(&mut g, &field, &scene, &rays[start..end], &ids, &rcfg)?;
            let (bc, bf, ba) = (g.value(batch.rgb), g.value(batch.feature), g.value(batch.alpha));
            for (k, p) in (start..end).enumerate() {
                for ch in 0..3 {
                    rgb[ch * n + p] = bc.data()[k * 3 + ch];
                }
                for ch in 0..c {
                    feature[ch * n + p] = bf.data()[k * c + ch];
                }
                mask[p] = ba.data()[k];
            }
        }
        let (h, w) = (camera.height, camera.width);
        Ok(Rendered {
            rgb: Tensor::new(&[3, h, w], rgb)?,
            mask: Tensor::new(&[1, h, w], mask)?,
            feature: Tensor::new(&[c, h, w], feature)?,
        })
    }
}
