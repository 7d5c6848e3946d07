//! Finite-difference checks of every differentiable stage of the model,
//! at double precision with step 1e-5 and relative tolerance 1e-4.

use diffcore::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamId, ParamStore, Result, Tensor, Var};
use faceproxy::{Camera, HeadPose, Vec3};
use motionwarp::{blend_weight, warp_to_canonical, Rigid, Warp, WeightField, WeightVolumeGenerator};
use nalgebra::Vector3;
use neuraltranslate::{discriminator_loss, generator_loss, iwt_op, Discriminator, PerceptualLite, TranslatorConfig, TranslatorNet};
use planegen::{ConditionMode, EmbeddingCondition, FrameCondition, PlaneConfig, PlaneModel};
use radiancefield::{FieldConfig, PosEncConfig, RadianceField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volrender::{gen_rays, render_rays, render_weights, weighted_sum, NeuralField, RayBounds, RenderConfig, SamplerConfig, Scene};

use crate::config::Config;
use crate::train::nerf_loss;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn line(&self) -> String {
        let checked: usize = self.report.inputs.iter().map(|c| c.checked).sum();
        format!(
            "{:<8} {:<34} max rel err {:.2e} over {} entries{}{}",
            if self.passed() { "ok" } else { "FAILED" },
            self.name,
            self.report.max_rel_error(),
            checked,
            match self.report.kinks() {
                0 => String::new(),
                k => format!(", {k} kinks skipped"),
            },
            self.report.error.as_ref().map(|e| format!(", error: {e}")).unwrap_or_default()
        )
    }
}

pub fn check_config() -> GradCheckConfig {
    GradCheckConfig {
        eps: 1e-5,
        tol: 1e-4,
        ..GradCheckConfig::default()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random linear read-out so that every output entry matters.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let w = Tensor::uniform(g.shape(x), 1.0, &mut rng(seed));
    let p = g.mul_const(x, w)?;
    Ok(g.sum(p))
}

fn run(
    out: &mut Vec<CheckResult>,
    name: &str,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
) {
    let report = grad_check(f, inputs, &check_config());
    out.push(CheckResult {
        name: name.into(),
        report,
    });
}

/// Check one parameter by binding a graph input in its place.
fn run_param(
    out: &mut Vec<CheckResult>,
    name: &str,
    store: &ParamStore,
    id: ParamId,
    f: impl Fn(&mut Graph) -> Result<Var>,
) {
    run(
        out,
        &format!("{name} [{}]", store.name(id)),
        |g, v| {
            g.bind(id, v[0]);
            f(g)
        },
        &[store.get(id).clone()],
    );
}

fn small_planes(mode: ConditionMode) -> PlaneConfig {
    PlaneConfig {
        resolution: 8,
        channels: 3,
        embed_dim: 4,
        style_dim: 6,
        expressions: 3,
        mode,
        embedding: EmbeddingCondition::Modulate,
    }
}

pub fn run_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut r = rng(11);

    run(
        &mut out,
        "modulated conv (demodulated)",
        |g, v| {
            let y = g.modulated_conv2d(v[0], v[1], v[2], true)?;
            project(g, y, 1)
        },
        &[
            Tensor::uniform(&[3, 6, 6], 1.0, &mut r),
            Tensor::uniform(&[4, 3, 3, 3], 1.0, &mut r),
            Tensor::uniform(&[3], 1.0, &mut r).map(|s| s + 1.5),
        ],
    );

    let mut store = ParamStore::new();
    let pm = PlaneModel::new(&mut store, &small_planes(ConditionMode::Renderings), &mut r).expect("plane model");
    let cond = FrameCondition {
        renderings: Some((
            Tensor::uniform(&[7, 8, 8], 1.0, &mut r),
            Tensor::uniform(&[14, 8, 8], 1.0, &mut r),
        )),
        delta: vec![0.2, -0.1, 0.4],
        pose: [0.1, -0.2, 0.05, 0.01, 0.0, -0.02],
    };
    let planes_out = |g: &mut Graph, gamma: Var| -> Result<Var> {
        let p = pm.planes(g, &store, gamma, &cond)?;
        let a = project(g, p.front, 2)?;
        let b = project(g, p.side, 3)?;
        g.add(a, b)
    };
    let gamma0 = Tensor::uniform(&[4], 1.0, &mut r);
    run(&mut out, "plane generators wrt embedding", |g, v| planes_out(g, v[0]), &[gamma0.clone()]);
    for id in [pm.front.decoder[1].weight, pm.mapping.mlp.layers[0].weight, pm.side.encoder[0].weight] {
        run_param(&mut out, "plane generators", &store, id, |g| {
            let gm = g.constant(gamma0.clone());
            planes_out(g, gm)
        });
    }

    let uv = Tensor::new(&[6, 2], (0..12).map(|_| r.random_range(0.05..0.95)).collect()).expect("uv");
    run(
        &mut out,
        "bilinear plane sampler",
        |g, v| {
            let y = g.bilinear(v[0], v[1])?;
            project(g, y, 4)
        },
        &[Tensor::uniform(&[3, 5, 5], 1.0, &mut r), uv],
    );
    let pts: Vec<[f64; 3]> = (0..10)
        .map(|_| std::array::from_fn(|_| r.random_range(-0.95..0.95)))
        .collect();
    run(
        &mut out,
        "trilinear volume sampler",
        |g, v| {
            let y = g.trilinear(v[0], &pts, -1.0, 1.0)?;
            project(g, y, 5)
        },
        &[Tensor::uniform(&[4, 4, 4], 1.0, &mut r)],
    );

    let mut fstore = ParamStore::new();
    let fc = FieldConfig {
        plane_channels: 3,
        extra_dim: 2,
        hidden: vec![8, 8],
        color_channels: 4,
        posenc: PosEncConfig {
            bands: 3,
            include_raw: true,
        },
        ..FieldConfig::default()
    };
    let field = RadianceField::new(&mut fstore, &fc, &mut r).expect("field");
    let decode = |g: &mut Graph, planes: (Var, Var), extra: Var, x: Var| -> Result<Var> {
        let s = field.query(g, &fstore, Some(planes), Some(extra), x)?;
        let rgb = field.feature_to_rgb(g, &fstore, s.color)?;
        let a = project(g, s.sigma, 6)?;
        let b = project(g, rgb, 7)?;
        g.add(a, b)
    };
    let field_inputs = [
        Tensor::uniform(&[3, 5, 5], 1.0, &mut r),
        Tensor::uniform(&[3, 5, 5], 1.0, &mut r),
        Tensor::uniform(&[2], 1.0, &mut r),
        Tensor::uniform(&[6, 3], 0.9, &mut r),
    ];
    run(
        &mut out,
        "field decoder wrt planes, extra, x",
        |g, v| decode(g, (v[0], v[1]), v[2], v[3]),
        &field_inputs,
    );
    for id in [field.decoder.layers[0].weight, field.decoder.layers[2].bias, field.rgb_head.weight] {
        run_param(&mut out, "field decoder", &fstore, id, |g| {
            let c: Vec<Var> = field_inputs.iter().map(|t| g.constant(t.clone())).collect();
            decode(g, (c[0], c[1]), c[2], c[3])
        });
    }

    let pose = HeadPose::new(Vector3::new(0.15, -0.3, 0.1), Vector3::new(0.05, -0.02, 0.03)).expect("pose");
    let warp = Warp::new(
        &pose,
        Rigid {
            translation: Vector3::new(0.0, -0.01, 0.02),
            ..Rigid::identity()
        },
    );
    let wpts: Vec<[f64; 3]> = (0..12)
        .map(|_| std::array::from_fn(|_| r.random_range(-0.8..0.8)))
        .collect();
    run(
        &mut out,
        "blend weight and canonical warp",
        |g, v| {
            let w = blend_weight(g, WeightField::Volume(v[0]), &wpts, &warp)?;
            let x = warp_to_canonical(g, &wpts, w, &warp)?;
            let a = project(g, w, 8)?;
            let b = project(g, x, 9)?;
            g.add(a, b)
        },
        &[Tensor::uniform(&[5, 5, 5], 0.5, &mut r).map(|v| v + 0.5)],
    );
    let mut wstore = ParamStore::new();
    let wgen = WeightVolumeGenerator::new(&mut wstore, &mut r).expect("weight volume");
    for id in [wgen.blocks[2].weight, wgen.head.bias] {
        run_param(&mut out, "weight volume generator", &wstore, id, |g| {
            let vol = wgen.generate(g, &wstore)?;
            let w = blend_weight(g, WeightField::Volume(vol), &wpts, &warp)?;
            project(g, w, 10)
        });
    }

    let delta = Tensor::uniform(&[3, 5], 0.2, &mut r).map(|v| v.abs() + 0.05);
    run(
        &mut out,
        "volume rendering quadrature",
        |g, v| {
            let sig = g.softplus(v[0]);
            let w = render_weights(g, sig, delta.clone())?;
            let f = weighted_sum(g, w, v[1])?;
            let a = project(g, w, 11)?;
            let b = project(g, f, 12)?;
            g.add(a, b)
        },
        &[Tensor::uniform(&[3, 5], 2.0, &mut r), Tensor::uniform(&[15, 2], 1.0, &mut r)],
    );

    let cam = Camera::look_at(
        Vec3::new(0.3, 0.1, 3.0),
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        6.0,
        (4, 4),
    )
    .expect("camera");
    let rays = gen_rays(&cam, RayBounds::default());
    let ids: Vec<u64> = (0..rays.len() as u64).collect();
    let rcfg = RenderConfig {
        sampler: SamplerConfig {
            n_coarse: 6,
            n_fine: 0,
            jitter: true,
            seed: 3,
        },
        bounds: RayBounds::default(),
        background: 0.5,
    };
    run(
        &mut out,
        "ray rendering wrt planes and weights",
        |g, v| {
            let nf = NeuralField {
                field: &field,
                store: &fstore,
                planes: Some((v[0], v[1])),
                extra: Some(v[2]),
            };
            let scene = Scene {
                weights: WeightField::Volume(v[3]),
                warp,
            };
            let b = render_rays(g, &nf, &scene, &rays, &ids, &rcfg)?;
            let x = project(g, b.rgb, 13)?;
            let y = project(g, b.alpha, 14)?;
            let z = project(g, b.feature, 15)?;
            let xy = g.add(x, y)?;
            g.add(xy, z)
        },
        &[
            field_inputs[0].clone(),
            field_inputs[1].clone(),
            field_inputs[2].clone(),
            Tensor::uniform(&[4, 4, 4], 0.5, &mut r).map(|v| v + 0.5),
        ],
    );
    let cfg = Config::default();
    let targets = (Tensor::uniform(&[5, 3], 0.5, &mut r).map(|v| v + 0.5), Tensor::vector(vec![0.0, 1.0, 0.3, 0.9, 0.5]));
    run(
        &mut out,
        "ray loss (MSE + BCE + penalty)",
        |g, v| {
            let rgb = g.sigmoid(v[0]);
            let alpha = g.sigmoid(v[1]);
            let sq = g.square(v[2]);
            let emb = g.mean(sq);
            Ok(nerf_loss(g, &cfg, rgb, alpha, &targets.0, &targets.1, emb)?.total)
        },
        &[
            Tensor::uniform(&[5, 3], 1.0, &mut r),
            Tensor::uniform(&[5], 2.0, &mut r),
            Tensor::uniform(&[2, 3], 1.0, &mut r),
        ],
    );

    run(
        &mut out,
        "inverse Haar transform",
        |g, v| {
            let y = iwt_op(g, v[0])?;
            project(g, y, 16)
        },
        &[Tensor::uniform(&[12, 3, 3], 1.0, &mut r)],
    );
    let mut tstore = ParamStore::new();
    let tc = TranslatorConfig {
        in_channels: 3,
        width: 4,
        upscale: 2,
    };
    let net = TranslatorNet::new(&mut tstore, &tc, &mut r).expect("translator");
    let feat = Tensor::uniform(&[3, 4, 4], 1.0, &mut r);
    run(
        &mut out,
        "translator wrt features",
        |g, v| {
            let y = net.forward(g, &tstore, v[0])?;
            project(g, y, 17)
        },
        std::slice::from_ref(&feat),
    );
    for id in [net.enc[0].weight, net.wavelet_head.weight, net.rgb_heads[0].bias] {
        run_param(&mut out, "translator", &tstore, id, |g| {
            let x = g.constant(feat.clone());
            let y = net.forward(g, &tstore, x)?;
            project(g, y, 17)
        });
    }
    let perceptual = PerceptualLite::new(5);
    let other = Tensor::uniform(&[3, 8, 8], 0.5, &mut r).map(|v| v + 0.5);
    run(
        &mut out,
        "perceptual_lite distance",
        |g, v| {
            let b = g.constant(other.clone());
            perceptual.distance(g, v[0], b)
        },
        &[Tensor::uniform(&[3, 8, 8], 0.5, &mut r).map(|v| v + 0.5)],
    );

    let mut dstore = ParamStore::new();
    let disc = Discriminator::new(&mut dstore, 8, &[4, 4], &mut r).expect("discriminator");
    let real = Tensor::uniform(&[3, 8, 8], 1.0, &mut r);
    let fake = Tensor::uniform(&[3, 8, 8], 1.0, &mut r);
    run(
        &mut out,
        "generator adversarial loss",
        |g, v| generator_loss(g, &dstore, &disc, &[v[0]]),
        std::slice::from_ref(&fake),
    );
    for id in [disc.convs[0].weight, disc.convs[1].bias, disc.head.weight] {
        run_param(&mut out, "discriminator loss with R1", &dstore, id, |g| {
            let l = discriminator_loss(g, &dstore, &disc, std::slice::from_ref(&real), std::slice::from_ref(&fake), 10.0)?;
            Ok(l.total)
        });
    }
    out
}
