//! Inference on a trained avatar: evaluation, reenactment, rendering and
//! mesh extraction.

use std::path::Path;

use diffcore::{Graph, Tensor};
use faceproxy::{BlendshapeModel, Camera, HeadPose, Image};
use neuraltranslate::upsample_image;
use planegen::FrameCondition;
use radiancefield::{extract_mesh_from_grid, TriMesh};

use crate::config::Config;
use crate::data::{condition, FrameData, TrainingData};
use crate::error::{Error, Result};
use crate::metrics::{mask_iou, psnr, FrameMetrics, MetricsReport};
use crate::model::{Gamma, Translator};
use crate::train::{translate, Trainer};

/// Final image and silhouette at the camera's resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rgb: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "test" => Some(Self::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

/// Whether predictions go through the translator: only once stage 2 ran.
pub fn uses_translator(tr: &Trainer) -> bool {
    tr.stage >= 2 && tr.avatar.translator != Translator::None
}

pub fn predict(tr: &Trainer, gamma: &Gamma, cond: &FrameCondition, pose: &HeadPose, camera: &Camera) -> Result<Prediction> {
    let av = &tr.avatar;
    let fv = av.frame_values(gamma, cond, pose)?;
    if !uses_translator(tr) {
        let r = av.render(&fv, camera)?;
        return Ok(Prediction { rgb: r.rgb, mask: r.mask });
    }
    let res = av.cfg.render_resolution;
    let r = av.render(&fv, &camera.resized(res, res))?;
    let mut g = Graph::new();
    let f = g.constant(r.feature);
    let rgb = translate(av, &mut g, f)?;
    let rgb = g.value(rgb).clone();
    let k = camera.width / res;
    Ok(Prediction {
        rgb,
        mask: upsample_image(&r.mask, k),
    })
}

/// Training frames use their own embedding row, held-out frames the mean.
pub fn frame_gamma(tr: &Trainer, frame: &FrameData) -> Gamma {
    match frame.row {
        Some(r) => Gamma::Row(r),
        None => tr.avatar.mean_gamma(),
    }
}

pub fn evaluate(tr: &Trainer, data: &TrainingData, split: Split) -> Result<MetricsReport> {
    let frames = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    if frames.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", split.name())));
    }
    let mut out = Vec::new();
    let mut masks = Vec::new();
    for f in frames {
        let gamma = frame_gamma(tr, f);
        for (c, view) in f.views.iter().enumerate() {
            let p = predict(tr, &gamma, &f.cond, &f.pose, &view.camera)?;
            out.push(FrameMetrics {
                frame: f.index,
                camera: c,
                psnr: psnr(&p.rgb, &view.rgb),
                iou: mask_iou(&p.mask, &view.mask),
                perceptual: tr.perceptual.distance_values(&p.rgb, &view.rgb)?,
            });
            if c == 0 {
                masks.push(p.mask);
            }
        }
    }
    Ok(MetricsReport::new(split.name(), out, &masks))
}

/// Mean PSNR of predicting every frame of `split` by the mean training image.
pub fn mean_image_baseline(data: &TrainingData, split: Split) -> f64 {
    let means = data.mean_train_images();
    let frames = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let mut total = 0.0;
    let mut n = 0;
    for f in frames {
        for (c, view) in f.views.iter().enumerate() {
            total += psnr(&means[c], &view.rgb);
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Driving rows of `expressions` coefficients followed by the six pose
/// values (axis-angle, translation). Blank lines and `#` comments are skipped.
pub fn parse_driving(text: &str, expressions: usize, origin: &Path) -> Result<Vec<(Vec<f64>, HeadPose)>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), ln + 1)))?;
        if vals.len() != expressions + 6 {
            return Err(Error::Config(format!(
                "{}:{}: expected {expressions} expression coefficients and 6 pose values, got {} values",
                origin.display(),
                ln + 1,
                vals.len()
            )));
        }
        let pose = HeadPose::from_slice(&vals[expressions..])?;
        rows.push((vals[..expressions].to_vec(), pose));
    }
    Ok(rows)
}

/// Render each `(delta, pose)` row with the mean embedding and fixed torso.
pub fn reenact(
    tr: &Trainer,
    model: &BlendshapeModel,
    rows: &[(Vec<f64>, HeadPose)],
    camera: &Camera,
) -> Result<Vec<Prediction>> {
    let cfg: &Config = &tr.avatar.cfg;
    let gamma = tr.avatar.mean_gamma();
    rows.iter()
        .map(|(delta, pose)| {
            if delta.len() != model.num_expressions() {
                return Err(Error::Config(format!(
                    "driving row has {} expression coefficients, the model {}",
                    delta.len(),
                    model.num_expressions()
                )));
            }
            let cond = condition(cfg, model, delta, pose)?;
            predict(tr, &gamma, &cond, pose, camera)
        })
        .collect()
}

/// Canonical density on an `n^3` grid over the box for one frame's planes.
pub fn density_grid(tr: &Trainer, gamma: &Gamma, cond: &FrameCondition, n: usize) -> Result<Vec<f64>> {
    let av = &tr.avatar;
    let fv = av.frame_values(gamma, cond, &HeadPose::identity())?;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1).max(1) as f64;
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push([coord(i), coord(j), coord(k)]);
            }
        }
    }
    let mut out = Vec::with_capacity(pts.len());
    for chunk in pts.chunks(4096) {
        let mut g = Graph::new();
        let planes = fv
            .planes
            .as_ref()
            .map(|(f, s)| (g.constant(f.clone()), g.constant(s.clone())));
        let extra = fv.extra.as_ref().map(|e| g.constant(e.clone()));
        let x = g.constant(Tensor::new(&[chunk.len(), 3], chunk.iter().flatten().copied().collect())?);
        let s = av.field.query(&mut g, &av.store, planes, extra, x)?;
        out.extend_from_slice(g.value(s.sigma).data());
    }
    Ok(out)
}

pub fn extract_mesh(tr: &Trainer, gamma: &Gamma, cond: &FrameCondition, n: usize, iso: f64) -> Result<TriMesh> {
    let grid = density_grid(tr, gamma, cond, n)?;
    Ok(extract_mesh_from_grid(&grid, n, iso)?)
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    let img = Image {
        channels: s[0],
        height: s[1],
        width: s[2],
        data: t.data().to_vec(),
    };
    Ok(img.save_png(path)?)
}
