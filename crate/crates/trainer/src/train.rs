//! Stage 1 fits the field from ray batches against pixel colors and
//! silhouettes; stage 2 renders whole feature maps, translates them to
//! images and trains adversarially, alternating generator and discriminator
//! steps.

use std::fmt::Write as _;
use std::path::PathBuf;

use diffcore::{Adam, AdamConfig, Graph, ParamId, Tensor, Var};
use neuraltranslate::{discriminator_loss, generator_loss, PerceptualLite};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volrender::{gen_rays, render_rays, transpose, RayBounds};

use crate::config::{Config, TranslatorMode};
use crate::data::{FrameData, TrainingData};
use crate::error::{Error, Result};
use crate::model::{Avatar, Gamma, Translator};

const TRAIN_SALT: u64 = 0x7472_6169;
/// Pixels within this many steps of the silhouette count as foreground.
const FOREGROUND_DILATION: usize = 2;
/// Seed of the frozen perceptual_lite feature extractor.
pub const PERCEPTUAL_SEED: u64 = 7;

/// Loss values of one iteration; terms a stage does not use stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRecord {
    pub stage: u32,
    pub iteration: u64,
    pub total: f64,
    pub rgb: f64,
    pub mask: f64,
    pub emb: f64,
    pub recon: f64,
    pub percep: f64,
    pub adv: f64,
    pub disc: f64,
    pub r1: f64,
}

impl LossRecord {
    pub const HEADER: &'static str = "stage\titeration\ttotal\trgb\tmask\temb\trecon\tpercep\tadv\tdisc\tr1";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.stage,
            self.iteration,
            self.total,
            self.rgb,
            self.mask,
            self.emb,
            self.recon,
            self.percep,
            self.adv,
            self.disc,
            self.r1
        )
    }
}

/// Graph nodes of the ray-batch objective.
#[derive(Clone, Copy, Debug)]
pub struct NerfLoss {
    pub total: Var,
    pub rgb: Var,
    pub mask: Var,
    pub emb: Var,
}

/// `lambda_rgb * MSE(rgb) + lambda_mask * BCE(alpha) + lambda_emb * penalty`.
pub fn nerf_loss(
    g: &mut Graph,
    cfg: &Config,
    rgb: Var,
    alpha: Var,
    target_rgb: &Tensor,
    target_mask: &Tensor,
    emb: Var,
) -> diffcore::Result<NerfLoss> {
    let l_rgb = g.mse(rgb, target_rgb)?;
    let l_mask = g.bce(alpha, target_mask)?;
    let a = g.scale(l_rgb, cfg.lambda_rgb);
    let b = g.scale(l_mask, cfg.lambda_mask);
    let c = g.scale(emb, cfg.lambda_emb);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(NerfLoss {
        total,
        rgb: l_rgb,
        mask: l_mask,
        emb,
    })
}

pub struct Trainer {
    pub avatar: Avatar,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: ChaCha8Rng,
    /// Highest stage that has run.
    pub stage: u32,
    pub iteration: u64,
    pub perceptual: PerceptualLite,
    /// Where a failing batch is described before aborting.
    pub dump_dir: Option<PathBuf>,
}

fn adam(lr: f64) -> Adam {
    Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    })
}

impl Trainer {
    pub fn new(avatar: Avatar) -> Self {
        let cfg = &avatar.cfg;
        let mut opt_g = adam(cfg.lr);
        for id in avatar.store.ids() {
            if avatar.is_translator(id) {
                opt_g.set_lr(id, cfg.lr_translator);
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT);
        Self {
            opt_d: adam(cfg.lr),
            opt_g,
            rng,
            stage: 0,
            iteration: 0,
            perceptual: PerceptualLite::new(PERCEPTUAL_SEED),
            dump_dir: None,
            avatar,
        }
    }

    pub fn for_data(cfg: &Config, data: &TrainingData) -> Result<Self> {
        Ok(Self::new(Avatar::new(cfg, data.expressions(), data.train.len())?))
    }

    pub fn cfg(&self) -> &Config {
        &self.avatar.cfg
    }

    /// Run `iters` iterations of `stage`, reporting each loss record.
    pub fn run(
        &mut self,
        data: &TrainingData,
        stage: u32,
        iters: usize,
        mut report: impl FnMut(&LossRecord),
    ) -> Result<()> {
        if data.train.len() != self.avatar.embeddings.frames {
            return Err(Error::Config(format!(
                "checkpoint has {} embedding rows but the dataset {} training frames",
                self.avatar.embeddings.frames,
                data.train.len()
            )));
        }
        if data.expressions() != self.avatar.expressions {
            return Err(Error::Config(format!(
                "checkpoint expects {} expression coefficients, dataset has {}",
                self.avatar.expressions,
                data.expressions()
            )));
        }
        self.stage = self.stage.max(stage);
        for k in 0..iters {
            self.set_lr_fraction(self.cfg().lr_decay.powf(k as f64 / iters as f64));
            let rec = match stage {
                1 => self.stage1_step(data)?,
                _ => self.stage2_step(data)?,
            };
            report(&rec);
        }
        Ok(())
    }

    /// Scale every learning rate to `frac` of its configured value.
    pub fn set_lr_fraction(&mut self, frac: f64) {
        let (lr, lr_t) = (self.cfg().lr * frac, self.cfg().lr_translator * frac);
        for id in self.avatar.store.ids() {
            if self.avatar.is_translator(id) {
                self.opt_g.set_lr(id, lr_t);
            } else {
                self.opt_g.set_lr(id, lr);
                self.opt_d.set_lr(id, lr);
            }
        }
    }

    fn pick(&mut self, data: &TrainingData) -> (usize, usize) {
        let f = self.rng.random_range(0..data.train.len());
        let c = self.rng.random_range(0..data.train[f].views.len());
        (f, c)
    }

    fn apply_generator(&mut self, grads: Vec<(ParamId, Tensor)>, only_translator: bool) {
        let keep: Vec<(ParamId, Tensor)> = grads
            .into_iter()
            .filter(|(id, _)| !self.avatar.is_disc(*id) && (!only_translator || self.avatar.is_translator(*id)))
            .collect();
        self.opt_g.step(&mut self.avatar.store, &keep);
    }

    fn check(&self, rec: &LossRecord, describe: impl FnOnce() -> String) -> Result<()> {
        let vals = [rec.total, rec.rgb, rec.mask, rec.emb, rec.recon, rec.percep, rec.adv, rec.disc, rec.r1];
        if vals.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        let mut msg = format!("stage {} iteration {}: {}\n", rec.stage, rec.iteration, LossRecord::HEADER);
        msg.push_str(&rec.tsv());
        msg.push('\n');
        msg.push_str(&describe());
        if let Some(dir) = &self.dump_dir {
            let path = dir.join(format!("nonfinite_{}.txt", rec.iteration));
            std::fs::write(&path, &msg).map_err(|e| Error::io(&path, e))?;
            return Err(Error::NonFinite(format!(
                "stage {} iteration {}; batch written to {}",
                rec.stage,
                rec.iteration,
                path.display()
            )));
        }
        Err(Error::NonFinite(msg))
    }

    /// `b` distinct pixels: `foreground_fraction` of them from the dilated
    /// silhouette, the rest uniformly from the remaining pixels.
    fn sample_pixels(&mut self, mask: &Tensor, b: usize) -> Vec<usize> {
        let hw = mask.len();
        let fg = dilate(mask, FOREGROUND_DILATION);
        let inside: Vec<usize> = (0..hw).filter(|&p| fg[p]).collect();
        let n_in = ((self.cfg().foreground_fraction * b as f64).round() as usize).min(inside.len());
        let mut pixels: Vec<usize> = index::sample(&mut self.rng, inside.len(), n_in).iter().map(|i| inside[i]).collect();
        let mut taken = vec![false; hw];
        for &p in &pixels {
            taken[p] = true;
        }
        let rest: Vec<usize> = (0..hw).filter(|&p| !taken[p]).collect();
        pixels.extend(index::sample(&mut self.rng, rest.len(), b - n_in).iter().map(|i| rest[i]));
        pixels
    }

    /// One random training frame and camera, `rays_per_batch` random pixels.
    pub fn stage1_step(&mut self, data: &TrainingData) -> Result<LossRecord> {
        let (fi, ci) = self.pick(data);
        let frame: &FrameData = &data.train[fi];
        let view = &frame.views[ci];
        let hw = view.camera.width * view.camera.height;
        let b = self.cfg().rays_per_batch.min(hw);
        let pixels = self.sample_pixels(&view.mask, b);
        let all = gen_rays(&view.camera, RayBounds::default());
        let rays: Vec<_> = pixels.iter().map(|&p| all[p]).collect();
        let ids: Vec<u64> = pixels.iter().map(|&p| self.iteration * hw as u64 + p as u64).collect();
        let mut target_rgb = Vec::with_capacity(3 * b);
        for &p in &pixels {
            target_rgb.extend((0..3).map(|c| view.rgb.data()[c * hw + p]));
        }
        let target_rgb = Tensor::new(&[b, 3], target_rgb)?;
        let target_mask = Tensor::vector(pixels.iter().map(|&p| view.mask.data()[p]).collect());

        let av = &self.avatar;
        let row = frame.row.expect("training frames have rows");
        let mut g = Graph::new();
        let inputs = av.frame_inputs(&mut g, &Gamma::Row(row), &frame.cond, &frame.pose)?;
        let field = av.neural_field(&inputs);
        let batch = render_rays(&mut g, &field, &inputs.scene, &rays, &ids, &av.render_config())?;
        let emb = av.embeddings.penalty(&mut g, &av.store);
        let loss = nerf_loss(&mut g, &av.cfg, batch.rgb, batch.alpha, &target_rgb, &target_mask, emb)?;
        let rec = LossRecord {
            stage: 1,
            iteration: self.iteration,
            total: g.value(loss.total).item(),
            rgb: g.value(loss.rgb).item(),
            mask: g.value(loss.mask).item(),
            emb: g.value(loss.emb).item(),
            ..LossRecord::default()
        };
        self.check(&rec, || {
            let mut s = format!("frame {} camera {ci}\npixel\ttarget_rgb\ttarget_mask\trgb\talpha\n", frame.index);
            let (rgb, alpha) = (g.value(batch.rgb), g.value(batch.alpha));
            for (k, p) in pixels.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{p}\t{:?}\t{:?}\t{:?}\t{:?}",
                    &target_rgb.data()[3 * k..3 * k + 3],
                    target_mask.data()[k],
                    &rgb.data()[3 * k..3 * k + 3],
                    alpha.data()[k]
                );
            }
            s
        })?;
        let grads = g.backward(loss.total)?.params(&g);
        self.apply_generator(grads, false);
        self.iteration += 1;
        Ok(rec)
    }

    /// Whole-frame feature map at the render resolution through the
    /// translator, then one discriminator step.
    pub fn stage2_step(&mut self, data: &TrainingData) -> Result<LossRecord> {
        if self.cfg().translator == TranslatorMode::Off {
            let mut rec = self.stage1_step(data)?;
            rec.stage = 2;
            return Ok(rec);
        }
        let (fi, ci) = self.pick(data);
        let frame: &FrameData = &data.train[fi];
        let view = &frame.views[ci];
        let av = &self.avatar;
        let cfg = &av.cfg;
        let separate = cfg.translator == TranslatorMode::Separate;
        let r = cfg.render_resolution;
        let cam = view.camera.resized(r, r);

        let mut g = Graph::new();
        let row = frame.row.expect("training frames have rows");
        let inputs = av.frame_inputs(&mut g, &Gamma::Row(row), &frame.cond, &frame.pose)?;
        let field = av.neural_field(&inputs);
        let rays = gen_rays(&cam, RayBounds::default());
        let base = self.iteration * (r * r) as u64;
        let ids: Vec<u64> = (0..rays.len() as u64).map(|p| base + p).collect();
        let batch = render_rays(&mut g, &field, &inputs.scene, &rays, &ids, &av.render_config())?;
        let t = transpose(&mut g, batch.feature)?;
        let mut feature = g.reshape(t, &[cfg.color_channels, r, r])?;
        if separate {
            feature = g.constant(g.value(feature).clone());
        }
        let fake = translate(av, &mut g, feature)?;
        let real = g.constant(view.rgb.clone());
        let recon = g.l1(fake, real)?;
        let percep = self.perceptual.distance(&mut g, fake, real)?;
        let disc = av.disc.as_ref().expect("translator modes carry a discriminator");
        let adv = generator_loss(&mut g, &av.store, disc, &[fake])?;
        let a = g.scale(recon, cfg.lambda_recon);
        let b = g.scale(percep, cfg.lambda_percep);
        let c = g.scale(adv, cfg.lambda_adv);
        let ab = g.add(a, b)?;
        let total = g.add(ab, c)?;

        let mut rec = LossRecord {
            stage: 2,
            iteration: self.iteration,
            total: g.value(total).item(),
            recon: g.value(recon).item(),
            percep: g.value(percep).item(),
            adv: g.value(adv).item(),
            ..LossRecord::default()
        };
        self.check(&rec, || format!("frame {} camera {ci}\n", frame.index))?;
        let fake_value = g.value(fake).clone();
        let grads = g.backward(total)?.params(&g);
        drop(g);
        self.apply_generator(grads, separate);

        let av = &self.avatar;
        let disc = av.disc.as_ref().expect("translator modes carry a discriminator");
        let mut gd = Graph::new();
        let dl = discriminator_loss(&mut gd, &av.store, disc, &[view.rgb.clone()], &[fake_value], av.cfg.lambda_r1)?;
        rec.disc = gd.value(dl.total).item();
        rec.r1 = gd.value(dl.r1).item();
        self.check(&rec, || format!("discriminator step, frame {} camera {ci}\n", frame.index))?;
        let dgrads: Vec<(ParamId, Tensor)> = gd
            .backward(dl.total)?
            .params(&gd)
            .into_iter()
            .filter(|(id, _)| av.is_disc(*id))
            .collect();
        self.opt_d.step(&mut self.avatar.store, &dgrads);
        self.iteration += 1;
        Ok(rec)
    }
}

/// Feature map `[C, R, R]` to an RGB image with the configured translator.
pub fn translate(av: &Avatar, g: &mut Graph, feature: Var) -> Result<Var> {
    Ok(match &av.translator {
        Translator::Unet(t) => t.forward(g, &av.store, feature)?,
        Translator::Upsample(u) => u.forward(g, &av.store, feature)?,
        Translator::None => return Err(Error::Config("no translator configured".into())),
    })
}

/// Pixels of a `[1, H, W]` mask within `r` (Chebyshev distance) of a pixel
/// above one half.
fn dilate(mask: &Tensor, r: usize) -> Vec<bool> {
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let on: Vec<bool> = mask.data().iter().map(|&v| v > 0.5).collect();
    let mut rows = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = (j.saturating_sub(r)..(j + r + 1).min(w)).any(|k| on[i * w + k]);
        }
    }
    let mut out = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = (i.saturating_sub(r)..(i + r + 1).min(h)).any(|k| rows[k * w + j]);
        }
    }
    out
}
