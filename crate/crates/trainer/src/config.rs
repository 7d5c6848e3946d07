//! Line-based `key = value` configuration. Every key has a default; unknown
//! keys are rejected. [`Config::to_text`] writes every key and parses back
//! to the same config.

use std::path::{Path, PathBuf};

use faceproxy::kv::{format_floats, parse_floats, KvFile};
use faceproxy::SynthConfig;
use orthorender::RenderPose;
use planegen::{ConditionMode, EmbeddingCondition};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslatorMode {
    /// Joint U-Net translator with wavelet output.
    Unet,
    /// Nearest upsampling plus a per-pixel linear map (baseline).
    Upsample,
    /// U-Net trained on frozen stage-1 renders (baseline).
    Separate,
    /// No translator; stage 2 continues stage-1 training.
    Off,
}

trait Value: Sized {
    fn parse(s: &str) -> Option<Self>;
    fn show(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "on" | "true" => Some(true),
            "off" | "false" => Some(false),
            _ => None,
        }
    }
    fn show(&self) -> String {
        (if *self { "on" } else { "off" }).into()
    }
}

impl Value for PathBuf {
    fn parse(s: &str) -> Option<Self> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> Option<Self> {
        let v: Option<Vec<usize>> = s.split_whitespace().map(|t| t.parse().ok()).collect();
        v.filter(|v| !v.is_empty())
    }
    fn show(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    }
}

impl Value for [f64; 3] {
    fn parse(s: &str) -> Option<Self> {
        parse_floats(s)?.try_into().ok()
    }
    fn show(&self) -> String {
        format_floats(self)
    }
}

impl Value for ConditionMode {
    fn parse(s: &str) -> Option<Self> {
        ConditionMode::parse(s)
    }
    fn show(&self) -> String {
        self.name().into()
    }
}

impl Value for EmbeddingCondition {
    fn parse(s: &str) -> Option<Self> {
        EmbeddingCondition::parse(s)
    }
    fn show(&self) -> String {
        self.name().into()
    }
}

impl Value for RenderPose {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(RenderPose::Zero),
            "posed" => Some(RenderPose::Posed),
            _ => None,
        }
    }
    fn show(&self) -> String {
        match self {
            RenderPose::Zero => "zero",
            RenderPose::Posed => "posed",
        }
        .into()
    }
}

impl Value for TranslatorMode {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "unet" => Self::Unet,
            "upsample" => Self::Upsample,
            "separate" => Self::Separate,
            "off" => Self::Off,
            _ => return None,
        })
    }
    fn show(&self) -> String {
        match self {
            Self::Unet => "unet",
            Self::Upsample => "upsample",
            Self::Separate => "separate",
            Self::Off => "off",
        }
        .into()
    }
}

macro_rules! config {
    ($($(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> Option<bool> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as Value>::parse(value)?;
                        Some(true)
                    })*
                    _ => Some(false),
                }
            }

            /// Every key with its current value, one per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), Value::show(&self.$key)));)*
                out
            }
        }
    };
}

config! {
    /// Master seed for synthesis, initialization, ray sampling and batching.
    seed: u64 = 0;
    /// Dataset directory used by train, render, reenact and eval.
    data_dir: PathBuf = PathBuf::from("data");

    train_frames: usize = 200;
    test_frames: usize = 20;
    cameras: usize = 1;
    image_size: usize = 64;
    expressions: usize = 8;
    expr_amplitude: f64 = 1.0;
    test_expr_amplitude: f64 = 1.0;
    pose_amplitude: f64 = 0.3;
    test_pose_amplitude: f64 = 0.3;
    translation_amplitude: f64 = 0.04;
    sigma_delta: f64 = 0.0;
    sigma_pose: f64 = 0.0;
    /// Gray level of the image background; also the RGB render background.
    background: f64 = 0.5;
    camera_distance: f64 = 3.2;
    camera_spread: f64 = 0.35;

    condition_mode: ConditionMode = ConditionMode::Renderings;
    rendering_pose: RenderPose = RenderPose::Zero;
    texture_channel: bool = true;
    embedding_condition: EmbeddingCondition = EmbeddingCondition::Modulate;
    translator: TranslatorMode = TranslatorMode::Unet;

    plane_resolution: usize = 32;
    plane_channels: usize = 16;
    embed_dim: usize = 16;
    style_dim: usize = 32;
    field_hidden: Vec<usize> = vec![64, 64];
    /// Decoder widths for the expr_mlp ablation.
    expr_mlp_hidden: Vec<usize> = vec![128, 128, 128, 128];
    color_channels: usize = 8;
    posenc_bands: usize = 6;
    density_scale: f64 = 10.0;
    /// Side of the rendered feature map; images are compared at this size in stage 1.
    render_resolution: usize = 32;
    translator_upscale: usize = 2;
    translator_width: usize = 16;
    torso_translation: [f64; 3] = [0.0; 3];

    lambda_rgb: f64 = 1.0;
    lambda_mask: f64 = 0.1;
    lambda_emb: f64 = 1e-3;
    lambda_recon: f64 = 1.0;
    lambda_percep: f64 = 0.1;
    lambda_adv: f64 = 0.05;
    lambda_r1: f64 = 1.0;
    lr: f64 = 2e-3;
    lr_translator: f64 = 1e-3;
    /// Learning rates decay exponentially to this fraction over a stage.
    lr_decay: f64 = 0.1;
    stage1_iters: usize = 12000;
    stage2_iters: usize = 300;
    rays_per_batch: usize = 256;
    /// Share of each ray batch drawn from the dilated silhouette.
    foreground_fraction: f64 = 0.8;
    n_coarse: usize = 32;
    n_fine: usize = 8;
    jitter: bool = true;
    log_every: usize = 100;
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let kv = KvFile::parse(text, origin)?;
        let mut cfg = Self::default();
        for (k, v) in &kv.entries {
            match cfg.set(k, v) {
                Some(true) => {}
                Some(false) => return Err(Error::Config(format!("{}: unknown key `{k}`", origin.display()))),
                None => return Err(Error::Config(format!("{}: bad value `{v}` for `{k}`", origin.display()))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_rgb,
            self.lambda_mask,
            self.lambda_emb,
            self.lambda_recon,
            self.lambda_percep,
            self.lambda_adv,
            self.lambda_r1,
        ];
        let bad = |m: &str| Err(Error::Config(m.into()));
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr_translator > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return bad("foreground_fraction must lie in [0, 1]");
        }
        if self.render_resolution % 4 != 0 || self.render_resolution == 0 {
            return bad("render_resolution must be a positive multiple of 4");
        }
        if self.plane_resolution % 4 != 0 || self.plane_resolution == 0 {
            return bad("plane_resolution must be a positive multiple of 4");
        }
        if self.n_coarse == 0 || self.rays_per_batch == 0 {
            return bad("need at least one coarse sample and one ray per batch");
        }
        if self.image_size % self.render_resolution != 0 {
            return bad("image_size must be a multiple of render_resolution");
        }
        if self.translator != TranslatorMode::Off
            && self.render_resolution * self.translator_upscale != self.image_size
        {
            return bad("render_resolution * translator_upscale must equal image_size");
        }
        if self.cameras == 0 || self.train_frames == 0 {
            return bad("need at least one camera and one training frame");
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            train_frames: self.train_frames,
            test_frames: self.test_frames,
            cameras: self.cameras,
            image_size: self.image_size,
            expressions: self.expressions,
            expr_amplitude: self.expr_amplitude,
            test_expr_amplitude: self.test_expr_amplitude,
            pose_amplitude: self.pose_amplitude,
            test_pose_amplitude: self.test_pose_amplitude,
            translation_amplitude: self.translation_amplitude,
            sigma_delta: self.sigma_delta,
            sigma_pose: self.sigma_pose,
            background: self.background,
            camera_distance: self.camera_distance,
            camera_spread: self.camera_spread,
        }
    }
}
