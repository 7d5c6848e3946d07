#![allow(dead_code)]

use std::path::Path;

use headfield::{Config, TrainingData};

/// A dataset and model small enough to train for a few steps in a test.
pub const TINY: &str = "\
image_size = 16
train_frames = 6
test_frames = 2
plane_resolution = 8
plane_channels = 4
embed_dim = 4
style_dim = 8
field_hidden = 16 16
expr_mlp_hidden = 16 16
color_channels = 4
posenc_bands = 3
render_resolution = 8
translator_upscale = 2
translator_width = 4
rays_per_batch = 32
n_coarse = 8
n_fine = 4
stage1_iters = 4
stage2_iters = 2
log_every = 1
";

pub fn tiny_config(data_dir: &Path, extra: &str) -> Config {
    let overridden: Vec<&str> = extra.lines().filter_map(|l| l.split('=').next()).map(str::trim).collect();
    let base: String = TINY
        .lines()
        .filter(|l| !overridden.contains(&l.split('=').next().unwrap_or("").trim()))
        .map(|l| format!("{l}\n"))
        .collect();
    let text = format!("{base}data_dir = {}\n{extra}", data_dir.display());
    Config::parse(&text, Path::new("tiny.txt")).expect("tiny config parses")
}

pub fn tiny_data(dir: &Path, extra: &str) -> (Config, TrainingData) {
    let cfg = tiny_config(dir, extra);
    faceproxy::synth_dataset(&cfg.synth(), cfg.seed, dir).expect("synth");
    let data = TrainingData::load(&cfg).expect("load");
    (cfg, data)
}
