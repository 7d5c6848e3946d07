use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::Camera;
use crate::error::{format_err, io_err, FaceError, Result};
use crate::kv::{format_floats, KvFile};
use crate::mesh::{apply_pose, cuboid, vertex_normals, Mesh, Vec3};
use crate::model::{deform_mesh, BlendshapeModel};
use crate::pose::HeadPose;
use crate::raster::{rasterize_perspective, Frame, Lighting};

/// Static torso box below the head.
pub const TORSO_LO: [f64; 3] = [-0.55, -1.0, -0.35];
pub const TORSO_HI: [f64; 3] = [0.55, -0.45, 0.35];
const TORSO_COLOR: [f64; 3] = [0.25, 0.4, 0.7];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub train_frames: usize,
    pub test_frames: usize,
    pub cameras: usize,
    pub image_size: usize,
    pub expressions: usize,
    /// Training coefficients stay within this bound.
    pub expr_amplitude: f64,
    /// Held-out frames draw coefficients uniformly from +-this bound.
    pub test_expr_amplitude: f64,
    /// Yaw bound in radians; pitch and roll use fixed fractions of it.
    pub pose_amplitude: f64,
    pub test_pose_amplitude: f64,
    pub translation_amplitude: f64,
    pub sigma_delta: f64,
    pub sigma_pose: f64,
    pub background: f64,
    pub camera_distance: f64,
    /// Yaw between neighboring cameras, radians.
    pub camera_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_frames: 200,
            test_frames: 20,
            cameras: 1,
            image_size: 64,
            expressions: 8,
            expr_amplitude: 1.0,
            test_expr_amplitude: 1.0,
            pose_amplitude: 0.3,
            test_pose_amplitude: 0.3,
            translation_amplitude: 0.04,
            sigma_delta: 0.0,
            sigma_pose: 0.0,
            background: 0.5,
            camera_distance: 3.2,
            camera_spread: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    /// Tracked (possibly noisy) parameters used for conditioning.
    pub delta: Vec<f64>,
    pub pose: HeadPose,
    pub delta_clean: Vec<f64>,
    pub pose_clean: HeadPose,
    pub images: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Canonical frame of the scene: the posed head plus the static torso.
pub fn scene_mesh(model: &BlendshapeModel, delta: &[f64], pose: &HeadPose) -> Result<(Mesh, Vec<Vec3>)> {
    let head = apply_pose(&deform_mesh(model, delta)?, pose);
    let torso = cuboid(Vec3::from(TORSO_LO), Vec3::from(TORSO_HI), Vec3::from(TORSO_COLOR));
    let mut normals = vertex_normals(&head).normals;
    normals.extend(vertex_normals(&torso).normals);
    let mut mesh = head;
    mesh.append(&torso);
    Ok((mesh, normals))
}

pub fn render_scene(
    model: &BlendshapeModel,
    delta: &[f64],
    pose: &HeadPose,
    camera: &Camera,
    background: f64,
) -> Result<Frame> {
    let (mesh, normals) = scene_mesh(model, delta, pose)?;
    Ok(rasterize_perspective(&mesh, &normals, camera, &Lighting::default(), [background; 3]))
}

/// Cameras on a horizontal arc around the head, alternating sides.
pub fn rig(cfg: &SynthConfig) -> Result<Vec<Camera>> {
    // The canonical box [-1, 1]^3 should fill most of the frame.
    let focal = cfg.image_size as f64 / 2.0 * (cfg.camera_distance - 0.2) / 1.05;
    (0..cfg.cameras)
        .map(|i| {
            let step = i.div_ceil(2) as f64 * if i % 2 == 1 { 1.0 } else { -1.0 };
            let yaw = step * cfg.camera_spread;
            let eye = Vec3::new(yaw.sin(), 0.0, yaw.cos()) * cfg.camera_distance;
            Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::y(),
                focal,
                (cfg.image_size, cfg.image_size),
            )
        })
        .collect()
}

struct Trajectory {
    freq: Vec<[f64; 2]>,
    phase: Vec<[f64; 2]>,
}

impl Trajectory {
    fn new(dims: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut freq = Vec::new();
        let mut phase = Vec::new();
        for _ in 0..dims {
            freq.push([rng.random_range(0.05..0.15), rng.random_range(0.15..0.4)]);
            phase.push([rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)]);
        }
        Self { freq, phase }
    }

    /// Values in [-1, 1].
    fn at(&self, t: f64) -> Vec<f64> {
        self.freq
            .iter()
            .zip(&self.phase)
            .map(|(f, p)| 0.6 * (f[0] * t + p[0]).sin() + 0.4 * (f[1] * t + p[1]).sin())
            .collect()
    }
}

fn pose_from_unit(u: &[f64], rot: f64, trans: f64) -> Result<HeadPose> {
    HeadPose::new(
        Vector3::new(0.5 * rot * u[0], rot * u[1], 0.4 * rot * u[2]),
        Vector3::new(trans * u[3], trans * u[4], trans * u[5]),
    )
}

/// Clean per-frame parameters: smooth trajectories for training frames,
/// independent uniform draws for held-out frames.
pub fn frame_params(cfg: &SynthConfig, seed: u64) -> Result<Vec<(Vec<f64>, HeadPose, Split)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65);
    let expr = Trajectory::new(cfg.expressions, &mut rng);
    let pose = Trajectory::new(6, &mut rng);
    let mut out = Vec::with_capacity(cfg.train_frames + cfg.test_frames);
    for t in 0..cfg.train_frames {
        let d = expr.at(t as f64).iter().map(|v| v * cfg.expr_amplitude).collect();
        let p = pose_from_unit(&pose.at(t as f64), cfg.pose_amplitude, cfg.translation_amplitude)?;
        out.push((d, p, Split::Train));
    }
    for _ in 0..cfg.test_frames {
        let a = cfg.test_expr_amplitude;
        let d = (0..cfg.expressions).map(|_| rng.random_range(-a..=a)).collect();
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let p = pose_from_unit(&u, cfg.test_pose_amplitude, cfg.translation_amplitude)?;
        out.push((d, p, Split::Test));
    }
    Ok(out)
}

fn add_noise(v: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    v.iter().map(|x| x + n.sample(rng)).collect()
}

pub fn image_path(root: &Path, cam: usize, frame: usize) -> PathBuf {
    root.join(format!("cam{cam}")).join(format!("frame{frame}.png"))
}

pub fn mask_path(root: &Path, cam: usize, frame: usize) -> PathBuf {
    root.join(format!("cam{cam}")).join(format!("mask{frame}.png"))
}

pub fn params_path(root: &Path, frame: usize) -> PathBuf {
    root.join("params").join(format!("frame{frame}.txt"))
}

/// Write a complete dataset under `root`. Deterministic for a given seed.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64, root: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.expr_amplitude) || cfg.image_size == 0 || cfg.cameras == 0 {
        return Err(FaceError::Invalid(format!("synth config {cfg:?}")));
    }
    let model = BlendshapeModel::synthetic(cfg.expressions, seed);
    let cams = rig(cfg)?;
    for i in 0..cams.len() {
        let dir = root.join(format!("cam{i}"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let pdir = root.join("params");
    std::fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
    model.write(&root.join("model.bin"))?;
    write_cameras(&root.join("cameras.txt"), &cams)?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973);
    let mut split = String::new();
    for (t, (delta, pose, which)) in frame_params(cfg, seed)?.into_iter().enumerate() {
        let delta_noisy = add_noise(&delta, cfg.sigma_delta, &mut noise_rng);
        let pose_noisy = HeadPose::from_slice(&add_noise(&pose.to_array(), cfg.sigma_pose, &mut noise_rng))?;
        let text = format!(
            "delta = {}\ndelta_noisy = {}\npose_clean = {}\npose_noisy = {}\n",
            format_floats(&delta),
            format_floats(&delta_noisy),
            format_floats(&pose.to_array()),
            format_floats(&pose_noisy.to_array()),
        );
        let pp = params_path(root, t);
        std::fs::write(&pp, text).map_err(io_err(&pp))?;
        for (c, cam) in cams.iter().enumerate() {
            let frame = render_scene(&model, &delta, &pose, cam, cfg.background)?;
            save_frame(&frame, &image_path(root, c, t), &mask_path(root, c, t))?;
        }
        let tag = if which == Split::Train { "train" } else { "test" };
        split.push_str(&format!("{tag} {t}\n"));
    }
    let sp = root.join("split.txt");
    std::fs::write(&sp, split).map_err(io_err(&sp))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_frame(frame: &Frame, rgb_path: &Path, mask_path: &Path) -> Result<()> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    let rgb: Vec<u8> = frame.rgb.iter().flat_map(|p| p.map(to_u8)).collect();
    image::RgbImage::from_raw(w, h, rgb)
        .expect("buffer size")
        .save(rgb_path)
        .map_err(|source| FaceError::Image {
            path: rgb_path.into(),
            source,
        })?;
    let m: Vec<u8> = frame.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(w, h, m)
        .expect("buffer size")
        .save(mask_path)
        .map_err(|source| FaceError::Image {
            path: mask_path.into(),
            source,
        })
}

pub fn write_cameras(path: &Path, cams: &[Camera]) -> Result<()> {
    let text: String = cams
        .iter()
        .enumerate()
        .map(|(i, c)| format!("cam{i} = {}\n", format_floats(&c.to_values())))
        .collect();
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let kv = KvFile::read(path)?;
    let mut cams = Vec::new();
    while let Some(v) = kv.get(&format!("cam{}", cams.len())) {
        let vals = crate::kv::parse_floats(v).ok_or_else(|| format_err(path, "bad camera values"))?;
        cams.push(Camera::from_values(&vals)?);
    }
    if cams.is_empty() || cams.len() != kv.entries.len() {
        return Err(format_err(path, "cameras must be cam0..camN-1"));
    }
    Ok(cams)
}

/// Parse one params file into `(delta, delta_noisy, pose_clean, pose_noisy)`.
pub fn read_params(path: &Path) -> Result<(Vec<f64>, Vec<f64>, HeadPose, HeadPose)> {
    let kv = KvFile::read(path)?;
    let delta = kv.floats("delta", path)?;
    let noisy = kv.floats("delta_noisy", path)?;
    if noisy.len() != delta.len() {
        return Err(format_err(path, "delta and delta_noisy differ in length"));
    }
    let pc = HeadPose::from_slice(&kv.floats("pose_clean", path)?)?;
    let pn = HeadPose::from_slice(&kv.floats("pose_noisy", path)?)?;
    Ok((delta, noisy, pc, pn))
}
