use std::path::{Path, PathBuf};

use crate::camera::Camera;
use crate::error::{format_err, io_err, FaceError, Result};
use crate::model::BlendshapeModel;
use crate::synth::{image_path, mask_path, params_path, read_cameras, read_params, FrameRecord};

/// Planar image, `channels x height x width`, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn read_rgb(path: &Path) -> Result<Self> {
        let img = open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = p[c] as f64 / 255.0;
            }
        }
        Ok(Self {
            channels: 3,
            width: w,
            height: h,
            data,
        })
    }

    /// Single channel, thresholded at half intensity.
    pub fn read_mask(path: &Path) -> Result<Self> {
        let img = open(path)?.to_luma8();
        Ok(Self {
            channels: 1,
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn pixel(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width, self.height);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w as u32, h as u32, self.data.iter().map(|&v| q(v)).collect())
                .expect("buffer size")
                .save(path),
            3 => {
                let buf = (0..w * h)
                    .flat_map(|i| (0..3).map(move |c| c * w * h + i))
                    .map(|k| q(self.data[k]))
                    .collect();
                image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size").save(path)
            }
            c => return Err(FaceError::Invalid(format!("cannot save {c}-channel image"))),
        };
        res.map_err(|source| FaceError::Image {
            path: path.into(),
            source,
        })
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| FaceError::Image {
        path: path.into(),
        source,
    })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub model: BlendshapeModel,
    pub cameras: Vec<Camera>,
    pub frames: Vec<FrameRecord>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let model = BlendshapeModel::read(&root.join("model.bin"))?;
        let cameras = read_cameras(&root.join("cameras.txt"))?;
        let sp = root.join("split.txt");
        let text = std::fs::read_to_string(&sp).map_err(io_err(&sp))?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (tag, idx) = (it.next(), it.next().and_then(|s| s.parse::<usize>().ok()));
            match (tag, idx) {
                (Some("train"), Some(i)) => train.push(i),
                (Some("test"), Some(i)) => test.push(i),
                _ => return Err(format_err(&sp, format!("bad line `{line}`"))),
            }
        }
        let n = train.len() + test.len();
        let mut frames = Vec::with_capacity(n);
        for t in 0..n {
            let (delta_clean, delta, pose_clean, pose) = read_params(&params_path(root, t))?;
            if delta.len() != model.num_expressions() {
                return Err(FaceError::Shape {
                    what: "frame expression coefficients",
                    expected: model.num_expressions(),
                    got: delta.len(),
                });
            }
            let images = (0..cameras.len()).map(|c| image_path(root, c, t)).collect::<Vec<_>>();
            let masks = (0..cameras.len()).map(|c| mask_path(root, c, t)).collect::<Vec<_>>();
            for p in images.iter().chain(&masks) {
                if !p.exists() {
                    return Err(format_err(p, "missing file"));
                }
            }
            frames.push(FrameRecord {
                index: t,
                delta,
                pose,
                delta_clean,
                pose_clean,
                images,
                masks,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            model,
            cameras,
            frames,
            train,
            test,
        })
    }
}
