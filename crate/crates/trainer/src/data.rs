//! Dataset frames held in memory with their plane-generator conditions.

use diffcore::Tensor;
use faceproxy::{BlendshapeModel, Camera, Dataset, HeadPose, Image};
use orthorender::render_condition_set;
use planegen::{ConditionMode, FrameCondition};

use crate::config::Config;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    /// `[3, H, W]` in [0, 1].
    pub rgb: Tensor,
    /// `[1, H, W]` in [0, 1].
    pub mask: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    /// Frame index in the dataset.
    pub index: usize,
    /// Embedding row; training frames only.
    pub row: Option<usize>,
    pub cond: FrameCondition,
    /// Tracked pose driving the warp.
    pub pose: HeadPose,
    pub views: Vec<View>,
}

#[derive(Clone, Debug)]
pub struct TrainingData {
    pub dataset: Dataset,
    pub train: Vec<FrameData>,
    pub test: Vec<FrameData>,
}

/// Generator inputs for tracked parameters `(delta, pose)`. Renderings are
/// only produced when the condition mode reads them.
pub fn condition(cfg: &Config, model: &BlendshapeModel, delta: &[f64], pose: &HeadPose) -> Result<FrameCondition> {
    let renderings = if cfg.condition_mode == ConditionMode::Renderings {
        let r = cfg.plane_resolution;
        let set = render_condition_set(model, delta, pose, cfg.rendering_pose, cfg.texture_channel, r)?;
        Some((
            Tensor::new(&[7, r, r], set.front_stack())?,
            Tensor::new(&[14, r, r], set.side_stack())?,
        ))
    } else {
        None
    };
    Ok(FrameCondition {
        renderings,
        delta: delta.to_vec(),
        pose: pose.to_array(),
    })
}

fn image_tensor(img: &Image) -> Result<Tensor> {
    Ok(Tensor::new(&[img.channels, img.height, img.width], img.data.clone())?)
}

impl TrainingData {
    pub fn load(cfg: &Config) -> Result<Self> {
        let dataset = Dataset::load(&cfg.data_dir)?;
        let frame = |index: usize, row: Option<usize>| -> Result<FrameData> {
            let rec = &dataset.frames[index];
            let mut views = Vec::with_capacity(dataset.cameras.len());
            for (c, cam) in dataset.cameras.iter().enumerate() {
                views.push(View {
                    camera: *cam,
                    rgb: image_tensor(&Image::read_rgb(&rec.images[c])?)?,
                    mask: image_tensor(&Image::read_mask(&rec.masks[c])?)?,
                });
            }
            Ok(FrameData {
                index,
                row,
                cond: condition(cfg, &dataset.model, &rec.delta, &rec.pose)?,
                pose: rec.pose,
                views,
            })
        };
        let train = dataset
            .train
            .iter()
            .enumerate()
            .map(|(r, &i)| frame(i, Some(r)))
            .collect::<Result<Vec<_>>>()?;
        let test = dataset.test.iter().map(|&i| frame(i, None)).collect::<Result<Vec<_>>>()?;
        Ok(Self { dataset, train, test })
    }

    pub fn expressions(&self) -> usize {
        self.dataset.model.num_expressions()
    }

    /// Mean training image per camera, the trivial predictor.
    pub fn mean_train_images(&self) -> Vec<Tensor> {
        let n = self.train.len() as f64;
        (0..self.dataset.cameras.len())
            .map(|c| {
                let mut acc = Tensor::zeros(self.train[0].views[c].rgb.shape());
                for f in &self.train {
                    acc.add_assign(&f.views[c].rgb);
                }
                acc.scale(1.0 / n)
            })
            .collect()
    }
}
