//! Image metrics and the evaluation report.

use std::path::Path;

use diffcore::Tensor;

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse of mismatched images");
    let n = a.len().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// `10 log10(1 / mse)` for images in [0, 1], capped for near-identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    psnr_from_mse(mse(a, b))
}

/// Intersection over union of the masks thresholded at one half. Two empty
/// masks agree perfectly.
pub fn mask_iou(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "iou of mismatched masks");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (p, q) = (x > 0.5, y > 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Variance of the IoU between consecutive masks; zero for fewer than
/// three masks.
pub fn iou_stability(masks: &[Tensor]) -> f64 {
    let ious: Vec<f64> = masks.windows(2).map(|w| mask_iou(&w[0], &w[1])).collect();
    if ious.len() < 2 {
        return 0.0;
    }
    let n = ious.len() as f64;
    let mean = ious.iter().sum::<f64>() / n;
    ious.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub camera: usize,
    pub psnr: f64,
    pub iou: f64,
    pub perceptual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_iou: f64,
    pub mean_perceptual: f64,
    /// Frame-to-frame mask IoU variance over the split in order.
    pub stability: f64,
}

impl MetricsReport {
    pub fn new(split: &str, frames: Vec<FrameMetrics>, masks: &[Tensor]) -> Self {
        let n = frames.len().max(1) as f64;
        let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        Self {
            split: split.into(),
            mean_psnr: mean(|m| m.psnr),
            mean_iou: mean(|m| m.iou),
            mean_perceptual: mean(|m| m.perceptual),
            stability: iou_stability(masks),
            frames,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "split: {}\nframes: {}\nmean PSNR: {:.3} dB\nmean mask IoU: {:.4}\nmean perceptual_lite: {:.5}\n\
             mask IoU stability (variance): {:.6}\n\n\
             perceptual_lite is a fixed random-feature distance, not comparable to LPIPS.\n\n",
            self.split,
            self.frames.len(),
            self.mean_psnr,
            self.mean_iou,
            self.mean_perceptual,
            self.stability
        );
        for m in &self.frames {
            s.push_str(&format!(
                "frame {:4} cam {}: PSNR {:7.3}  IoU {:.4}  perceptual_lite {:.5}\n",
                m.frame, m.camera, m.psnr, m.iou, m.perceptual
            ));
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("frame\tcamera\tpsnr\tiou\tperceptual_lite\n");
        for m in &self.frames {
            s.push_str(&format!("{}\t{}\t{:?}\t{:?}\t{:?}\n", m.frame, m.camera, m.psnr, m.iou, m.perceptual));
        }
        s.push_str(&format!(
            "mean\t-\t{:?}\t{:?}\t{:?}\nstability\t-\t{:?}\t-\t-\n",
            self.mean_psnr, self.mean_iou, self.mean_perceptual, self.stability
        ));
        s
    }

    /// `metrics.txt` and `metrics.tsv` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, text) in [("metrics.txt", self.to_text()), ("metrics.tsv", self.to_tsv())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
