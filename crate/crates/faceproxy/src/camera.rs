use nalgebra::{Matrix3, Vector3};

use crate::error::{FaceError, Result};
use crate::mesh::Vec3;
use crate::pose::HeadPose;

/// Pinhole camera with camera-frame axes x right, y down, z forward.
/// Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World to camera: `x_cam = rotation * x + translation`.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        focal: f64,
        (cx, cy): (f64, f64),
        (width, height): (usize, usize),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(focal > 0.0) || width == 0 || height == 0 {
            return Err(FaceError::Invalid(format!("camera intrinsics f={focal} {width}x{height}")));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(err <= 1e-9) || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(FaceError::Invalid("camera rotation is not orthonormal".into()));
        }
        Ok(Self {
            focal,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, size: (usize, usize)) -> Result<Self> {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let translation = -(rotation * eye);
        Self::new(focal, (size.0 as f64 / 2.0, size.1 as f64 / 2.0), size, rotation, translation)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Unit world-space direction through the given image point.
    pub fn direction(&self, px: f64, py: f64) -> Vec3 {
        let d = Vec3::new((px - self.cx) / self.focal, (py - self.cy) / self.focal, 1.0);
        (self.rotation.transpose() * d).normalize()
    }

    /// Image position and camera depth of a world point.
    pub fn project(&self, x: &Vec3) -> (f64, f64, f64) {
        let c = self.rotation * x + self.translation;
        (self.focal * c.x / c.z + self.cx, self.focal * c.y / c.z + self.cy, c.z)
    }

    /// The camera that sees canonical space the way `self` sees space posed
    /// by `pose`: world-to-camera becomes `C(P(x))`.
    pub fn compose(&self, pose: &HeadPose) -> Self {
        let r = pose.matrix();
        Self {
            rotation: self.rotation * r,
            translation: self.rotation * pose.translation + self.translation,
            ..*self
        }
    }

    pub fn resized(&self, width: usize, height: usize) -> Self {
        let s = width as f64 / self.width as f64;
        Self {
            focal: self.focal * s,
            cx: self.cx * s,
            cy: self.cy * height as f64 / self.height as f64,
            width,
            height,
            ..*self
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        let mut v = vec![self.focal, self.cx, self.cy, self.width as f64, self.height as f64];
        v.extend(self.rotation.transpose().iter()); // row-major
        v.extend(self.translation.iter());
        v
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 17 {
            return Err(FaceError::Shape {
                what: "camera",
                expected: 17,
                got: v.len(),
            });
        }
        let rotation = Matrix3::from_row_slice(&v[5..14]);
        Self::new(
            v[0],
            (v[1], v[2]),
            (v[3] as usize, v[4] as usize),
            rotation,
            Vector3::new(v[14], v[15], v[16]),
        )
    }
}
