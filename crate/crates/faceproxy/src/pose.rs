use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{FaceError, Result};

/// Rigid head motion `x -> R x + t`, with `R` given as an axis-angle vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadPose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for HeadPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl HeadPose {
    pub fn identity() -> Self {
        Self {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(rotation.norm() < std::f64::consts::PI) || !translation.iter().all(|v| v.is_finite()) {
            return Err(FaceError::Invalid(format!(
                "pose: rotation {rotation:?} translation {translation:?}"
            )));
        }
        Ok(Self { rotation, translation })
    }

    /// `[rx, ry, rz, tx, ty, tz]`.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(FaceError::Shape {
                what: "pose",
                expected: 6,
                got: v.len(),
            });
        }
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (r, t) = (self.rotation, self.translation);
        [r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Rotation3::from_scaled_axis(self.rotation).into_inner()
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * x + self.translation
    }

    /// The inverse map `x -> R^T (x - t)` as a rotation matrix and offset,
    /// i.e. posed space back to canonical space.
    pub fn inverse(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let rt = self.matrix().transpose();
        (rt, -(rt * self.translation))
    }
}
