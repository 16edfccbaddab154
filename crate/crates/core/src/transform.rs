use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid map from the fixed (brightfield) frame into the moving
/// (fluorescence) frame:
///
/// ```text
/// moving = (R(theta) * fixed + t) / scale
/// ```
///
/// `scale` is the number of fixed pixels per moving pixel (1.472 for the
/// BF/FL scanner pair), so the translation is expressed in fixed-frame pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub theta_rad: f64,
    pub tx_px: f64,
    pub ty_px: f64,
    pub scale: f64,
}

/// Known size ratio between brightfield and fluorescence pixels.
pub const BF_TO_FL_SCALE: f64 = 1.472;

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform2D {
    pub fn new(theta_rad: f64, tx_px: f64, ty_px: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidTransform(format!("scale {scale}")));
        }
        if !(theta_rad.is_finite() && tx_px.is_finite() && ty_px.is_finite()) {
            return Err(Error::InvalidTransform("non-finite parameter".into()));
        }
        Ok(Self { theta_rad: wrap_angle(theta_rad), tx_px, ty_px, scale })
    }

    pub fn identity() -> Self {
        Self { theta_rad: 0.0, tx_px: 0.0, ty_px: 0.0, scale: 1.0 }
    }

    pub fn from_degrees(theta_deg: f64, tx_px: f64, ty_px: f64, scale: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), tx_px, ty_px, scale)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_rad.to_degrees()
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.theta_rad, self.tx_px, self.ty_px, self.scale).map(|_| ())
    }

    /// Maps a fixed-frame point `(x, y)` into the moving frame.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta_rad.sin_cos();
        (
            (c * x - s * y + self.tx_px) / self.scale,
            (s * x + c * y + self.ty_px) / self.scale,
        )
    }

    /// The map from the moving frame back to the fixed frame, expressed in
    /// the same parameterisation.
    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta_rad.sin_cos();
        // R^-1 t, then divided by the forward scale.
        let rx = c * self.tx_px + s * self.ty_px;
        let ry = -s * self.tx_px + c * self.ty_px;
        Self {
            theta_rad: wrap_angle(-self.theta_rad),
            tx_px: -rx / self.scale,
            ty_px: -ry / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// `self` followed by `other` (fixed -> self.moving -> other.moving).
    pub fn then(&self, other: &Self) -> Self {
        let (s, c) = other.theta_rad.sin_cos();
        // other(self(p)) = (R2 (R1 p + t1)/s1 + t2)/s2 = (R2R1 p + R2 t1 + s1 t2)/(s1 s2)
        let tx = c * self.tx_px - s * self.ty_px + self.scale * other.tx_px;
        let ty = s * self.tx_px + c * self.ty_px + self.scale * other.ty_px;
        Self {
            theta_rad: wrap_angle(self.theta_rad + other.theta_rad),
            tx_px: tx,
            ty_px: ty,
            scale: self.scale * other.scale,
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Transform JSON as written by `register`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub theta_rad: f64,
    pub tx_px: f64,
    pub ty_px: f64,
    pub scale: f64,
    pub mi_nats: f64,
}

impl TransformRecord {
    pub fn new(t: RigidTransform2D, mi_nats: f64) -> Self {
        Self { theta_rad: t.theta_rad, tx_px: t.tx_px, ty_px: t.ty_px, scale: t.scale, mi_nats }
    }

    pub fn transform(&self) -> Result<RigidTransform2D> {
        RigidTransform2D::new(self.theta_rad, self.tx_px, self.ty_px, self.scale)
    }
}
