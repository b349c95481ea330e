//! Unit quaternions for probe orientation.
//!
//! Components are stored and flattened in `[w, x, y, z]` order everywhere in
//! this crate (nodes, files, model blocks).

use std::ops::Mul;

use crate::error::{Error, Result};

/// Quaternion parts with a norm below this are treated as orientation-less.
pub const MIN_QUAT_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn identity() -> Self {
        Quaternion {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)` onto the unit sphere.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        Self::normalized_with_norm([w, x, y, z]).map(|(q, _)| q)
    }

    /// Normalizes and also returns the norm of the raw input.
    pub fn normalized_with_norm(c: [f64; 4]) -> Result<(Self, f64)> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite quaternion {c:?}")));
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < MIN_QUAT_NORM {
            return Err(Error::DegenerateOrientation {
                norm,
                min: MIN_QUAT_NORM,
            });
        }
        // Already unit up to rounding: keep the exact bits so that
        // flatten/unflatten and file round-trips are lossless.
        if (norm - 1.0).abs() <= 1e-12 {
            let q = Quaternion {
                w: c[0],
                x: c[1],
                y: c[2],
                z: c[3],
            };
            return Ok((q, norm));
        }
        let q = Quaternion {
            w: c[0] / norm,
            x: c[1] / norm,
            y: c[2] / norm,
            z: c[3] / norm,
        };
        Ok((q, norm))
    }

    /// Rotation of `deg` degrees about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], deg: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0) || !deg.is_finite() {
            return Err(Error::invalid("axis must be non-zero and angle finite"));
        }
        let half = deg.to_radians() / 2.0;
        let s = half.sin() / n;
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Quaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn conjugate(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotates a 3-vector by this quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion {
            w: 0.0,
            x: v[0],
            y: v[1],
            z: v[2],
        };
        let r = *self * p * self.conjugate();
        [r.x, r.y, r.z]
    }

    /// Shortest-arc spherical interpolation; `t` is clamped to `[0, 1]`.
    pub fn slerp(&self, other: &Quaternion, t: f64) -> Self {
        let t = t.clamp(0.0, 1.0);
        let mut cos = self.dot(other);
        let mut end = *other;
        if cos < 0.0 {
            cos = -cos;
            end = end.neg();
        }
        let (a, b) = if cos > 1.0 - 1e-12 {
            (1.0 - t, t)
        } else {
            let theta = cos.min(1.0).acos();
            let sin = theta.sin();
            (((1.0 - t) * theta).sin() / sin, (t * theta).sin() / sin)
        };
        let c = [
            a * self.w + b * end.w,
            a * self.x + b * end.x,
            a * self.y + b * end.y,
            a * self.z + b * end.z,
        ];
        // Inputs are unit, so the blend never collapses to zero.
        Self::new(c[0], c[1], c[2], c[3]).unwrap_or(*self)
    }

    /// Re-projects onto the unit sphere to wash out accumulated rounding.
    pub(crate) fn renormalized(self) -> Self {
        Self::new(self.w, self.x, self.y, self.z).unwrap_or(self)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }
}

/// Geodesic angle between two orientations in degrees, `2·acos(min(1, |a·b|))`.
///
/// Evaluated as `2·atan2(|vec(a* b)|, |a·b|)`, which is the same quantity for
/// unit inputs but keeps full precision near 0° where `acos` does not.
/// Sign-invariant, so `q` and `-q` are at distance zero.
pub fn quat_angle_deg(a: &Quaternion, b: &Quaternion) -> Result<f64> {
    let r = a.conjugate() * *b;
    if !r.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite quaternion in angle computation"));
    }
    let s = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
    Ok((2.0 * s.atan2(r.w.abs())).to_degrees())
}
