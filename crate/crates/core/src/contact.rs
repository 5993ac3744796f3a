//! Planar wall, contact frame, Coulomb contact wrench and the pen's
//! force-to-linewidth calibration.
//!
//! Contact wrenches are stored in the *pressing* convention: the normal
//! component is `+F` along the inward normal. The force the wall exerts on
//! the vehicle has the normal component negated; [`on_vehicle`] applies that
//! flip and is the only place the physical sign enters.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Frame, Rotation, Wrench};

/// Plane through `p0` whose unit normal `n_in` points into the material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub p0: Vector3<f64>,
    pub n_in: Vector3<f64>,
}

impl Surface {
    /// Normalizes `n_in`; fails on a zero normal.
    pub fn new(p0: Vector3<f64>, n_in: Vector3<f64>) -> Result<Self> {
        let n = n_in.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::param("surface.n_in", "normal must be non-zero"));
        }
        Ok(Surface { p0, n_in: n_in / n })
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.n_in.norm()) - 1.0).abs() > 1e-12 {
            return Err(Error::param("surface.n_in", "normal must be unit length"));
        }
        Ok(())
    }

    /// Signed distance: positive in free space, zero on the wall, negative
    /// when penetrating.
    pub fn phi(&self, p: &Vector3<f64>) -> f64 {
        self.n_in.dot(&(self.p0 - p))
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p + self.n_in * self.phi(p)
    }
}

/// Contact axes: inward normal plus the two in-plane directions built from
/// gravity. `t_y` is kept exactly as constructed from `gravity × n_t`, which
/// makes `(n_t, t_y, t_z)` left-handed on a vertical wall; wrench coordinates
/// use the right-handed basis returned by [`ContactFrame::rotation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactFrame {
    pub n_t: Vector3<f64>,
    pub t_y: Vector3<f64>,
    pub t_z: Vector3<f64>,
}

impl ContactFrame {
    /// In-plane horizontal axis completing a right-handed triad, `t_z × n_t`.
    pub fn lateral(&self) -> Vector3<f64> {
        self.t_z.cross(&self.n_t)
    }

    /// World rotation of the contact frame: columns `[n_t, t_z × n_t, t_z]`.
    pub fn rotation(&self) -> Rotation {
        let m = nalgebra::Matrix3::from_columns(&[self.n_t, self.lateral(), self.t_z]);
        Rotation::new_unchecked(m)
    }

    /// Tangential velocity coordinates `[v·lateral, v·t_z]`.
    pub fn tangential(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(v.dot(&self.lateral()), v.dot(&self.t_z))
    }

    /// World vector from contact-frame coordinates.
    pub fn to_world(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * *c
    }

    pub fn to_contact(&self, w: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * *w
    }
}

/// Builds the contact frame of a planar surface. `gravity_dir` need not be
/// normalized.
pub fn contact_frame(surface: &Surface, gravity_dir: &Vector3<f64>) -> Result<ContactFrame> {
    let g = gravity_dir.normalize();
    let n_t = surface.n_in.normalize();
    let gy = g.cross(&n_t);
    if gy.norm() < 1e-9 {
        return Err(Error::ParallelGravity);
    }
    let t_y = gy.normalize();
    let t_z = t_y.cross(&n_t).normalize();
    Ok(ContactFrame { n_t, t_y, t_z })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    pub mu_y: f64,
    pub mu_z: f64,
    /// Velocity scale of the tanh friction regularization (m/s).
    pub v_eps: f64,
    /// Reference-force threshold above which the normal axis is force controlled (N).
    pub f_on: f64,
    /// Slip speed below which the non-smooth friction is zero (m/s).
    #[serde(default = "default_deadband")]
    pub deadband: f64,
}

fn default_deadband() -> f64 {
    1e-3
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            mu_y: 0.4,
            mu_z: 0.4,
            v_eps: 0.01,
            f_on: 0.1,
            deadband: 1e-3,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_y >= 0.0 && self.mu_z >= 0.0) {
            return Err(Error::param("contact.mu", "friction coefficients must be >= 0"));
        }
        if !(self.v_eps > 0.0) {
            return Err(Error::param("contact.v_eps", "must be > 0"));
        }
        if !(self.f_on >= 0.0 && self.deadband >= 0.0) {
            return Err(Error::param("contact.f_on", "thresholds must be >= 0"));
        }
        Ok(())
    }
}

/// How the slip direction enters the friction law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Friction {
    /// `sign(v)` with the configured deadband.
    Sign,
    /// `tanh(v / v_eps)`; differentiable, used inside the optimizer.
    Smooth,
}

fn slip_sign(cp: &ContactParams, v: f64, mode: Friction) -> f64 {
    match mode {
        Friction::Smooth => (v / cp.v_eps).tanh(),
        Friction::Sign => {
            if v.abs() <= cp.deadband {
                0.0
            } else {
                v.signum()
            }
        }
    }
}

/// Coulomb direction vector `α(v)` in contact coordinates (force part).
pub fn alpha(cp: &ContactParams, v_t: &Vector2<f64>, mode: Friction) -> Vector3<f64> {
    Vector3::new(
        1.0,
        -cp.mu_y * slip_sign(cp, v_t.x, mode),
        -cp.mu_z * slip_sign(cp, v_t.y, mode),
    )
}

/// Contact wrench `F α(v)` in frame C, pressing convention, zero torque.
pub fn contact_wrench(cp: &ContactParams, force: f64, v_t: &Vector2<f64>, mode: Friction) -> Wrench {
    Wrench::new(alpha(cp, v_t, mode) * force, Vector3::zeros(), Frame::C)
}

/// The wrench the wall applies to the vehicle: normal component negated.
pub fn on_vehicle(w: &Wrench) -> Wrench {
    let mut out = *w;
    out.force.x = -out.force.x;
    out
}

/// Polynomial force → linewidth calibration of the sponge pen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenModel {
    /// `w(F) = c0 + c1 F + c2 F² + ...` in metres.
    pub coeffs: Vec<f64>,
    pub w_min: f64,
    pub w_max: f64,
    pub f_max: f64,
}

impl Default for PenModel {
    fn default() -> Self {
        PenModel {
            coeffs: vec![0.002, 0.003],
            w_min: 0.002,
            w_max: 0.015,
            f_max: 5.0,
        }
    }
}

/// Result of inverting the pen model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthForce {
    pub force: f64,
    /// The requested width was outside the reachable range and got clamped.
    pub clamped: bool,
}

impl PenModel {
    fn poly(&self, f: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * f + c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(Error::param("pen.coeffs", "at least one coefficient required"));
        }
        if !(self.f_max > 0.0 && self.w_min >= 0.0 && self.w_max > self.w_min) {
            return Err(Error::param("pen", "need f_max > 0 and 0 <= w_min < w_max"));
        }
        if self.poly(0.0) < 0.0 {
            return Err(Error::param("pen.coeffs", "w(0) must be >= 0"));
        }
        let mut prev = self.poly(0.0);
        for i in 1..=1000 {
            let w = self.poly(self.f_max * i as f64 / 1000.0);
            if w < prev - 1e-15 {
                return Err(Error::param("pen.coeffs", "w(F) must be non-decreasing on [0, f_max]"));
            }
            prev = w;
        }
        Ok(())
    }

    /// Linewidth produced by normal force `force`, clamped to `[w_min, w_max]`.
    pub fn linewidth(&self, force: f64) -> f64 {
        let f = force.clamp(0.0, self.f_max);
        self.poly(f).clamp(self.w_min, self.w_max)
    }

    /// Widest line the pen can draw within `f_max`.
    pub fn max_width(&self) -> f64 {
        self.linewidth(self.f_max)
    }

    /// Smallest force producing `width`, by bisection on the monotone polynomial.
    pub fn force_for_width(&self, width: f64) -> WidthForce {
        let lo_w = self.linewidth(0.0);
        let hi_w = self.max_width();
        let target = width.clamp(self.w_min.max(lo_w), self.w_max.min(hi_w));
        let clamped = (target - width).abs() > 1e-12;
        if target <= lo_w {
            return WidthForce { force: 0.0, clamped };
        }
        let (mut lo, mut hi) = (0.0, self.f_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.poly(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        WidthForce {
            force: 0.5 * (lo + hi),
            clamped,
        }
    }
}
