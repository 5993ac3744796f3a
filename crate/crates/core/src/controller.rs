//! Contact force estimation and the hybrid motion-force control law.
//!
//! The motion loop produces a body wrench from pose and twist errors at the
//! pen tip plus model feedforward. The force loop regulates the normal force
//! through an impedance law. A selection matrix in contact axes hands the
//! normal force axis to the force loop while the reference asks for contact.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::{contact_wrench, on_vehicle, ContactFrame, ContactParams, Friction};
use crate::error::{Error, Result};
use crate::model::{EeState, UamParams};
use crate::planner::Sample;
use crate::se3::{ad_wrench, vee, Frame, FramedTransform, Rotation, Wrench};

/// Diagonal gains of the motion loop, ordered `[position; attitude]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionGains {
    pub k_q: Vector6<f64>,
    pub k_v: Vector6<f64>,
    pub k_i: Vector6<f64>,
    /// Symmetric bound on each pose-error integral component.
    pub integral_limit: Vector6<f64>,
}

impl Default for MotionGains {
    fn default() -> Self {
        MotionGains {
            k_q: Vector6::new(40.0, 40.0, 40.0, 40.0, 40.0, 40.0),
            k_v: Vector6::new(12.0, 12.0, 12.0, 6.0, 6.0, 6.0),
            k_i: Vector6::new(40.0, 40.0, 40.0, 20.0, 20.0, 20.0),
            integral_limit: Vector6::new(1.0, 1.0, 1.0, 0.5, 0.5, 0.5),
        }
    }
}

/// Gains of the normal-force impedance loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceGains {
    /// Normalized stiffness (N/m).
    pub k_ep: f64,
    /// Normalized damping (N·s/m).
    pub k_ed: f64,
    pub k_fp: f64,
    pub k_fi: f64,
    /// Bound on the force-error integral (N·s).
    pub integral_limit: f64,
}

impl Default for ForceGains {
    fn default() -> Self {
        ForceGains {
            k_ep: 60.0,
            k_ed: 60.0,
            k_fp: 0.8,
            k_fi: 1.2,
            integral_limit: 2.0,
        }
    }
}

/// Controller settings besides the gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub motion: MotionGains,
    pub force: ForceGains,
    /// Force control switches off once the reference drops this far below `f_on`.
    pub hysteresis: f64,
    /// Cutoff of the low-pass on the normal-error derivative (Hz).
    pub derivative_cutoff: f64,
    /// Control period (s).
    pub dt: f64,
    /// Drops the predicted and estimated contact wrenches from the motion law.
    pub no_contact_compensation: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            motion: MotionGains::default(),
            force: ForceGains::default(),
            hysteresis: 0.05,
            derivative_cutoff: 20.0,
            dt: 0.01,
            no_contact_compensation: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.motion;
        for (name, v) in [
            ("k_q", &m.k_q),
            ("k_v", &m.k_v),
            ("k_i", &m.k_i),
            ("integral_limit", &m.integral_limit),
        ] {
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::param(
                    format!("controller.motion.{name}"),
                    "entries must be >= 0",
                ));
            }
        }
        let f = &self.force;
        for (name, x) in [
            ("k_ep", f.k_ep),
            ("k_ed", f.k_ed),
            ("k_fp", f.k_fp),
            ("k_fi", f.k_fi),
            ("integral_limit", f.integral_limit),
        ] {
            if !(x >= 0.0) {
                return Err(Error::param(format!("controller.force.{name}"), "must be >= 0"));
            }
        }
        if !(self.hysteresis >= 0.0) {
            return Err(Error::param("controller.hysteresis", "must be >= 0"));
        }
        if !(self.derivative_cutoff > 0.0) {
            return Err(Error::param("controller.derivative_cutoff", "must be > 0"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::param("controller.dt", "must be > 0"));
        }
        Ok(())
    }
}

/// Integrator and filter memory of one controller instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerState {
    pub pose_integral: Vector6<f64>,
    pub force_integral: f64,
    /// Previous normal position error, `None` before the first force step.
    pub prev_e_x: Option<f64>,
    /// Filtered normal error rate.
    pub e_x_rate: f64,
    pub delta: bool,
}

impl ControllerState {
    /// Clears the force-loop memory and the pose-integral component along
    /// `normal_b` (contact normal in body axes), the axis that changes hands.
    pub fn reset_on_switch(&mut self, normal_b: &Vector3<f64>) {
        let ip = Vector3::new(self.pose_integral[0], self.pose_integral[1], self.pose_integral[2]);
        let kept = ip - normal_b * normal_b.dot(&ip);
        self.pose_integral.fixed_rows_mut::<3>(0).copy_from(&kept);
        self.force_integral = 0.0;
        self.prev_e_x = None;
        self.e_x_rate = 0.0;
    }
}

/// Least-squares normal force from a sensor wrench, given the contact
/// direction `ref_alpha` (contact frame) and the transforms of the contact
/// and sensor frames into the body frame.
///
/// ```
/// use calli_core::controller::estimate_f;
/// use calli_core::se3::{Frame, FramedTransform, Wrench};
/// use nalgebra::{Vector3, Vector6};
/// let c_to_b = FramedTransform::identity(Frame::C, Frame::B);
/// let s_to_b = FramedTransform::identity(Frame::S, Frame::B);
/// let alpha = Vector6::new(1.0, 0.4, 0.0, 0.0, 0.0, 0.0);
/// let w = Wrench::new(Vector3::new(2.0, 0.8, 0.0), Vector3::zeros(), Frame::S);
/// assert!((estimate_f(&w, &alpha, &c_to_b, &s_to_b).unwrap() - 2.0).abs() < 1e-12);
/// ```
pub fn estimate_f(
    sensor: &Wrench,
    ref_alpha: &Vector6<f64>,
    c_to_b: &FramedTransform,
    s_to_b: &FramedTransform,
) -> Result<f64> {
    for (t, from) in [(c_to_b, Frame::C), (s_to_b, Frame::S)] {
        if t.from != from || t.to != Frame::B {
            return Err(Error::FrameMismatch {
                expected: from,
                found: t.from,
            });
        }
    }
    if sensor.frame != Frame::S {
        return Err(Error::FrameMismatch {
            expected: Frame::S,
            found: sensor.frame,
        });
    }
    let a = c_to_b.wrench_adjoint() * ref_alpha;
    let aa = a.norm_squared();
    if !(aa > 1e-24) {
        return Err(Error::param("alpha", "contact direction is zero"));
    }
    let b = s_to_b.wrench_adjoint() * sensor.to_vector();
    Ok(a.dot(&b) / aa)
}

/// Hover shortcut: the first body-axis component of the sensed force.
pub fn estimate_f_simplified(sensor: &Wrench, r_b_s: &Rotation) -> Result<f64> {
    if sensor.frame != Frame::S {
        return Err(Error::FrameMismatch {
            expected: Frame::S,
            found: sensor.frame,
        });
    }
    Ok((*r_b_s * sensor.force).x)
}

/// Contact wrench implied by an estimated force and the reference velocity.
pub fn estimate_contact_wrench(f_hat: f64, ref_v: &Vector3<f64>, frame: &ContactFrame, cp: &ContactParams) -> Wrench {
    contact_wrench(cp, f_hat.max(0.0), &frame.tangential(ref_v), Friction::Sign)
}

/// Attitude error `½(R_refᵀR − RᵀR_ref)^∨`.
pub fn attitude_error(reference: &Rotation, measured: &Rotation) -> Vector3<f64> {
    let a = reference.transpose().matrix() * measured.matrix();
    vee(&((a - a.transpose()) * 0.5)).expect("difference of a matrix and its transpose is skew")
}

/// Pose and twist errors at the tip in body axes, `([e_p; e_R], [e_v; e_ω])`.
pub fn tracking_errors(reference: &EeState, meas: &EeState) -> (Vector6<f64>, Vector6<f64>) {
    let rt = meas.rotation.transpose();
    let e_p = rt * (meas.p - reference.p);
    let e_r = attitude_error(&reference.rotation, &meas.rotation);
    let e_v = rt * (meas.v_lin - reference.v_lin);
    let e_w = meas.omega - reference.omega;
    (
        Vector6::new(e_p.x, e_p.y, e_p.z, e_r.x, e_r.y, e_r.z),
        Vector6::new(e_v.x, e_v.y, e_v.z, e_w.x, e_w.y, e_w.z),
    )
}

/// Motion-loop wrench at the body COM. `tau_c_hat` and `reference.tau_c` are
/// contact-frame wrenches in the pressing convention; pass `None` to drop
/// both compensation terms.
#[allow(clippy::too_many_arguments)]
pub fn motion_wrench(
    params: &UamParams,
    frame: &ContactFrame,
    reference: &Sample,
    meas: &EeState,
    tau_c_hat: Option<&Wrench>,
    gains: &MotionGains,
    state: &mut ControllerState,
    dt: f64,
) -> Result<Wrench> {
    let (e_q, e_v) = tracking_errors(&reference.state.ee, meas);
    state.pose_integral = (state.pose_integral + e_q * dt).zip_map(&gains.integral_limit, |x, l| x.clamp(-l, l));
    let fb = -(gains.k_q.component_mul(&e_q)
        + gains.k_v.component_mul(&e_v)
        + gains.k_i.component_mul(&state.pose_integral));
    let tip_to_body = params.body_to_tip().inverse();
    let mut out =
        reference.tau_a.to_vector() + ad_wrench(&tip_to_body, &Wrench::from_vector(&fb, Frame::E))?.to_vector();
    if let Some(est) = tau_c_hat {
        let c_to_b = params.contact_to_body(&meas.rotation, frame);
        let predicted = ad_wrench(&c_to_b, &on_vehicle(&reference.tau_c))?;
        let estimated = ad_wrench(&c_to_b, &on_vehicle(est))?;
        out += predicted.to_vector() - estimated.to_vector();
    }
    Ok(Wrench::from_vector(&out, Frame::B))
}

/// Normal-force impedance law; returns `[F_f, 0, 0, 0, 0, 0]` in frame C.
pub fn force_wrench(
    ref_f: f64,
    f_hat: f64,
    e_x: f64,
    gains: &ForceGains,
    state: &mut ControllerState,
    dt: f64,
    cutoff: f64,
) -> Wrench {
    let raw_rate = match state.prev_e_x {
        Some(prev) => (e_x - prev) / dt,
        None => 0.0,
    };
    let a = dt / (dt + 1.0 / (2.0 * std::f64::consts::PI * cutoff));
    state.e_x_rate += a * (raw_rate - state.e_x_rate);
    state.prev_e_x = Some(e_x);
    let e_f = f_hat - ref_f;
    let lim = gains.integral_limit;
    state.force_integral = (state.force_integral + e_f * dt).clamp(-lim, lim);
    let f_f =
        ref_f - gains.k_ep * e_x - gains.k_ed * state.e_x_rate - gains.k_fp * e_f - gains.k_fi * state.force_integral;
    Wrench::new(Vector3::new(f_f, 0.0, 0.0), Vector3::zeros(), Frame::C)
}

/// Selects the contact-normal force axis from `tau_f` and the remaining five
/// contact-frame axes from `tau_p`, then clamps to the wrench limits.
/// `r_b_c` rotates contact axes into body axes.
pub fn combine(tau_p: &Wrench, tau_f: &Wrench, delta: bool, r_b_c: &Rotation, params: &UamParams) -> Result<Wrench> {
    if tau_p.frame != Frame::B {
        return Err(Error::FrameMismatch {
            expected: Frame::B,
            found: tau_p.frame,
        });
    }
    if tau_f.frame != Frame::C {
        return Err(Error::FrameMismatch {
            expected: Frame::C,
            found: tau_f.frame,
        });
    }
    let v = if delta {
        let mut rot = Matrix6::zeros();
        rot.fixed_view_mut::<3, 3>(0, 0).copy_from(r_b_c.matrix());
        rot.fixed_view_mut::<3, 3>(3, 3).copy_from(r_b_c.matrix());
        let mut in_c = rot.transpose() * tau_p.to_vector();
        in_c[0] = tau_f.to_vector()[0];
        rot * in_c
    } else {
        tau_p.to_vector()
    };
    let clamped = v.zip_zip_map(&params.wrench_min, &params.wrench_max, |x, lo, hi| x.clamp(lo, hi));
    Ok(Wrench::from_vector(&clamped, Frame::B))
}

/// One control tick's result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub tau_a: Wrench,
    pub f_hat: f64,
    pub delta: bool,
}

/// Stateful hybrid controller for one vehicle.
#[derive(Debug, Clone)]
pub struct Controller {
    pub params: UamParams,
    pub contact: ContactParams,
    pub frame: ContactFrame,
    pub config: ControllerConfig,
    pub state: ControllerState,
}

impl Controller {
    pub fn new(
        params: UamParams,
        contact: ContactParams,
        frame: ContactFrame,
        config: ControllerConfig,
    ) -> Result<Self> {
        params.validate()?;
        contact.validate()?;
        config.validate()?;
        Ok(Controller {
            params,
            contact,
            frame,
            config,
            state: ControllerState::default(),
        })
    }

    fn switch(&mut self, ref_f: f64, meas: &EeState) {
        let on = if self.state.delta {
            ref_f >= self.contact.f_on - self.config.hysteresis
        } else {
            ref_f > self.contact.f_on
        };
        if on != self.state.delta {
            self.state
                .reset_on_switch(&(meas.rotation.transpose() * self.frame.n_t));
            self.state.delta = on;
        }
    }

    /// Estimate, motion law, force law and selection for one tick.
    pub fn step(&mut self, reference: &Sample, meas: &EeState, sensor: &Wrench) -> Result<ControlOutput> {
        let ref_f = reference.state.force.max(0.0);
        self.switch(ref_f, meas);
        let ref_ee = &reference.state.ee;
        let alpha = contact_wrench(
            &self.contact,
            1.0,
            &self.frame.tangential(&ref_ee.v_lin),
            Friction::Sign,
        )
        .to_vector();
        let c_to_b = self.params.contact_to_body(&meas.rotation, &self.frame);
        let f_hat = estimate_f(sensor, &alpha, &c_to_b, &self.params.sensor_to_body())?;
        let tau_c_hat = estimate_contact_wrench(f_hat, &ref_ee.v_lin, &self.frame, &self.contact);
        let dt = self.config.dt;
        let comp = (!self.config.no_contact_compensation && self.state.delta).then_some(&tau_c_hat);
        let tau_p = motion_wrench(
            &self.params,
            &self.frame,
            reference,
            meas,
            comp,
            &self.config.motion,
            &mut self.state,
            dt,
        )?;
        let tau_f = if self.state.delta {
            let e_x = self.frame.n_t.dot(&(meas.p - ref_ee.p));
            force_wrench(
                ref_f,
                f_hat,
                e_x,
                &self.config.force,
                &mut self.state,
                dt,
                self.config.derivative_cutoff,
            )
        } else {
            Wrench::zero(Frame::C)
        };
        let tau_a = combine(&tau_p, &tau_f, self.state.delta, &c_to_b.rotation, &self.params)?;
        Ok(ControlOutput {
            tau_a,
            f_hat,
            delta: self.state.delta,
        })
    }
}
