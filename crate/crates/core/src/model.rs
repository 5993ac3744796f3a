//! End-effector dynamics of the fully-actuated vehicle with a rigid arm.
//!
//! The twist is `v = [ṗ; ω]` with `ṗ` the world-frame tip velocity and `ω`
//! the body angular rate. The equation of motion is
//! `M v̇ + C v + Ad_EB g_B = Ad_EB τ_a + Ad_EC τ_c`, written at the tip with
//! the first row in end-effector (body-aligned) axes.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::{on_vehicle, ContactFrame};
use crate::error::{Error, Result};
use crate::se3::{ad_wrench, exp_so3, hat, project_so3, Frame, FramedTransform, Rotation, Wrench};

/// Physical parameters and actuator limits of the aerial manipulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UamParams {
    pub mass: f64,
    /// Inertia about the vehicle COM in body axes.
    pub inertia: Matrix3<f64>,
    /// Body → pen tip offset, body axes.
    pub t_b_e: Vector3<f64>,
    /// Body → force/torque sensor offset, body axes.
    pub t_b_s: Vector3<f64>,
    pub gravity: f64,
    pub wrench_min: Vector6<f64>,
    pub wrench_max: Vector6<f64>,
    pub wrench_rate_min: Vector6<f64>,
    pub wrench_rate_max: Vector6<f64>,
    pub twist_min: Vector6<f64>,
    pub twist_max: Vector6<f64>,
}

impl Default for UamParams {
    fn default() -> Self {
        UamParams {
            mass: 3.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.05, 0.05, 0.09)),
            t_b_e: Vector3::new(0.4, 0.0, -0.05),
            t_b_s: Vector3::new(0.1, 0.0, -0.05),
            gravity: 9.81,
            wrench_min: Vector6::new(-20.0, -20.0, 0.0, -3.0, -3.0, -3.0),
            wrench_max: Vector6::new(20.0, 20.0, 60.0, 3.0, 3.0, 3.0),
            wrench_rate_min: Vector6::new(-50.0, -50.0, -50.0, -10.0, -10.0, -10.0),
            wrench_rate_max: Vector6::new(50.0, 50.0, 50.0, 10.0, 10.0, 10.0),
            twist_min: Vector6::new(-1.0, -1.0, -1.0, -2.0, -2.0, -2.0),
            twist_max: Vector6::new(1.0, 1.0, 1.0, 2.0, 2.0, 2.0),
        }
    }
}

impl UamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::param("uam.mass", "must be > 0"));
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-12 {
            return Err(Error::param("uam.inertia", "must be symmetric"));
        }
        if self.inertia.cholesky().is_none() {
            return Err(Error::param("uam.inertia", "must be positive definite"));
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::param("uam.gravity", "must be >= 0"));
        }
        for (name, lo, hi) in [
            ("wrench", &self.wrench_min, &self.wrench_max),
            ("wrench_rate", &self.wrench_rate_min, &self.wrench_rate_max),
            ("twist", &self.twist_min, &self.twist_max),
        ] {
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                return Err(Error::param(
                    format!("uam.{name}_min/max"),
                    "lower limits must be below upper limits",
                ));
            }
        }
        Ok(())
    }

    /// Inertia about the pen tip, `J - m [t]x [t]x`.
    pub fn tip_inertia(&self) -> Matrix3<f64> {
        let th = hat(&self.t_b_e);
        self.inertia - self.mass * th * th
    }

    /// Transform carrying body-frame wrenches to the tip.
    pub fn body_to_tip(&self) -> FramedTransform {
        FramedTransform::new(Rotation::identity(), -self.t_b_e, Frame::B, Frame::E)
    }

    /// Transform carrying contact-frame wrenches to the body COM.
    pub fn contact_to_body(&self, attitude: &Rotation, frame: &ContactFrame) -> FramedTransform {
        FramedTransform::new(attitude.transpose() * frame.rotation(), self.t_b_e, Frame::C, Frame::B)
    }

    /// Transform carrying sensor-frame wrenches to the body COM (sensor axes
    /// are body-aligned).
    pub fn sensor_to_body(&self) -> FramedTransform {
        FramedTransform::new(Rotation::identity(), self.t_b_s, Frame::S, Frame::B)
    }
}

/// Pose and twist of the pen tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeState {
    pub p: Vector3<f64>,
    /// Body → world rotation.
    pub rotation: Rotation,
    pub v_lin: Vector3<f64>,
    /// Body angular rate.
    pub omega: Vector3<f64>,
}

impl EeState {
    pub fn at_rest(p: Vector3<f64>, rotation: Rotation) -> Self {
        EeState {
            p,
            rotation,
            v_lin: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn twist(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.v_lin);
        v.fixed_rows_mut::<3>(3).copy_from(&self.omega);
        v
    }

    /// Vehicle COM position reconstructed from the tip pose.
    pub fn base_position(&self, params: &UamParams) -> Vector3<f64> {
        self.p - self.rotation * params.t_b_e
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(self.v_lin.iter())
            .chain(self.omega.iter())
            .all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

/// Planner/controller/simulator state: tip pose and twist plus normal force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub ee: EeState,
    pub force: f64,
}

/// `M` of the end-effector dynamics. The top-right block is the body-rate
/// form `m [t]x` of `m R_E^W [R t]x`.
pub fn mass_matrix(params: &UamParams, s: &EeState) -> Matrix6<f64> {
    let m = params.mass;
    let mut mm = Matrix6::zeros();
    mm.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(s.rotation.matrix().transpose() * m));
    mm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&params.t_b_e) * m));
    mm.fixed_view_mut::<3, 3>(3, 3).copy_from(&params.tip_inertia());
    mm
}

/// Velocity-product matrix `C` (both left blocks zero).
pub fn coriolis_matrix(params: &UamParams, s: &EeState) -> Matrix6<f64> {
    let m = params.mass;
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(hat(&s.omega.cross(&params.t_b_e)) * m));
    c.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-hat(&(params.tip_inertia() * s.omega))));
    c
}

/// Wrench that exactly supports the vehicle weight, body frame at the COM.
pub fn gravity_wrench(params: &UamParams, attitude: &Rotation) -> Wrench {
    let f = attitude.transpose() * Vector3::new(0.0, 0.0, params.mass * params.gravity);
    Wrench::new(f, Vector3::zeros(), Frame::B)
}

/// Twist derivative `[p̈ (world); ω̇ (body)]`.
///
/// `tau_a` is the body-frame control wrench; `tau_c` the contact wrench in
/// frame C using the pressing convention (see [`crate::contact`]).
pub fn accel(
    params: &UamParams,
    s: &State,
    tau_a: &Wrench,
    tau_c: &Wrench,
    frame: &ContactFrame,
) -> Result<Vector6<f64>> {
    if tau_a.frame != Frame::B {
        return Err(Error::FrameMismatch {
            expected: Frame::B,
            found: tau_a.frame,
        });
    }
    let g = gravity_wrench(params, &s.ee.rotation);
    let net_b = Wrench::new(tau_a.force - g.force, tau_a.torque - g.torque, Frame::B);
    let at_tip = ad_wrench(&params.body_to_tip(), &net_b)?;
    let c_to_e = FramedTransform::new(
        s.ee.rotation.transpose() * frame.rotation(),
        Vector3::zeros(),
        Frame::C,
        Frame::E,
    );
    let contact_tip = ad_wrench(&c_to_e, &on_vehicle(tau_c))?;
    let rhs = at_tip.to_vector() + contact_tip.to_vector() - coriolis_matrix(params, &s.ee) * s.ee.twist();
    let mm = mass_matrix(params, &s.ee);
    mm.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::param("uam", "mass matrix is singular"))
}

/// Explicit Euler step; the attitude advances by `exp(ω h)` and is re-projected.
/// `contact` maps a state to its contact wrench (frame C, pressing convention).
pub fn step_euler<F>(
    params: &UamParams,
    s: &State,
    tau_a: &Wrench,
    frame: &ContactFrame,
    contact: F,
    force_next: f64,
    h: f64,
) -> Result<State>
where
    F: Fn(&State) -> Wrench,
{
    let a = accel(params, s, tau_a, &contact(s), frame)?;
    let rot = project_so3(&(s.ee.rotation * exp_so3(&(s.ee.omega * h))).matrix().clone_owned())?;
    Ok(State {
        ee: EeState {
            p: s.ee.p + s.ee.v_lin * h,
            rotation: rot,
            v_lin: s.ee.v_lin + a.fixed_rows::<3>(0) * h,
            omega: s.ee.omega + a.fixed_rows::<3>(3) * h,
        },
        force: force_next,
    })
}

fn advance(s: &State, dp: &Vector3<f64>, dth: &Vector3<f64>, dv: &Vector6<f64>) -> State {
    State {
        ee: EeState {
            p: s.ee.p + dp,
            rotation: Rotation::new_unchecked(*(s.ee.rotation * exp_so3(dth)).matrix()),
            v_lin: s.ee.v_lin + dv.fixed_rows::<3>(0),
            omega: s.ee.omega + dv.fixed_rows::<3>(3),
        },
        force: s.force,
    }
}

/// Classical four-stage step. Rotation stages are taken on the group with
/// the stage body rates; the result is re-projected onto SO(3).
pub fn step_rk4<F>(
    params: &UamParams,
    s: &State,
    tau_a: &Wrench,
    frame: &ContactFrame,
    contact: F,
    force_next: f64,
    h: f64,
) -> Result<State>
where
    F: Fn(&State) -> Wrench,
{
    let deriv = |x: &State| -> Result<(Vector3<f64>, Vector3<f64>, Vector6<f64>)> {
        Ok((x.ee.v_lin, x.ee.omega, accel(params, x, tau_a, &contact(x), frame)?))
    };
    let (p1, w1, a1) = deriv(s)?;
    let s2 = advance(s, &(p1 * (h / 2.0)), &(w1 * (h / 2.0)), &(a1 * (h / 2.0)));
    let (p2, w2, a2) = deriv(&s2)?;
    let s3 = advance(s, &(p2 * (h / 2.0)), &(w2 * (h / 2.0)), &(a2 * (h / 2.0)));
    let (p3, w3, a3) = deriv(&s3)?;
    let s4 = advance(s, &(p3 * h), &(w3 * h), &(a3 * h));
    let (p4, w4, a4) = deriv(&s4)?;
    let k = h / 6.0;
    let mut out = advance(
        s,
        &((p1 + 2.0 * p2 + 2.0 * p3 + p4) * k),
        &((w1 + 2.0 * w2 + 2.0 * w3 + w4) * k),
        &((a1 + 2.0 * a2 + 2.0 * a3 + a4) * k),
    );
    out.ee.rotation = project_so3(out.ee.rotation.matrix())?;
    out.force = force_next;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{contact_frame, Surface};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wall() -> ContactFrame {
        let s = Surface::new(Vector3::new(1.0, 0.0, 0.0), Vector3::x()).unwrap();
        contact_frame(&s, &Vector3::new(0.0, 0.0, -1.0)).unwrap()
    }

    fn no_contact(_: &State) -> Wrench {
        Wrench::zero(Frame::C)
    }

    fn rest(params: &UamParams) -> State {
        let _ = params;
        State {
            ee: EeState::at_rest(Vector3::new(0.5, 0.0, 1.0), Rotation::identity()),
            force: 0.0,
        }
    }

    #[test]
    fn mass_matrix_examples() {
        let mut p = UamParams {
            t_b_e: Vector3::zeros(),
            ..UamParams::default()
        };
        let s = EeState::at_rest(Vector3::zeros(), Rotation::identity());
        let mm = mass_matrix(&p, &s);
        let mut expected = Matrix6::zeros();
        expected
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * 3.0));
        expected.fixed_view_mut::<3, 3>(3, 3).copy_from(&p.inertia);
        assert_eq!(mm, expected);

        p.t_b_e = Vector3::new(0.3, 0.0, 0.0);
        let mm = mass_matrix(&p, &s);
        // -m [t]x [t]x for t = (a,0,0) is m a^2 diag(0,1,1).
        let br = mm.fixed_view::<3, 3>(3, 3).into_owned();
        assert_relative_eq!(
            br,
            Matrix3::from_diagonal(&Vector3::new(0.05, 0.05 + 0.27, 0.09 + 0.27)),
            epsilon = 1e-15
        );

        let s = EeState {
            rotation: exp_so3(&Vector3::new(0.2, -0.4, 1.0)),
            omega: Vector3::new(1.0, 2.0, 3.0),
            ..s
        };
        assert_eq!(
            mass_matrix(&UamParams::default(), &s).fixed_view::<3, 3>(3, 0).amax(),
            0.0
        );
    }

    #[test]
    fn coriolis_examples() {
        let p = UamParams::default();
        let s = EeState {
            v_lin: Vector3::new(0.3, 0.1, 0.0),
            ..EeState::at_rest(Vector3::zeros(), exp_so3(&Vector3::new(0.1, 0.2, 0.3)))
        };
        assert_eq!(coriolis_matrix(&p, &s), Matrix6::zeros());

        let p0 = UamParams {
            t_b_e: Vector3::zeros(),
            ..p.clone()
        };
        let s = EeState {
            omega: Vector3::new(0.5, -1.0, 2.0),
            ..s
        };
        let c = coriolis_matrix(&p0, &s);
        assert_eq!(c.fixed_view::<3, 3>(0, 3).amax(), 0.0);
        assert_relative_eq!(
            c.fixed_view::<3, 3>(3, 3).into_owned(),
            -hat(&(p0.inertia * s.omega)),
            epsilon = 1e-15
        );
        let c = coriolis_matrix(&p, &s);
        assert_eq!(c.fixed_view::<3, 3>(0, 0).amax(), 0.0);
        assert_eq!(c.fixed_view::<3, 3>(3, 0).amax(), 0.0);
    }

    #[test]
    fn hover_and_free_fall() {
        let p = UamParams::default();
        let s = rest(&p);
        let frame = wall();
        let hover = gravity_wrench(&p, &s.ee.rotation);
        let a = accel(&p, &s, &hover, &Wrench::zero(Frame::C), &frame).unwrap();
        assert!(a.amax() < 1e-12);

        let p = UamParams {
            t_b_e: Vector3::zeros(),
            ..p
        };
        let a = accel(&p, &s, &Wrench::zero(Frame::B), &Wrench::zero(Frame::C), &frame).unwrap();
        assert_relative_eq!(
            a.fixed_rows::<3>(0).into_owned(),
            Vector3::new(0.0, 0.0, -9.81),
            epsilon = 1e-12
        );
        assert!(a.fixed_rows::<3>(3).amax() < 1e-12);
    }

    #[test]
    fn contact_push_accelerates_out_of_wall() {
        let p = UamParams {
            t_b_e: Vector3::zeros(),
            ..UamParams::default()
        };
        let s = rest(&p);
        let frame = wall();
        let hover = gravity_wrench(&p, &s.ee.rotation);
        let tc = Wrench::new(Vector3::new(2.0, 0.0, 0.0), Vector3::zeros(), Frame::C);
        let a = accel(&p, &s, &hover, &tc, &frame).unwrap();
        // F / m along -n_in
        assert_relative_eq!(
            a.fixed_rows::<3>(0).into_owned(),
            Vector3::new(-2.0 / 3.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn euler_translation_and_rotation() {
        let p = UamParams {
            t_b_e: Vector3::zeros(),
            inertia: Matrix3::identity() * 0.05,
            ..UamParams::default()
        };
        let frame = wall();
        let mut s = rest(&p);
        s.ee.v_lin = Vector3::new(0.1, 0.0, 0.0);
        let hover = gravity_wrench(&p, &s.ee.rotation);
        let n = step_euler(&p, &s, &hover, &frame, no_contact, 0.0, 0.1).unwrap();
        assert_relative_eq!(n.ee.p - s.ee.p, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-15);

        let mut s = rest(&p);
        s.ee.omega = Vector3::new(0.0, 0.0, 1.0);
        // No gravity so the attitude change does not tilt the weight support.
        let p_free = UamParams { gravity: 0.0, ..p };
        let h = std::f64::consts::FRAC_PI_2;
        let n = step_euler(&p_free, &s, &Wrench::zero(Frame::B), &frame, no_contact, 0.0, h).unwrap();
        assert_relative_eq!(n.ee.rotation.matrix(), Rotation::rz(h).matrix(), epsilon = 1e-12);
        let n = step_rk4(&p_free, &s, &Wrench::zero(Frame::B), &frame, no_contact, 0.0, h).unwrap();
        assert_relative_eq!(n.ee.rotation.matrix(), Rotation::rz(h).matrix(), epsilon = 1e-12);
    }

    fn maneuver(p: &UamParams, t: f64, s: &State) -> Wrench {
        let g = gravity_wrench(p, &s.ee.rotation);
        let push = 0.003 * (std::f64::consts::PI * t).sin();
        Wrench::new(
            g.force + Vector3::new(push, -0.5 * push, 0.0),
            Vector3::new(0.0, 0.0, 1e-4 * t),
            Frame::B,
        )
    }

    fn integrate(p: &UamParams, h: f64, rk: bool) -> State {
        let frame = wall();
        let mut s = rest(p);
        let steps = (1.0 / h).round() as usize;
        for k in 0..steps {
            let tau = maneuver(p, k as f64 * h, &s);
            s = if rk {
                step_rk4(p, &s, &tau, &frame, no_contact, 0.0, h).unwrap()
            } else {
                step_euler(p, &s, &tau, &frame, no_contact, 0.0, h).unwrap()
            };
        }
        s
    }

    fn state_gap(a: &State, b: &State) -> f64 {
        let dr = (a.ee.rotation.matrix() - b.ee.rotation.matrix()).amax();
        (a.ee.p - b.ee.p)
            .amax()
            .max((a.ee.v_lin - b.ee.v_lin).amax())
            .max((a.ee.omega - b.ee.omega).amax())
            .max(dr)
    }

    #[test]
    fn rk4_and_euler_agree_on_gentle_maneuver() {
        let p = UamParams::default();
        let a = integrate(&p, 1e-3, true);
        let b = integrate(&p, 1e-3, false);
        assert!(state_gap(&a, &b) < 1e-6, "gap {}", state_gap(&a, &b));
        // first-order convergence of Euler towards the 4-stage reference
        let e1 = state_gap(&a, &integrate(&p, 4e-3, false));
        let e2 = state_gap(&a, &integrate(&p, 2e-3, false));
        let ratio = e1 / e2;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    /// Brute-force Newton–Euler about the COM, differentiated numerically to
    /// get the tip twist rate.
    fn newton_euler_tip_accel(
        p: &UamParams,
        s: &State,
        f_world: &Vector3<f64>,
        tau_com: &Vector3<f64>,
    ) -> Vector6<f64> {
        let r = *s.ee.rotation.matrix();
        let t = p.t_b_e;
        let w = s.ee.omega;
        let wdot = p.inertia.try_inverse().unwrap() * (tau_com - w.cross(&(p.inertia * w)));
        let com_acc = f_world / p.mass;
        // tip velocity as a function of time along the rigid motion, differentiated centrally
        let eps = 1e-5;
        let tip_vel = |dt: f64| {
            let wt = w + wdot * dt;
            let rt = r * exp_so3(&(w * dt + 0.5 * wdot * dt * dt)).matrix();
            let vcom = (s.ee.v_lin - r * w.cross(&t)) + com_acc * dt;
            vcom + rt * wt.cross(&t)
        };
        let pdd = (tip_vel(eps) - tip_vel(-eps)) / (2.0 * eps);
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&pdd);
        out.fixed_rows_mut::<3>(3).copy_from(&wdot);
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn accel_matches_newton_euler_up_to_dropped_coupling(
            rv in proptest::array::uniform3(-0.5..0.5f64),
            wv in proptest::array::uniform3(-1.0..1.0f64),
            vv in proptest::array::uniform3(-0.3..0.3f64),
            fa in proptest::array::uniform3(-5.0..5.0f64),
            ma in proptest::array::uniform3(-0.5..0.5f64),
            fc in 0.0..4.0f64,
            zero_offset in any::<bool>(),
        ) {
            let mut p = UamParams::default();
            if zero_offset { p.t_b_e = Vector3::zeros(); }
            let frame = wall();
            let s = State {
                ee: EeState {
                    p: Vector3::new(0.9, 0.0, 1.0),
                    rotation: exp_so3(&Vector3::from(rv)),
                    v_lin: Vector3::from(vv),
                    omega: Vector3::from(wv),
                },
                force: fc,
            };
            let g = gravity_wrench(&p, &s.ee.rotation);
            let tau = Wrench::new(g.force + Vector3::from(fa), Vector3::from(ma), Frame::B);
            let tc = Wrench::new(Vector3::new(fc, -0.4 * fc, 0.2 * fc), Vector3::zeros(), Frame::C);
            let model = accel(&p, &s, &tau, &tc, &frame).unwrap();

            // physical forces in the world; the contact force acts at the tip
            let r = *s.ee.rotation.matrix();
            let f_contact_w = frame.to_world(&on_vehicle(&tc).force);
            let f_world = r * tau.force + f_contact_w - Vector3::new(0.0, 0.0, p.mass * p.gravity);
            let tau_com = tau.torque + p.t_b_e.cross(&(r.transpose() * f_contact_w));
            let exact = newton_euler_tip_accel(&p, &s, &f_world, &tau_com);

            // translational row: the only discrepancy enters through m [t]x ω̇
            let dw = model.fixed_rows::<3>(3) - exact.fixed_rows::<3>(3);
            let shifted = model.fixed_rows::<3>(0) + r * p.t_b_e.cross(&dw);
            prop_assert!((shifted - exact.fixed_rows::<3>(0)).amax() < 1e-6);
            // rotational row: J_E ω̇_model = J_E ω̇_exact - m t × a_tip_body (the coupling the model omits)
            let je = p.tip_inertia();
            let a_body = r.transpose() * exact.fixed_rows::<3>(0).into_owned();
            let lhs = je * model.fixed_rows::<3>(3).into_owned();
            let rhs = je * exact.fixed_rows::<3>(3).into_owned() - p.mass * p.t_b_e.cross(&a_body);
            prop_assert!((lhs - rhs).amax() < 1e-6, "rotational residual {}", (lhs - rhs).amax());
            if zero_offset {
                prop_assert!((model - exact).amax() < 1e-6);
            }
        }
    }
}
