//! Resampling, feasibility checks and the constant-speed baseline.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{PlanContext, RawPlan, Sample, Trajectory, Waypoint};
use crate::contact::{contact_wrench, Friction};
use crate::error::{Error, Result};
use crate::model::{accel, step_euler, EeState, State};
use crate::se3::{exp_so3, log_so3, project_so3, Frame, Rotation, Wrench};

/// Largest violation per constraint family (0 when satisfied).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub dynamics: f64,
    pub waypoint: f64,
    pub surface_contact: f64,
    pub surface_free: f64,
    pub task: f64,
    pub speed: f64,
    pub omega: f64,
    pub accel: f64,
    pub wrench: f64,
    pub wrench_rate: f64,
    pub force: f64,
    pub force_rate: f64,
    pub step: f64,
    pub max_speed: f64,
    pub max_force_rate: f64,
}

impl FeasibilityReport {
    /// `(family, violation)` pairs, excluding the raw maxima.
    pub fn families(&self) -> [(&'static str, f64); 13] {
        [
            ("dynamics", self.dynamics),
            ("waypoint", self.waypoint),
            ("surface_contact", self.surface_contact),
            ("surface_free", self.surface_free),
            ("task", self.task),
            ("speed", self.speed),
            ("omega", self.omega),
            ("accel", self.accel),
            ("wrench", self.wrench),
            ("wrench_rate", self.wrench_rate),
            ("force", self.force),
            ("force_rate", self.force_rate),
            ("step", self.step),
        ]
    }

    /// True when every family is within `tol`, dynamics within `dyn_tol`.
    pub fn passes(&self, tol: f64, dyn_tol: f64) -> bool {
        self.families()
            .iter()
            .all(|(name, v)| *v <= if *name == "dynamics" { dyn_tol } else { tol })
    }

    pub fn worst(&self) -> (&'static str, f64) {
        self.families()
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or(("none", 0.0))
    }
}

fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

fn angle_between(a: &Rotation, b: &Rotation) -> f64 {
    let r = a.transpose() * *b;
    let m = r.matrix();
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() * 0.5;
    s.atan2((m.trace() - 1.0) * 0.5)
}

fn wrench_excess(ctx: &PlanContext, t: &Vector6<f64>) -> f64 {
    (0..6)
        .map(|i| excess(t[i], ctx.params.wrench_min[i], ctx.params.wrench_max[i]))
        .fold(0.0, f64::max)
}

/// Feasibility of a knot solution against the transcription constraints.
pub fn check_knots(raw: &RawPlan, waypoints: &[Waypoint], ctx: &PlanContext) -> Result<FeasibilityReport> {
    if raw.knots.is_empty() {
        return Err(Error::Empty("plan"));
    }
    let w = &ctx.weights;
    let pr = &ctx.params;
    let r_ref = ctx.reference_rotation();
    let mut rep = FeasibilityReport::default();
    for (i, &k) in raw.layout.waypoint_knots.iter().enumerate() {
        let kn = &raw.knots[k];
        rep.waypoint = rep.waypoint.max((kn.state.ee.p - waypoints[i].p).norm());
        if waypoints[i].is_contact() {
            rep.force = rep.force.max((kn.state.force - waypoints[i].force).abs());
        }
    }
    let n = raw.knots.len();
    for (k, kn) in raw.knots.iter().enumerate() {
        let s = &kn.state;
        let phi = ctx.surface.phi(&s.ee.p);
        match raw.layout.roles[k] {
            super::KnotRole::Contact | super::KnotRole::Dwell(_) => {
                rep.surface_contact = rep.surface_contact.max(phi.abs())
            }
            super::KnotRole::Waypoint(i) if waypoints[i].is_contact() => {
                rep.surface_contact = rep.surface_contact.max(phi.abs())
            }
            super::KnotRole::Free { clearance } => rep.surface_free = rep.surface_free.max(clearance - phi),
            _ => rep.surface_free = rep.surface_free.max(-phi),
        }
        rep.task = rep.task.max(angle_between(&s.ee.rotation, &r_ref));
        let speed = s.ee.v_lin.norm();
        rep.max_speed = rep.max_speed.max(speed);
        rep.speed = rep.speed.max(speed - w.v_max);
        rep.omega = rep.omega.max(s.ee.omega.amax() - w.omega_max);
        rep.wrench = rep.wrench.max(wrench_excess(ctx, &kn.tau.to_vector()));
        rep.force = rep.force.max(excess(s.force, 0.0, w.force_max));
        if k + 1 == n {
            continue;
        }
        let nx = &raw.knots[k + 1];
        let h = kn.h;
        rep.step = rep.step.max(excess(h, w.h_min, w.h_max));
        let fr = (nx.state.force - s.force) / h;
        rep.max_force_rate = rep.max_force_rate.max(fr.abs());
        rep.force_rate = rep.force_rate.max(fr.abs() - w.force_rate_max);
        let dtau = (nx.tau.to_vector() - kn.tau.to_vector()) / h;
        for i in 0..6 {
            rep.wrench_rate = rep
                .wrench_rate
                .max(excess(dtau[i], pr.wrench_rate_min[i], pr.wrench_rate_max[i]));
        }
        let dv = (nx.state.ee.v_lin - s.ee.v_lin) / h;
        rep.accel = rep.accel.max(dv.amax() - w.a_max);
        let tc = contact_wrench(
            &ctx.contact,
            s.force,
            &ctx.frame.tangential(&s.ee.v_lin),
            Friction::Smooth,
        );
        let a = accel(pr, s, &kn.tau, &tc, &ctx.frame)?;
        let pred_p = s.ee.p + s.ee.v_lin * h;
        let pred_r = project_so3((s.ee.rotation * exp_so3(&(s.ee.omega * h))).matrix())?;
        let pred_v = s.ee.twist() + a * h;
        let res = (pred_p - nx.state.ee.p)
            .amax()
            .max(angle_between(&pred_r, &nx.state.ee.rotation))
            .max((pred_v - nx.state.ee.twist()).amax());
        rep.dynamics = rep.dynamics.max(res);
    }
    Ok(rep)
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let s = if l2 > 0.0 {
        ((p - a).dot(&ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * s - p).norm()
}

/// Feasibility of a sampled trajectory.
///
/// Contact is taken from the sampled force: samples with `F > 0` must lie on
/// the surface, the rest must not penetrate. Waypoint residuals are measured
/// against the sampled polyline.
pub fn check_feasibility(traj: &Trajectory, waypoints: &[Waypoint], ctx: &PlanContext) -> Result<FeasibilityReport> {
    if traj.samples.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let w = &ctx.weights;
    let pr = &ctx.params;
    let r_ref = ctx.reference_rotation();
    let s = &traj.samples;
    let mut rep = FeasibilityReport::default();
    for wp in waypoints {
        let d = if s.len() == 1 {
            (s[0].state.ee.p - wp.p).norm()
        } else {
            s.windows(2)
                .map(|ab| segment_distance(&wp.p, &ab[0].state.ee.p, &ab[1].state.ee.p))
                .fold(f64::INFINITY, f64::min)
        };
        rep.waypoint = rep.waypoint.max(d);
    }
    for (i, smp) in s.iter().enumerate() {
        let st = &smp.state;
        let phi = ctx.surface.phi(&st.ee.p);
        if st.force > 0.0 {
            rep.surface_contact = rep.surface_contact.max(phi.abs());
        } else {
            rep.surface_free = rep.surface_free.max(-phi);
        }
        rep.task = rep.task.max(angle_between(&st.ee.rotation, &r_ref));
        let speed = st.ee.v_lin.norm();
        rep.max_speed = rep.max_speed.max(speed);
        rep.speed = rep.speed.max(speed - w.v_max);
        rep.omega = rep.omega.max(st.ee.omega.amax() - w.omega_max);
        rep.wrench = rep.wrench.max(wrench_excess(ctx, &smp.tau_a.to_vector()));
        rep.force = rep.force.max(excess(st.force, 0.0, w.force_max));
        if i + 1 == s.len() {
            continue;
        }
        let nx = &s[i + 1];
        let dt = nx.t - smp.t;
        let fr = (nx.state.force - st.force) / dt;
        rep.max_force_rate = rep.max_force_rate.max(fr.abs());
        rep.force_rate = rep.force_rate.max(fr.abs() - w.force_rate_max);
        let dtau = (nx.tau_a.to_vector() - smp.tau_a.to_vector()) / dt;
        for j in 0..6 {
            rep.wrench_rate = rep
                .wrench_rate
                .max(excess(dtau[j], pr.wrench_rate_min[j], pr.wrench_rate_max[j]));
        }
        rep.accel = rep.accel.max(((nx.state.ee.v_lin - st.ee.v_lin) / dt).amax() - w.a_max);
        let cp = ctx.contact;
        let frame = ctx.frame;
        let pred = step_euler(
            pr,
            st,
            &smp.tau_a,
            &ctx.frame,
            move |x: &State| contact_wrench(&cp, x.force, &frame.tangential(&x.ee.v_lin), Friction::Smooth),
            nx.state.force,
            dt,
        )?;
        let res = (pred.ee.p - nx.state.ee.p)
            .amax()
            .max(angle_between(&pred.ee.rotation, &nx.state.ee.rotation))
            .max((pred.ee.twist() - nx.state.ee.twist()).amax());
        rep.dynamics = rep.dynamics.max(res);
    }
    Ok(rep)
}

/// Uniform resampling of a knot plan with linear interpolation and geodesic
/// attitude blending. Samples past the final knot hold it.
pub fn interpolate(raw: &RawPlan, dt: f64, ctx: &PlanContext) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    if raw.knots.is_empty() {
        return Err(Error::Empty("plan"));
    }
    let times = raw.knot_times();
    let total = raw.duration();
    let count = (total / dt - 1e-9).ceil().max(0.0) as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut j = 0usize;
    let last = raw.knots.len() - 1;
    for i in 0..count {
        let t = i as f64 * dt;
        while j < last && times[j + 1] <= t {
            j += 1;
        }
        let state;
        let tau;
        if j >= last {
            let k = &raw.knots[last];
            state = k.state;
            tau = k.tau;
        } else {
            let a = &raw.knots[j];
            let b = &raw.knots[j + 1];
            let lam = ((t - times[j]) / a.h).clamp(0.0, 1.0);
            let mix = |x: f64, y: f64| (1.0 - lam) * x + lam * y;
            let rel = log_so3(&(a.state.ee.rotation.transpose() * b.state.ee.rotation))?;
            let rot = project_so3((a.state.ee.rotation * exp_so3(&(rel * lam))).matrix())?;
            state = State {
                ee: EeState {
                    p: a.state.ee.p * (1.0 - lam) + b.state.ee.p * lam,
                    rotation: rot,
                    v_lin: a.state.ee.v_lin * (1.0 - lam) + b.state.ee.v_lin * lam,
                    omega: a.state.ee.omega * (1.0 - lam) + b.state.ee.omega * lam,
                },
                force: mix(a.state.force, b.state.force).max(0.0),
            };
            tau = Wrench::new(
                a.tau.force * (1.0 - lam) + b.tau.force * lam,
                a.tau.torque * (1.0 - lam) + b.tau.torque * lam,
                Frame::B,
            );
        }
        let tau_c = contact_wrench(
            &ctx.contact,
            state.force,
            &ctx.frame.tangential(&state.ee.v_lin),
            Friction::Sign,
        );
        samples.push(Sample {
            t,
            state,
            tau_a: tau,
            tau_c,
        });
    }
    Ok(Trajectory { dt, samples })
}

/// Constant-speed piecewise-linear reference through the waypoints with a
/// linear force profile and quasi-static feedforward. No dynamics are
/// enforced.
pub fn plan_baseline(waypoints: &[Waypoint], speed: f64, dt: f64, ctx: &PlanContext) -> Result<Trajectory> {
    if !(speed > 0.0) {
        return Err(Error::param("speed", "must be > 0"));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    if waypoints.is_empty() {
        return Err(Error::Empty("waypoints"));
    }
    let mut cum = vec![0.0; waypoints.len()];
    for i in 1..waypoints.len() {
        cum[i] = cum[i - 1] + (waypoints[i].p - waypoints[i - 1].p).norm();
    }
    let total = *cum.last().unwrap_or(&0.0);
    let duration = total / speed;
    let count = (duration / dt - 1e-9).ceil().max(0.0) as usize + 1;
    let r_ref = ctx.reference_rotation();
    let mut samples = Vec::with_capacity(count);
    let mut seg = 0usize;
    for i in 0..count {
        let t = i as f64 * dt;
        let s = (speed * t).min(total);
        while seg + 2 < waypoints.len() && cum[seg + 1] <= s {
            seg += 1;
        }
        let (p, force, v) = if waypoints.len() == 1 || total == 0.0 {
            (waypoints[0].p, waypoints[0].force, Vector3::zeros())
        } else {
            let a = &waypoints[seg];
            let b = &waypoints[seg + 1];
            let len = cum[seg + 1] - cum[seg];
            let lam = if len > 0.0 {
                ((s - cum[seg]) / len).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let v = if len > 0.0 && speed * t < total {
                (b.p - a.p) / len * speed
            } else {
                Vector3::zeros()
            };
            (a.p + (b.p - a.p) * lam, a.force + (b.force - a.force) * lam, v)
        };
        let state = State {
            ee: EeState {
                p,
                rotation: r_ref,
                v_lin: v,
                omega: Vector3::zeros(),
            },
            force,
        };
        let tau = super::quasi_static_wrench(ctx, force);
        let tau_c = contact_wrench(&ctx.contact, force, &ctx.frame.tangential(&v), Friction::Sign);
        samples.push(Sample {
            t,
            state,
            tau_a: Wrench::from_vector(&tau, Frame::B),
            tau_c,
        });
    }
    Ok(Trajectory { dt, samples })
}
