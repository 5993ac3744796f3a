//! Direct transcription of the contact-aware planning problem.

use nalgebra::{Vector3, Vector6};

use super::dynamics::{KnotModel, YVec, NY};
use super::layout::{KnotLayout, KnotRole};
use super::{Knot, PlanContext, Waypoint};
use crate::error::{Error, Result};
use crate::model::{EeState, State};
use crate::se3::{exp_so3, log_so3, project_so3, Frame, Wrench};
use crate::solver::Nlp;

const INF: f64 = 2e19;

pub(crate) const NV: usize = 20;
pub(crate) const P: usize = 0;
pub(crate) const TH: usize = 3;
pub(crate) const V: usize = 6;
pub(crate) const W: usize = 9;
pub(crate) const F: usize = 12;
pub(crate) const TAU: usize = 13;
pub(crate) const H: usize = 19;

#[derive(Debug, Clone, Default)]
struct KnotRows {
    task: Option<usize>,
    surface: Option<usize>,
    pin: Option<(usize, Vec<Vector3<f64>>, Vector3<f64>)>,
    force_eq: Option<usize>,
    speed: Option<usize>,
    dynamics: Option<usize>,
    force_rate: Option<usize>,
    tau_rate: Option<usize>,
    accel: Option<usize>,
}

/// Row counts per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintCounts {
    /// Dynamics blocks (one per interval, 12 rows each).
    pub dynamics: usize,
    /// Waypoint equality groups.
    pub waypoint: usize,
    pub surface_eq: usize,
    pub surface_ineq: usize,
    pub task: usize,
    pub dwell_pins: usize,
    pub force_rate: usize,
    pub wrench_rate: usize,
    pub accel: usize,
    pub speed: usize,
    pub rows: usize,
}

/// The planning NLP over `K` knots of [`NV`] variables each.
#[derive(Debug, Clone)]
pub struct TrajectoryNlp {
    ctx: PlanContext,
    model: KnotModel,
    waypoints: Vec<Waypoint>,
    layout: KnotLayout,
    rows: Vec<KnotRows>,
    row_start: Vec<usize>,
    names: Vec<(&'static str, usize)>,
    cl: Vec<f64>,
    cu: Vec<f64>,
    xl: Vec<f64>,
    xu: Vec<f64>,
    x0: Vec<f64>,
    m: usize,
}

#[inline]
fn var(k: usize, off: usize) -> usize {
    k * NV + off
}

impl TrajectoryNlp {
    pub fn new(waypoints: &[Waypoint], ctx: &PlanContext) -> Result<Self> {
        let n_motion = KnotLayout::motion_knots(waypoints, &ctx.weights);
        Self::with_knots(waypoints, ctx, n_motion)
    }

    /// Builds the problem with an explicit motion-knot count.
    pub fn with_knots(waypoints: &[Waypoint], ctx: &PlanContext, n_motion: usize) -> Result<Self> {
        let layout = KnotLayout::build(waypoints, n_motion, &ctx.weights)?;
        let model = KnotModel::new(&ctx.params, &ctx.frame, &ctx.contact);
        let mut me = TrajectoryNlp {
            ctx: ctx.clone(),
            model,
            waypoints: waypoints.to_vec(),
            layout,
            rows: Vec::new(),
            row_start: Vec::new(),
            names: Vec::new(),
            cl: Vec::new(),
            cu: Vec::new(),
            xl: Vec::new(),
            xu: Vec::new(),
            x0: Vec::new(),
            m: 0,
        };
        me.build_bounds();
        me.build_rows();
        me.build_initial();
        Ok(me)
    }

    pub fn layout(&self) -> &KnotLayout {
        &self.layout
    }

    pub fn num_knots(&self) -> usize {
        self.layout.len()
    }

    fn k_count(&self) -> usize {
        self.layout.len()
    }

    fn fixed(&self, i: usize) -> bool {
        (self.xu[i] - self.xl[i]).abs() <= 1e-14
    }

    fn build_bounds(&mut self) {
        let k_n = self.k_count();
        let w = &self.ctx.weights;
        let p = &self.ctx.params;
        let n = k_n * NV;
        let mut xl = vec![-INF; n];
        let mut xu = vec![INF; n];
        for k in 0..k_n {
            for i in 0..3 {
                xl[var(k, V + i)] = p.twist_min[i];
                xu[var(k, V + i)] = p.twist_max[i];
                xl[var(k, W + i)] = -w.omega_max;
                xu[var(k, W + i)] = w.omega_max;
            }
            if self.layout.force_free(k, &self.waypoints) {
                xl[var(k, F)] = 0.0;
                xu[var(k, F)] = w.force_max;
            } else {
                xl[var(k, F)] = 0.0;
                xu[var(k, F)] = 0.0;
            }
            for i in 0..6 {
                xl[var(k, TAU + i)] = p.wrench_min[i];
                xu[var(k, TAU + i)] = p.wrench_max[i];
            }
            xl[var(k, H)] = w.h_min;
            xu[var(k, H)] = w.h_max;
        }
        for k in [0, k_n - 1] {
            for i in 0..6 {
                xl[var(k, V + i)] = 0.0;
                xu[var(k, V + i)] = 0.0;
            }
        }
        // Final knot holds static equilibrium.
        let hold = super::quasi_static_wrench(&self.ctx, self.waypoints.last().map_or(0.0, |w| w.force));
        for i in 0..6 {
            let v = hold[i].clamp(p.wrench_min[i], p.wrench_max[i]);
            xl[var(k_n - 1, TAU + i)] = v;
            xu[var(k_n - 1, TAU + i)] = v;
        }
        let last = var(k_n - 1, H);
        xl[last] = 0.5 * w.h_max;
        xu[last] = 0.5 * w.h_max;
        self.xl = xl;
        self.xu = xu;
    }

    fn push_row(&mut self, name: &'static str, k: usize, lo: f64, hi: f64) -> usize {
        let r = self.cl.len();
        self.cl.push(lo);
        self.cu.push(hi);
        self.names.push((name, k));
        r
    }

    fn build_rows(&mut self) {
        let k_n = self.k_count();
        let surface = self.ctx.surface;
        let frame = self.ctx.frame;
        let w = self.ctx.weights.clone();
        let params = self.ctx.params.clone();
        for k in 0..k_n {
            self.row_start.push(self.cl.len());
            let mut kr = KnotRows::default();
            // With fixed angular rate the dynamics row already carries the attitude over.
            if k == 0 || !self.fixed(var(k - 1, W)) {
                kr.task = Some(self.push_row("task.rx", k, 0.0, 0.0));
                self.push_row("task.ry", k, 0.0, 0.0);
                self.push_row("task.rz", k, 0.0, 0.0);
            }
            let tangential = vec![frame.lateral(), frame.t_z];
            // A resting contact start already fixes the next position through the dynamics.
            let implied = k == 1
                && self.fixed(var(0, V))
                && matches!(self.layout.roles[0], KnotRole::Waypoint(i) if self.waypoints[i].is_contact());
            match self.layout.roles[k] {
                KnotRole::Waypoint(i) if implied => {
                    kr.force_eq = self.waypoints[i]
                        .is_contact()
                        .then(|| self.push_row("waypoint.force", k, self.waypoints[i].force, self.waypoints[i].force));
                }
                KnotRole::Contact | KnotRole::Dwell(_) if implied => {}
                KnotRole::Waypoint(i) => {
                    let wp = self.waypoints[i];
                    if wp.is_contact() {
                        kr.surface = Some(self.push_row("surface.contact", k, 0.0, 0.0));
                        let r = self.push_row("waypoint.lateral", k, 0.0, 0.0);
                        self.push_row("waypoint.vertical", k, 0.0, 0.0);
                        kr.pin = Some((r, tangential, wp.p));
                        kr.force_eq = Some(self.push_row("waypoint.force", k, wp.force, wp.force));
                    } else {
                        if surface.phi(&wp.p) > 1e-9 {
                            kr.surface = Some(self.push_row("surface.free", k, 0.0, INF));
                        }
                        let r = self.push_row("waypoint.x", k, 0.0, 0.0);
                        self.push_row("waypoint.y", k, 0.0, 0.0);
                        self.push_row("waypoint.z", k, 0.0, 0.0);
                        kr.pin = Some((r, vec![Vector3::x(), Vector3::y(), Vector3::z()], wp.p));
                    }
                }
                KnotRole::Dwell(i) => {
                    kr.surface = Some(self.push_row("surface.contact", k, 0.0, 0.0));
                    let r = self.push_row("dwell.lateral", k, 0.0, 0.0);
                    self.push_row("dwell.vertical", k, 0.0, 0.0);
                    kr.pin = Some((r, tangential, self.waypoints[i].p));
                }
                KnotRole::Contact => {
                    kr.surface = Some(self.push_row("surface.contact", k, 0.0, 0.0));
                }
                KnotRole::Free { clearance } => {
                    kr.surface = Some(self.push_row("surface.free", k, clearance, INF));
                }
            }
            if !self.fixed(var(k, V)) {
                kr.speed = Some(self.push_row("speed", k, -INF, w.v_max * w.v_max));
            }
            if k + 1 < k_n {
                let names = [
                    "dynamics.px",
                    "dynamics.py",
                    "dynamics.pz",
                    "dynamics.rx",
                    "dynamics.ry",
                    "dynamics.rz",
                    "dynamics.vx",
                    "dynamics.vy",
                    "dynamics.vz",
                    "dynamics.wx",
                    "dynamics.wy",
                    "dynamics.wz",
                ];
                kr.dynamics = Some(self.push_row(names[0], k, 0.0, 0.0));
                for name in &names[1..] {
                    self.push_row(name, k, 0.0, 0.0);
                }
                if !(self.fixed(var(k, F)) && self.fixed(var(k + 1, F))) {
                    kr.force_rate = Some(self.push_row("force_rate.max", k, -INF, 0.0));
                    self.push_row("force_rate.min", k, 0.0, INF);
                }
                kr.tau_rate = Some(self.cl.len());
                for _ in 0..6 {
                    self.push_row("wrench_rate.max", k, -INF, 0.0);
                    self.push_row("wrench_rate.min", k, 0.0, INF);
                }
                kr.accel = Some(self.cl.len());
                for _ in 0..3 {
                    self.push_row("accel.max", k, -INF, 0.0);
                    self.push_row("accel.min", k, 0.0, INF);
                }
            }
            self.rows.push(kr);
        }
        let _ = params;
        self.row_start.push(self.cl.len());
        self.m = self.cl.len();
    }

    fn build_initial(&mut self) {
        let k_n = self.k_count();
        let w = &self.ctx.weights;
        let mut x = vec![0.0; k_n * NV];
        let mut pos = vec![Vector3::zeros(); k_n];
        let mut force = vec![0.0; k_n];
        let wk = &self.layout.waypoint_knots;
        for (i, &k) in wk.iter().enumerate() {
            pos[k] = self.waypoints[i].p;
            force[k] = self.waypoints[i].force;
        }
        for i in 0..wk.len() - 1 {
            let (a, b) = (wk[i], wk[i + 1]);
            let wa = self.waypoints[i];
            let wb = self.waypoints[i + 1];
            let inner: Vec<usize> = (a + 1..b)
                .filter(|&k| !matches!(self.layout.roles[k], KnotRole::Dwell(_)))
                .collect();
            let cnt = inner.len();
            for (j, &k) in inner.iter().enumerate() {
                let s = (j + 1) as f64 / (cnt + 1) as f64;
                pos[k] = wa.p + (wb.p - wa.p) * s;
                if let KnotRole::Contact = self.layout.roles[k] {
                    force[k] = wa.force + (wb.force - wa.force) * s;
                }
            }
            let lift: Vec<usize> = (a + 1..b)
                .filter(|&k| self.layout.roles[k] == KnotRole::Dwell(i))
                .collect();
            let d = lift.len();
            for (j, &k) in lift.iter().enumerate() {
                pos[k] = wa.p;
                force[k] = wa.force * (d - 1 - j) as f64 / d as f64;
            }
            let touch: Vec<usize> = (a + 1..b)
                .filter(|&k| self.layout.roles[k] == KnotRole::Dwell(i + 1))
                .collect();
            let d = touch.len();
            for (j, &k) in touch.iter().enumerate() {
                pos[k] = wb.p;
                force[k] = wb.force * j as f64 / d as f64;
            }
        }
        let h0 = 0.95 * w.h_max;
        for k in 0..k_n {
            for i in 0..3 {
                x[var(k, P + i)] = pos[k][i];
            }
            if k + 1 < k_n {
                let v = (pos[k + 1] - pos[k]) / h0;
                for i in 0..3 {
                    x[var(k, V + i)] = v[i];
                }
            }
            x[var(k, F)] = force[k];
            let tau = super::quasi_static_wrench(&self.ctx, force[k]);
            for i in 0..6 {
                x[var(k, TAU + i)] = tau[i];
            }
            x[var(k, H)] = h0;
        }
        for i in 0..x.len() {
            if self.fixed(i) {
                x[i] = self.xl[i];
            }
        }
        self.x0 = x;
    }

    /// Overrides the starting point (length must match).
    pub fn set_initial_point(&mut self, x0: Vec<f64>) {
        assert_eq!(x0.len(), self.x0.len());
        self.x0 = x0;
    }

    pub fn initial(&self) -> &[f64] {
        &self.x0
    }

    pub fn counts(&self) -> ConstraintCounts {
        let mut c = ConstraintCounts {
            rows: self.m,
            ..Default::default()
        };
        for (k, kr) in self.rows.iter().enumerate() {
            c.task += 3 * kr.task.is_some() as usize;
            if let Some(r) = kr.surface {
                if self.cl[r] == self.cu[r] {
                    c.surface_eq += 1;
                } else {
                    c.surface_ineq += 1;
                }
            }
            if kr.pin.is_some() {
                if matches!(self.layout.roles[k], KnotRole::Waypoint(_)) {
                    c.waypoint += 1;
                } else {
                    c.dwell_pins += 1;
                }
            }
            c.speed += kr.speed.is_some() as usize;
            c.dynamics += kr.dynamics.is_some() as usize;
            c.force_rate += kr.force_rate.is_some() as usize;
            c.wrench_rate += kr.tau_rate.is_some() as usize;
            c.accel += kr.accel.is_some() as usize;
        }
        c
    }

    fn y_of(&self, x: &[f64], k: usize) -> YVec {
        let mut y = YVec::zeros();
        for i in 0..NY {
            y[i] = x[var(k, TH + i)];
        }
        y
    }

    fn v3(x: &[f64], k: usize, off: usize) -> Vector3<f64> {
        Vector3::new(x[var(k, off)], x[var(k, off + 1)], x[var(k, off + 2)])
    }

    fn eval_cons(&self, x: &[f64], c: &mut [f64]) {
        let w = &self.ctx.weights;
        let pr = &self.ctx.params;
        let surf = &self.ctx.surface;
        for (k, kr) in self.rows.iter().enumerate() {
            let p = Self::v3(x, k, P);
            if let Some(r) = kr.task {
                for i in 0..3 {
                    c[r + i] = x[var(k, TH + i)];
                }
            }
            if let Some(r) = kr.surface {
                c[r] = surf.phi(&p);
            }
            if let Some((r, dirs, target)) = &kr.pin {
                for (j, d) in dirs.iter().enumerate() {
                    c[r + j] = d.dot(&(p - target));
                }
            }
            if let Some(r) = kr.force_eq {
                c[r] = x[var(k, F)];
            }
            if let Some(r) = kr.speed {
                c[r] = Self::v3(x, k, V).norm_squared();
            }
            let Some(d) = kr.dynamics else { continue };
            let h = x[var(k, H)];
            let (a, _) = self.model.accel(&self.y_of(x, k));
            for i in 0..3 {
                c[d + i] = x[var(k + 1, P + i)] - x[var(k, P + i)] - h * x[var(k, V + i)];
                c[d + 3 + i] = x[var(k + 1, TH + i)] - x[var(k, TH + i)] - h * x[var(k, W + i)];
            }
            for r in 0..6 {
                c[d + 6 + r] = x[var(k + 1, V + r)] - x[var(k, V + r)] - h * a[r];
            }
            if let Some(r) = kr.force_rate {
                let df = x[var(k + 1, F)] - x[var(k, F)];
                c[r] = df - w.force_rate_max * h;
                c[r + 1] = df + w.force_rate_max * h;
            }
            if let Some(r) = kr.tau_rate {
                for i in 0..6 {
                    let dt = x[var(k + 1, TAU + i)] - x[var(k, TAU + i)];
                    c[r + 2 * i] = dt - pr.wrench_rate_max[i] * h;
                    c[r + 2 * i + 1] = dt - pr.wrench_rate_min[i] * h;
                }
            }
            if let Some(r) = kr.accel {
                for i in 0..3 {
                    let dv = x[var(k + 1, V + i)] - x[var(k, V + i)];
                    c[r + 2 * i] = dv - w.a_max * h;
                    c[r + 2 * i + 1] = dv + w.a_max * h;
                }
            }
        }
    }

    fn jac_pass(&self, x: &[f64], out: &mut dyn FnMut(usize, usize, f64)) {
        let w = &self.ctx.weights;
        let pr = &self.ctx.params;
        let n_in = self.ctx.surface.n_in;
        for (k, kr) in self.rows.iter().enumerate() {
            if let Some(r) = kr.task {
                for i in 0..3 {
                    out(r + i, var(k, TH + i), 1.0);
                }
            }
            if let Some(r) = kr.surface {
                for i in 0..3 {
                    out(r, var(k, P + i), -n_in[i]);
                }
            }
            if let Some((r, dirs, _)) = &kr.pin {
                for (j, d) in dirs.iter().enumerate() {
                    for i in 0..3 {
                        out(r + j, var(k, P + i), d[i]);
                    }
                }
            }
            if let Some(r) = kr.force_eq {
                out(r, var(k, F), 1.0);
            }
            if let Some(r) = kr.speed {
                for i in 0..3 {
                    out(r, var(k, V + i), 2.0 * x[var(k, V + i)]);
                }
            }
            let Some(d) = kr.dynamics else { continue };
            let h = x[var(k, H)];
            let (a, ja) = self.model.accel(&self.y_of(x, k));
            for i in 0..3 {
                out(d + i, var(k + 1, P + i), 1.0);
                out(d + i, var(k, P + i), -1.0);
                out(d + i, var(k, V + i), -h);
                out(d + i, var(k, H), -x[var(k, V + i)]);
                out(d + 3 + i, var(k + 1, TH + i), 1.0);
                out(d + 3 + i, var(k, TH + i), -1.0);
                out(d + 3 + i, var(k, W + i), -h);
                out(d + 3 + i, var(k, H), -x[var(k, W + i)]);
            }
            for r in 0..6 {
                out(d + 6 + r, var(k + 1, V + r), 1.0);
                for ycol in 0..NY {
                    let mut v = -h * ja[(r, ycol)];
                    if ycol == 3 + r {
                        v -= 1.0;
                    }
                    out(d + 6 + r, var(k, TH + ycol), v);
                }
                out(d + 6 + r, var(k, H), -a[r]);
            }
            if let Some(r) = kr.force_rate {
                for (j, s) in [(0, -w.force_rate_max), (1, w.force_rate_max)] {
                    out(r + j, var(k + 1, F), 1.0);
                    out(r + j, var(k, F), -1.0);
                    out(r + j, var(k, H), s);
                }
            }
            if let Some(r) = kr.tau_rate {
                for i in 0..6 {
                    for (j, s) in [(0, -pr.wrench_rate_max[i]), (1, -pr.wrench_rate_min[i])] {
                        out(r + 2 * i + j, var(k + 1, TAU + i), 1.0);
                        out(r + 2 * i + j, var(k, TAU + i), -1.0);
                        out(r + 2 * i + j, var(k, H), s);
                    }
                }
            }
            if let Some(r) = kr.accel {
                for i in 0..3 {
                    for (j, s) in [(0, -w.a_max), (1, w.a_max)] {
                        out(r + 2 * i + j, var(k + 1, V + i), 1.0);
                        out(r + 2 * i + j, var(k, V + i), -1.0);
                        out(r + 2 * i + j, var(k, H), s);
                    }
                }
            }
        }
    }

    fn hess_pass(&self, x: &[f64], of: f64, lam: &[f64], out: &mut dyn FnMut(usize, usize, f64)) {
        let w = &self.ctx.weights;
        let mut put = |a: usize, b: usize, v: f64| {
            if a >= b {
                out(a, b, v)
            } else {
                out(b, a, v)
            }
        };
        for (k, kr) in self.rows.iter().enumerate() {
            if let Some(r) = kr.speed {
                for i in 0..3 {
                    put(var(k, V + i), var(k, V + i), 2.0 * lam[r]);
                }
            }
            let Some(d) = kr.dynamics else { continue };
            let h = x[var(k, H)];
            let hk = var(k, H);
            for i in 0..6 {
                let vi = x[var(k, V + i)];
                put(var(k, V + i), var(k, V + i), of * 2.0 * h * w.w_v[i]);
                put(hk, var(k, V + i), of * 2.0 * w.w_v[i] * vi);
                let t = x[var(k, TAU + i)];
                let dt = x[var(k + 1, TAU + i)] - t;
                put(
                    var(k, TAU + i),
                    var(k, TAU + i),
                    of * 2.0 * h * (w.w_tau[i] + w.w_dtau[i]),
                );
                put(hk, var(k, TAU + i), of * 2.0 * (w.w_tau[i] * t - w.w_dtau[i] * dt));
                put(var(k + 1, TAU + i), var(k, TAU + i), -of * 2.0 * h * w.w_dtau[i]);
                put(var(k + 1, TAU + i), var(k + 1, TAU + i), of * 2.0 * h * w.w_dtau[i]);
                put(var(k + 1, TAU + i), hk, of * 2.0 * w.w_dtau[i] * dt);
            }
            for i in 0..3 {
                put(hk, var(k, V + i), -lam[d + i]);
                put(hk, var(k, W + i), -lam[d + 3 + i]);
            }
            let la = Vector6::from_fn(|r, _| lam[d + 6 + r]);
            let y = self.y_of(x, k);
            let ha = self.model.hessian(&y, &la);
            let (_, ja) = self.model.accel(&y);
            let gh = ja.transpose() * la;
            for r in 0..NY {
                for c in 0..=r {
                    put(var(k, TH + r), var(k, TH + c), -h * ha[(r, c)]);
                }
                put(hk, var(k, TH + r), -gh[r]);
            }
        }
    }

    /// Decision vector from knots with this problem's layout.
    pub fn pack(&self, knots: &[Knot]) -> Result<Vec<f64>> {
        if knots.len() != self.k_count() {
            return Err(Error::param(
                "knots",
                format!("expected {}, got {}", self.k_count(), knots.len()),
            ));
        }
        let mut x = vec![0.0; self.k_count() * NV];
        for (k, kn) in knots.iter().enumerate() {
            let e = &kn.state.ee;
            let th = log_so3(&project_so3(&(self.model.r_ref.transpose() * e.rotation.matrix()))?)?;
            let tau = kn.tau.to_vector();
            for i in 0..3 {
                x[var(k, P + i)] = e.p[i];
                x[var(k, TH + i)] = th[i];
                x[var(k, V + i)] = e.v_lin[i];
                x[var(k, W + i)] = e.omega[i];
            }
            x[var(k, F)] = kn.state.force;
            for i in 0..6 {
                x[var(k, TAU + i)] = tau[i];
            }
            x[var(k, H)] = kn.h;
        }
        Ok(x)
    }

    /// Knot solution from a decision vector.
    pub fn unpack(&self, x: &[f64]) -> Result<Vec<Knot>> {
        (0..self.k_count())
            .map(|k| {
                let th = Self::v3(x, k, TH);
                let rot = project_so3(&(self.model.r_ref * exp_so3(&th).matrix()))?;
                let tau = Vector6::from_fn(|i, _| x[var(k, TAU + i)]);
                Ok(Knot {
                    state: State {
                        ee: EeState {
                            p: Self::v3(x, k, P),
                            rotation: rot,
                            v_lin: Self::v3(x, k, V),
                            omega: Self::v3(x, k, W),
                        },
                        force: x[var(k, F)].max(0.0),
                    },
                    tau: Wrench::from_vector(&tau, Frame::B),
                    h: x[var(k, H)],
                })
            })
            .collect()
    }
}

impl Nlp for TrajectoryNlp {
    fn num_vars(&self) -> usize {
        self.k_count() * NV
    }

    fn num_cons(&self) -> usize {
        self.m
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.xl.clone(), self.xu.clone())
    }

    fn con_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.cl.clone(), self.cu.clone())
    }

    fn initial_point(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let w = &self.ctx.weights;
        let mut f = 0.0;
        for k in 0..self.k_count() - 1 {
            let h = x[var(k, H)];
            let mut s = w.gamma;
            for i in 0..6 {
                let v = x[var(k, V + i)];
                let t = x[var(k, TAU + i)];
                let dt = x[var(k + 1, TAU + i)] - t;
                s += w.w_v[i] * v * v + w.w_tau[i] * t * t + w.w_dtau[i] * dt * dt;
            }
            f += s * h;
        }
        f
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let w = &self.ctx.weights;
        g.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.k_count() - 1 {
            let h = x[var(k, H)];
            let mut s = w.gamma;
            for i in 0..6 {
                let v = x[var(k, V + i)];
                let t = x[var(k, TAU + i)];
                let dt = x[var(k + 1, TAU + i)] - t;
                s += w.w_v[i] * v * v + w.w_tau[i] * t * t + w.w_dtau[i] * dt * dt;
                g[var(k, V + i)] += 2.0 * h * w.w_v[i] * v;
                g[var(k, TAU + i)] += 2.0 * h * (w.w_tau[i] * t - w.w_dtau[i] * dt);
                g[var(k + 1, TAU + i)] += 2.0 * h * w.w_dtau[i] * dt;
            }
            g[var(k, H)] += s;
        }
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        self.eval_cons(x, c);
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        self.jac_pass(&self.x0, &mut |r, c, _| s.push((r, c)));
        s
    }

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        let mut k = 0;
        self.jac_pass(x, &mut |_, _, v| {
            vals[k] = v;
            k += 1;
        });
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        let lam = vec![1.0; self.m];
        self.hess_pass(&self.x0, 1.0, &lam, &mut |r, c, _| s.push((r, c)));
        s
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        let mut k = 0;
        self.hess_pass(x, obj_factor, lambda, &mut |_, _, v| {
            vals[k] = v;
            k += 1;
        });
    }

    fn kkt_ordering(&self) -> Vec<usize> {
        let n = self.num_vars();
        let mut o = Vec::with_capacity(n + self.m);
        for k in 0..self.k_count() {
            o.extend(var(k, 0)..var(k + 1, 0));
            o.extend((self.row_start[k]..self.row_start[k + 1]).map(|r| n + r));
        }
        o
    }

    fn constraint_name(&self, row: usize) -> String {
        let (name, k) = self.names[row];
        format!("{name}@knot{k}")
    }
}
