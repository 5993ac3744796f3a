//! Closed-loop plant: rigid-body dynamics with penalty contact, a noisy
//! force/torque sensor and the hybrid controller in the loop.
//!
//! Physics, sensing and control run at different fixed rates inside one
//! sequential loop. The sensor holds its last sample between updates and the
//! controller holds its wrench over the physics sub-steps.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{contact_wrench, ContactParams, Friction, PenModel};
use crate::controller::{Controller, ControllerConfig};
use crate::error::{Error, Result};
use crate::model::{step_rk4, EeState, State, UamParams};
use crate::planner::{quasi_static_wrench, PlanContext, Sample, Trajectory};
use crate::se3::{ad_wrench, Frame, Wrench};

mod record;
pub use record::{read_log, write_log};

/// Friction law of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrictionMode {
    /// `μ F tanh(v / v_eps)`.
    Regularized,
    /// Coulomb friction whose magnitude ramps linearly inside the deadband,
    /// so a slow tip sticks until the tangential load exceeds `μ F`.
    StickSlip,
}

/// Plant-side parameter scaling relative to the controller's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mismatch {
    pub mass_scale: f64,
    pub mu_scale: f64,
}

impl Mismatch {
    pub const NONE: Mismatch = Mismatch {
        mass_scale: 1.0,
        mu_scale: 1.0,
    };
}

impl Default for Mismatch {
    fn default() -> Self {
        Mismatch {
            mass_scale: 1.05,
            mu_scale: 1.25,
        }
    }
}

/// Band-limited random force on the body: white noise through a one-pole
/// low-pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    /// Steady-state standard deviation per axis (N).
    pub sigma: f64,
    pub cutoff_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Contact stiffness (N/m).
    pub k_pen: f64,
    /// Contact damping (N·s/m).
    pub c_pen: f64,
    pub sigma_f: f64,
    pub sigma_tau: f64,
    pub sensor_rate: f64,
    pub physics_dt: f64,
    pub seed: u64,
    pub friction: FrictionMode,
    pub mismatch: Mismatch,
    /// Closed-loop hover at the first reference sample before logging starts (s).
    pub settle_time: f64,
    pub disturbance: Option<Disturbance>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            k_pen: 2000.0,
            c_pen: 20.0,
            sigma_f: 0.05,
            sigma_tau: 0.005,
            sensor_rate: 500.0,
            physics_dt: 1e-3,
            seed: 42,
            friction: FrictionMode::StickSlip,
            mismatch: Mismatch::default(),
            settle_time: 5.0,
            disturbance: None,
        }
    }
}

impl PlantConfig {
    /// Noise-free, disturbance-free plant identical to the model.
    pub fn ideal() -> Self {
        PlantConfig {
            sigma_f: 0.0,
            sigma_tau: 0.0,
            mismatch: Mismatch::NONE,
            ..PlantConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_pen > 0.0) {
            return Err(Error::param("plant.k_pen", "must be > 0"));
        }
        if !(self.c_pen >= 0.0) {
            return Err(Error::param("plant.c_pen", "must be >= 0"));
        }
        if !(self.sigma_f >= 0.0 && self.sigma_tau >= 0.0) {
            return Err(Error::param("plant.sigma", "noise levels must be >= 0"));
        }
        if !(self.sensor_rate > 0.0) {
            return Err(Error::param("plant.sensor_rate", "must be > 0"));
        }
        if !(self.physics_dt > 0.0) {
            return Err(Error::param("plant.physics_dt", "must be > 0"));
        }
        if !(self.settle_time >= 0.0) {
            return Err(Error::param("plant.settle_time", "must be >= 0"));
        }
        if !(self.mismatch.mass_scale > 0.0 && self.mismatch.mu_scale >= 0.0) {
            return Err(Error::param("plant.mismatch", "need mass_scale > 0 and mu_scale >= 0"));
        }
        if let Some(d) = &self.disturbance {
            if !(d.sigma >= 0.0 && d.cutoff_hz > 0.0) {
                return Err(Error::param("plant.disturbance", "need sigma >= 0 and cutoff_hz > 0"));
            }
        }
        Ok(())
    }
}

/// The physical vehicle and wall as the plant sees them.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: UamParams,
    pub contact: ContactParams,
    pub ctx: PlanContext,
    pub cfg: PlantConfig,
}

impl Plant {
    /// Applies the configured mismatch to the model in `ctx`.
    pub fn new(ctx: &PlanContext, cfg: &PlantConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ctx.params.clone();
        params.mass *= cfg.mismatch.mass_scale;
        let mut contact = ctx.contact;
        contact.mu_y *= cfg.mismatch.mu_scale;
        contact.mu_z *= cfg.mismatch.mu_scale;
        Ok(Plant {
            params,
            contact,
            ctx: ctx.clone(),
            cfg: cfg.clone(),
        })
    }

    fn slip(&self, v: f64) -> f64 {
        match self.cfg.friction {
            FrictionMode::Regularized => (v / self.contact.v_eps).tanh(),
            FrictionMode::StickSlip => {
                let band = self.contact.deadband.max(1e-9);
                (v / band).clamp(-1.0, 1.0)
            }
        }
    }

    /// Penalty contact wrench in frame C (pressing convention) and its normal force.
    pub fn contact_wrench(&self, s: &EeState) -> (Wrench, f64) {
        let surface = &self.ctx.surface;
        let phi = surface.phi(&s.p);
        if phi >= 0.0 {
            return (Wrench::zero(Frame::C), 0.0);
        }
        let rate = surface.n_in.dot(&s.v_lin);
        let f = (self.cfg.k_pen * -phi + self.cfg.c_pen * rate).max(0.0);
        let vt: Vector2<f64> = self.ctx.frame.tangential(&s.v_lin);
        let force = Vector3::new(
            f,
            -self.contact.mu_y * f * self.slip(vt.x),
            -self.contact.mu_z * f * self.slip(vt.y),
        );
        (Wrench::new(force, Vector3::zeros(), Frame::C), f)
    }

    /// Advances the plant by one physics step under a held body wrench.
    pub fn step(&self, s: &EeState, tau_a: &Wrench, t: f64) -> Result<EeState> {
        let state = State { ee: *s, force: 0.0 };
        let next = step_rk4(
            &self.params,
            &state,
            tau_a,
            &self.ctx.frame,
            |x: &State| self.contact_wrench(&x.ee).0,
            0.0,
            self.cfg.physics_dt,
        )?;
        if !next.ee.is_finite() || next.ee.p.norm() > 100.0 {
            return Err(Error::Diverged {
                t,
                reason: format!("tip position {:?}", next.ee.p.as_slice()),
            });
        }
        Ok(next.ee)
    }

    /// Exact sensor-frame reading of a contact-frame wrench at attitude `s`.
    pub fn transport_to_sensor(&self, s: &EeState, contact: &Wrench) -> Result<Wrench> {
        let c_to_b = self.params.contact_to_body(&s.rotation, &self.ctx.frame);
        let b_to_s = self.params.sensor_to_body().inverse();
        ad_wrench(&b_to_s.compose(&c_to_b)?, contact)
    }
}

/// Noisy sensor with a deterministic stream.
#[derive(Debug, Clone)]
pub struct Sensor {
    rng: ChaCha8Rng,
    noise_f: Normal<f64>,
    noise_tau: Normal<f64>,
}

impl Sensor {
    pub fn new(cfg: &PlantConfig) -> Result<Self> {
        let bad = |_| Error::param("plant.sigma", "invalid noise level");
        Ok(Sensor {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise_f: Normal::new(0.0, cfg.sigma_f).map_err(bad)?,
            noise_tau: Normal::new(0.0, cfg.sigma_tau).map_err(bad)?,
        })
    }

    /// Adds independent Gaussian noise per axis to an exact reading.
    pub fn read(&mut self, exact: &Wrench) -> Wrench {
        let mut out = *exact;
        for i in 0..3 {
            out.force[i] += self.noise_f.sample(&mut self.rng);
        }
        for i in 0..3 {
            out.torque[i] += self.noise_tau.sample(&mut self.rng);
        }
        out
    }
}

/// One control tick of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub reference: Sample,
    /// Measured tip state; `force` is the true normal force.
    pub measured: State,
    pub f_hat: f64,
    pub tau_a: Wrench,
    /// True contact wrench in frame C (pressing convention).
    pub contact: Wrench,
    /// Width of the line the pen leaves at this instant (m).
    pub linewidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub dt: f64,
    pub records: Vec<SimRecord>,
}

fn ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let n = (a / b).round();
    if n < 1.0 || ((n * b) - a).abs() > 1e-9 * a.max(1.0) {
        return Err(Error::param(what, format!("{a} is not a whole multiple of {b}")));
    }
    Ok(n as usize)
}

/// Runs the controller against the plant along `traj`.
pub fn run(
    traj: &Trajectory,
    ctx: &PlanContext,
    controller: &ControllerConfig,
    pen: &PenModel,
    cfg: &PlantConfig,
) -> Result<SimLog> {
    run_observed(traj, ctx, controller, pen, cfg, |_| {})
}

/// [`run`] with a callback invoked on every record as it is produced.
///
/// A plant abort returns [`Error::SimAborted`] carrying the records so far.
pub fn run_observed<O>(
    traj: &Trajectory,
    ctx: &PlanContext,
    controller: &ControllerConfig,
    pen: &PenModel,
    cfg: &PlantConfig,
    mut observe: O,
) -> Result<SimLog>
where
    O: FnMut(&SimRecord),
{
    let mut ctl_cfg = controller.clone();
    ctl_cfg.dt = traj.dt;
    let mut ctl = Controller::new(ctx.params.clone(), ctx.contact, ctx.frame, ctl_cfg)?;
    let plant = Plant::new(ctx, cfg)?;
    pen.validate()?;
    let mut log = SimLog {
        dt: traj.dt,
        records: Vec::with_capacity(traj.samples.len()),
    };
    let Some(first) = traj.samples.first() else {
        return Ok(log);
    };
    let substeps = ratio(traj.dt, cfg.physics_dt, "plant.physics_dt")?;
    let sensor_every = ratio(1.0 / cfg.sensor_rate, cfg.physics_dt, "plant.sensor_rate")?;
    let mut sensor = Sensor::new(cfg)?;
    let mut dist = Disturbance::state(cfg)?;

    let hold = settle_sample(first, ctx);
    let n_settle = (cfg.settle_time / traj.dt).round() as usize;
    let mut s = first.state.ee;
    let mut reading = Wrench::zero(Frame::S);
    let mut step = 0usize;
    let abort = |log: SimLog, e: Error| Error::SimAborted {
        partial: Box::new(log),
        reason: Box::new(e),
    };
    for i in 0..n_settle + traj.samples.len() {
        let logged = i >= n_settle;
        let reference = if logged { &traj.samples[i - n_settle] } else { &hold };
        let t0 = (i as f64 - n_settle as f64) * traj.dt;
        if step.is_multiple_of(sensor_every) {
            let (w, _) = plant.contact_wrench(&s);
            reading = sensor.read(&plant.transport_to_sensor(&s, &w)?);
        }
        let out = match ctl.step(reference, &s, &reading) {
            Ok(o) => o,
            Err(e) => return Err(abort(log, e)),
        };
        if logged {
            let (contact, f_true) = plant.contact_wrench(&s);
            let rec = SimRecord {
                t: reference.t,
                reference: *reference,
                measured: State { ee: s, force: f_true },
                f_hat: out.f_hat,
                tau_a: out.tau_a,
                contact,
                linewidth: if f_true > 0.0 { pen.linewidth(f_true) } else { 0.0 },
            };
            observe(&rec);
            log.records.push(rec);
        }
        for k in 0..substeps {
            if k > 0 && step.is_multiple_of(sensor_every) {
                let (w, _) = plant.contact_wrench(&s);
                reading = sensor.read(&plant.transport_to_sensor(&s, &w)?);
            }
            let mut applied = out.tau_a;
            if let Some(d) = dist.as_mut() {
                applied.force += d.next(cfg.physics_dt);
            }
            s = match plant.step(&s, &applied, t0 + k as f64 * cfg.physics_dt) {
                Ok(x) => x,
                Err(e) => return Err(abort(log, e)),
            };
            step += 1;
        }
    }
    Ok(log)
}

/// Rest at the first reference pose with static-equilibrium feedforward.
fn settle_sample(first: &Sample, ctx: &PlanContext) -> Sample {
    let mut state = first.state;
    state.ee.v_lin = Vector3::zeros();
    state.ee.omega = Vector3::zeros();
    Sample {
        t: first.t,
        state,
        tau_a: Wrench::from_vector(&quasi_static_wrench(ctx, state.force), Frame::B),
        tau_c: contact_wrench(&ctx.contact, state.force, &Vector2::zeros(), Friction::Sign),
    }
}

struct DisturbanceState {
    rng: ChaCha8Rng,
    value: Vector3<f64>,
    sigma: f64,
    cutoff: f64,
}

impl Disturbance {
    fn state(cfg: &PlantConfig) -> Result<Option<DisturbanceState>> {
        Ok(cfg.disturbance.map(|d| DisturbanceState {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15),
            value: Vector3::zeros(),
            sigma: d.sigma,
            cutoff: d.cutoff_hz,
        }))
    }
}

impl DisturbanceState {
    fn next(&mut self, dt: f64) -> Vector3<f64> {
        let a = (-2.0 * std::f64::consts::PI * self.cutoff * dt).exp();
        let drive = self.sigma * (1.0 - a * a).sqrt();
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        for i in 0..3 {
            self.value[i] = a * self.value[i] + drive * n.sample(&mut self.rng);
        }
        self.value
    }
}
