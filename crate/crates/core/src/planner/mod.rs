//! Contact-aware trajectory optimisation.
//!
//! A plan is a direct transcription over knots. Each knot carries the tip
//! position, an attitude increment about the task rotation, the twist, the
//! normal force, the body control wrench and the step length to the next
//! knot. [`plan`] builds the NLP, solves it with the interior-point solver and
//! returns the knot solution; [`interpolate`] resamples it at controller rate.

pub(crate) mod dynamics;
mod layout;
mod nlp;
pub(crate) mod record;
mod traj;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactFrame, ContactParams, Surface};
use crate::error::{Error, Result};
use crate::model::{State, UamParams};
use crate::se3::{Rotation, Wrench};
use crate::solver::{self, IpmOptions};

pub use layout::{KnotLayout, KnotRole};
pub use nlp::{ConstraintCounts, TrajectoryNlp};
pub use record::{read_trajectory, write_trajectory};
pub use traj::{check_feasibility, check_knots, interpolate, plan_baseline, FeasibilityReport};

/// Sparse target: a contact point and the normal force to apply there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub p: Vector3<f64>,
    pub force: f64,
}

impl Waypoint {
    pub fn new(p: Vector3<f64>, force: f64) -> Self {
        Waypoint { p, force }
    }

    pub fn is_contact(&self) -> bool {
        self.force > 0.0
    }
}

/// Objective weights, step limits and task bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerWeights {
    pub w_v: Vector6<f64>,
    pub w_tau: Vector6<f64>,
    pub w_dtau: Vector6<f64>,
    pub gamma: f64,
    pub h_max: f64,
    pub h_min: f64,
    /// Linear speed limit of the tip (norm).
    pub v_max: f64,
    pub omega_max: f64,
    /// Per-axis linear acceleration limit.
    pub a_max: f64,
    pub force_rate_max: f64,
    pub force_max: f64,
    /// Clearance required on free segments.
    pub phi_min: f64,
    /// Path length per motion knot.
    pub knot_spacing: f64,
    pub min_knots: usize,
    pub max_knots: usize,
    /// Interpolation period.
    pub dt: f64,
    pub max_iter: usize,
    pub time_limit: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        PlannerWeights {
            w_v: Vector6::new(1.0, 1.0, 1.0, 0.1, 0.1, 0.1),
            w_tau: Vector6::repeat(1e-3),
            w_dtau: Vector6::new(0.1, 0.1, 0.1, 1.0, 1.0, 1.0),
            gamma: 1.0,
            h_max: 0.1,
            h_min: 1e-3,
            v_max: 0.2,
            omega_max: 1.0,
            a_max: 0.2,
            force_rate_max: 2.0,
            force_max: 5.0,
            phi_min: 0.01,
            knot_spacing: 0.0025,
            min_knots: 20,
            max_knots: 400,
            dt: 0.01,
            max_iter: 3000,
            time_limit: 600.0,
        }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: &Vector6<f64>| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !nonneg(&self.w_v) || !nonneg(&self.w_tau) || !nonneg(&self.w_dtau) {
            return Err(Error::param("planner.weights", "diagonals must be finite and >= 0"));
        }
        let positive = [
            ("planner.gamma", self.gamma),
            ("planner.h_max", self.h_max),
            ("planner.h_min", self.h_min),
            ("planner.v_max", self.v_max),
            ("planner.omega_max", self.omega_max),
            ("planner.a_max", self.a_max),
            ("planner.force_rate_max", self.force_rate_max),
            ("planner.force_max", self.force_max),
            ("planner.phi_min", self.phi_min),
            ("planner.knot_spacing", self.knot_spacing),
            ("planner.dt", self.dt),
            ("planner.time_limit", self.time_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        if self.h_min >= self.h_max {
            return Err(Error::param("planner.h_min", "must be below h_max"));
        }
        if self.min_knots < 2 || self.min_knots > self.max_knots {
            return Err(Error::param("planner.min_knots", "need 2 <= min_knots <= max_knots"));
        }
        Ok(())
    }
}

/// Everything the planner needs besides the waypoints.
#[derive(Debug, Clone)]
pub struct PlanContext {
    pub params: UamParams,
    pub contact: ContactParams,
    pub surface: Surface,
    pub frame: ContactFrame,
    pub weights: PlannerWeights,
}

impl PlanContext {
    /// Task rotation: body x into the wall, body z along `t_z`.
    pub fn reference_rotation(&self) -> Rotation {
        self.frame.rotation()
    }
}

/// One solved knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub state: State,
    /// Body control wrench.
    pub tau: Wrench,
    /// Step to the next knot (unused on the last knot).
    pub h: f64,
}

/// Knot-level plan returned by the solver.
#[derive(Debug, Clone)]
pub struct RawPlan {
    pub knots: Vec<Knot>,
    pub layout: KnotLayout,
    pub objective: f64,
    pub iterations: usize,
    /// Max constraint or bound violation of the NLP at the solution.
    pub max_violation: f64,
    pub solve_seconds: f64,
}

impl RawPlan {
    pub fn duration(&self) -> f64 {
        self.knots[..self.knots.len() - 1].iter().map(|k| k.h).sum()
    }

    /// Knot start times `T_j`.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.knots
            .iter()
            .map(|k| {
                let here = t;
                t += k.h;
                here
            })
            .collect()
    }
}

/// One sample of a reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub tau_a: Wrench,
    /// Predicted contact wrench in frame C (pressing convention).
    pub tau_c: Wrench,
}

/// Uniformly sampled reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }
}

/// Why a solve failed, with the constraints that are furthest from feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub status: String,
    pub iterations: usize,
    pub max_violation: f64,
    pub worst: Vec<(String, f64)>,
}

impl std::fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} iterations, max violation {:.3e}",
            self.status, self.iterations, self.max_violation
        )?;
        for (name, v) in &self.worst {
            write!(f, "; {name}: {v:.3e}")?;
        }
        Ok(())
    }
}

/// Step indices (1-based) proportional to cumulative waypoint distance.
///
/// ```
/// use calli_core::planner::{allocate_steps, Waypoint};
/// use nalgebra::Vector3;
/// let w = |x: f64| Waypoint::new(Vector3::new(x, 0.0, 0.0), 0.0);
/// assert_eq!(allocate_steps(&[w(0.0), w(1.0), w(3.0)], 21).unwrap(), vec![1, 8, 21]);
/// ```
pub fn allocate_steps(waypoints: &[Waypoint], n_total: usize) -> Result<Vec<usize>> {
    let m = waypoints.len();
    if m < 2 {
        return Err(Error::InvalidWaypoints("need at least two waypoints".into()));
    }
    if n_total < m {
        return Err(Error::InvalidWaypoints(format!(
            "{n_total} steps cannot hold {m} waypoints"
        )));
    }
    let mut cum = vec![0.0; m];
    for i in 1..m {
        cum[i] = cum[i - 1] + (waypoints[i].p - waypoints[i - 1].p).norm();
    }
    let total = cum[m - 1];
    let mut idx: Vec<usize> = cum
        .iter()
        .map(|c| {
            if total > 0.0 {
                1 + ((n_total - 1) as f64 * c / total).round() as usize
            } else {
                1
            }
        })
        .collect();
    idx[0] = 1;
    idx[m - 1] = n_total;
    for i in 1..m {
        if idx[i] <= idx[i - 1] {
            idx[i] = idx[i - 1] + 1;
        }
    }
    idx[m - 1] = n_total;
    for i in (1..m - 1).rev() {
        if idx[i] >= idx[i + 1] {
            idx[i] = idx[i + 1] - 1;
        }
    }
    Ok(idx)
}

/// Body wrench that holds the task attitude against gravity and a normal
/// force `force` at the tip.
pub fn quasi_static_wrench(ctx: &PlanContext, force: f64) -> Vector6<f64> {
    let r = ctx.reference_rotation();
    let p = &ctx.params;
    let n_b = r.transpose() * ctx.frame.n_t;
    let fa = r.transpose() * Vector3::z() * (p.mass * p.gravity) + n_b * force;
    let ma = p.t_b_e.cross(&(n_b * force));
    Vector6::new(fa[0], fa[1], fa[2], ma[0], ma[1], ma[2])
}

/// Validates waypoints against the surface.
pub fn validate_waypoints(waypoints: &[Waypoint], surface: &Surface) -> Result<()> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidWaypoints("need at least two waypoints".into()));
    }
    for (i, w) in waypoints.iter().enumerate() {
        if !(w.force >= 0.0) || !w.p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidWaypoints(format!(
                "waypoint {i}: non-finite or negative force"
            )));
        }
        if w.is_contact() && surface.phi(&w.p).abs() >= 1e-6 {
            return Err(Error::InvalidWaypoints(format!(
                "waypoint {i}: contact point is {:.3e} m off the surface",
                surface.phi(&w.p)
            )));
        }
    }
    Ok(())
}

/// Builds and solves the trajectory NLP.
pub fn plan(waypoints: &[Waypoint], ctx: &PlanContext) -> Result<RawPlan> {
    ctx.weights.validate()?;
    validate_waypoints(waypoints, &ctx.surface)?;
    let problem = TrajectoryNlp::new(waypoints, ctx)?;
    solve_problem(&problem, ctx)
}

/// Re-solves from a previous plan over the same waypoints, e.g. after a
/// weight change. The barrier starts small so the solver stays near it.
pub fn plan_warm(waypoints: &[Waypoint], ctx: &PlanContext, previous: &RawPlan) -> Result<RawPlan> {
    ctx.weights.validate()?;
    validate_waypoints(waypoints, &ctx.surface)?;
    let mut problem = TrajectoryNlp::new(waypoints, ctx)?;
    let x0 = problem.pack(&previous.knots)?;
    problem.set_initial_point(x0);
    let opt = IpmOptions {
        mu_init: 1e-6,
        bound_push: 1e-8,
        ..ipm_options(ctx)
    };
    solve_with(&problem, &opt)
}

fn ipm_options(ctx: &PlanContext) -> IpmOptions {
    IpmOptions {
        max_iter: ctx.weights.max_iter,
        time_limit: ctx.weights.time_limit,
        ..IpmOptions::default()
    }
}

/// Solves a prepared problem.
pub fn solve_problem(problem: &TrajectoryNlp, ctx: &PlanContext) -> Result<RawPlan> {
    solve_with(problem, &ipm_options(ctx))
}

fn solve_with(problem: &TrajectoryNlp, opt: &IpmOptions) -> Result<RawPlan> {
    let start = std::time::Instant::now();
    let res = solver::solve(problem, opt);
    let secs = start.elapsed().as_secs_f64();
    log::info!(
        "planner: {:?} in {} iterations, {:.2} s, violation {:.2e}",
        res.status,
        res.iterations,
        secs,
        res.violation
    );
    if !res.status.is_success() || res.violation > 1e-4 {
        return Err(Error::Infeasible(Box::new(InfeasibilityReport {
            status: format!("{:?}", res.status),
            iterations: res.iterations,
            max_violation: res.violation,
            worst: solver::worst_constraints(problem, &res.x, 5),
        })));
    }
    let knots = problem.unpack(&res.x)?;
    Ok(RawPlan {
        knots,
        layout: problem.layout().clone(),
        objective: res.objective,
        iterations: res.iterations,
        max_violation: res.violation,
        solve_seconds: secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64) -> Waypoint {
        Waypoint::new(Vector3::new(x, 0.0, 0.0), 0.0)
    }

    #[test]
    fn quasi_static_wrench_holds_the_vehicle_still() {
        use crate::contact::{contact_frame, contact_wrench, Friction};
        use crate::model::{accel, EeState};
        use crate::se3::Frame;
        use nalgebra::Vector2;
        let surface = Surface::new(Vector3::new(1.0, 0.0, 0.0), Vector3::x()).unwrap();
        let frame = contact_frame(&surface, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        let ctx = PlanContext {
            params: UamParams::default(),
            contact: ContactParams::default(),
            surface,
            frame,
            weights: PlannerWeights::default(),
        };
        for f in [0.0, 2.0] {
            let s = State {
                ee: EeState::at_rest(Vector3::new(1.0, 0.0, 1.0), ctx.reference_rotation()),
                force: f,
            };
            let tau = Wrench::from_vector(&quasi_static_wrench(&ctx, f), Frame::B);
            let tc = contact_wrench(&ctx.contact, f, &Vector2::zeros(), Friction::Sign);
            let a = accel(&ctx.params, &s, &tau, &tc, &ctx.frame).unwrap();
            assert!(a.amax() < 1e-12, "F = {f}: {a}");
        }
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_steps(&[wp(0.0), wp(1.0)], 50).unwrap(), vec![1, 50]);
        assert_eq!(
            allocate_steps(&[wp(0.0), wp(1.0), wp(3.0)], 21).unwrap(),
            vec![1, 8, 21]
        );
        assert_eq!(allocate_steps(&[wp(0.0), wp(0.0), wp(0.0)], 5).unwrap(), vec![1, 2, 5]);
    }

    #[test]
    fn allocation_rejects_too_few_steps() {
        assert!(allocate_steps(&[wp(0.0), wp(1.0), wp(2.0)], 2).is_err());
        assert!(allocate_steps(&[wp(0.0)], 5).is_err());
    }

    #[test]
    fn allocation_backs_off_from_the_end() {
        // Three coincident at the end need room before N_total.
        let idx = allocate_steps(&[wp(0.0), wp(1.0), wp(1.0), wp(1.0)], 4).unwrap();
        assert_eq!(idx, vec![1, 2, 3, 4]);
    }

    proptest::proptest! {
        #[test]
        fn allocation_is_strictly_increasing(
            xs in proptest::collection::vec(0.0f64..1.0, 2..12),
            extra in 0usize..50,
        ) {
            let w: Vec<Waypoint> = xs.iter().map(|&x| wp(x)).collect();
            let n = w.len() + extra;
            let idx = allocate_steps(&w, n).unwrap();
            proptest::prop_assert_eq!(idx[0], 1);
            proptest::prop_assert_eq!(*idx.last().unwrap(), n);
            for k in 1..idx.len() {
                proptest::prop_assert!(idx[k] > idx[k - 1]);
            }
        }
    }
}
