mod common;

use calli_core::contact::{contact_wrench, Friction};
use calli_core::model::{EeState, State};
use calli_core::planner::*;
use calli_core::se3::{Frame, Wrench};
use calli_core::solver::Nlp;
use calli_core::Error;
use common::{ctx, letter_i, off_wall, on_wall};
use nalgebra::{Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_names(nlp: &TrajectoryNlp, prefix: &str) -> Vec<usize> {
    (0..nlp.num_cons())
        .filter(|&r| nlp.constraint_name(r).starts_with(prefix))
        .collect()
}

#[test]
fn two_contact_waypoints_with_twenty_knots() {
    let nlp = TrajectoryNlp::with_knots(&[on_wall(0.0, 1.0, 2.0), on_wall(0.1, 1.0, 2.0)], &ctx(), 20).unwrap();
    let c = nlp.counts();
    assert_eq!(nlp.num_knots(), 20);
    // One explicit-Euler block per interval between knots.
    assert_eq!(c.dynamics, 19);
    assert_eq!(c.waypoint, 2);
    // Knot 1 inherits its wall contact from the resting first knot.
    assert_eq!(c.surface_eq, 19);
    assert_eq!(c.surface_ineq, 0);
    assert_eq!(nlp.num_vars(), 20 * 20);
}

#[test]
fn free_flight_surface_rows_are_clearance_inequalities() {
    let c = ctx();
    let nlp = TrajectoryNlp::with_knots(&[off_wall(0.0, 1.0), off_wall(0.1, 1.0)], &c, 20).unwrap();
    let (lo, hi) = nlp.con_bounds();
    let rows = row_names(&nlp, "surface");
    assert_eq!(rows.len(), 20);
    assert_eq!(nlp.counts().surface_eq, 0);
    for r in rows {
        assert!(nlp.constraint_name(r).starts_with("surface.free"));
        assert!(hi[r] >= 1e19);
        let interior = !nlp.constraint_name(r).ends_with("@knot0") && !nlp.constraint_name(r).ends_with("@knot19");
        if interior {
            assert_eq!(lo[r], c.weights.phi_min);
        }
    }
}

#[test]
fn coincident_free_waypoints_stay_put() {
    let mut c = ctx();
    c.weights.w_tau = Vector6::zeros();
    let w = [off_wall(0.0, 1.0), off_wall(0.0, 1.0)];
    let nlp = TrajectoryNlp::with_knots(&w, &c, 20).unwrap();
    let raw = solve_problem(&nlp, &c).unwrap();
    let sum_h = raw.duration();
    assert!((raw.objective - c.weights.gamma * sum_h).abs() < 1e-6 * raw.objective.max(1.0));
    for k in &raw.knots {
        assert!(k.state.ee.twist().amax() < 1e-6);
        assert!((k.state.ee.p - w[0].p).amax() < 1e-6);
    }
    // Only time is penalised, so every step sits at its lower bound.
    for k in &raw.knots[..raw.knots.len() - 1] {
        assert!(k.h < c.weights.h_min * 1.01);
    }
}

#[test]
fn straight_contact_stroke_respects_limits() {
    let c = ctx();
    let w = [on_wall(-0.15, 1.0, 2.0), on_wall(0.15, 1.0, 2.0)];
    let raw = plan(&w, &c).unwrap();
    assert!(raw.max_violation <= 1e-4);
    let knots = check_knots(&raw, &w, &c).unwrap();
    assert!(knots.passes(1e-4, 1e-4), "{knots:?}");
    let traj = interpolate(&raw, c.weights.dt, &c).unwrap();
    let rep = check_feasibility(&traj, &w, &c).unwrap();
    assert!(rep.waypoint < 1e-4);
    assert!(rep.max_speed <= 0.2 + 1e-9, "{}", rep.max_speed);
    assert!(rep.max_force_rate <= 2.0 + 1e-6);
    let r_ref = c.reference_rotation();
    for s in &traj.samples {
        assert!((s.state.ee.rotation.matrix() - r_ref.matrix()).amax() < 1e-9);
        assert!(c.surface.phi(&s.state.ee.p).abs() <= 1e-3);
    }
}

fn solve_from_perturbed(seed: u64) -> f64 {
    let c = ctx();
    let w = [on_wall(0.0, 1.0, 1.0), on_wall(0.08, 1.0, 2.0)];
    let mut nlp = TrajectoryNlp::new(&w, &c).unwrap();
    let (lo, hi) = nlp.var_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = nlp.initial().to_vec();
    for i in 0..x.len() {
        if hi[i] > lo[i] {
            let scale = if hi[i] - lo[i] < 1.0 {
                0.05 * (hi[i] - lo[i])
            } else {
                0.01
            };
            x[i] = (x[i] + rng.random_range(-scale..scale)).clamp(lo[i], hi[i]);
        }
    }
    nlp.set_initial_point(x);
    solve_problem(&nlp, &c).unwrap().objective
}

#[test]
fn perturbed_initial_guesses_reach_the_same_cost() {
    let a = solve_from_perturbed(1);
    let b = solve_from_perturbed(2);
    assert!((a - b).abs() <= 0.01 * a.abs().min(b.abs()), "{a} vs {b}");
}

#[test]
fn letter_i_trajectory_passes_the_checker() {
    let c = ctx();
    let w = letter_i();
    let raw = plan(&w, &c).unwrap();
    let knots = check_knots(&raw, &w, &c).unwrap();
    assert!(knots.passes(1e-4, 1e-4), "{knots:?}");
    let traj = interpolate(&raw, c.weights.dt, &c).unwrap();
    let rep = check_feasibility(&traj, &w, &c).unwrap();
    assert!(rep.passes(1e-4, f64::INFINITY), "{rep:?}");
    // Between knots the sampled Euler defect is bounded by dt times the
    // largest knot-to-knot jump in acceleration.
    let times = raw.knot_times();
    let mut jump: f64 = 0.0;
    for k in 1..raw.knots.len() - 1 {
        let a0 = (raw.knots[k].state.ee.twist() - raw.knots[k - 1].state.ee.twist()) / raw.knots[k - 1].h;
        let a1 = (raw.knots[k + 1].state.ee.twist() - raw.knots[k].state.ee.twist()) / raw.knots[k].h;
        jump = jump.max((a1 - a0).amax());
    }
    assert!(times.windows(2).all(|t| t[1] > t[0]));
    assert!(
        rep.dynamics <= c.weights.dt * jump + 1e-6,
        "{} > {}",
        rep.dynamics,
        c.weights.dt * jump
    );
    // Trajectory invariants.
    for (i, s) in traj.samples.iter().enumerate() {
        assert!((s.t - i as f64 * traj.dt).abs() < 1e-12);
        assert!(s.state.force >= 0.0);
        assert!(calli_core::se3::Rotation::new(*s.state.ee.rotation.matrix()).is_ok());
        if s.state.force > 0.0 {
            assert!(c.surface.phi(&s.state.ee.p).abs() <= 1e-3);
        }
    }
}

#[test]
fn heavier_time_penalty_never_lengthens_the_letter() {
    let mut c = ctx();
    let w = letter_i();
    let base = plan(&w, &c).unwrap();
    c.weights.gamma *= 10.0;
    let fast = plan_warm(&w, &c, &base).unwrap();
    assert!(
        fast.duration() <= base.duration() + 1e-9,
        "{} > {}",
        fast.duration(),
        base.duration()
    );
}

#[test]
fn pack_inverts_unpack() {
    let c = ctx();
    let nlp = TrajectoryNlp::with_knots(&[on_wall(0.0, 1.0, 2.0), on_wall(0.1, 1.0, 2.0)], &c, 20).unwrap();
    let mut x = nlp.initial().to_vec();
    for k in 0..20 {
        x[k * 20 + 3] = 0.01 * k as f64;
        x[k * 20 + 5] = -0.02;
    }
    let back = nlp.pack(&nlp.unpack(&x).unwrap()).unwrap();
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(nlp.pack(&nlp.unpack(&x).unwrap()[..5]).is_err());
}

fn knot(p: Vector3<f64>, v: Vector3<f64>, force: f64, h: f64) -> Knot {
    let c = ctx();
    Knot {
        state: State {
            ee: EeState {
                p,
                rotation: c.reference_rotation(),
                v_lin: v,
                omega: Vector3::zeros(),
            },
            force,
        },
        tau: Wrench::from_vector(&Vector6::zeros(), Frame::B),
        h,
    }
}

fn two_knot_plan(a: Knot, b: Knot) -> RawPlan {
    let c = ctx();
    let w = [off_wall(0.0, 1.0), off_wall(0.0, 1.1)];
    RawPlan {
        knots: vec![a, b],
        layout: KnotLayout::build(&w, 2, &c.weights).unwrap(),
        objective: 0.0,
        iterations: 0,
        max_violation: 0.0,
        solve_seconds: 0.0,
    }
}

#[test]
fn interpolation_is_a_convex_combination() {
    let c = ctx();
    let a = knot(Vector3::new(0.9, 0.0, 0.0), Vector3::zeros(), 0.0, 0.1);
    let b = knot(Vector3::new(0.9, 1.0, 0.0), Vector3::zeros(), 0.0, 0.05);
    let traj = interpolate(&two_knot_plan(a, b), 0.025, &c).unwrap();
    let ys: Vec<f64> = traj.samples.iter().map(|s| s.state.ee.p.y).collect();
    assert_eq!(ys.len(), 5);
    assert_eq!(ys[0], 0.0);
    assert!((ys[1] - 0.25).abs() < 1e-15);
    assert!((ys[4] - 1.0).abs() < 1e-15);
    assert_eq!(traj.samples[0].state, a.state);
}

#[test]
fn interpolated_samples_predict_coulomb_friction() {
    let c = ctx();
    let lat = c.frame.lateral();
    let a = knot(Vector3::new(1.0, 0.0, 1.0), lat * 0.05, 2.0, 0.1);
    let b = knot(Vector3::new(1.0, 0.005, 1.0), lat * 0.05, 2.0, 0.05);
    let traj = interpolate(&two_knot_plan(a, b), 0.01, &c).unwrap();
    let f = traj.samples[3].tau_c.force;
    assert!((f.x - 2.0).abs() < 1e-12);
    assert!((f.y + 0.8).abs() < 1e-12, "{f}");
    assert!(f.z.abs() < 1e-12);
    let reference = contact_wrench(&c.contact, 2.0, &Vector2::new(0.05, 0.0), Friction::Sign);
    assert_eq!(traj.samples[3].tau_c, reference);
}

#[test]
fn checker_measures_speed_excess() {
    let c = ctx();
    let w = [off_wall(0.0, 1.0), off_wall(0.0025, 1.0)];
    let mut a = knot(w[0].p, Vector3::new(0.0, 0.25, 0.0), 0.0, 0.01);
    let mut b = a;
    b.state.ee.p = w[1].p;
    let hover = quasi_static_wrench(&c, 0.0);
    a.tau = Wrench::from_vector(&hover, Frame::B);
    b.tau = a.tau;
    let traj = Trajectory {
        dt: 0.01,
        samples: vec![
            Sample {
                t: 0.0,
                state: a.state,
                tau_a: a.tau,
                tau_c: Wrench::from_vector(&Vector6::zeros(), Frame::C),
            },
            Sample {
                t: 0.01,
                state: b.state,
                tau_a: b.tau,
                tau_c: Wrench::from_vector(&Vector6::zeros(), Frame::C),
            },
        ],
    };
    let rep = check_feasibility(&traj, &w, &c).unwrap();
    assert!((rep.speed - 0.05).abs() < 1e-12, "{}", rep.speed);
    assert!((rep.max_speed - 0.25).abs() < 1e-12);
    assert_eq!(rep.worst().0, "speed");
}

#[test]
fn checker_rejects_an_empty_trajectory() {
    let c = ctx();
    let traj = Trajectory {
        dt: 0.01,
        samples: vec![],
    };
    assert!(matches!(
        check_feasibility(&traj, &letter_i(), &c),
        Err(Error::Empty(_))
    ));
}

#[test]
fn baseline_runs_at_constant_speed() {
    let c = ctx();
    let w = [on_wall(0.0, 1.0, 0.0), on_wall(0.2, 1.0, 2.0)];
    let traj = plan_baseline(&w, 0.1, 0.01, &c).unwrap();
    assert!((traj.duration() - 2.0).abs() < 1e-9);
    // Force ramps linearly with arc length.
    for s in &traj.samples {
        let expect = 2.0 * (s.state.ee.p.y / 0.2);
        assert!((s.state.force - expect).abs() < 1e-9);
    }
    let mid = &traj.samples[100];
    assert!((mid.state.force - 1.0).abs() < 1e-9);
}

#[test]
fn baseline_velocity_jumps_at_a_corner() {
    let c = ctx();
    let w = [on_wall(0.0, 1.0, 2.0), on_wall(0.1, 1.0, 2.0), on_wall(0.1, 0.9, 2.0)];
    let traj = plan_baseline(&w, 0.1, 0.01, &c).unwrap();
    let before = traj.samples[99].state.ee.v_lin;
    let after = traj.samples[101].state.ee.v_lin;
    assert!((before - Vector3::new(0.0, 0.1, 0.0)).norm() < 1e-12);
    assert!((after - Vector3::new(0.0, 0.0, -0.1)).norm() < 1e-12);
    assert!(before.dot(&after).abs() < 1e-12);
}

#[test]
fn baseline_rejects_nonpositive_speed() {
    let c = ctx();
    assert!(plan_baseline(&letter_i(), 0.0, 0.01, &c).is_err());
}
