#![allow(dead_code)]

use calli_core::contact::{contact_frame, ContactParams, Surface};
use calli_core::model::UamParams;
use calli_core::planner::{PlanContext, PlannerWeights, Waypoint};
use nalgebra::Vector3;

/// Vertical wall at x = 1 facing -x, written on with gravity along -z.
pub fn ctx() -> PlanContext {
    let surface = Surface::new(Vector3::new(1.0, 0.0, 0.0), Vector3::x()).unwrap();
    let frame = contact_frame(&surface, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
    PlanContext {
        params: UamParams::default(),
        contact: ContactParams::default(),
        surface,
        frame,
        weights: PlannerWeights::default(),
    }
}

pub fn on_wall(y: f64, z: f64, f: f64) -> Waypoint {
    Waypoint::new(Vector3::new(1.0, y, z), f)
}

pub fn off_wall(y: f64, z: f64) -> Waypoint {
    Waypoint::new(Vector3::new(0.95, y, z), 0.0)
}

/// One vertical 0.15 m stroke with approach and retreat points.
pub fn letter_i() -> Vec<Waypoint> {
    let mut w = vec![off_wall(0.0, 1.15)];
    w.extend((0..6).map(|i| on_wall(0.0, 1.15 - 0.03 * i as f64, 2.0)));
    w.push(off_wall(0.0, 1.0));
    w
}
