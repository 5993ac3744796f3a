//! Assignment of knots to waypoints, wall contact and free flight.

use super::{allocate_steps, PlannerWeights, Waypoint};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotRole {
    /// Knot pinned to waypoint `i`.
    Waypoint(usize),
    /// Interior knot of a segment between two contact waypoints.
    Contact,
    /// Held at contact waypoint `i` while the force ramps up or down.
    Dwell(usize),
    /// Off the wall with zero force and at least `clearance` of gap.
    Free { clearance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotLayout {
    pub roles: Vec<KnotRole>,
    /// Knot index of every waypoint (0-based).
    pub waypoint_knots: Vec<usize>,
    /// Motion-knot allocation before dwell insertion (1-based).
    pub allocation: Vec<usize>,
}

impl KnotLayout {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// True when the normal force is a decision variable at knot `k`.
    /// The outermost dwell knots touch the wall without load.
    pub fn force_free(&self, k: usize, waypoints: &[Waypoint]) -> bool {
        let free_at = |j: Option<usize>| match j.and_then(|j| self.roles.get(j)) {
            Some(KnotRole::Free { .. }) => true,
            Some(KnotRole::Waypoint(i)) => !waypoints[*i].is_contact(),
            _ => false,
        };
        match self.roles[k] {
            KnotRole::Waypoint(i) => waypoints[i].is_contact(),
            KnotRole::Contact => true,
            KnotRole::Dwell(_) => !free_at(k.checked_sub(1)) && !free_at(Some(k + 1)),
            KnotRole::Free { .. } => false,
        }
    }

    /// Motion knots plus dwell knots.
    pub fn build(waypoints: &[Waypoint], n_motion: usize, w: &PlannerWeights) -> Result<Self> {
        let alloc = allocate_steps(waypoints, n_motion)?;
        let m = waypoints.len();
        let dwell = |f: f64| (f / (w.force_rate_max * w.h_max)).ceil() as usize + 2;
        let mut roles = Vec::new();
        let mut wk = Vec::with_capacity(m);
        for i in 0..m {
            let wp = &waypoints[i];
            if wp.is_contact() && i > 0 && !waypoints[i - 1].is_contact() {
                roles.extend(std::iter::repeat_n(KnotRole::Dwell(i), dwell(wp.force)));
            }
            wk.push(roles.len());
            roles.push(KnotRole::Waypoint(i));
            if i + 1 == m {
                break;
            }
            let next = &waypoints[i + 1];
            if wp.is_contact() && !next.is_contact() {
                roles.extend(std::iter::repeat_n(KnotRole::Dwell(i), dwell(wp.force)));
            }
            let interior = alloc[i + 1] - alloc[i] - 1;
            let role = match (wp.is_contact(), next.is_contact()) {
                (true, true) => KnotRole::Contact,
                (false, false) => KnotRole::Free { clearance: w.phi_min },
                _ => KnotRole::Free { clearance: 0.0 },
            };
            roles.extend(std::iter::repeat_n(role, interior));
        }
        Ok(KnotLayout {
            roles,
            waypoint_knots: wk,
            allocation: alloc,
        })
    }

    /// Motion-knot count from path length and spacing.
    pub fn motion_knots(waypoints: &[Waypoint], w: &PlannerWeights) -> usize {
        let len: f64 = waypoints.windows(2).map(|p| (p[1].p - p[0].p).norm()).sum();
        let n = (len / w.knot_spacing).ceil() as usize + 1;
        n.clamp(w.min_knots, w.max_knots).max(waypoints.len())
    }
}
