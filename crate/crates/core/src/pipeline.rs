//! End-to-end stages shared by the command line and the service.

use log::warn;

use crate::config::Config;
use crate::error::Result;
use crate::metrics::{render, render_target, Raster, Report};
use crate::planner::{interpolate, plan, plan_baseline, RawPlan, Trajectory};
use crate::sim::{run_observed, SimLog, SimRecord};
use crate::strokes::{fit_set, to_waypoints, ImageToWall, StrokeSet, WaypointPlanInput};

pub fn placement(set: &StrokeSet, cfg: &Config) -> Result<ImageToWall> {
    let ctx = cfg.plan_context()?;
    Ok(ImageToWall::new(set, &ctx.surface, &ctx.frame, &cfg.strokes.centre))
}

pub fn waypoints(set: &StrokeSet, cfg: &Config) -> Result<WaypointPlanInput> {
    let ctx = cfg.plan_context()?;
    let map = placement(set, cfg)?;
    let input = to_waypoints(set, &map, &ctx.frame, &cfg.pen, &cfg.strokes)?;
    for w in &input.warnings {
        warn!("{w}");
    }
    Ok(input)
}

#[derive(Debug, Clone)]
pub struct Planned {
    pub input: WaypointPlanInput,
    /// Knot solution; absent for the baseline reference.
    pub raw: Option<RawPlan>,
    pub trajectory: Trajectory,
}

/// Waypoints, then the optimized plan (or the constant-speed baseline when
/// `ablation.baseline_planning` is set), sampled at the control period.
pub fn plan_strokes(set: &StrokeSet, cfg: &Config) -> Result<Planned> {
    let ctx = cfg.plan_context()?;
    let input = waypoints(set, cfg)?;
    if cfg.ablation.baseline_planning {
        let trajectory = plan_baseline(&input.waypoints, cfg.planner.v_max, cfg.planner.dt, &ctx)?;
        return Ok(Planned {
            input,
            raw: None,
            trajectory,
        });
    }
    let raw = plan(&input.waypoints, &ctx)?;
    let trajectory = interpolate(&raw, cfg.planner.dt, &ctx)?;
    Ok(Planned {
        input,
        raw: Some(raw),
        trajectory,
    })
}

pub fn simulate(traj: &Trajectory, cfg: &Config) -> Result<SimLog> {
    simulate_observed(traj, cfg, |_| {})
}

pub fn simulate_observed<O: FnMut(&SimRecord)>(traj: &Trajectory, cfg: &Config, observe: O) -> Result<SimLog> {
    let ctx = cfg.plan_context()?;
    run_observed(traj, &ctx, &cfg.controller, &cfg.pen, &cfg.plant, observe)
}

pub fn target_raster(set: &StrokeSet, cfg: &Config) -> Result<Raster> {
    let fitted = fit_set(set, cfg.strokes.resolution, &cfg.strokes.limits())?;
    render_target(&fitted, &set.size_m(), cfg.render.resolution)
}

pub fn written_raster(set: &StrokeSet, log: &SimLog, cfg: &Config) -> Result<Raster> {
    render(
        log,
        &cfg.pen,
        &placement(set, cfg)?,
        &set.size_m(),
        cfg.render.resolution,
    )
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub written: Raster,
    pub target: Raster,
    pub report: Report,
}

pub fn evaluate(set: &StrokeSet, log: &SimLog, cfg: &Config) -> Result<Evaluation> {
    let written = written_raster(set, log, cfg)?;
    let target = target_raster(set, cfg)?;
    let report = Report::new(log, &written, &target, &cfg.uam)?;
    Ok(Evaluation {
        written,
        target,
        report,
    })
}
