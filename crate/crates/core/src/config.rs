//! Single TOML configuration covering every stage.
//!
//! ```
//! use calli_core::config::Config;
//!
//! let cfg = Config::from_toml("[planner]\nv_max = 0.3\n").unwrap();
//! assert_eq!(cfg.planner.v_max, 0.3);
//! assert_eq!(cfg.planner.a_max, 0.2);
//! assert!(Config::from_toml("[planner]\nvmax = 0.3\n").is_err());
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::contact::{contact_frame, ContactParams, PenModel, Surface};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_RESOLUTION;
use crate::model::UamParams;
use crate::planner::{PlanContext, PlannerWeights};
use crate::sim::PlantConfig;
use crate::strokes::StrokeConfig;

/// Environment variable naming the config file when no path is given.
pub const CONFIG_ENV: &str = "CALLI_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallConfig {
    /// Any point on the writing surface.
    pub point: Vector3<f64>,
    /// Normal pointing into the wall.
    pub normal: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl Default for WallConfig {
    fn default() -> Self {
        WallConfig {
            point: Vector3::new(1.0, 0.0, 0.0),
            normal: Vector3::x(),
            gravity: Vector3::new(0.0, 0.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Pixels per metre.
    pub resolution: f64,
    /// Luminance fraction below which imported pixels count as ink.
    pub threshold: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: DEFAULT_RESOLUTION,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Constant-speed geometric reference instead of the optimized plan.
    pub baseline_planning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    /// Jobs executing at once.
    pub max_jobs: usize,
    /// Live stream events per second.
    pub stream_rate: f64,
    /// Simulated seconds per wall-clock second while streaming; 0 runs unpaced.
    pub playback_speed: f64,
    pub jobs_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_jobs: 2,
            stream_rate: 30.0,
            playback_speed: 1.0,
            jobs_dir: PathBuf::from("jobs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub uam: UamParams,
    pub contact: ContactParams,
    pub pen: PenModel,
    pub planner: PlannerWeights,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    pub wall: WallConfig,
    pub strokes: StrokeConfig,
    pub render: RenderConfig,
    pub ablation: Ablation,
    pub service: ServiceConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads `path`, else the file named by `CALLI_CONFIG`, else the defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.uam.validate()?;
        self.contact.validate()?;
        self.pen.validate()?;
        self.planner.validate()?;
        self.controller.validate()?;
        self.plant.validate()?;
        self.strokes.validate()?;
        self.surface()?;
        if !(self.render.resolution > 0.0 && (0.0..=1.0).contains(&self.render.threshold)) {
            return Err(Error::param("render", "need resolution > 0 and threshold in [0, 1]"));
        }
        if self.service.max_jobs == 0 || !(self.service.stream_rate > 0.0) || !(self.service.playback_speed >= 0.0) {
            return Err(Error::param(
                "service",
                "need max_jobs >= 1, stream_rate > 0 and playback_speed >= 0",
            ));
        }
        if (self.controller.dt - self.planner.dt).abs() > 1e-12 {
            return Err(Error::param("controller.dt", "must equal planner.dt"));
        }
        Ok(())
    }

    pub fn surface(&self) -> Result<Surface> {
        Surface::new(self.wall.point, self.wall.normal)
    }

    pub fn plan_context(&self) -> Result<PlanContext> {
        let surface = self.surface()?;
        Ok(PlanContext {
            params: self.uam.clone(),
            contact: self.contact,
            surface,
            frame: contact_frame(&surface, &self.wall.gravity)?,
            weights: self.planner.clone(),
        })
    }

    /// Speed-study override. Sets the speed limit and scales the acceleration
    /// limit by the squared speed ratio, so a plan bounded by both limits is
    /// retimed uniformly. The force-rate limit is left alone.
    pub fn with_max_speed(mut self, v: f64) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param("max_speed", "must be > 0"));
        }
        let k = v / self.planner.v_max;
        self.planner.v_max = v;
        self.planner.a_max *= k * k;
        Ok(self)
    }
}
