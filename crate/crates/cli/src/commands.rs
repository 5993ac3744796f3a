//! Subcommands of the `calli` binary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use calli_core::config::Config;
use calli_core::metrics::{iou, Raster, Report};
use calli_core::pipeline::{self, Planned};
use calli_core::planner::{read_trajectory, write_trajectory};
use calli_core::sim::{read_log, write_log, Mismatch, SimLog};
use calli_core::strokes::{demo_letter, parse_strokes, StrokeSet, DEMO_LETTERS};
use calli_core::Error;
use clap::{Args, Parser, Subcommand};

use crate::{error_field, exit_code, parse_mismatch, Overrides};

#[derive(Debug, Parser)]
#[command(name = "calli", version, about = "Plan, simulate and score aerial wall writing")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML config; defaults to $CALLI_CONFIG, then built-in values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sensor noise seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the constant-speed geometric reference.
    #[arg(long, global = true)]
    pub baseline_planning: bool,
    /// Disable contact-force compensation in the controller.
    #[arg(long, global = true)]
    pub no_contact_compensation: bool,
    /// Speed limit in m/s.
    #[arg(long, global = true)]
    pub max_speed: Option<f64>,
    /// Plant mismatch: `default`, `none` or `mass=1.05,mu=1.25`.
    #[arg(long, global = true, value_parser = parse_mismatch)]
    pub mismatch: Option<Mismatch>,
}

impl Global {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            max_speed: self.max_speed,
            baseline_planning: self.baseline_planning,
            no_contact_compensation: self.no_contact_compensation,
            mismatch: self.mismatch,
        }
    }

    pub fn config(&self) -> calli_core::Result<Config> {
        self.overrides().apply(Config::resolve(self.config.as_deref())?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a trajectory for a stroke document.
    Plan {
        strokes: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the closed loop along a planned trajectory.
    Sim {
        trajectory: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render the written image of a log, or the target with `--target`.
    Render {
        log: Option<PathBuf>,
        #[arg(long)]
        strokes: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        target: bool,
    },
    /// Score a log against its strokes, or two images against each other.
    Eval {
        log: Option<PathBuf>,
        #[arg(long)]
        strokes: Option<PathBuf>,
        /// Written image; compared with `--target-image` without a log.
        #[arg(long)]
        written: Option<PathBuf>,
        #[arg(long)]
        target_image: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP job API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        jobs_dir: Option<PathBuf>,
    },
    /// Plan, simulate and score a built-in letter.
    Demo {
        letter: String,
        #[arg(long, default_value = "demo-out")]
        out: PathBuf,
    },
}

/// A failed command: exit code, message and optional JSON detail.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub detail: Option<serde_json::Value>,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let detail = match &err {
            Error::Infeasible(report) => serde_json::to_value(report).ok(),
            _ => error_field(&err).map(|f| serde_json::json!({ "field": f })),
        };
        Failure {
            code: exit_code(&err),
            message: err.to_string(),
            detail,
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
            detail: None,
        }
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// PNG bytes for `.png` paths, otherwise the format implied by the extension.
pub fn save_raster(raster: &Raster, path: &Path) -> calli_core::Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        Ok(write_atomic(path, &raster.to_png()?)?)
    } else {
        raster.save(path)
    }
}

pub fn load_strokes(path: &Path, cfg: &Config) -> calli_core::Result<StrokeSet> {
    parse_strokes(&std::fs::read_to_string(path)?, &cfg.strokes)
}

pub fn load_log(path: &Path) -> calli_core::Result<SimLog> {
    read_log(&std::fs::read_to_string(path)?)
}

pub fn cmd_plan(strokes: &Path, out: &Path, cfg: &Config) -> calli_core::Result<Planned> {
    let set = load_strokes(strokes, cfg)?;
    let planned = pipeline::plan_strokes(&set, cfg)?;
    write_atomic(out, write_trajectory(&planned.trajectory).as_bytes())?;
    Ok(planned)
}

/// On an abort the partial log is still written to `out`.
pub fn cmd_sim(trajectory: &Path, out: &Path, cfg: &Config) -> calli_core::Result<SimLog> {
    let traj = read_trajectory(&std::fs::read_to_string(trajectory)?)?;
    match pipeline::simulate(&traj, cfg) {
        Ok(log) => {
            write_atomic(out, write_log(&log).as_bytes())?;
            Ok(log)
        }
        Err(Error::SimAborted { partial, reason }) => {
            write_atomic(out, write_log(&partial).as_bytes())?;
            Err(Error::SimAborted { partial, reason })
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_render(log: Option<&Path>, strokes: &Path, out: &Path, target: bool, cfg: &Config) -> Result<(), Failure> {
    let set = load_strokes(strokes, cfg)?;
    let raster = if target {
        pipeline::target_raster(&set, cfg)?
    } else {
        let log = log.ok_or_else(|| Failure::usage("render needs a log unless --target is given"))?;
        pipeline::written_raster(&set, &load_log(log)?, cfg)?
    };
    Ok(save_raster(&raster, out)?)
}

/// Returns the JSON printed to stdout.
pub fn cmd_eval(
    log: Option<&Path>,
    strokes: Option<&Path>,
    written: Option<&Path>,
    target_image: Option<&Path>,
    cfg: &Config,
) -> Result<String, Failure> {
    let (res, thr) = (cfg.render.resolution, cfg.render.threshold);
    match (log, strokes) {
        (Some(log), Some(strokes)) => {
            let set = load_strokes(strokes, cfg)?;
            let log = load_log(log)?;
            let written = pipeline::written_raster(&set, &log, cfg)?;
            let target = match target_image {
                Some(p) => Raster::load(p, res, thr)?,
                None => pipeline::target_raster(&set, cfg)?,
            };
            Ok(Report::new(&log, &written, &target, &cfg.uam)?.to_json())
        }
        (None, None) => match (written, target_image) {
            (Some(w), Some(t)) => {
                let o = iou(&Raster::load(w, res, thr)?, &Raster::load(t, res, thr)?)?;
                Ok(serde_json::to_string_pretty(&o).expect("overlaps serialize"))
            }
            _ => Err(Failure::usage(
                "eval needs a log with --strokes, or --written with --target-image",
            )),
        },
        _ => Err(Failure::usage("a log and --strokes go together")),
    }
}

/// Writes strokes, trajectory, log, both renders and metrics for one letter.
pub fn cmd_demo(letter: &str, dir: &Path, cfg: &Config) -> Result<Report, Failure> {
    let set = demo_letter(letter)
        .ok_or_else(|| Failure::usage(format!("unknown letter `{letter}`; try one of {DEMO_LETTERS:?}")))?;
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    let strokes = dir.join("strokes.json");
    write_atomic(&strokes, set.to_json().as_bytes()).map_err(Error::from)?;
    cmd_plan(&strokes, &dir.join("trajectory.txt"), cfg)?;
    let log = cmd_sim(&dir.join("trajectory.txt"), &dir.join("log.txt"), cfg)?;
    let ev = pipeline::evaluate(&set, &log, cfg)?;
    save_raster(&ev.written, &dir.join("render.png"))?;
    save_raster(&ev.target, &dir.join("target.png"))?;
    write_atomic(&dir.join("metrics.json"), ev.report.to_json().as_bytes()).map_err(Error::from)?;
    Ok(ev.report)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = cli.global.config()?;
    match cli.command {
        Command::Plan { strokes, out } => {
            let planned = cmd_plan(&strokes, &out, &cfg)?;
            log::info!(
                "{} samples over {:.2} s written to {}",
                planned.trajectory.samples.len(),
                planned.trajectory.duration(),
                out.display()
            );
        }
        Command::Sim { trajectory, out } => {
            cmd_sim(&trajectory, &out, &cfg)?;
        }
        Command::Render {
            log,
            strokes,
            out,
            target,
        } => cmd_render(log.as_deref(), &strokes, &out, target, &cfg)?,
        Command::Eval {
            log,
            strokes,
            written,
            target_image,
            out,
        } => {
            let json = cmd_eval(
                log.as_deref(),
                strokes.as_deref(),
                written.as_deref(),
                target_image.as_deref(),
                &cfg,
            )?;
            if let Some(out) = out {
                write_atomic(&out, json.as_bytes()).map_err(Error::from)?;
            }
            println!("{json}");
        }
        Command::Serve { addr, jobs_dir } => {
            let mut cfg = cfg;
            if let Some(dir) = jobs_dir {
                cfg.service.jobs_dir = dir;
            }
            let rt = tokio::runtime::Runtime::new().map_err(Error::from)?;
            rt.block_on(crate::service::serve(addr, cfg)).map_err(Error::from)?;
        }
        Command::Demo { letter, out } => {
            let report = cmd_demo(&letter, &out, &cfg)?;
            println!("{}", report.to_json());
        }
    }
    Ok(())
}
