//! HTTP job service: submit strokes, follow the simulation live, fetch artifacts.
//!
//! Every job lives in its own directory under `service.jobs_dir`; `job.json`
//! is rewritten on each stage change, so a restarted service lists the same
//! jobs. Jobs that were still running when the process stopped come back as
//! failed.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use calli_core::config::Config;
use calli_core::metrics::Report;
use calli_core::pipeline;
use calli_core::planner::{read_trajectory, write_trajectory, InfeasibilityReport};
use calli_core::sim::{read_log, write_log, SimRecord};
use calli_core::strokes::{parse_strokes, ImageToWall, StrokeSet};
use calli_core::Error;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::commands::write_atomic;
use crate::{error_field, Overrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Queued,
    Planning,
    Planned,
    Simulating,
    Done,
    Failed,
}

impl Stage {
    fn is_settled(self) -> bool {
        matches!(self, Stage::Done | Stage::Failed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub trajectory: bool,
    pub log: bool,
    pub render: bool,
    pub metrics: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobError {
    pub message: String,
    pub field: Option<String>,
    pub report: Option<InfeasibilityReport>,
}

impl From<&Error> for JobError {
    fn from(err: &Error) -> Self {
        JobError {
            message: err.to_string(),
            field: error_field(err),
            report: match err {
                Error::Infeasible(r) => Some((**r).clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    /// Unix time of submission, seconds.
    pub created: f64,
    pub stage: Stage,
    pub options: Overrides,
    pub artifacts: Artifacts,
    pub warnings: Vec<String>,
    pub error: Option<JobError>,
    pub metrics: Option<Report>,
}

/// Options accepted on the submit query string.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitQuery {
    pub seed: Option<u64>,
    pub max_speed: Option<f64>,
    pub baseline_planning: Option<bool>,
    pub no_contact_compensation: Option<bool>,
}

/// Body of a re-simulation request.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub seed: Option<u64>,
    pub no_contact_compensation: Option<bool>,
}

/// One control tick as sent to live viewers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LivePoint {
    pub t: f64,
    pub tip: [f64; 3],
    /// Tip position in image metres.
    pub image: [f64; 2],
    pub f_true: f64,
    pub f_hat: f64,
    /// Line width left at this tick; zero off the wall.
    pub width: f64,
}

impl LivePoint {
    fn new(rec: &SimRecord, map: &ImageToWall) -> Self {
        let p = rec.measured.ee.p;
        let q = map.to_image(&p);
        LivePoint {
            t: rec.t,
            tip: [p.x, p.y, p.z],
            image: [q.x, q.y],
            f_true: rec.measured.force,
            f_hat: rec.f_hat,
            width: if rec.measured.force > 0.0 { rec.linewidth } else { 0.0 },
        }
    }
}

/// Payload of a `tick` event: the newest point plus every pen stamp since
/// the previous event, as `[u, v, width]` in image metres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEvent {
    pub latest: LivePoint,
    pub stamps: Vec<[f64; 3]>,
    /// Points received so far, including this event's.
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEnd {
    pub stage: Stage,
    pub count: usize,
}

#[derive(Default)]
struct Feed {
    points: Mutex<Vec<LivePoint>>,
    finished: AtomicBool,
}

impl Feed {
    fn finished_with(points: Vec<LivePoint>) -> Arc<Self> {
        Arc::new(Feed {
            points: Mutex::new(points),
            finished: AtomicBool::new(true),
        })
    }

    fn push(&self, p: LivePoint) {
        self.points.lock().unwrap().push(p);
    }

    fn finish(&self) {
        self.finished.store(true, Ordering::Release);
    }
}

pub struct AppState {
    cfg: Config,
    dir: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
    feeds: Mutex<HashMap<String, Arc<Feed>>>,
    permits: Arc<Semaphore>,
}

const JOB_FILE: &str = "job.json";
const STROKES_FILE: &str = "strokes.json";
const TRAJECTORY_FILE: &str = "trajectory.txt";
const LOG_FILE: &str = "log.txt";
const RENDER_FILE: &str = "render.png";
const METRICS_FILE: &str = "metrics.json";

impl AppState {
    /// Opens `cfg.service.jobs_dir`, creating it if needed, and reloads the
    /// jobs found there.
    pub fn open(cfg: Config) -> std::io::Result<Arc<Self>> {
        let dir = cfg.service.jobs_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let mut jobs = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path().join(JOB_FILE);
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let mut job: Job = match serde_json::from_str(&text) {
                Ok(j) => j,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
            };
            if !job.stage.is_settled() {
                job.stage = Stage::Failed;
                job.error = Some(JobError {
                    message: "interrupted by a service restart".into(),
                    field: None,
                    report: None,
                });
                write_atomic(&path, &serde_json::to_vec_pretty(&job).expect("jobs serialize"))?;
            }
            jobs.insert(job.id.clone(), job);
        }
        Ok(Arc::new(AppState {
            permits: Arc::new(Semaphore::new(cfg.service.max_jobs)),
            cfg,
            dir,
            jobs: Mutex::new(jobs),
            feeds: Mutex::new(HashMap::new()),
        }))
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    fn persist(&self, job: &Job) {
        let path = self.job_dir(&job.id).join(JOB_FILE);
        if let Err(e) = write_atomic(&path, &serde_json::to_vec_pretty(job).expect("jobs serialize")) {
            log::error!("writing {}: {e}", path.display());
        }
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let mut jobs = self.jobs.lock().unwrap();
        if let Some(job) = jobs.get_mut(id) {
            f(job);
            self.persist(job);
        }
    }

    fn load_set(&self, id: &str) -> calli_core::Result<StrokeSet> {
        parse_strokes(
            &std::fs::read_to_string(self.job_dir(id).join(STROKES_FILE))?,
            &self.cfg.strokes,
        )
    }

    /// Live feed of a job; rebuilt from the saved log for reloaded jobs.
    fn feed(&self, job: &Job) -> Arc<Feed> {
        if let Some(f) = self.feeds.lock().unwrap().get(&job.id) {
            return f.clone();
        }
        let points = (|| -> calli_core::Result<Vec<LivePoint>> {
            if !job.artifacts.log {
                return Ok(Vec::new());
            }
            let cfg = job.options.apply(self.cfg.clone())?;
            let map = pipeline::placement(&self.load_set(&job.id)?, &cfg)?;
            let log = read_log(&std::fs::read_to_string(self.job_dir(&job.id).join(LOG_FILE))?)?;
            Ok(log.records.iter().map(|r| LivePoint::new(r, &map)).collect())
        })()
        .unwrap_or_else(|e| {
            log::warn!("rebuilding the feed of {}: {e}", job.id);
            Vec::new()
        });
        let feed = Feed::finished_with(points);
        self.feeds.lock().unwrap().insert(job.id.clone(), feed.clone());
        feed
    }
}

/// JSON error body `{error, field}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            field: None,
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    fn invalid(err: &Error) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            error: err.to_string(),
            field: error_field(err),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.error, "field": self.field });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/config", get(get_config))
        .route("/api/jobs", get(list_jobs).post(submit))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/simulate", post(resimulate))
        .route("/api/jobs/{id}/stream", get(stream_job))
        .route("/api/jobs/{id}/strokes", get(artifact_strokes))
        .route("/api/jobs/{id}/trajectory", get(artifact_trajectory))
        .route("/api/jobs/{id}/log", get(artifact_log))
        .route("/api/jobs/{id}/render.png", get(artifact_render))
        .route("/api/jobs/{id}/metrics", get(artifact_metrics))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, cfg: Config) -> std::io::Result<()> {
    let state = AppState::open(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn get_config(State(st): State<Arc<AppState>>) -> Json<Config> {
    Json(st.cfg.clone())
}

async fn list_jobs(State(st): State<Arc<AppState>>) -> Json<Vec<Job>> {
    let mut jobs: Vec<Job> = st.jobs.lock().unwrap().values().cloned().collect();
    jobs.sort_by(|a, b| a.created.total_cmp(&b.created).then_with(|| a.id.cmp(&b.id)));
    Json(jobs)
}

async fn get_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Job>> {
    st.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job"))
}

async fn submit(
    State(st): State<Arc<AppState>>,
    Query(q): Query<SubmitQuery>,
    body: String,
) -> ApiResult<(StatusCode, Json<Job>)> {
    let options = Overrides {
        seed: q.seed,
        max_speed: q.max_speed,
        baseline_planning: q.baseline_planning.unwrap_or(false),
        no_contact_compensation: q.no_contact_compensation.unwrap_or(false),
        mismatch: None,
    };
    let cfg = options.apply(st.cfg.clone()).map_err(|e| ApiError::invalid(&e))?;
    let set = parse_strokes(&body, &cfg.strokes).map_err(|e| ApiError::invalid(&e))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let internal = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    let dir = st.job_dir(&id);
    std::fs::create_dir_all(&dir).map_err(internal)?;
    write_atomic(&dir.join(STROKES_FILE), set.to_json().as_bytes()).map_err(internal)?;
    let job = Job {
        id: id.clone(),
        created: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64()),
        stage: Stage::Queued,
        options,
        artifacts: Artifacts::default(),
        warnings: Vec::new(),
        error: None,
        metrics: None,
    };
    st.persist(&job);
    st.jobs.lock().unwrap().insert(id.clone(), job.clone());
    let feed = Arc::new(Feed::default());
    st.feeds.lock().unwrap().insert(id.clone(), feed.clone());
    spawn_job(st, id, set, cfg, true, feed);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn resimulate(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<SimulateRequest>>,
) -> ApiResult<(StatusCode, Json<Job>)> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let job = {
        let mut jobs = st.jobs.lock().unwrap();
        let job = jobs.get_mut(&id).ok_or_else(|| ApiError::not_found("job"))?;
        if !job.stage.is_settled() && job.stage != Stage::Planned || !job.artifacts.trajectory {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("job is {:?} and has no finished plan to simulate", job.stage),
            ));
        }
        if let Some(seed) = req.seed {
            job.options.seed = Some(seed);
        }
        if let Some(flag) = req.no_contact_compensation {
            job.options.no_contact_compensation = flag;
        }
        job.stage = Stage::Simulating;
        job.error = None;
        job.metrics = None;
        job.artifacts = Artifacts {
            trajectory: true,
            ..Artifacts::default()
        };
        st.persist(job);
        job.clone()
    };
    let fail = |e: Error| {
        st.update(&id, |j| {
            j.stage = Stage::Failed;
            j.error = Some(JobError::from(&e));
        });
        ApiError::invalid(&e)
    };
    let cfg = job.options.apply(st.cfg.clone()).map_err(fail)?;
    let set = st.load_set(&id).map_err(fail)?;
    let feed = Arc::new(Feed::default());
    st.feeds.lock().unwrap().insert(id.clone(), feed.clone());
    spawn_job(st.clone(), id, set, cfg, false, feed);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

fn spawn_job(st: Arc<AppState>, id: String, set: StrokeSet, cfg: Config, plan_first: bool, feed: Arc<Feed>) {
    tokio::spawn(async move {
        let _permit = st.permits.clone().acquire_owned().await.expect("semaphore stays open");
        let (st2, id2, feed2) = (st.clone(), id.clone(), feed.clone());
        let outcome = tokio::task::spawn_blocking(move || execute(&st2, &id2, &set, &cfg, plan_first, &feed2)).await;
        let err = match outcome {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(JobError::from(&e)),
            Err(e) => Some(JobError {
                message: format!("worker crashed: {e}"),
                field: None,
                report: None,
            }),
        };
        if let Some(err) = err {
            log::warn!("job {id} failed: {}", err.message);
            st.update(&id, |j| {
                j.stage = Stage::Failed;
                j.error = Some(err);
            });
        }
        feed.finish();
    });
}

/// Plans (optionally) and simulates one job on a blocking thread.
fn execute(
    st: &AppState,
    id: &str,
    set: &StrokeSet,
    cfg: &Config,
    plan_first: bool,
    feed: &Feed,
) -> calli_core::Result<()> {
    let dir = st.job_dir(id);
    let traj = if plan_first {
        st.update(id, |j| j.stage = Stage::Planning);
        let planned = pipeline::plan_strokes(set, cfg)?;
        write_atomic(
            &dir.join(TRAJECTORY_FILE),
            write_trajectory(&planned.trajectory).as_bytes(),
        )?;
        st.update(id, |j| {
            j.stage = Stage::Planned;
            j.artifacts.trajectory = true;
            j.warnings = planned.input.warnings.clone();
        });
        planned.trajectory
    } else {
        read_trajectory(&std::fs::read_to_string(dir.join(TRAJECTORY_FILE))?)?
    };
    st.update(id, |j| j.stage = Stage::Simulating);

    let map = pipeline::placement(set, cfg)?;
    let speed = cfg.service.playback_speed;
    let start = Instant::now();
    let mut t0 = None;
    let observe = |rec: &SimRecord| {
        feed.push(LivePoint::new(rec, &map));
        if speed > 0.0 {
            let t0 = *t0.get_or_insert(rec.t);
            let due = Duration::from_secs_f64(((rec.t - t0) / speed).max(0.0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    };
    let log = match pipeline::simulate_observed(&traj, cfg, observe) {
        Ok(log) => log,
        Err(Error::SimAborted { partial, reason }) => {
            write_atomic(&dir.join(LOG_FILE), write_log(&partial).as_bytes())?;
            st.update(id, |j| j.artifacts.log = true);
            return Err(Error::SimAborted { partial, reason });
        }
        Err(e) => return Err(e),
    };
    write_atomic(&dir.join(LOG_FILE), write_log(&log).as_bytes())?;
    st.update(id, |j| j.artifacts.log = true);
    let ev = pipeline::evaluate(set, &log, cfg)?;
    write_atomic(&dir.join(RENDER_FILE), &ev.written.to_png()?)?;
    write_atomic(&dir.join(METRICS_FILE), ev.report.to_json().as_bytes())?;
    st.update(id, |j| {
        j.artifacts.render = true;
        j.artifacts.metrics = true;
        j.metrics = Some(ev.report);
        j.stage = Stage::Done;
    });
    Ok(())
}

async fn stream_job(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let job = st.job(&id).ok_or_else(|| ApiError::not_found("job"))?;
    let feed = st.feed(&job);
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / st.cfg.service.stream_rate));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let events = stream::unfold(Some((st, feed, interval, 0usize)), move |s| {
        let id = id.clone();
        async move {
            let (st, feed, mut interval, sent) = s?;
            loop {
                interval.tick().await;
                // Read the flag first: once set, every point is already pushed.
                let finished = feed.finished.load(Ordering::Acquire);
                let tick = {
                    let points = feed.points.lock().unwrap();
                    points.last().filter(|_| points.len() > sent).map(|latest| StreamEvent {
                        latest: *latest,
                        stamps: points[sent..]
                            .iter()
                            .filter(|p| p.width > 0.0)
                            .map(|p| [p.image[0], p.image[1], p.width])
                            .collect(),
                        count: points.len(),
                    })
                };
                if let Some(ev) = tick {
                    let n = ev.count;
                    let event = Event::default().event("tick").json_data(&ev).expect("events serialize");
                    return Some((Ok(event), Some((st, feed, interval, n))));
                }
                if finished {
                    let stage = st.job(&id).map_or(Stage::Failed, |j| j.stage);
                    let end = StreamEnd { stage, count: sent };
                    let event = Event::default().event("end").json_data(&end).expect("events serialize");
                    return Some((Ok(event), None));
                }
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

fn artifact(
    st: &AppState,
    id: &str,
    present: fn(&Artifacts) -> bool,
    file: &str,
    mime: &'static str,
) -> ApiResult<Response> {
    let job = st.job(id).ok_or_else(|| ApiError::not_found("job"))?;
    if !present(&job.artifacts) {
        return Err(ApiError::not_found(file));
    }
    let bytes = std::fs::read(st.job_dir(id).join(file)).map_err(|_| ApiError::not_found(file))?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn artifact_strokes(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    artifact(&st, &id, |_| true, STROKES_FILE, "application/json")
}

async fn artifact_trajectory(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    artifact(&st, &id, |a| a.trajectory, TRAJECTORY_FILE, "text/plain; charset=utf-8")
}

async fn artifact_log(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    artifact(&st, &id, |a| a.log, LOG_FILE, "text/plain; charset=utf-8")
}

async fn artifact_render(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    artifact(&st, &id, |a| a.render, RENDER_FILE, "image/png")
}

async fn artifact_metrics(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    artifact(&st, &id, |a| a.metrics, METRICS_FILE, "application/json")
}
