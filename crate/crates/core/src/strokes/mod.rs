//! Stroke documents, spline fitting and conversion to planner waypoints.
//!
//! Image coordinates have x to the right and y down, in pixels. On the wall,
//! image x runs along the horizontal writing direction `t_y` (the viewer's
//! right when facing the wall along `n_t`) and image y runs along `-t_z`.

mod letters;
mod spline;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactFrame, PenModel, Surface};
use crate::error::{Error, Result};
use crate::planner::Waypoint;
use spline::Natural;

pub use letters::{demo_letter, DEMO_LETTERS};

/// Contact waypoints never ask for less than this normal force (N).
pub const MIN_CONTACT_FORCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthUnit {
    #[default]
    Px,
    Pressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocPoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocStroke {
    pub points: Vec<DocPoint>,
}

/// Wire form of a stroke set, `"format": 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokeDocument {
    pub format: u32,
    pub width_px: f64,
    pub height_px: f64,
    pub scale_m_per_px: f64,
    #[serde(default)]
    pub w_unit: WidthUnit,
    /// World point where the image centre is placed; projected onto the wall.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[f64; 3]>,
    pub strokes: Vec<DocStroke>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokePoint {
    /// Image position in pixels.
    pub x: f64,
    pub y: f64,
    /// Target linewidth in metres.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<StrokePoint>,
}

/// Validated strokes with widths converted to metres.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeSet {
    pub width_px: f64,
    pub height_px: f64,
    pub scale: f64,
    pub anchor: Option<Vector3<f64>>,
    pub strokes: Vec<Stroke>,
}

/// Settings for fitting strokes and turning them into waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrokeConfig {
    /// Waypoint spacing along each stroke (m).
    pub spacing: f64,
    /// Offset of lift waypoints away from the wall (m).
    pub lift: f64,
    /// Arc-length step of the dense resampling used for target rendering (m).
    pub resolution: f64,
    /// Curvature above which resampled points are flagged (1/m).
    pub max_curvature: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Where the image centre goes when a document has no anchor.
    pub centre: Vector3<f64>,
}

impl Default for StrokeConfig {
    fn default() -> Self {
        StrokeConfig {
            spacing: 0.03,
            lift: 0.05,
            resolution: 0.0005,
            max_curvature: 50.0,
            w_min: 0.004,
            w_max: 0.014,
            centre: Vector3::new(1.0, 0.0, 1.1),
        }
    }
}

impl StrokeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("strokes.spacing", self.spacing),
            ("strokes.lift", self.lift),
            ("strokes.resolution", self.resolution),
            ("strokes.max_curvature", self.max_curvature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        if !(self.w_min > 0.0 && self.w_max > self.w_min) {
            return Err(Error::param("strokes.w_min", "need 0 < w_min < w_max"));
        }
        if !self.centre.iter().all(|x| x.is_finite()) {
            return Err(Error::param("strokes.centre", "must be finite"));
        }
        Ok(())
    }

    pub fn limits(&self) -> FitLimits {
        FitLimits {
            max_curvature: self.max_curvature,
            w_min: self.w_min,
            w_max: self.w_max,
        }
    }
}

fn field_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Strokes {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Parses and validates a stroke document. Pressure widths map linearly onto
/// `[w_min, w_max]`.
pub fn parse_strokes(text: &str, cfg: &StrokeConfig) -> Result<StrokeSet> {
    let doc: StrokeDocument = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("document")
            .to_string();
        field_err(field, msg)
    })?;
    StrokeSet::from_document(&doc, cfg)
}

impl StrokeSet {
    pub fn from_document(doc: &StrokeDocument, cfg: &StrokeConfig) -> Result<Self> {
        if doc.format != 1 {
            return Err(field_err("format", format!("unsupported version {}", doc.format)));
        }
        for (name, v) in [
            ("width_px", doc.width_px),
            ("height_px", doc.height_px),
            ("scale_m_per_px", doc.scale_m_per_px),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field_err(name, "must be > 0"));
            }
        }
        if doc.strokes.is_empty() {
            return Err(field_err("strokes", "at least one stroke required"));
        }
        let anchor = match doc.anchor {
            Some(a) if a.iter().all(|x| x.is_finite()) => Some(Vector3::from(a)),
            Some(_) => return Err(field_err("anchor", "must be finite")),
            None => None,
        };
        let mut strokes = Vec::with_capacity(doc.strokes.len());
        for (i, s) in doc.strokes.iter().enumerate() {
            if s.points.len() < 2 {
                return Err(field_err(
                    format!("strokes[{i}].points"),
                    "a stroke needs at least 2 points",
                ));
            }
            let mut points = Vec::with_capacity(s.points.len());
            for (j, p) in s.points.iter().enumerate() {
                let at = |f: &str| format!("strokes[{i}].points[{j}].{f}");
                if !(p.x.is_finite() && (0.0..=doc.width_px).contains(&p.x)) {
                    return Err(field_err(at("x"), format!("{} outside [0, {}]", p.x, doc.width_px)));
                }
                if !(p.y.is_finite() && (0.0..=doc.height_px).contains(&p.y)) {
                    return Err(field_err(at("y"), format!("{} outside [0, {}]", p.y, doc.height_px)));
                }
                let w = match doc.w_unit {
                    WidthUnit::Px if p.w > 0.0 && p.w.is_finite() => p.w * doc.scale_m_per_px,
                    WidthUnit::Px => return Err(field_err(at("w"), "pixel width must be > 0")),
                    WidthUnit::Pressure if p.w > 0.0 && p.w <= 1.0 => cfg.w_min + p.w * (cfg.w_max - cfg.w_min),
                    WidthUnit::Pressure => return Err(field_err(at("w"), "pressure must be in (0, 1]")),
                };
                points.push(StrokePoint { x: p.x, y: p.y, w });
            }
            strokes.push(Stroke { points });
        }
        Ok(StrokeSet {
            width_px: doc.width_px,
            height_px: doc.height_px,
            scale: doc.scale_m_per_px,
            anchor,
            strokes,
        })
    }

    /// Document form with widths in pixels.
    pub fn to_document(&self) -> StrokeDocument {
        StrokeDocument {
            format: 1,
            width_px: self.width_px,
            height_px: self.height_px,
            scale_m_per_px: self.scale,
            w_unit: WidthUnit::Px,
            anchor: self.anchor.map(Into::into),
            strokes: self
                .strokes
                .iter()
                .map(|s| DocStroke {
                    points: s
                        .points
                        .iter()
                        .map(|p| DocPoint {
                            x: p.x,
                            y: p.y,
                            w: p.w / self.scale,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("stroke documents serialize")
    }

    /// Image extent in metres.
    pub fn size_m(&self) -> Vector2<f64> {
        Vector2::new(self.width_px, self.height_px) * self.scale
    }
}

/// Affine map between image metres and the wall plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageToWall {
    /// World position of the image origin (top-left corner).
    pub origin: Vector3<f64>,
    pub right: Vector3<f64>,
    pub down: Vector3<f64>,
}

impl ImageToWall {
    /// Places the image centre at the set's anchor, or at `default_centre`,
    /// projected onto the surface.
    pub fn new(set: &StrokeSet, surface: &Surface, frame: &ContactFrame, default_centre: &Vector3<f64>) -> Self {
        let centre = surface.project(&set.anchor.unwrap_or(*default_centre));
        let right = frame.t_y;
        let down = -frame.t_z;
        let half = set.size_m() * 0.5;
        ImageToWall {
            origin: centre - right * half.x - down * half.y,
            right,
            down,
        }
    }

    /// Wall point of an image position given in metres.
    pub fn to_wall(&self, q: &Vector2<f64>) -> Vector3<f64> {
        self.origin + self.right * q.x + self.down * q.y
    }

    /// Image position (metres) of the orthogonal projection of `p`.
    pub fn to_image(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.origin;
        Vector2::new(d.dot(&self.right), d.dot(&self.down))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitLimits {
    pub max_curvature: f64,
    pub w_min: f64,
    pub w_max: f64,
}

/// Stroke resampled at uniform arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedStroke {
    pub length: f64,
    pub s: Vec<f64>,
    pub points: Vec<Vector2<f64>>,
    pub widths: Vec<f64>,
    /// Signed curvature at each sample.
    pub curvature: Vec<f64>,
    /// Samples whose |curvature| exceeds the limit.
    pub flagged: Vec<usize>,
}

const ARC_SUBSTEPS: usize = 64;

/// Fits natural cubic splines (chord-length parameter) through the points and
/// widths, then resamples at arc-length spacing close to `ds` with both ends
/// included. Widths are clamped after fitting; curvature violations are only
/// reported.
pub fn fit_stroke(points: &[Vector2<f64>], widths: &[f64], ds: f64, limits: &FitLimits) -> Result<FittedStroke> {
    if points.len() != widths.len() {
        return Err(Error::param("stroke", "points and widths differ in length"));
    }
    if !(ds > 0.0) {
        return Err(Error::param("ds", "must be > 0"));
    }
    let mut pts: Vec<Vector2<f64>> = Vec::with_capacity(points.len());
    let mut ws = Vec::with_capacity(points.len());
    let mut u = Vec::with_capacity(points.len());
    for (p, w) in points.iter().zip(widths) {
        match pts.last() {
            Some(last) if (p - last).norm() <= 1e-12 => continue,
            Some(last) => u.push(u.last().copied().unwrap_or(0.0) + (p - last).norm()),
            None => u.push(0.0),
        }
        pts.push(*p);
        ws.push(*w);
    }
    if pts.len() < 2 {
        return Err(Error::Strokes {
            field: "points".into(),
            reason: "fewer than 2 distinct points".into(),
        });
    }
    let xs = Natural::new(&u, &pts.iter().map(|p| p.x).collect::<Vec<_>>());
    let ys = Natural::new(&u, &pts.iter().map(|p| p.y).collect::<Vec<_>>());
    let wsp = Natural::new(&u, &ws);

    // Arc length table over the spline parameter.
    let knots = xs.knots();
    let mut table = vec![(0.0, 0.0)];
    let mut prev = pts[0];
    let mut acc = 0.0;
    for seg in knots.windows(2) {
        for k in 1..=ARC_SUBSTEPS {
            let t = seg[0] + (seg[1] - seg[0]) * k as f64 / ARC_SUBSTEPS as f64;
            let q = Vector2::new(xs.eval(t).0, ys.eval(t).0);
            acc += (q - prev).norm();
            table.push((t, acc));
            prev = q;
        }
    }
    let length = acc;
    let n = ((length / ds).round() as usize).max(1);
    let mut out = FittedStroke {
        length,
        s: Vec::with_capacity(n + 1),
        points: Vec::with_capacity(n + 1),
        widths: Vec::with_capacity(n + 1),
        curvature: Vec::with_capacity(n + 1),
        flagged: Vec::new(),
    };
    let mut j = 0;
    for i in 0..=n {
        let s = length * i as f64 / n as f64;
        while j + 2 < table.len() && table[j + 1].1 < s {
            j += 1;
        }
        let (t0, s0) = table[j];
        let (t1, s1) = table[j + 1];
        let t = if i == n {
            *knots.last().unwrap()
        } else if s1 > s0 {
            t0 + (t1 - t0) * (s - s0) / (s1 - s0)
        } else {
            t0
        };
        let (x, dx, ddx) = xs.eval(t);
        let (y, dy, ddy) = ys.eval(t);
        let speed = (dx * dx + dy * dy).sqrt();
        let kappa = if speed > 1e-12 {
            (dx * ddy - dy * ddx) / speed.powi(3)
        } else {
            0.0
        };
        if kappa.abs() > limits.max_curvature {
            out.flagged.push(i);
        }
        out.s.push(s);
        out.points.push(Vector2::new(x, y));
        out.widths.push(wsp.eval(t).0.clamp(limits.w_min, limits.w_max));
        out.curvature.push(kappa);
    }
    Ok(out)
}

/// Fits every stroke of a set in image metres.
pub fn fit_set(set: &StrokeSet, ds: f64, limits: &FitLimits) -> Result<Vec<FittedStroke>> {
    set.strokes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pts: Vec<_> = s.points.iter().map(|p| Vector2::new(p.x, p.y) * set.scale).collect();
            let ws: Vec<_> = s.points.iter().map(|p| p.w).collect();
            fit_stroke(&pts, &ws, ds, limits).map_err(|e| match e {
                Error::Strokes { field, reason } => field_err(format!("strokes[{i}].{field}"), reason),
                other => other,
            })
        })
        .collect()
}

/// Waypoints for the planner with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPlanInput {
    pub waypoints: Vec<Waypoint>,
    pub contact: Vec<bool>,
    /// Index of the stroke each waypoint belongs to.
    pub stroke: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Builds the waypoint sequence: per stroke a lift point, contact points every
/// `cfg.spacing`, and another lift point, lifts offset by `cfg.lift` along `-n_t`.
pub fn to_waypoints(
    set: &StrokeSet,
    map: &ImageToWall,
    frame: &ContactFrame,
    pen: &PenModel,
    cfg: &StrokeConfig,
) -> Result<WaypointPlanInput> {
    let fitted = fit_set(set, cfg.spacing, &cfg.limits())?;
    let mut out = WaypointPlanInput {
        waypoints: Vec::new(),
        contact: Vec::new(),
        stroke: Vec::new(),
        warnings: Vec::new(),
    };
    let push = |out: &mut WaypointPlanInput, p: Vector3<f64>, f: f64, id: usize| {
        out.waypoints.push(Waypoint::new(p, f));
        out.contact.push(f > 0.0);
        out.stroke.push(id);
    };
    for (id, fs) in fitted.iter().enumerate() {
        if !fs.flagged.is_empty() {
            out.warnings.push(format!(
                "stroke {id}: {} samples exceed curvature {} 1/m",
                fs.flagged.len(),
                cfg.max_curvature
            ));
        }
        let wall: Vec<_> = fs.points.iter().map(|q| map.to_wall(q)).collect();
        push(&mut out, wall[0] - frame.n_t * cfg.lift, 0.0, id);
        for (i, (p, w)) in wall.iter().zip(&fs.widths).enumerate() {
            let wf = pen.force_for_width(*w);
            if wf.clamped {
                out.warnings
                    .push(format!("stroke {id} point {i}: width {w:.4} m unreachable, clamped"));
            }
            let f = if wf.force < MIN_CONTACT_FORCE {
                out.warnings
                    .push(format!("stroke {id} point {i}: force raised to {MIN_CONTACT_FORCE} N"));
                MIN_CONTACT_FORCE
            } else {
                wf.force
            };
            push(&mut out, *p, f, id);
        }
        push(&mut out, wall[wall.len() - 1] - frame.n_t * cfg.lift, 0.0, id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pressure_maps_onto_the_width_range() {
        let cfg = StrokeConfig::default();
        let doc = r#"{"format":1,"width_px":10,"height_px":10,"scale_m_per_px":0.01,"w_unit":"pressure",
            "strokes":[{"points":[{"x":1,"y":1,"w":1.0},{"x":5,"y":5,"w":0.5}]}]}"#;
        let set = parse_strokes(doc, &cfg).unwrap();
        assert_eq!(set.strokes[0].points[0].w, cfg.w_max);
        assert!((set.strokes[0].points[1].w - 0.5 * (cfg.w_min + cfg.w_max)).abs() < 1e-15);
    }

    #[test]
    fn serde_errors_name_the_field() {
        let err = parse_strokes(
            r#"{"format":1,"width_px":10,"height_px":10,"strokes":[]}"#,
            &StrokeConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Strokes { field, .. } => assert_eq!(field, "scale_m_per_px"),
            e => panic!("{e}"),
        }
    }
}
